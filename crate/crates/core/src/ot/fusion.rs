use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::{OtError, TransportPlan};

/// Transport-weighted visual context per token and the clip-level mean.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutput {
    /// Row `i` is `c_i`, the barycenter of patches weighted by plan row `i`.
    pub contexts: Array2<f64>,
    /// Mean of the rows of `contexts`.
    pub clip: Array1<f64>,
    pub transport_cost: f64,
}

/// `c_i = (1/a_i) Σ_j t_ij x_j`, `f = mean_i c_i`.
///
/// The plan must be converged so that each row of barycentric weights sums
/// to one within the solver tolerance.
pub fn fuse(
    plan: &TransportPlan,
    visual: ArrayView2<'_, f64>,
    a: ArrayView1<'_, f64>,
    transport_cost: f64,
) -> Result<FusionOutput, OtError> {
    plan.require_converged()?;
    if visual.nrows() != plan.cols() || a.len() != plan.rows() {
        return Err(OtError::DimensionMismatch(format!(
            "plan {}x{}, visual {} rows, a of length {}",
            plan.rows(),
            plan.cols(),
            visual.nrows(),
            a.len()
        )));
    }
    let mut contexts = plan.matrix.dot(&visual);
    for (mut row, &ai) in contexts.axis_iter_mut(Axis(0)).zip(a.iter()) {
        row.mapv_inplace(|v| v / ai);
    }
    let clip = contexts
        .mean_axis(Axis(0))
        .expect("plan has at least one row");
    Ok(FusionOutput {
        contexts,
        clip,
        transport_cost,
    })
}
