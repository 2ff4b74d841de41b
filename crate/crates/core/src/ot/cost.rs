use ndarray::{Array2, ArrayView2};

use super::OtError;

/// Cosine-distance costs `1 − cos(t_i, x_j)`, every entry in `[0, 2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix(Array2<f64>);

impl CostMatrix {
    /// Wraps an arbitrary matrix, checking the `[0, 2]` range.
    pub fn new(values: Array2<f64>) -> Result<Self, OtError> {
        if values.is_empty() {
            return Err(OtError::DimensionMismatch("cost matrix is empty".into()));
        }
        if let Some(v) = values
            .iter()
            .find(|v| !(v.is_finite() && (0.0..=2.0).contains(*v)))
        {
            return Err(OtError::DimensionMismatch(format!(
                "cost entry {v} outside [0, 2]"
            )));
        }
        Ok(Self(values))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[[i, j]]
    }
}

fn unit_rows(m: ArrayView2<'_, f64>, side: &'static str) -> Result<Array2<f64>, OtError> {
    let mut out = m.to_owned();
    for (index, mut row) in out.rows_mut().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(OtError::ZeroNormVector { side, index });
        }
        row.mapv_inplace(|v| v / norm);
    }
    Ok(out)
}

/// Pairwise cosine distances between `L` token embeddings and `N` visual
/// vectors. Rounding can push a cosine just past ±1; entries are clamped
/// back into `[0, 2]`.
pub fn cost_matrix(
    tokens: ArrayView2<'_, f64>,
    visual: ArrayView2<'_, f64>,
) -> Result<CostMatrix, OtError> {
    if tokens.ncols() != visual.ncols() {
        return Err(OtError::DimensionMismatch(format!(
            "token dim {} vs visual dim {}",
            tokens.ncols(),
            visual.ncols()
        )));
    }
    if tokens.nrows() == 0 || visual.nrows() == 0 {
        return Err(OtError::DimensionMismatch("no tokens or no patches".into()));
    }
    let t = unit_rows(tokens, "token")?;
    let x = unit_rows(visual, "visual")?;
    let cos = t.dot(&x.t());
    Ok(CostMatrix(cos.mapv(|c| (1.0 - c).clamp(0.0, 2.0))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identical_orthogonal_antiparallel() {
        let t = array![[1.0, 2.0, 0.0]];
        let x = array![[1.0, 2.0, 0.0], [-2.0, 1.0, 0.0], [-1.0, -2.0, 0.0]];
        let c = cost_matrix(t.view(), x.view()).unwrap();
        assert!(c.get(0, 0).abs() < 1e-15);
        assert!((c.get(0, 1) - 1.0).abs() < 1e-15);
        assert!((c.get(0, 2) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn zero_norm_is_an_error() {
        let t = array![[1.0, 0.0], [0.0, 0.0]];
        let x = array![[1.0, 1.0]];
        assert_eq!(
            cost_matrix(t.view(), x.view()),
            Err(OtError::ZeroNormVector {
                side: "token",
                index: 1
            })
        );
        assert_eq!(
            cost_matrix(x.view(), array![[0.0, 0.0]].view()),
            Err(OtError::ZeroNormVector {
                side: "visual",
                index: 0
            })
        );
    }

    #[test]
    fn dim_mismatch() {
        let t = array![[1.0, 0.0]];
        let x = array![[1.0, 0.0, 0.0]];
        assert!(matches!(
            cost_matrix(t.view(), x.view()),
            Err(OtError::DimensionMismatch(_))
        ));
    }
}
