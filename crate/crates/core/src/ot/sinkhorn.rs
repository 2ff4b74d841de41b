use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{CostMatrix, OtError};

const MARGINAL_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SinkhornConfig {
    /// Entropic regularization weight.
    pub lambda: f64,
    pub max_iter: usize,
    /// Bound on the L1 violation of each marginal.
    pub tol: f64,
    pub log_domain: bool,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            max_iter: 10_000,
            tol: 1e-6,
            log_domain: true,
        }
    }
}

impl SinkhornConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        Self {
            lambda,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), OtError> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(OtError::InvalidConfig(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(OtError::InvalidConfig(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if self.max_iter == 0 {
            return Err(OtError::InvalidConfig("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// Coupling between `L` tokens (rows) and `N` patches (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub matrix: Array2<f64>,
    pub a: Array1<f64>,
    pub b: Array1<f64>,
    pub lambda: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `Σ_i |Σ_j t_ij − a_i|` measured on `matrix`.
    pub row_violation: f64,
    /// `Σ_j |Σ_i t_ij − b_j|` measured on `matrix`.
    pub col_violation: f64,
}

impl TransportPlan {
    /// Treats a nonnegative matrix as an exact coupling of its own marginals.
    /// The plan carries `lambda = 0` and counts as converged.
    pub fn from_coupling(matrix: Array2<f64>) -> Result<Self, OtError> {
        if matrix.is_empty() {
            return Err(OtError::DimensionMismatch("empty coupling".into()));
        }
        if matrix.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(OtError::InvalidMarginal(
                "coupling entries must be finite and nonnegative".into(),
            ));
        }
        let a = matrix.sum_axis(Axis(1));
        let b = matrix.sum_axis(Axis(0));
        Ok(Self {
            matrix,
            a,
            b,
            lambda: 0.0,
            iterations: 0,
            converged: true,
            row_violation: 0.0,
            col_violation: 0.0,
        })
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn row_sums(&self) -> Array1<f64> {
        self.matrix.sum_axis(Axis(1))
    }

    pub fn col_sums(&self) -> Array1<f64> {
        self.matrix.sum_axis(Axis(0))
    }

    pub fn max_violation(&self) -> f64 {
        self.row_violation.max(self.col_violation)
    }

    pub fn require_converged(&self) -> Result<(), OtError> {
        if self.converged {
            Ok(())
        } else {
            Err(OtError::NotConverged {
                iterations: self.iterations,
                violation: self.max_violation(),
            })
        }
    }
}

pub fn uniform_marginal(n: usize) -> Array1<f64> {
    Array1::from_elem(n, 1.0 / n as f64)
}

/// Visual marginal proportional to per-patch saliency weights.
pub fn saliency_marginal(weights: &[f64]) -> Result<Array1<f64>, OtError> {
    let total: f64 = weights.iter().sum();
    if weights.is_empty() || weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
        return Err(OtError::InvalidMarginal(
            "saliency weights must be positive and finite".into(),
        ));
    }
    Ok(weights.iter().map(|w| w / total).collect())
}

fn check_marginal(m: ArrayView1<'_, f64>, len: usize, name: &str) -> Result<(), OtError> {
    if m.len() != len {
        return Err(OtError::DimensionMismatch(format!(
            "marginal {name} has length {}, cost needs {len}",
            m.len()
        )));
    }
    if let Some(v) = m.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(OtError::InvalidMarginal(format!(
            "{name} has non-positive entry {v}"
        )));
    }
    let sum = m.sum();
    if (sum - 1.0).abs() > MARGINAL_SUM_TOL {
        return Err(OtError::InvalidMarginal(format!("{name} sums to {sum}")));
    }
    Ok(())
}

fn l1_violation(sums: ArrayView1<'_, f64>, target: ArrayView1<'_, f64>) -> f64 {
    sums.iter().zip(target).map(|(s, t)| (s - t).abs()).sum()
}

/// Solves the entropic transport problem for cost `c` and marginals `a`, `b`.
///
/// Both marginals must be strictly positive and sum to one. A plan that hits
/// `max_iter` comes back with `converged == false` instead of an error.
/// In the linear domain a vanishing kernel or scaling yields
/// [`OtError::NumericalUnderflow`].
pub fn sinkhorn(
    c: &CostMatrix,
    a: ArrayView1<'_, f64>,
    b: ArrayView1<'_, f64>,
    cfg: &SinkhornConfig,
) -> Result<TransportPlan, OtError> {
    cfg.validate()?;
    check_marginal(a, c.rows(), "a")?;
    check_marginal(b, c.cols(), "b")?;
    let (matrix, iterations) = if cfg.log_domain {
        solve_log(c.view(), a, b, cfg)
    } else {
        solve_linear(c.view(), a, b, cfg)?
    };
    let row_violation = l1_violation(matrix.sum_axis(Axis(1)).view(), a);
    let col_violation = l1_violation(matrix.sum_axis(Axis(0)).view(), b);
    Ok(TransportPlan {
        matrix,
        a: a.to_owned(),
        b: b.to_owned(),
        lambda: cfg.lambda,
        iterations,
        converged: row_violation <= cfg.tol && col_violation <= cfg.tol,
        row_violation,
        col_violation,
    })
}

/// `out_i = log Σ_j exp(scaled_j − k_ij)` for each row `i` of `k`.
fn log_sum_exp_rows(k: ArrayView2<'_, f64>, scaled: &[f64], out: &mut [f64]) {
    for (row, o) in k.rows().into_iter().zip(out.iter_mut()) {
        let row = row.as_slice().expect("standard layout");
        let mut m = f64::NEG_INFINITY;
        for (s, kij) in scaled.iter().zip(row) {
            m = m.max(s - kij);
        }
        let mut acc = 0.0;
        for (s, kij) in scaled.iter().zip(row) {
            acc += (s - kij - m).exp();
        }
        *o = m + acc.ln();
    }
}

/// Returns the plan and the number of potential updates performed.
/// Potentials are kept in units of `λ`.
fn solve_log(
    c: ArrayView2<'_, f64>,
    a: ArrayView1<'_, f64>,
    b: ArrayView1<'_, f64>,
    cfg: &SinkhornConfig,
) -> (Array2<f64>, usize) {
    let (rows, cols) = c.dim();
    let scaled = c.mapv(|v| v / cfg.lambda);
    let scaled_t = scaled.t().as_standard_layout().into_owned();
    let log_a: Vec<f64> = a.iter().map(|v| v.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|v| v.ln()).collect();

    let mut f = vec![0.0; rows];
    let mut g = vec![0.0; cols];
    let mut lse_rows = vec![0.0; rows];
    let mut lse_cols = vec![0.0; cols];

    let update_g = |f: &[f64], g: &mut [f64], lse_cols: &mut [f64]| -> f64 {
        log_sum_exp_rows(scaled_t.view(), f, lse_cols);
        let mut violation = 0.0;
        for j in 0..cols {
            g[j] = log_b[j] - lse_cols[j];
            violation += ((g[j] + lse_cols[j]).exp() - b[j]).abs();
        }
        violation
    };

    let mut col_violation = update_g(&f, &mut g, &mut lse_cols);
    let mut iterations = 0;
    loop {
        log_sum_exp_rows(scaled.view(), &g, &mut lse_rows);
        let row_violation: f64 = (0..rows)
            .map(|i| ((f[i] + lse_rows[i]).exp() - a[i]).abs())
            .sum();
        if (row_violation <= cfg.tol && col_violation <= cfg.tol) || iterations == cfg.max_iter {
            break;
        }
        for i in 0..rows {
            f[i] = log_a[i] - lse_rows[i];
        }
        col_violation = update_g(&f, &mut g, &mut lse_cols);
        iterations += 1;
    }

    let plan = Array2::from_shape_fn((rows, cols), |(i, j)| (f[i] + g[j] - scaled[[i, j]]).exp());
    (plan, iterations)
}

/// Classic scaling iteration on `K = exp(−C/λ)`, on the same schedule as
/// [`solve_log`].
fn solve_linear(
    c: ArrayView2<'_, f64>,
    a: ArrayView1<'_, f64>,
    b: ArrayView1<'_, f64>,
    cfg: &SinkhornConfig,
) -> Result<(Array2<f64>, usize), OtError> {
    let kernel = c.mapv(|v| (-v / cfg.lambda).exp());
    if kernel.iter().any(|&k| k == 0.0) {
        return Err(OtError::NumericalUnderflow { iteration: 0 });
    }
    let mut u = Array1::<f64>::ones(c.nrows());
    let mut v;

    let update_v = |u: &Array1<f64>, iteration: usize| -> Result<(Array1<f64>, f64), OtError> {
        let ktu = kernel.t().dot(u);
        if ktu.iter().any(|x| !(x.is_normal() && x.is_finite())) {
            return Err(OtError::NumericalUnderflow { iteration });
        }
        let v = &b / &ktu;
        let violation = l1_violation((&v * &ktu).view(), b);
        Ok((v, violation))
    };

    let (v0, mut col_violation) = update_v(&u, 0)?;
    v = v0;
    let mut iterations = 0;
    loop {
        let kv = kernel.dot(&v);
        if kv.iter().any(|x| !(x.is_normal() && x.is_finite())) {
            return Err(OtError::NumericalUnderflow { iteration: iterations });
        }
        let row_violation = l1_violation((&u * &kv).view(), a);
        if (row_violation <= cfg.tol && col_violation <= cfg.tol) || iterations == cfg.max_iter {
            break;
        }
        u = &a / &kv;
        let (next, violation) = update_v(&u, iterations + 1)?;
        v = next;
        col_violation = violation;
        iterations += 1;
    }

    let plan = Array2::from_shape_fn(kernel.dim(), |(i, j)| u[i] * kernel[[i, j]] * v[j]);
    if plan.iter().any(|x| !x.is_finite()) {
        return Err(OtError::NumericalUnderflow { iteration: iterations });
    }
    Ok((plan, iterations))
}

/// `H(T) = −Σ t_ij log t_ij` with `0 log 0 = 0`.
pub fn plan_entropy(plan: &TransportPlan) -> f64 {
    -plan
        .matrix
        .iter()
        .filter(|&&t| t > 0.0)
        .map(|&t| t * t.ln())
        .sum::<f64>()
}

/// `⟨T, C⟩`.
pub fn transport_cost(plan: &TransportPlan, c: &CostMatrix) -> Result<f64, OtError> {
    if plan.matrix.dim() != (c.rows(), c.cols()) {
        return Err(OtError::DimensionMismatch(format!(
            "plan {:?} vs cost {}x{}",
            plan.matrix.dim(),
            c.rows(),
            c.cols()
        )));
    }
    Ok(plan
        .matrix
        .iter()
        .zip(c.view().iter())
        .map(|(t, c)| t * c)
        .sum())
}
