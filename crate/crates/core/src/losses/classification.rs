use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::LossError;

/// Lower bound applied to the target probability before taking logs.
pub const PROB_CLAMP: f64 = 1e-12;

const SIMPLEX_TOL: f64 = 1e-9;

/// Model outputs for a batch of `N` samples over `C` categories.
#[derive(Debug, Clone, Copy)]
pub enum Scores<'a> {
    /// Unnormalized scores; gradients are taken with respect to these.
    Logits(ArrayView2<'a, f64>),
    /// Rows on the probability simplex; gradients are taken with respect to
    /// each probability entry.
    Probabilities(ArrayView2<'a, f64>),
}

impl Scores<'_> {
    fn dim(&self) -> (usize, usize) {
        match self {
            Scores::Logits(m) | Scores::Probabilities(m) => m.dim(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocalConfig {
    pub gamma: f64,
    pub alpha: f64,
    /// Per-category weights; empty means all ones.
    #[serde(default)]
    pub class_weights: Vec<f64>,
}

impl Default for FocalConfig {
    fn default() -> Self {
        Self {
            gamma: 2.0,
            alpha: 1.0,
            class_weights: Vec::new(),
        }
    }
}

impl FocalConfig {
    pub fn new(gamma: f64, alpha: f64, class_weights: Vec<f64>) -> Result<Self, LossError> {
        let cfg = Self {
            gamma,
            alpha,
            class_weights,
        };
        cfg.validate(None)?;
        Ok(cfg)
    }

    /// γ = 0, α = 1, unit weights: reduces to cross-entropy.
    pub fn cross_entropy() -> Self {
        Self {
            gamma: 0.0,
            alpha: 1.0,
            class_weights: Vec::new(),
        }
    }

    fn validate(&self, categories: Option<usize>) -> Result<(), LossError> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(LossError::InvalidConfig(format!("gamma {} < 0", self.gamma)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(LossError::InvalidConfig(format!(
                "alpha {} outside (0, 1]",
                self.alpha
            )));
        }
        if self.class_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(LossError::InvalidConfig("class weights must be >= 0".into()));
        }
        if let Some(c) = categories {
            if !self.class_weights.is_empty() && self.class_weights.len() != c {
                return Err(LossError::InvalidConfig(format!(
                    "{} class weights for {c} categories",
                    self.class_weights.len()
                )));
            }
        }
        Ok(())
    }

    fn weight(&self, c: usize) -> f64 {
        self.class_weights.get(c).copied().unwrap_or(1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    /// Same shape as the scores that were passed in.
    pub grad: Array2<f64>,
    /// Samples whose target probability was clamped at [`PROB_CLAMP`].
    pub degenerate: Vec<usize>,
}

fn softmax(row: ArrayView1<'_, f64>) -> Array1<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e = row.mapv(|v| (v - m).exp());
    let s = e.sum();
    e / s
}

/// Validated per-sample probability rows.
fn probabilities(scores: Scores<'_>, labels: &[usize]) -> Result<Array2<f64>, LossError> {
    let (n, c) = scores.dim();
    if n == 0 || c == 0 {
        return Err(LossError::InvalidBatch("empty batch".into()));
    }
    if labels.len() != n {
        return Err(LossError::InvalidBatch(format!("{} labels for {n} rows", labels.len())));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= c) {
        return Err(LossError::InvalidBatch(format!("label {y} out of {c} categories")));
    }
    match scores {
        Scores::Logits(z) => {
            if z.iter().any(|v| !v.is_finite()) {
                return Err(LossError::InvalidBatch("non-finite logit".into()));
            }
            let mut p = Array2::zeros((n, c));
            for (i, row) in z.rows().into_iter().enumerate() {
                p.row_mut(i).assign(&softmax(row));
            }
            Ok(p)
        }
        Scores::Probabilities(p) => {
            for (i, row) in p.rows().into_iter().enumerate() {
                if row.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(LossError::InvalidBatch(format!("row {i} has a negative probability")));
                }
                let s = row.sum();
                if (s - 1.0).abs() > SIMPLEX_TOL {
                    return Err(LossError::InvalidBatch(format!("row {i} sums to {s}")));
                }
            }
            Ok(p.to_owned())
        }
    }
}

/// `−Σ_i w_{y_i} α (1 − p_t)^γ log p_t` with `p_t` the target probability.
///
/// Target probabilities below [`PROB_CLAMP`] are clamped; those samples are
/// listed in `degenerate` and contribute no gradient.
pub fn focal_loss(
    scores: Scores<'_>,
    labels: &[usize],
    cfg: &FocalConfig,
) -> Result<LossOutput, LossError> {
    cfg.validate(Some(scores.dim().1))?;
    let p = probabilities(scores, labels)?;
    let (n, c) = p.dim();
    let mut value = 0.0;
    let mut grad = Array2::zeros((n, c));
    let mut degenerate = Vec::new();
    for (i, &y) in labels.iter().enumerate() {
        let pt = p[[i, y]];
        // complement from the other entries keeps precision when p_t ≈ 1
        let q: f64 = (0..c).filter(|&k| k != y).map(|k| p[[i, k]]).sum();
        let scale = cfg.weight(y) * cfg.alpha;
        let clamped = pt < PROB_CLAMP;
        let log_pt = pt.max(PROB_CLAMP).ln();
        value -= scale * q.powf(cfg.gamma) * log_pt;
        if clamped {
            log::warn!("sample {i}: target probability {pt:e} clamped at {PROB_CLAMP:e}");
            degenerate.push(i);
            continue;
        }
        let slope = if cfg.gamma == 0.0 || q == 0.0 {
            0.0
        } else {
            cfg.gamma * q.powf(cfg.gamma - 1.0) * log_pt
        };
        match scores {
            Scores::Probabilities(_) => grad[[i, y]] = -scale * (q.powf(cfg.gamma) / pt - slope),
            Scores::Logits(_) => {
                // ∂L/∂p_t · p_t, without dividing by p_t
                let g = -scale * (q.powf(cfg.gamma) - slope * pt);
                for k in 0..c {
                    let delta = if k == y { 1.0 } else { 0.0 };
                    grad[[i, k]] = g * (delta - p[[i, k]]);
                }
            }
        }
    }
    Ok(LossOutput {
        value,
        grad,
        degenerate,
    })
}

/// `−Σ_i log p_{y_i}`.
pub fn aux_ce_loss(scores: Scores<'_>, labels: &[usize]) -> Result<LossOutput, LossError> {
    let p = probabilities(scores, labels)?;
    let (n, c) = p.dim();
    let mut value = 0.0;
    let mut grad = Array2::zeros((n, c));
    let mut degenerate = Vec::new();
    for (i, &y) in labels.iter().enumerate() {
        let pt = p[[i, y]];
        value -= pt.max(PROB_CLAMP).ln();
        if pt < PROB_CLAMP {
            log::warn!("sample {i}: target probability {pt:e} clamped at {PROB_CLAMP:e}");
            degenerate.push(i);
            continue;
        }
        match scores {
            Scores::Probabilities(_) => grad[[i, y]] = -1.0 / pt,
            Scores::Logits(_) => {
                for k in 0..c {
                    grad[[i, k]] = p[[i, k]] - if k == y { 1.0 } else { 0.0 };
                }
            }
        }
    }
    Ok(LossOutput {
        value,
        grad,
        degenerate,
    })
}
