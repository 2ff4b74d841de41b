//! Multi-task loss stack with hand-derived gradients.
//!
//! * [`focal_loss`]: class-weighted focal loss over softmax predictions.
//! * [`supcon_loss`]: supervised contrastive loss between paired visual and
//!   text embeddings, optionally with same-category mixup.
//! * [`aux_ce_loss`]: plain cross-entropy on the text branch.
//!
//! All losses are summed over the batch, not averaged.

mod classification;
mod contrastive;

pub use classification::{aux_ce_loss, focal_loss, FocalConfig, LossOutput, Scores, PROB_CLAMP};
pub use contrastive::{supcon_loss, ContrastiveBatch, Mixup, SupConOutput, DEFAULT_TEMPERATURE};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("category {0} has no samples")]
    EmptyCategory(usize),
    #[error("invalid batch: {0}")]
    InvalidBatch(String),
    #[error("invalid hyperparameter: {0}")]
    InvalidConfig(String),
    #[error("no sample has a same-category partner; contrastive loss is undefined")]
    NoPositives,
    #[error("feature row {row} of {side} has norm {norm}, expected unit norm")]
    NotNormalized {
        side: &'static str,
        row: usize,
        norm: f64,
    },
}

/// Inverse-root frequency weights `w_c ∝ 1/√n_c`, scaled so `Σ w_c = C`.
pub fn class_weights(counts: &[u64]) -> Result<Vec<f64>, LossError> {
    if counts.is_empty() {
        return Err(LossError::InvalidConfig("no categories".into()));
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(LossError::EmptyCategory(c));
    }
    let raw: Vec<f64> = counts.iter().map(|&n| 1.0 / (n as f64).sqrt()).collect();
    let scale = counts.len() as f64 / raw.iter().sum::<f64>();
    Ok(raw.into_iter().map(|w| w * scale).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub focal: f64,
    pub supcon: f64,
    pub aux: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            focal: 1.0,
            supcon: 0.5,
            aux: 0.5,
        }
    }
}

impl LossWeights {
    pub fn new(focal: f64, supcon: f64, aux: f64) -> Result<Self, LossError> {
        let w = Self { focal, supcon, aux };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), LossError> {
        let all = [self.focal, self.supcon, self.aux];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || all.iter().all(|&w| w == 0.0) {
            return Err(LossError::InvalidConfig(format!(
                "loss weights must be nonnegative with one positive, got {all:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub focal: f64,
    pub supcon: f64,
    pub aux: f64,
}

pub fn total_loss(parts: &LossParts, weights: &LossWeights) -> f64 {
    weights.focal * parts.focal + weights.supcon * parts.supcon + weights.aux * parts.aux
}
