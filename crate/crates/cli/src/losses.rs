//! `grace losses`: evaluate the training objective on a batch file and
//! check each analytic gradient against central finite differences.

use grace_core::losses::{
    aux_ce_loss, class_weights, focal_loss, supcon_loss, total_loss, ContrastiveBatch, FocalConfig, LossParts,
    LossWeights, Scores,
};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::config::LossConfig;
use crate::error::CliError;

pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossBatch {
    /// Category index per sample.
    pub labels: Vec<usize>,
    pub logits: Vec<Vec<f64>>,
    /// Auxiliary-head logits; the main logits are reused when absent.
    #[serde(default)]
    pub aux_logits: Option<Vec<Vec<f64>>>,
    /// Clip-level visual and text features; rows are L2-normalized on load.
    pub visual: Vec<Vec<f64>>,
    pub text: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientCheck {
    pub focal: f64,
    pub supcon: f64,
    pub aux: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossReport {
    pub parts: LossParts,
    pub weights: LossWeights,
    pub total: f64,
    /// Max abs difference over max abs finite-difference entry, per part.
    pub gradient_check: GradientCheck,
    pub degenerate: Vec<usize>,
    pub skipped_anchors: Vec<usize>,
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<Array2<f64>, CliError> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(CliError::Data(format!("`{name}` must be a non-empty rectangular matrix")));
    }
    Array2::from_shape_vec((rows.len(), cols), rows.concat()).map_err(|e| CliError::Data(e.to_string()))
}

fn normalized(name: &str, rows: &[Vec<f64>]) -> Result<Array2<f64>, CliError> {
    let mut m = matrix(name, rows)?;
    for (i, mut row) in m.rows_mut().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(CliError::Data(format!("`{name}` row {i} has zero or non-finite norm")));
        }
        row.mapv_inplace(|v| v / norm);
    }
    Ok(m)
}

fn central_difference(x: &Array2<f64>, mut f: impl FnMut(&Array2<f64>) -> Result<f64, CliError>) -> Result<Array2<f64>, CliError> {
    let mut grad = Array2::zeros(x.dim());
    let mut probe = x.clone();
    for ((i, j), g) in grad.indexed_iter_mut() {
        let orig = probe[[i, j]];
        probe[[i, j]] = orig + FD_STEP;
        let up = f(&probe)?;
        probe[[i, j]] = orig - FD_STEP;
        let down = f(&probe)?;
        probe[[i, j]] = orig;
        *g = (up - down) / (2.0 * FD_STEP);
    }
    Ok(grad)
}

fn residual(analytic: &Array2<f64>, numeric: &Array2<f64>) -> f64 {
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
        / scale
}

fn data<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

pub fn evaluate(batch: &LossBatch, cfg: &LossConfig) -> Result<LossReport, CliError> {
    let logits = matrix("logits", &batch.logits)?;
    let aux_logits = match &batch.aux_logits {
        Some(rows) => matrix("aux_logits", rows)?,
        None => logits.clone(),
    };
    let weights = match &cfg.class_counts {
        Some(counts) => class_weights(counts).map_err(data)?,
        None => Vec::new(),
    };
    let focal_cfg = FocalConfig::new(cfg.gamma, cfg.alpha, weights).map_err(|e| CliError::Usage(e.to_string()))?;
    let labels = &batch.labels;

    let focal = focal_loss(Scores::Logits(logits.view()), labels, &focal_cfg).map_err(data)?;
    let aux = aux_ce_loss(Scores::Logits(aux_logits.view()), labels).map_err(data)?;
    let visual = normalized("visual", &batch.visual)?;
    let text = normalized("text", &batch.text)?;
    let contrastive = ContrastiveBatch::new(visual.clone(), text.clone(), labels.clone()).map_err(data)?;
    let mixup = cfg.mixup.as_ref();
    let supcon = supcon_loss(&contrastive, cfg.temperature, mixup).map_err(data)?;

    let focal_fd = central_difference(&logits, |z| {
        Ok(focal_loss(Scores::Logits(z.view()), labels, &focal_cfg).map_err(data)?.value)
    })?;
    let aux_fd = central_difference(&aux_logits, |z| {
        Ok(aux_ce_loss(Scores::Logits(z.view()), labels).map_err(data)?.value)
    })?;
    let supcon_at = |v: &Array2<f64>, t: &Array2<f64>| -> Result<f64, CliError> {
        let b = ContrastiveBatch::new_unchecked(v.clone(), t.clone(), labels.clone()).map_err(data)?;
        Ok(supcon_loss(&b, cfg.temperature, mixup).map_err(data)?.value)
    };
    let fd_v = central_difference(&visual, |v| supcon_at(v, &text))?;
    let fd_t = central_difference(&text, |t| supcon_at(&visual, t))?;

    let parts = LossParts {
        focal: focal.value,
        supcon: supcon.value,
        aux: aux.value,
    };
    let mut degenerate = focal.degenerate.clone();
    degenerate.extend(&aux.degenerate);
    degenerate.sort_unstable();
    degenerate.dedup();
    Ok(LossReport {
        total: total_loss(&parts, &cfg.weights),
        parts,
        weights: cfg.weights,
        gradient_check: GradientCheck {
            focal: residual(&focal.grad, &focal_fd),
            supcon: residual(&supcon.grad_v, &fd_v).max(residual(&supcon.grad_t, &fd_t)),
            aux: residual(&aux.grad, &aux_fd),
        },
        degenerate,
        skipped_anchors: supcon.skipped,
    })
}
