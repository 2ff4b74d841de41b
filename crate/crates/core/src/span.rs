//! Phrase-level aggregation of transport mass and key-frame ranking.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ot::TransportPlan;
use crate::tensor::PatchGrid;

pub const DEFAULT_KEY_FRAMES: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpanError {
    #[error("span [{start}, {end}) is out of range for {len} tokens")]
    SpanOutOfRange { start: usize, end: usize, len: usize },
    #[error("spans [{0}, {1}) and [{2}, {3}) overlap")]
    Overlap(usize, usize, usize, usize),
    #[error("plan has {plan} columns but the patch grid has {grid} cells")]
    GridMismatch { plan: usize, grid: usize },
    #[error("key frame count must be at least 1")]
    BadK,
}

/// Half-open token range `[start, end)` with a phrase label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

impl Span {
    pub fn new(start: usize, end: usize, label: impl Into<String>) -> Self {
        Self {
            start,
            end,
            label: label.into(),
        }
    }

    pub fn tokens(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

/// Spans must be non-empty, lie inside `[0, len)` and not overlap.
pub fn validate_spans(spans: &[Span], len: usize) -> Result<(), SpanError> {
    for s in spans {
        if s.start >= s.end || s.end > len {
            return Err(SpanError::SpanOutOfRange {
                start: s.start,
                end: s.end,
                len,
            });
        }
    }
    let mut sorted: Vec<&Span> = spans.iter().collect();
    sorted.sort_by_key(|s| s.start);
    for pair in sorted.windows(2) {
        if pair[1].start < pair[0].end {
            return Err(SpanError::Overlap(
                pair[0].start,
                pair[0].end,
                pair[1].start,
                pair[1].end,
            ));
        }
    }
    Ok(())
}

/// `S[s][t]`: plan mass from the tokens of span `s` into the cells of frame `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanWeights {
    pub labels: Vec<String>,
    pub weights: Array2<f64>,
}

fn check_grid(plan: &TransportPlan, grid: &PatchGrid) -> Result<(), SpanError> {
    if plan.cols() != grid.len() {
        return Err(SpanError::GridMismatch {
            plan: plan.cols(),
            grid: grid.len(),
        });
    }
    Ok(())
}

/// Per-token, per-frame mass: the plan summed over each frame's cells.
pub fn token_frame_mass(plan: &TransportPlan, grid: &PatchGrid) -> Result<Array2<f64>, SpanError> {
    check_grid(plan, grid)?;
    let mut out = Array2::zeros((plan.rows(), grid.frames));
    for (i, row) in plan.matrix.rows().into_iter().enumerate() {
        for t in 0..grid.frames {
            out[[i, t]] = grid.frame_cells(t).map(|j| row[j]).sum();
        }
    }
    Ok(out)
}

pub fn aggregate_spans(
    plan: &TransportPlan,
    spans: &[Span],
    grid: &PatchGrid,
) -> Result<SpanWeights, SpanError> {
    validate_spans(spans, plan.rows())?;
    let mass = token_frame_mass(plan, grid)?;
    let mut weights = Array2::zeros((spans.len(), grid.frames));
    for (s, span) in spans.iter().enumerate() {
        for i in span.tokens() {
            for t in 0..grid.frames {
                weights[[s, t]] += mass[[i, t]];
            }
        }
    }
    Ok(SpanWeights {
        labels: spans.iter().map(|s| s.label.clone()).collect(),
        weights,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeyFrameRanking {
    /// Every frame as `(frame, score)`, best first.
    pub order: Vec<(usize, f64)>,
    pub selected: usize,
}

impl KeyFrameRanking {
    pub fn selected_frames(&self) -> Vec<usize> {
        self.order[..self.selected].iter().map(|&(t, _)| t).collect()
    }
}

/// Total mass per frame, over all tokens and cells.
pub fn frame_scores(plan: &TransportPlan, grid: &PatchGrid) -> Result<Vec<f64>, SpanError> {
    let mass = token_frame_mass(plan, grid)?;
    Ok((0..grid.frames).map(|t| mass.column(t).sum()).collect())
}

/// Descending score order; equal scores go to the smaller frame index.
pub fn rank_frames(scores: &[f64], k: usize) -> Result<KeyFrameRanking, SpanError> {
    if k == 0 {
        return Err(SpanError::BadK);
    }
    let mut order: Vec<(usize, f64)> = scores.iter().copied().enumerate().collect();
    order.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    Ok(KeyFrameRanking {
        selected: k.min(order.len()),
        order,
    })
}

pub fn rank_key_frames(
    plan: &TransportPlan,
    grid: &PatchGrid,
    k: usize,
) -> Result<KeyFrameRanking, SpanError> {
    rank_frames(&frame_scores(plan, grid)?, k)
}
