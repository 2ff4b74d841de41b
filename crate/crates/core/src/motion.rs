//! Inter-frame motion saliency and feature reweighting.
//!
//! Raw scores are computed per cell from channel-space L2 distances, min-max
//! normalized per video and floored so that no cell is ever zeroed out.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{FeatureTensor, PatchGrid};

pub const DEFAULT_FLOOR: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MotionError {
    #[error("saliency grid {saliency:?} does not match tensor grid {tensor:?}")]
    ShapeMismatch {
        saliency: PatchGrid,
        tensor: PatchGrid,
    },
    #[error("floor must lie in (0, 1), got {0}")]
    BadFloor(f64),
    #[error("raw score at cell {0} is negative or non-finite")]
    BadScore(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MotionMode {
    TemporalOnly,
    SpatialOnly,
    #[default]
    Spatiotemporal,
}

impl std::str::FromStr for MotionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "temporal-only" | "temporal" => Ok(Self::TemporalOnly),
            "spatial-only" | "spatial" => Ok(Self::SpatialOnly),
            "spatiotemporal" => Ok(Self::Spatiotemporal),
            other => Err(format!("unknown motion mode `{other}`")),
        }
    }
}

/// Per-cell nonnegative scores over a `T' x H' x W'` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGrid {
    pub grid: PatchGrid,
    pub values: Vec<f64>,
}

impl ScoreGrid {
    pub fn new(grid: PatchGrid, values: Vec<f64>) -> Result<Self, MotionError> {
        assert_eq!(grid.len(), values.len(), "score grid length");
        if let Some(j) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(MotionError::BadScore(j));
        }
        Ok(Self { grid, values })
    }
}

/// Normalized weights in `[floor, 1]`, one per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub grid: PatchGrid,
    pub floor: f64,
    pub weights: Vec<f64>,
}

impl SaliencyMap {
    pub fn weight(&self, t: usize, h: usize, w: usize) -> f64 {
        self.weights[self.grid.index(t, h, w)]
    }

    /// Sum of cell weights in each frame.
    pub fn frame_totals(&self) -> Vec<f64> {
        (0..self.grid.frames)
            .map(|t| self.grid.frame_cells(t).map(|j| self.weights[j]).sum())
            .collect()
    }
}

fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Temporal difference magnitude `‖X_t − X_{t−1}‖₂` per cell.
///
/// The first frame has no predecessor and takes the second frame's scores;
/// a single-frame clip scores zero everywhere.
pub fn frame_diff(x: &FeatureTensor) -> ScoreGrid {
    let grid = x.grid();
    let per = grid.cells_per_frame();
    let mut values = vec![0.0; grid.len()];
    for t in 1..grid.frames {
        for c in 0..per {
            let j = t * per + c;
            values[j] = l2_distance(x.cell_at(j), x.cell_at(j - per));
        }
    }
    if grid.frames > 1 {
        let (first, rest) = values.split_at_mut(per);
        first.copy_from_slice(&rest[..per]);
    }
    ScoreGrid { grid, values }
}

/// Mean L2 distance of each cell to its in-frame 4-neighborhood. Cells
/// without neighbors score zero.
pub fn spatial_diff(x: &FeatureTensor) -> ScoreGrid {
    let grid = x.grid();
    let mut values = vec![0.0; grid.len()];
    for t in 0..grid.frames {
        for h in 0..grid.rows {
            for w in 0..grid.cols {
                let here = x.cell(t, h, w);
                let mut total = 0.0;
                let mut count = 0usize;
                let mut visit = |nh: usize, nw: usize| {
                    total += l2_distance(here, x.cell(t, nh, nw));
                    count += 1;
                };
                if h > 0 {
                    visit(h - 1, w);
                }
                if h + 1 < grid.rows {
                    visit(h + 1, w);
                }
                if w > 0 {
                    visit(h, w - 1);
                }
                if w + 1 < grid.cols {
                    visit(h, w + 1);
                }
                if count > 0 {
                    values[grid.index(t, h, w)] = total / count as f64;
                }
            }
        }
    }
    ScoreGrid { grid, values }
}

/// Min-max rescale to `[0, 1]`. A constant grid maps to all zeros.
fn min_max(values: &[f64]) -> Vec<f64> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    if !(range > 0.0) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|&v| (v - lo) / range).collect()
}

fn check_floor(floor: f64) -> Result<(), MotionError> {
    if floor > 0.0 && floor < 1.0 {
        Ok(())
    } else {
        Err(MotionError::BadFloor(floor))
    }
}

/// Per-video min-max normalization of one raw grid followed by the floor.
pub fn normalize_saliency(raw: &ScoreGrid, floor: f64) -> Result<SaliencyMap, MotionError> {
    check_floor(floor)?;
    let weights = min_max(&raw.values)
        .into_iter()
        .map(|v| v.max(floor))
        .collect();
    Ok(SaliencyMap {
        grid: raw.grid,
        floor,
        weights,
    })
}

/// Averages the separately normalized temporal and spatial grids, then
/// normalizes and floors the mean.
pub fn combine_saliency(
    temporal: &ScoreGrid,
    spatial: &ScoreGrid,
    floor: f64,
) -> Result<SaliencyMap, MotionError> {
    assert_eq!(temporal.grid, spatial.grid, "combined grids must agree");
    let t = min_max(&temporal.values);
    let s = min_max(&spatial.values);
    let mean = t.iter().zip(&s).map(|(a, b)| 0.5 * (a + b)).collect();
    normalize_saliency(
        &ScoreGrid {
            grid: temporal.grid,
            values: mean,
        },
        floor,
    )
}

/// Raw scores for `mode`, normalized into a saliency map.
pub fn saliency_map(
    x: &FeatureTensor,
    mode: MotionMode,
    floor: f64,
) -> Result<SaliencyMap, MotionError> {
    match mode {
        MotionMode::TemporalOnly => normalize_saliency(&frame_diff(x), floor),
        MotionMode::SpatialOnly => normalize_saliency(&spatial_diff(x), floor),
        MotionMode::Spatiotemporal => combine_saliency(&frame_diff(x), &spatial_diff(x), floor),
    }
}

/// `X̃_t^{h,w} = W_t^{h,w} · X_t^{h,w}`, broadcast over channels.
pub fn apply_weights(x: &FeatureTensor, w: &SaliencyMap) -> Result<FeatureTensor, MotionError> {
    if w.grid != x.grid() {
        return Err(MotionError::ShapeMismatch {
            saliency: w.grid,
            tensor: x.grid(),
        });
    }
    let d = x.dims().channels;
    let mut data = x.data().to_vec();
    for (cell, &weight) in data.chunks_exact_mut(d).zip(&w.weights) {
        for v in cell {
            *v *= weight;
        }
    }
    Ok(FeatureTensor::from_parts_unchecked(x.dims(), data))
}
