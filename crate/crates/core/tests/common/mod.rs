#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

pub fn unit_rows(mut m: Array2<f64>) -> Array2<f64> {
    for mut row in m.rows_mut() {
        let n = row.dot(&row).sqrt();
        row.mapv_inplace(|v| v / n);
    }
    m
}

/// Central difference of `f` at every entry of `x`.
pub fn finite_difference(x: &Array2<f64>, step: f64, mut f: impl FnMut(&Array2<f64>) -> f64) -> Array2<f64> {
    let mut grad = Array2::zeros(x.dim());
    let mut probe = x.clone();
    for idx in ndarray::indices(x.dim()) {
        let (i, j) = idx;
        let orig = probe[[i, j]];
        probe[[i, j]] = orig + step;
        let up = f(&probe);
        probe[[i, j]] = orig - step;
        let down = f(&probe);
        probe[[i, j]] = orig;
        grad[[i, j]] = (up - down) / (2.0 * step);
    }
    grad
}

/// `max|a − b| / max(max|b|, 1e-8)`: error relative to the gradient scale.
pub fn relative_error(analytic: &Array2<f64>, numeric: &Array2<f64>) -> f64 {
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-8);
    analytic
        .iter()
        .zip(numeric.iter())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
        / scale
}

/// Smallest `Σ_i c[i][σ(i)] / n` over all permutations σ.
pub fn best_permutation_cost(c: &Array2<f64>) -> f64 {
    fn walk(c: &Array2<f64>, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        let n = c.nrows();
        if row == n {
            *best = best.min(acc);
            return;
        }
        for j in 0..n {
            if !used[j] {
                used[j] = true;
                walk(c, row + 1, used, acc + c[[row, j]], best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    walk(c, 0, &mut vec![false; c.nrows()], 0.0, &mut best);
    best / c.nrows() as f64
}
