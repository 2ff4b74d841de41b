mod common;

use common::*;
use grace_core::motion::{
    apply_weights, frame_diff, normalize_saliency, saliency_map, spatial_diff, MotionMode, ScoreGrid,
    DEFAULT_FLOOR,
};
use grace_core::{FeatureTensor, GridDims, PatchGrid};
use rand::Rng;
use rand_distr::StandardNormal;

fn random_tensor(seed: u64, dims: [usize; 4]) -> FeatureTensor {
    let mut r = rng(seed);
    let n: usize = dims.iter().product();
    let data = (0..n).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
    FeatureTensor::new(GridDims::new(dims[0], dims[1], dims[2], dims[3]), data).unwrap()
}

// raw data indexing, independent of the tensor accessors
fn at(x: &FeatureTensor, t: usize, h: usize, w: usize, k: usize) -> f64 {
    let d = x.dims();
    x.data()[((t * d.rows + h) * d.cols + w) * d.channels + k]
}

fn distance(x: &FeatureTensor, a: (usize, usize, usize), b: (usize, usize, usize)) -> f64 {
    let mut sum = 0.0;
    for k in 0..x.dims().channels {
        let diff = at(x, a.0, a.1, a.2, k) - at(x, b.0, b.1, b.2, k);
        sum += diff * diff;
    }
    sum.sqrt()
}

fn brute_frame_diff(x: &FeatureTensor) -> Vec<f64> {
    let d = x.dims();
    let mut out = Vec::new();
    for t in 0..d.frames {
        for h in 0..d.rows {
            for w in 0..d.cols {
                let v = if d.frames == 1 {
                    0.0
                } else if t == 0 {
                    distance(x, (1, h, w), (0, h, w))
                } else {
                    distance(x, (t, h, w), (t - 1, h, w))
                };
                out.push(v);
            }
        }
    }
    out
}

fn brute_spatial_diff(x: &FeatureTensor) -> Vec<f64> {
    let d = x.dims();
    let mut out = Vec::new();
    for t in 0..d.frames {
        for h in 0..d.rows as i64 {
            for w in 0..d.cols as i64 {
                let mut dists = Vec::new();
                for (dh, dw) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                    let (nh, nw) = (h + dh, w + dw);
                    if nh >= 0 && nw >= 0 && nh < d.rows as i64 && nw < d.cols as i64 {
                        dists.push(distance(x, (t, h as usize, w as usize), (t, nh as usize, nw as usize)));
                    }
                }
                out.push(if dists.is_empty() { 0.0 } else { dists.iter().sum::<f64>() / dists.len() as f64 });
            }
        }
    }
    out
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol, "index {i}: {x} vs {y}");
    }
}

fn random_dims(r: &mut rand_chacha::ChaCha8Rng) -> [usize; 4] {
    [r.random_range(1..6), r.random_range(1..4), r.random_range(1..4), r.random_range(1..9)]
}

#[test]
fn frame_diff_matches_loop() {
    let x = random_tensor(7, [4, 2, 2, 8]);
    assert_close(&frame_diff(&x).values, &brute_frame_diff(&x), 1e-12);
    let mut r = rng(70);
    for seed in 0..50 {
        let x = random_tensor(seed, random_dims(&mut r));
        assert_close(&frame_diff(&x).values, &brute_frame_diff(&x), 1e-12);
    }
}

#[test]
fn spatial_diff_matches_loop() {
    let x = random_tensor(8, [2, 3, 3, 4]);
    assert_close(&spatial_diff(&x).values, &brute_spatial_diff(&x), 1e-12);
    let mut r = rng(80);
    for seed in 100..150 {
        let x = random_tensor(seed, random_dims(&mut r));
        assert_close(&spatial_diff(&x).values, &brute_spatial_diff(&x), 1e-12);
    }
}

#[test]
fn analytic_examples() {
    let x = FeatureTensor::new(GridDims::new(2, 1, 1, 3), vec![0.0, 0.0, 0.0, 3.0, 4.0, 0.0]).unwrap();
    assert_eq!(frame_diff(&x).values, vec![5.0, 5.0]);
    let x = FeatureTensor::new(GridDims::new(1, 1, 2, 2), vec![0.0, 0.0, 0.0, 3.0]).unwrap();
    assert_eq!(spatial_diff(&x).values, vec![3.0, 3.0]);
    let constant = FeatureTensor::new(GridDims::new(3, 2, 2, 2), vec![1.5; 24]).unwrap();
    assert!(frame_diff(&constant).values.iter().all(|&v| v == 0.0));
    assert!(spatial_diff(&constant).values.iter().all(|&v| v == 0.0));
}

#[test]
fn normalization_by_hand() {
    let raw = ScoreGrid::new(PatchGrid::new(3, 1, 1), vec![0.0, 5.0, 10.0]).unwrap();
    assert_eq!(normalize_saliency(&raw, DEFAULT_FLOOR).unwrap().weights, vec![0.05, 0.5, 1.0]);
    let flat = ScoreGrid::new(PatchGrid::new(3, 1, 1), vec![2.0; 3]).unwrap();
    assert_eq!(normalize_saliency(&flat, DEFAULT_FLOOR).unwrap().weights, vec![0.05; 3]);
}

fn rank_order(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    idx
}

#[test]
fn normalized_grid_follows_reference_sort() {
    let mut r = rng(90);
    for _ in 0..20 {
        let n = r.random_range(2..60);
        let values: Vec<f64> = (0..n).map(|_| r.random_range(0.0..3.0)).collect();
        let map = normalize_saliency(&ScoreGrid::new(PatchGrid::new(n, 1, 1), values.clone()).unwrap(), DEFAULT_FLOOR).unwrap();
        let max = map.weights.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(max, 1.0);
        assert!(map.weights.iter().all(|&w| w >= DEFAULT_FLOOR));
        let order = rank_order(&values);
        for pair in order.windows(2) {
            assert!(map.weights[pair[0]] <= map.weights[pair[1]]);
        }
    }
}

#[test]
fn affine_inputs_keep_rank_order() {
    let mut r = rng(91);
    for seed in 0..50 {
        let x = random_tensor(200 + seed, [r.random_range(2..6), r.random_range(1..4), r.random_range(1..4), 5]);
        let (alpha, beta) = (r.random_range(0.1..10.0), r.random_range(-5.0..5.0));
        let y = FeatureTensor::new(x.dims(), x.data().iter().map(|v| alpha * v + beta).collect()).unwrap();
        for mode in [MotionMode::TemporalOnly, MotionMode::SpatialOnly, MotionMode::Spatiotemporal] {
            let raw = |t: &FeatureTensor| match mode {
                MotionMode::TemporalOnly => frame_diff(t).values,
                MotionMode::SpatialOnly => spatial_diff(t).values,
                MotionMode::Spatiotemporal => saliency_map(t, mode, DEFAULT_FLOOR).unwrap().weights,
            };
            assert_eq!(rank_order(&raw(&x)), rank_order(&raw(&y)), "seed {seed} {mode:?}");
            let wx = saliency_map(&x, mode, DEFAULT_FLOOR).unwrap();
            let wy = saliency_map(&y, mode, DEFAULT_FLOOR).unwrap();
            assert_eq!(rank_order(&wx.weights), rank_order(&wy.weights), "seed {seed} {mode:?}");
        }
    }
}

#[test]
fn weighting_matches_triple_loop() {
    let x = random_tensor(300, [3, 2, 3, 4]);
    let mut r = rng(301);
    let weights: Vec<f64> = (0..18).map(|_| r.random_range(0.05..1.0)).collect();
    let raw = ScoreGrid::new(x.grid(), weights).unwrap();
    let map = normalize_saliency(&raw, DEFAULT_FLOOR).unwrap();
    let out = apply_weights(&x, &map).unwrap();
    let d = x.dims();
    for t in 0..d.frames {
        for h in 0..d.rows {
            for w in 0..d.cols {
                let wt = map.weights[(t * d.rows + h) * d.cols + w];
                for k in 0..d.channels {
                    assert!((at(&out, t, h, w, k) - wt * at(&x, t, h, w, k)).abs() <= 1e-15);
                }
            }
        }
    }
}
