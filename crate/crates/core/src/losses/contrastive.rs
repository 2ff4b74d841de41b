use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use super::LossError;

pub const DEFAULT_TEMPERATURE: f64 = 0.07;

const NORM_TOL: f64 = 1e-9;

/// Paired visual/text features for `N` samples and their categories.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    f_v: Array2<f64>,
    f_t: Array2<f64>,
    labels: Vec<usize>,
}

impl ContrastiveBatch {
    /// Requires matching shapes and unit-norm rows (within 1e-9).
    pub fn new(f_v: Array2<f64>, f_t: Array2<f64>, labels: Vec<usize>) -> Result<Self, LossError> {
        let batch = Self::new_unchecked(f_v, f_t, labels)?;
        for (side, m) in [("f_v", &batch.f_v), ("f_t", &batch.f_t)] {
            for (row, r) in m.rows().into_iter().enumerate() {
                let norm = r.dot(&r).sqrt();
                if (norm - 1.0).abs() > NORM_TOL {
                    return Err(LossError::NotNormalized { side, row, norm });
                }
            }
        }
        Ok(batch)
    }

    /// Shape and finiteness checks only. Used for finite-difference probes,
    /// where perturbed rows are no longer exactly unit length.
    pub fn new_unchecked(
        f_v: Array2<f64>,
        f_t: Array2<f64>,
        labels: Vec<usize>,
    ) -> Result<Self, LossError> {
        if f_v.dim() != f_t.dim() {
            return Err(LossError::InvalidBatch(format!(
                "visual features {:?} vs text features {:?}",
                f_v.dim(),
                f_t.dim()
            )));
        }
        if f_v.nrows() != labels.len() || labels.is_empty() {
            return Err(LossError::InvalidBatch(format!(
                "{} labels for {} feature rows",
                labels.len(),
                f_v.nrows()
            )));
        }
        if f_v.iter().chain(f_t.iter()).any(|v| !v.is_finite()) {
            return Err(LossError::InvalidBatch("non-finite feature".into()));
        }
        Ok(Self { f_v, f_t, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn visual(&self) -> ArrayView2<'_, f64> {
        self.f_v.view()
    }

    pub fn text(&self) -> ArrayView2<'_, f64> {
        self.f_t.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

/// Same-category convex mixing of each sample with a random partner.
///
/// The coefficient is drawn from `Beta(alpha, alpha)`; the same coefficient
/// mixes the visual and the text feature, and both are renormalized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mixup {
    pub alpha: f64,
    pub seed: u64,
}

impl Default for Mixup {
    fn default() -> Self {
        Self { alpha: 0.2, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupConOutput {
    pub value: f64,
    pub grad_v: Array2<f64>,
    pub grad_t: Array2<f64>,
    /// Anchors without a same-category partner; they contribute nothing.
    pub skipped: Vec<usize>,
}

struct MixPlan {
    partner: Vec<usize>,
    coef: Vec<f64>,
}

fn draw_mix(labels: &[usize], mixup: &Mixup) -> Result<MixPlan, LossError> {
    let beta = Beta::new(mixup.alpha, mixup.alpha)
        .map_err(|e| LossError::InvalidConfig(format!("mixup alpha {}: {e}", mixup.alpha)))?;
    let mut rng = ChaCha8Rng::seed_from_u64(mixup.seed);
    let mut partner = Vec::with_capacity(labels.len());
    let mut coef = Vec::with_capacity(labels.len());
    for &y in labels {
        let pool: Vec<usize> = (0..labels.len()).filter(|&j| labels[j] == y).collect();
        partner.push(pool[rng.random_range(0..pool.len())]);
        coef.push(beta.sample(&mut rng));
    }
    Ok(MixPlan { partner, coef })
}

/// Mixed and renormalized rows, plus the pre-normalization norms.
fn mix_rows(m: ArrayView2<'_, f64>, plan: &MixPlan) -> (Array2<f64>, Vec<f64>) {
    let mut out = Array2::zeros(m.dim());
    let mut norms = Vec::with_capacity(m.nrows());
    for i in 0..m.nrows() {
        let lam = plan.coef[i];
        let mixed: Array1<f64> = &m.row(i) * lam + &m.row(plan.partner[i]) * (1.0 - lam);
        let norm = mixed.dot(&mixed).sqrt();
        out.row_mut(i).assign(&(&mixed / norm));
        norms.push(norm);
    }
    (out, norms)
}

/// Back-propagates gradients on mixed unit rows to the raw rows.
fn unmix_grad(grad: &Array2<f64>, mixed: &Array2<f64>, norms: &[f64], plan: &MixPlan) -> Array2<f64> {
    let mut out = Array2::zeros(grad.dim());
    for i in 0..grad.nrows() {
        let u = mixed.row(i);
        let g = grad.row(i);
        let radial = u.dot(&g);
        let d_mixed: Array1<f64> = (&g - &(&u * radial)) / norms[i];
        let lam = plan.coef[i];
        let mut own = out.row_mut(i);
        own.scaled_add(lam, &d_mixed);
        out.row_mut(plan.partner[i]).scaled_add(1.0 - lam, &d_mixed);
    }
    out
}

/// Loss over the pooled `2N` embeddings `[f_v; f_t]`.
///
/// For anchor `f_v⁽ⁱ⁾` the positives are the text features of the other
/// samples sharing its category, and the softmax denominator runs over every
/// pooled embedding except the anchor itself. Anchors with no positive are
/// skipped; if every anchor is skipped the loss is undefined.
fn pooled_supcon(
    f_v: ArrayView2<'_, f64>,
    f_t: ArrayView2<'_, f64>,
    labels: &[usize],
    tau: f64,
) -> Result<SupConOutput, LossError> {
    let n = labels.len();
    let mut pooled = Array2::zeros((2 * n, f_v.ncols()));
    pooled.slice_mut(s![..n, ..]).assign(&f_v);
    pooled.slice_mut(s![n.., ..]).assign(&f_t);
    let mut grad = Array2::<f64>::zeros(pooled.dim());
    let mut value = 0.0;
    let mut skipped = Vec::new();

    for i in 0..n {
        let positives: Vec<usize> = (0..n).filter(|&p| p != i && labels[p] == labels[i]).collect();
        if positives.is_empty() {
            skipped.push(i);
            continue;
        }
        let anchor = pooled.row(i).to_owned();
        let logits: Array1<f64> = pooled.dot(&anchor) / tau;
        let m = logits
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != i)
            .map(|(_, &v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != i)
            .map(|(_, &v)| (v - m).exp())
            .sum();
        let lse = m + z.ln();
        let inv_p = 1.0 / positives.len() as f64;
        value += lse - inv_p * positives.iter().map(|&p| logits[n + p]).sum::<f64>();

        for k in (0..2 * n).filter(|&k| k != i) {
            let pi = (logits[k] - lse).exp();
            let pos = if k >= n && positives.contains(&(k - n)) {
                inv_p
            } else {
                0.0
            };
            let w = (pi - pos) / tau;
            let zk = pooled.row(k).to_owned();
            grad.row_mut(i).scaled_add(w, &zk);
            grad.row_mut(k).scaled_add(w, &anchor);
        }
    }
    if skipped.len() == n {
        return Err(LossError::NoPositives);
    }
    for &i in &skipped {
        log::warn!("contrastive anchor {i} has no same-category partner; skipped");
    }
    let grad_t = grad.slice(s![n.., ..]).to_owned();
    let grad_v = grad.slice_axis(Axis(0), (..n).into()).to_owned();
    Ok(SupConOutput {
        value,
        grad_v,
        grad_t,
        skipped,
    })
}

/// Supervised contrastive loss with temperature `tau`, gradients with
/// respect to both feature matrices. With `mixup`, features are first mixed
/// within categories and gradients flow back through the mixing.
pub fn supcon_loss(
    batch: &ContrastiveBatch,
    tau: f64,
    mixup: Option<&Mixup>,
) -> Result<SupConOutput, LossError> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(LossError::InvalidConfig(format!("temperature {tau} must be positive")));
    }
    let Some(mixup) = mixup else {
        return pooled_supcon(batch.visual(), batch.text(), batch.labels(), tau);
    };
    let plan = draw_mix(batch.labels(), mixup)?;
    let (mv, nv) = mix_rows(batch.visual(), &plan);
    let (mt, nt) = mix_rows(batch.text(), &plan);
    if nv.iter().chain(&nt).any(|&n| !(n > 1e-12)) {
        return Err(LossError::InvalidBatch(
            "mixup produced a zero vector (antiparallel partners)".into(),
        ));
    }
    let out = pooled_supcon(mv.view(), mt.view(), batch.labels(), tau)?;
    Ok(SupConOutput {
        value: out.value,
        grad_v: unmix_grad(&out.grad_v, &mv, &nv, &plan),
        grad_t: unmix_grad(&out.grad_t, &mt, &nt, &plan),
        skipped: out.skipped,
    })
}
