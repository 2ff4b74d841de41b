//! Label-level evaluation: prediction/gold CSVs and leave-one-out
//! nearest-centroid classification of fused clip vectors.

use std::collections::BTreeMap;
use std::path::Path;

use grace_core::metrics::{uar, war, ConfusionMatrix};
use serde::Serialize;

use crate::error::CliError;
use crate::pipeline::FusedRow;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub samples: usize,
    pub uar: f64,
    pub war: f64,
    pub categories: Vec<String>,
    /// `null` for categories without true samples.
    pub recalls: Vec<Option<f64>>,
    pub confusion: Vec<Vec<u64>>,
}

/// Category order: the configured labels, then any others seen, sorted.
pub fn category_order<'a>(configured: &[String], seen: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let mut order = configured.to_vec();
    let mut extra: Vec<String> = seen
        .into_iter()
        .filter(|l| !configured.iter().any(|c| c == l))
        .map(str::to_string)
        .collect();
    extra.sort();
    extra.dedup();
    order.extend(extra);
    order
}

/// Scores `(gold, predicted)` label pairs.
pub fn evaluate_pairs(configured: &[String], pairs: &[(String, String)]) -> Result<EvalReport, CliError> {
    let categories = category_order(configured, pairs.iter().flat_map(|(g, p)| [g.as_str(), p.as_str()]));
    let index = |l: &str| categories.iter().position(|c| c == l).expect("category listed");
    let matrix = ConfusionMatrix::from_pairs(
        categories.len(),
        pairs.iter().map(|(g, p)| (index(g), index(p))),
    )
    .map_err(|e| CliError::Data(e.to_string()))?;
    let metric_err = |e: grace_core::metrics::MetricsError| CliError::Data(e.to_string());
    Ok(EvalReport {
        samples: pairs.len(),
        uar: uar(&matrix).map_err(metric_err)?,
        war: war(&matrix).map_err(metric_err)?,
        recalls: matrix.recalls(),
        confusion: (0..categories.len()).map(|c| matrix.row(c).to_vec()).collect(),
        categories,
    })
}

/// `id,label` rows keyed by id.
pub fn read_label_csv(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let bad = |m: String| CliError::Data(format!("{}: {m}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let headers = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| bad(format!("missing column `{name}`")))
    };
    let (id_col, label_col) = (col("id")?, col("label")?);
    let mut out = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        let id = record.get(id_col).unwrap_or_default().to_string();
        let label = record.get(label_col).unwrap_or_default().to_string();
        if out.insert(id.clone(), label).is_some() {
            return Err(bad(format!("duplicate id {id:?}")));
        }
    }
    Ok(out)
}

/// Joins predictions to gold labels by id; every gold id needs a prediction.
pub fn join_labels(
    gold: &BTreeMap<String, String>,
    pred: &BTreeMap<String, String>,
) -> Result<Vec<(String, String)>, CliError> {
    gold.iter()
        .map(|(id, g)| {
            pred.get(id)
                .map(|p| (g.clone(), p.clone()))
                .ok_or_else(|| CliError::Data(format!("no prediction for {id:?}")))
        })
        .collect()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// For each row, the label whose centroid over the *other* rows is most
/// cosine-similar. Ties go to the label listed first in `categories`.
pub fn nearest_centroid_loo(rows: &[FusedRow], categories: &[String]) -> Result<Vec<String>, CliError> {
    let dim = rows.first().map_or(0, |r| r.vector.len());
    if rows.iter().any(|r| r.vector.len() != dim) {
        return Err(CliError::Data("fused vectors differ in length".into()));
    }
    let index = |l: &str| categories.iter().position(|c| c == l);
    let mut sums = vec![vec![0.0; dim]; categories.len()];
    let mut counts = vec![0usize; categories.len()];
    for r in rows {
        let c = index(&r.label).ok_or_else(|| CliError::Data(format!("unknown label {:?}", r.label)))?;
        for (s, v) in sums[c].iter_mut().zip(&r.vector) {
            *s += v;
        }
        counts[c] += 1;
    }
    let mut predictions = Vec::with_capacity(rows.len());
    for r in rows {
        let own = index(&r.label).expect("checked above");
        let mut best: Option<(usize, f64)> = None;
        for c in 0..categories.len() {
            let n = counts[c] - usize::from(c == own);
            if n == 0 {
                continue;
            }
            let centroid: Vec<f64> = sums[c]
                .iter()
                .zip(&r.vector)
                .map(|(s, v)| if c == own { (s - v) / n as f64 } else { s / n as f64 })
                .collect();
            let score = cosine(&r.vector, &centroid);
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((c, score));
            }
        }
        let (c, _) = best.ok_or_else(|| CliError::Data("need at least two fused vectors".into()))?;
        predictions.push(categories[c].clone());
    }
    Ok(predictions)
}
