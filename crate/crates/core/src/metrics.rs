//! Confusion-matrix accumulation, unweighted and weighted average recall.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("confusion matrix has no samples")]
    EmptyMatrix,
    #[error("category {index} out of range for {categories} categories")]
    OutOfRange { index: usize, categories: usize },
    #[error("cannot merge {0}x{0} matrix into {1}x{1}")]
    SizeMismatch(usize, usize),
}

/// Counts indexed `[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    categories: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(categories: usize) -> Self {
        Self {
            categories,
            counts: vec![0; categories * categories],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Self {
        let c = rows.len();
        assert!(rows.iter().all(|r| r.len() == c), "confusion matrix must be square");
        Self {
            categories: c,
            counts: rows.concat(),
        }
    }

    pub fn from_pairs(
        categories: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, MetricsError> {
        let mut m = Self::new(categories);
        for (gold, pred) in pairs {
            m.record(gold, pred)?;
        }
        Ok(m)
    }

    pub fn categories(&self) -> usize {
        self.categories
    }

    pub fn record(&mut self, gold: usize, pred: usize) -> Result<(), MetricsError> {
        for index in [gold, pred] {
            if index >= self.categories {
                return Err(MetricsError::OutOfRange {
                    index,
                    categories: self.categories,
                });
            }
        }
        self.counts[gold * self.categories + pred] += 1;
        Ok(())
    }

    pub fn get(&self, gold: usize, pred: usize) -> u64 {
        self.counts[gold * self.categories + pred]
    }

    pub fn row(&self, gold: usize) -> &[u64] {
        &self.counts[gold * self.categories..(gold + 1) * self.categories]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.categories).map(|c| self.get(c, c)).sum()
    }

    /// Elementwise sum; accumulation is commutative.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<(), MetricsError> {
        if other.categories != self.categories {
            return Err(MetricsError::SizeMismatch(other.categories, self.categories));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Recall per category; `None` for categories with no true samples.
    pub fn recalls(&self) -> Vec<Option<f64>> {
        (0..self.categories)
            .map(|c| {
                let n: u64 = self.row(c).iter().sum();
                (n > 0).then(|| self.get(c, c) as f64 / n as f64)
            })
            .collect()
    }
}

/// Mean per-category recall over the categories that have true samples.
pub fn uar(m: &ConfusionMatrix) -> Result<f64, MetricsError> {
    let recalls = m.recalls();
    let present: Vec<f64> = recalls.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(MetricsError::EmptyMatrix);
    }
    for (c, r) in recalls.iter().enumerate() {
        if r.is_none() {
            log::warn!("category {c} has no true samples; excluded from UAR");
        }
    }
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

/// Overall accuracy, `trace / total`.
pub fn war(m: &ConfusionMatrix) -> Result<f64, MetricsError> {
    let total = m.total();
    if total == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    Ok(m.trace() as f64 / total as f64)
}
