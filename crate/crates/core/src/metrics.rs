//! Ordinal evaluation metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::ClassIndex;

/// Rows are true classes, columns are predicted classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    n_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn from_predictions(
        preds: &[ClassIndex],
        labels: &[ClassIndex],
        n_classes: usize,
    ) -> Result<Self> {
        if preds.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} predictions for {} labels",
                preds.len(),
                labels.len()
            )));
        }
        if preds.is_empty() {
            return Err(Error::invalid("no predictions to evaluate"));
        }
        if n_classes < 2 {
            return Err(Error::invalid("need at least 2 classes"));
        }
        let mut counts = vec![0u64; n_classes * n_classes];
        for (&p, &t) in preds.iter().zip(labels) {
            if p >= n_classes || t >= n_classes {
                return Err(Error::invalid(format!(
                    "class index out of range for {n_classes} classes (pred {p}, label {t})"
                )));
            }
            counts[t * n_classes + p] += 1;
        }
        Ok(Self { n_classes, counts })
    }

    /// Builds a matrix from explicit rows of counts.
    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let n = rows.len();
        if n < 2 || rows.iter().any(|r| r.len() != n) {
            return Err(Error::invalid("confusion matrix must be square with at least 2 classes"));
        }
        Ok(Self {
            n_classes: n,
            counts: rows.concat(),
        })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.n_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes).map(|i| self.get(i, i)).sum()
    }

    pub fn row_totals(&self) -> Vec<u64> {
        self.counts.chunks(self.n_classes).map(|r| r.iter().sum()).collect()
    }

    pub fn col_totals(&self) -> Vec<u64> {
        (0..self.n_classes)
            .map(|j| (0..self.n_classes).map(|i| self.get(i, j)).sum())
            .collect()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.n_classes).map(<[u64]>::to_vec).collect()
    }

    /// Quadratic weighted kappa with weights `(i - j)^2`.
    pub fn qwk(&self) -> Result<f64> {
        self.weighted_kappa(|i, j| ((i as f64) - (j as f64)).powi(2))
    }

    /// Cohen's kappa `1 - Σ w O / Σ w E` for an arbitrary disagreement weight.
    /// Returns 1 when both weighted sums vanish (all mass on one diagonal cell).
    pub fn weighted_kappa(&self, weight: impl Fn(usize, usize) -> f64) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(Error::invalid("kappa of an empty confusion matrix"));
        }
        let total = total as f64;
        let rows = self.row_totals();
        let cols = self.col_totals();
        let mut observed = 0.0;
        let mut expected = 0.0;
        for (i, &r) in rows.iter().enumerate() {
            for (j, &c) in cols.iter().enumerate() {
                let w = weight(i, j);
                observed += w * self.get(i, j) as f64;
                expected += w * r as f64 * c as f64 / total;
            }
        }
        if expected == 0.0 {
            return Ok(1.0);
        }
        Ok(1.0 - observed / expected)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub qwk: f64,
    pub accuracy: f64,
    pub mae: f64,
}

pub fn confusion_matrix(
    preds: &[ClassIndex],
    labels: &[ClassIndex],
    n_classes: usize,
) -> Result<ConfusionMatrix> {
    ConfusionMatrix::from_predictions(preds, labels, n_classes)
}

pub fn qwk(cm: &ConfusionMatrix) -> Result<f64> {
    cm.qwk()
}

pub fn summary_metrics(
    preds: &[ClassIndex],
    labels: &[ClassIndex],
    n_classes: usize,
) -> Result<MetricSummary> {
    let cm = ConfusionMatrix::from_predictions(preds, labels, n_classes)?;
    let total = cm.total() as f64;
    let abs_err: usize = preds.iter().zip(labels).map(|(p, t)| p.abs_diff(*t)).sum();
    Ok(MetricSummary {
        qwk: cm.qwk()?,
        accuracy: cm.trace() as f64 / total,
        mae: abs_err as f64 / total,
    })
}
