use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fraction of positions where `preds` and `labels` agree.
pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::Metric(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Metric("accuracy of an empty set".into()));
    }
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1Score {
    pub value: f64,
    /// Some class had undefined precision or recall and contributed 0.
    pub zero_division: bool,
}

/// Per-class confusion counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl ClassCounts {
    /// `2PR/(P+R)`, written as `2TP/(2TP+FP+FN)`; 0 when that is 0/0.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }

    pub fn undefined(&self) -> bool {
        self.tp + self.fp == 0 || self.tp + self.fn_ == 0
    }
}

pub fn macro_from_counts(counts: &[ClassCounts]) -> Result<F1Score> {
    if counts.is_empty() {
        return Err(Error::Metric("F1 over zero classes".into()));
    }
    let value = counts.iter().map(ClassCounts::f1).sum::<f64>() / counts.len() as f64;
    Ok(F1Score {
        value,
        zero_division: counts.iter().any(ClassCounts::undefined),
    })
}

/// Unweighted mean over classes of F1, predicting class `c` positive when
/// `scores[i][c] > threshold`. Scores are probabilities.
pub fn f1_macro(scores: &[Vec<f64>], labels: &[Vec<u8>], threshold: f64) -> Result<F1Score> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!("threshold {threshold} outside (0, 1)")));
    }
    if scores.len() != labels.len() {
        return Err(Error::Metric(format!("{} score rows for {} label rows", scores.len(), labels.len())));
    }
    let Some(k) = labels.first().map(Vec::len) else {
        return Err(Error::Metric("F1 of an empty set".into()));
    };
    let mut counts = vec![ClassCounts::default(); k];
    for (i, (s, l)) in scores.iter().zip(labels).enumerate() {
        if s.len() != k || l.len() != k {
            return Err(Error::Metric(format!("row {i} has {} scores and {} labels, expected {k}", s.len(), l.len())));
        }
        for c in 0..k {
            match (s[c] > threshold, l[c] != 0) {
                (true, true) => counts[c].tp += 1,
                (true, false) => counts[c].fp += 1,
                (false, true) => counts[c].fn_ += 1,
                (false, false) => {}
            }
        }
    }
    macro_from_counts(&counts)
}

/// Macro F1 of single-label predictions over `k` classes.
pub fn f1_macro_classes(preds: &[usize], labels: &[usize], k: usize) -> Result<F1Score> {
    if preds.len() != labels.len() {
        return Err(Error::Metric(format!("{} predictions for {} labels", preds.len(), labels.len())));
    }
    if preds.is_empty() {
        return Err(Error::Metric("F1 of an empty set".into()));
    }
    let mut counts = vec![ClassCounts::default(); k];
    for (&p, &l) in preds.iter().zip(labels) {
        if p >= k || l >= k {
            return Err(Error::Metric(format!("class index outside [0, {k})")));
        }
        if p == l {
            counts[p].tp += 1;
        } else {
            counts[p].fp += 1;
            counts[l].fn_ += 1;
        }
    }
    macro_from_counts(&counts)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
