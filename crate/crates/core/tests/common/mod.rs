//! Independent oracles shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use msplab::datagen::{Dataset, PlaceholderPolicy, Sample, SyntheticTask, FIRST_CONTENT_TOKEN};

/// |cos(a, b)| from explicit sums, with the norm product clamped at `eps`.
pub fn brute_abs_cosine(a: &[f64], b: &[f64], eps: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    (dot / (na.sqrt() * nb.sqrt()).max(eps)).abs()
}

pub fn brute_accuracy(preds: &[usize], labels: &[usize]) -> f64 {
    let mut hit = 0usize;
    for i in 0..preds.len() {
        if preds[i] == labels[i] {
            hit += 1;
        }
    }
    hit as f64 / preds.len() as f64
}

/// Macro F1 recounted class by class from precision and recall, with an
/// undefined class scoring 0.
pub fn brute_f1_macro(scores: &[Vec<f64>], labels: &[Vec<u8>], threshold: f64) -> f64 {
    let k = labels[0].len();
    let mut total = 0.0;
    for c in 0..k {
        let pred: Vec<bool> = scores.iter().map(|s| s[c] > threshold).collect();
        let truth: Vec<bool> = labels.iter().map(|l| l[c] == 1).collect();
        let tp = pred.iter().zip(&truth).filter(|(p, t)| **p && **t).count() as f64;
        let pp = pred.iter().filter(|p| **p).count() as f64;
        let ap = truth.iter().filter(|t| **t).count() as f64;
        if tp == 0.0 {
            continue;
        }
        let precision = tp / pp;
        let recall = tp / ap;
        total += 2.0 * precision * recall / (precision + recall);
    }
    total / k as f64
}

/// Bayes classifier for the synthetic generative model.
///
/// The image factor posterior is a Gaussian likelihood over the prototypes;
/// the text factor is read off the first content token. A placeholder in
/// either slot leaves that factor uniform, and ties go to the lowest index.
pub struct BayesOracle<'a> {
    task: &'a SyntheticTask,
    policy: PlaceholderPolicy,
}

impl<'a> BayesOracle<'a> {
    pub fn new(task: &'a SyntheticTask) -> Self {
        BayesOracle {
            task,
            policy: PlaceholderPolicy::default(),
        }
    }

    fn image_log_lik(&self, s: &Sample) -> Vec<f64> {
        let sigma = self.task.spec().noise_sigma;
        self.task
            .prototypes()
            .iter()
            .map(|p| {
                let d2: f64 = p.iter().zip(&s.image.pixels).map(|(x, y)| (x - y) * (x - y)).sum();
                -d2 / (2.0 * sigma * sigma)
            })
            .collect()
    }

    fn text_factor(&self, s: &Sample) -> Option<usize> {
        if self.policy.is_text_placeholder(&s.text) {
            return None;
        }
        let first = s.text[1];
        assert!(first >= FIRST_CONTENT_TOKEN);
        (0..self.task.spec().b).find(|&b| self.task.signature_tokens(b).contains(&first))
    }

    pub fn predict(&self, s: &Sample) -> usize {
        let spec = self.task.spec();
        let a = if self.policy.is_image_placeholder(&s.image) {
            0
        } else {
            let ll = self.image_log_lik(s);
            let mut best = 0;
            for i in 1..ll.len() {
                if ll[i] > ll[best] {
                    best = i;
                }
            }
            best
        };
        let b = self.text_factor(s).unwrap_or(0);
        a * spec.b + b
    }

    /// Empirical accuracy of the Bayes rule on `ds`.
    pub fn accuracy(&self, ds: &Dataset) -> f64 {
        let preds: Vec<usize> = ds.samples.iter().map(|s| self.predict(s)).collect();
        let labels: Vec<usize> = ds.samples.iter().map(|s| s.label.class().unwrap()).collect();
        brute_accuracy(&preds, &labels)
    }

    /// Expected accuracy of the Bayes rule when the image factor is always
    /// recovered: present text pins `b`, absent text leaves 1/B.
    pub fn ceiling(&self, ds: &Dataset) -> f64 {
        let b = self.task.spec().b as f64;
        let a = self.task.spec().a as f64;
        let mut total = 0.0;
        for s in &ds.samples {
            let img = if self.policy.is_image_placeholder(&s.image) { 1.0 / a } else { 1.0 };
            let txt = if self.policy.is_text_placeholder(&s.text) { 1.0 / b } else { 1.0 };
            total += img * txt;
        }
        total / ds.len() as f64
    }
}
