//! Zero-shot evaluation and result summaries.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{cosine_scores, extract_features, Batch, ScoreMatrix, SimilarityClassifier};
use crate::params::ParamVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub top1: f64,
    pub top5: f64,
    pub mean_loss: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    top1: usize,
    topk: usize,
    loss: f64,
    scored: usize,
    n: usize,
}

impl Tally {
    fn merge(&mut self, other: Tally) {
        self.top1 += other.top1;
        self.topk += other.topk;
        self.loss += other.loss;
        self.scored += other.scored;
        self.n += other.n;
    }
}

/// Candidate columns sorted by score, ties to the lower class index.
fn ranking(row: &[f64], subset: &[usize]) -> Vec<usize> {
    let mut cand: Vec<usize> = subset.to_vec();
    cand.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    cand
}

fn tally_batch(
    theta: &ParamVector,
    classifier: &SimilarityClassifier,
    batch: &Batch,
    subset: &[usize],
) -> Result<Tally> {
    let feats = extract_features(theta, batch.inputs(), classifier)?;
    let scores = cosine_scores(feats.view(), classifier)?;
    let k = subset.len().min(5);
    let tau = classifier.logit_scale();
    let mut t = Tally {
        n: batch.len(),
        ..Default::default()
    };
    for (row, &y) in scores.view().outer_iter().zip(batch.labels()) {
        let row = row.to_vec();
        let ranked = ranking(&row, subset);
        if ranked[0] == y {
            t.top1 += 1;
        }
        if ranked[..k].contains(&y) {
            t.topk += 1;
        }
        if subset.contains(&y) {
            let m = subset.iter().map(|&c| tau * row[c]).fold(f64::NEG_INFINITY, f64::max);
            let lse = subset.iter().map(|&c| (tau * row[c] - m).exp()).sum::<f64>().ln() + m;
            t.loss += lse - tau * row[y];
            t.scored += 1;
        }
    }
    Ok(t)
}

/// Top-1/top-k accuracy against the classes in `class_subset` only.
///
/// Top-k uses `k = min(5, |subset|)`. The mean loss is the cross-entropy
/// restricted to the subset, averaged over samples whose label is in it.
/// Batches are tallied independently and merged in order.
pub fn evaluate(
    theta: &ParamVector,
    classifier: &SimilarityClassifier,
    split_name: &str,
    batches: &[Batch],
    class_subset: &[usize],
) -> Result<EvalReport> {
    if class_subset.is_empty() {
        return Err(Error::config("class subset is empty"));
    }
    let k = classifier.num_classes();
    if let Some(c) = class_subset.iter().find(|&&c| c >= k) {
        return Err(Error::config(format!("class {c} outside table of {k}")));
    }
    let mut total = Tally::default();
    for b in batches {
        total.merge(tally_batch(theta, classifier, b, class_subset)?);
    }
    if total.n == 0 {
        return Err(Error::config(format!("split {split_name} is empty")));
    }
    let n = total.n as f64;
    Ok(EvalReport {
        split: split_name.to_string(),
        top1: total.top1 as f64 / n,
        top5: total.topk as f64 / n,
        mean_loss: if total.scored == 0 {
            f64::NAN
        } else {
            total.loss / total.scored as f64
        },
        n: total.n,
    })
}

/// `n / sum(1 / v)`.
pub fn harmonic_mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::config("harmonic mean of nothing"));
    }
    if let Some(v) = values.iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::config(format!("harmonic mean needs positive values, got {v}")));
    }
    Ok(values.len() as f64 / values.iter().map(|v| 1.0 / v).sum::<f64>())
}

/// `ratio * a + (1 - ratio) * b`, elementwise.
pub fn prediction_ensemble(a: &ScoreMatrix, b: &ScoreMatrix, ratio: f64) -> Result<ScoreMatrix> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::config(format!("ensemble ratio {ratio} outside [0, 1]")));
    }
    let mixed: Array2<f64> = &a.view() * ratio + &b.view() * (1.0 - ratio);
    ScoreMatrix::new(mixed)
}
