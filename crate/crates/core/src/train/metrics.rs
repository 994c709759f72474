use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_lengths(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    Ok(())
}

/// Area under the ROC curve from the Mann-Whitney statistic with midranks for ties.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let pos = labels.iter().filter(|l| **l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateLabels);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of doubled midranks keeps the arithmetic in integers.
    let mut rank_sum2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid2 = (i + 1 + j + 1) as u64;
        rank_sum2 += mid2 * order[i..=j].iter().filter(|&&k| labels[k]).count() as u64;
        i = j + 1;
    }
    let (p, n) = (pos as u64, neg as u64);
    let u2 = rank_sum2 - p * (p + 1);
    Ok(u2 as f64 / (2 * p * n) as f64)
}

/// Average precision: `Σ (R_k − R_{k−1}) P_k` over descending distinct score thresholds.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let pos = labels.iter().filter(|l| **l).count();
    if pos == 0 {
        return Err(Error::DegenerateLabels);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

/// Precision of the positive predictions `score >= threshold`; 0 when nothing is predicted positive.
pub fn precision_at(scores: &[f64], labels: &[bool], threshold: f64) -> Result<f64> {
    check_lengths(scores, labels)?;
    let (mut tp, mut fp) = (0usize, 0usize);
    for (&s, &y) in scores.iter().zip(labels) {
        if s >= threshold {
            if y {
                tp += 1;
            } else {
                fp += 1;
            }
        }
    }
    Ok(if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 })
}

/// Macro-averaged recall over the classes present in `targets`.
pub fn balanced_accuracy<T: Ord + Copy>(predictions: &[T], targets: &[T]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::ShapeMismatch("predictions and targets differ in length".into()));
    }
    let mut per_class: BTreeMap<T, (usize, usize)> = BTreeMap::new();
    for (&p, &t) in predictions.iter().zip(targets) {
        let e = per_class.entry(t).or_default();
        e.1 += 1;
        if p == t {
            e.0 += 1;
        }
    }
    if per_class.is_empty() {
        return Err(Error::EmptyCohort("no targets for balanced accuracy".into()));
    }
    Ok(per_class.values().map(|(c, n)| *c as f64 / *n as f64).sum::<f64>() / per_class.len() as f64)
}

/// Binary classification metrics; AUROC and APS absent when only one class occurs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub n: usize,
    pub positives: usize,
    pub auroc: Option<f64>,
    pub aps: Option<f64>,
    pub precision: f64,
    pub balanced_accuracy: f64,
}

/// `probabilities` are sigmoid outputs; the decision threshold is 0.5.
pub fn binary_metrics(probabilities: &[f64], labels: &[bool]) -> Result<BinaryMetrics> {
    check_lengths(probabilities, labels)?;
    let preds: Vec<bool> = probabilities.iter().map(|p| *p >= 0.5).collect();
    Ok(BinaryMetrics {
        n: labels.len(),
        positives: labels.iter().filter(|l| **l).count(),
        auroc: auroc(probabilities, labels).ok(),
        aps: average_precision(probabilities, labels).ok(),
        precision: precision_at(probabilities, labels, 0.5)?,
        balanced_accuracy: if labels.is_empty() { 0.0 } else { balanced_accuracy(&preds, labels)? },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub group: String,
    pub metrics: BinaryMetrics,
}

/// Metrics per group id, ordered by group.
pub fn group_metrics(probabilities: &[f64], labels: &[bool], groups: &[String]) -> Result<Vec<GroupMetrics>> {
    check_lengths(probabilities, labels)?;
    if groups.len() != labels.len() {
        return Err(Error::ShapeMismatch("one group per example".into()));
    }
    let mut by: BTreeMap<&str, (Vec<f64>, Vec<bool>)> = BTreeMap::new();
    for ((p, y), g) in probabilities.iter().zip(labels).zip(groups) {
        let e = by.entry(g.as_str()).or_default();
        e.0.push(*p);
        e.1.push(*y);
    }
    by.into_iter()
        .map(|(g, (p, y))| {
            Ok(GroupMetrics {
                group: g.to_string(),
                metrics: binary_metrics(&p, &y)?,
            })
        })
        .collect()
}

/// Masked-diagnosis prediction quality.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MlmMetrics {
    pub selected: usize,
    pub loss: f64,
    /// Top-1 accuracy over selected positions.
    pub precision: f64,
    /// Share of selected positions whose top-1 prediction is correct and has probability above 0.5.
    pub precision_p50: f64,
    pub balanced_accuracy: f64,
}

/// Accumulates MLM predictions over many examples.
#[derive(Debug, Clone, Default)]
pub struct MlmTally {
    loss: f64,
    predictions: Vec<u32>,
    targets: Vec<u32>,
    confident_correct: usize,
}

impl MlmTally {
    pub fn push(&mut self, target: u32, predicted: u32, probability: f64, loss: f64) {
        self.loss += loss;
        self.predictions.push(predicted);
        self.targets.push(target);
        if predicted == target && probability > 0.5 {
            self.confident_correct += 1;
        }
    }

    pub fn merge(&mut self, other: MlmTally) {
        self.loss += other.loss;
        self.predictions.extend(other.predictions);
        self.targets.extend(other.targets);
        self.confident_correct += other.confident_correct;
    }

    pub fn finish(&self) -> MlmMetrics {
        let n = self.targets.len();
        if n == 0 {
            return MlmMetrics::default();
        }
        let correct = self.predictions.iter().zip(&self.targets).filter(|(p, t)| p == t).count();
        MlmMetrics {
            selected: n,
            loss: self.loss / n as f64,
            precision: correct as f64 / n as f64,
            precision_p50: self.confident_correct as f64 / n as f64,
            balanced_accuracy: balanced_accuracy(&self.predictions, &self.targets).unwrap_or(0.0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_examples() {
        assert_eq!(auroc(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
        assert_eq!(average_precision(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.5; 4], &[true, false, true, false]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.8, 0.6, 0.4, 0.2], &[true, false, true, false]).unwrap(), 0.75);
        assert!(matches!(auroc(&[0.1, 0.2], &[true, true]), Err(Error::DegenerateLabels)));
    }

    #[test]
    fn four_point_aps() {
        // thresholds 0.8, 0.6, 0.4, 0.2 give (P, R): (1, .5), (.5, .5), (2/3, 1), (.5, 1)
        let ap = average_precision(&[0.8, 0.6, 0.4, 0.2], &[true, false, true, false]).unwrap();
        assert!((ap - (0.5 * 1.0 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn binary_report_fields() {
        let m = binary_metrics(&[0.9, 0.7, 0.2, 0.6], &[true, false, false, true]).unwrap();
        assert_eq!(m.n, 4);
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.balanced_accuracy - 0.75).abs() < 1e-12);
        let one = binary_metrics(&[0.3], &[true]).unwrap();
        assert_eq!(one.auroc, None);
    }

    #[test]
    fn mlm_tally_variants() {
        let mut t = MlmTally::default();
        t.push(5, 5, 0.9, 0.1);
        t.push(5, 5, 0.4, 0.9);
        t.push(6, 5, 0.8, 2.0);
        let m = t.finish();
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.precision_p50 - 1.0 / 3.0).abs() < 1e-12);
        assert!((m.balanced_accuracy - 0.5).abs() < 1e-12);
    }

    #[test]
    fn groups_are_separated() {
        let g: Vec<String> = ["a", "b", "a", "b"].iter().map(|s| s.to_string()).collect();
        let rows = group_metrics(&[0.9, 0.1, 0.2, 0.8], &[true, false, false, true], &g).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].metrics.auroc, Some(1.0));
    }
}
