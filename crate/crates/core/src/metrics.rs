//! Classification metrics: one-vs-rest confusion counts, per-class accuracy,
//! class-occurrence-weighted group accuracy and the inter-group fairness
//! variance.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One-vs-rest confusion counts of one class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ClassCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub classes: Vec<ClassCounts>,
    pub samples: u64,
}

/// Count per class from predicted and true labels.
pub fn confusion(predictions: &[u32], labels: &[u32], classes: usize) -> Result<ConfusionCounts> {
    if predictions.len() != labels.len() {
        return Err(Error::input(alloc::format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = predictions.iter().chain(labels).find(|&&l| l as usize >= classes) {
        return Err(Error::input(alloc::format!("class {bad} outside the {classes}-class range")));
    }
    let mut c = vec![ClassCounts::default(); classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        if p == y {
            c[y as usize].tp += 1;
        } else {
            c[y as usize].fn_ += 1;
            c[p as usize].fp += 1;
        }
    }
    let n = labels.len() as u64;
    for k in &mut c {
        k.tn = n - k.tp - k.fp - k.fn_;
    }
    Ok(ConfusionCounts { classes: c, samples: n })
}

/// Definition of a class's accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccuracyMode {
    /// `TP / (TP + TN + FP + FN)`: correct predictions of the class over all
    /// evaluated samples. With `J` balanced classes a perfect classifier
    /// scores `1/J` per class.
    #[default]
    Literal,
    /// `TP / (TP + FN)`: fraction of the class's samples classified
    /// correctly.
    Recall,
}

/// Per-class accuracy; an empty denominator yields 0.
pub fn per_class_accuracy(counts: &ConfusionCounts, mode: AccuracyMode) -> Vec<f64> {
    counts
        .classes
        .iter()
        .map(|c| {
            let den = match mode {
                AccuracyMode::Literal => c.total(),
                AccuracyMode::Recall => c.tp + c.fn_,
            };
            if den == 0 {
                0.0
            } else {
                c.tp as f64 / den as f64
            }
        })
        .collect()
}

/// Fraction of correct predictions over all samples.
pub fn top1(counts: &ConfusionCounts) -> f64 {
    if counts.samples == 0 {
        return 0.0;
    }
    counts.classes.iter().map(|c| c.tp).sum::<u64>() as f64 / counts.samples as f64
}

/// Group accuracy: per-class accuracies weighted by the number of the
/// group's samples of each class, `Σ_j n_j·acc_j / Σ_j n_j`.
pub fn group_accuracy(per_class: &[f64], class_occurrences: &[usize]) -> Result<f64> {
    if per_class.len() != class_occurrences.len() {
        return Err(Error::input("class occurrence histogram has the wrong length"));
    }
    let total: usize = class_occurrences.iter().sum();
    if total == 0 {
        return Err(Error::input("group evaluation set is empty"));
    }
    let weighted: f64 = per_class.iter().zip(class_occurrences).map(|(a, &n)| a * n as f64).sum();
    Ok(weighted / total as f64)
}

/// Population variance of the group accuracies.
pub fn fairness_variance(group_accuracies: &[f64]) -> Result<f64> {
    if group_accuracies.len() < 2 {
        return Err(Error::input("fairness variance needs at least two groups"));
    }
    let n = group_accuracies.len() as f64;
    let mean = group_accuracies.iter().sum::<f64>() / n;
    Ok(group_accuracies.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n)
}

/// Evaluation summary of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub top1: f64,
    pub per_class: Vec<f64>,
    pub group_accuracy: Vec<f64>,
    /// `None` with fewer than two groups.
    pub fairness_variance: Option<f64>,
}

/// Build a report. `group_histograms` holds each group's class occurrence
/// counts; groups with empty histograms get accuracy 0.
pub fn report(counts: &ConfusionCounts, mode: AccuracyMode, group_histograms: &[Vec<usize>]) -> Result<MetricsReport> {
    let per_class = per_class_accuracy(counts, mode);
    let group_accuracy = group_histograms
        .iter()
        .map(|h| {
            if h.iter().all(|&n| n == 0) {
                Ok(0.0)
            } else {
                group_accuracy(&per_class, h)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let fairness_variance = if group_accuracy.len() >= 2 {
        Some(fairness_variance(&group_accuracy)?)
    } else {
        None
    };
    Ok(MetricsReport {
        top1: top1(counts),
        per_class,
        group_accuracy,
        fairness_variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_single_error() {
        let c = confusion(&[1], &[0], 2).unwrap();
        assert_eq!(c.classes[0].fn_, 1);
        assert_eq!(c.classes[1].fp, 1);
        assert!(c.classes.iter().all(|k| k.total() == 1));
        assert!(confusion(&[0], &[2], 2).is_err());
        assert!(confusion(&[0, 1], &[0], 2).is_err());
    }

    #[test]
    fn literal_and_recall_modes() {
        let y = [0, 1, 0, 1, 0, 1, 0, 1, 0, 1];
        let c = confusion(&y, &y, 2).unwrap();
        assert_eq!(per_class_accuracy(&c, AccuracyMode::Literal), vec![0.5, 0.5]);
        assert_eq!(per_class_accuracy(&c, AccuracyMode::Recall), vec![1.0, 1.0]);
        let wrong: Vec<u32> = y.iter().map(|v| 1 - v).collect();
        let c = confusion(&wrong, &y, 2).unwrap();
        assert_eq!(per_class_accuracy(&c, AccuracyMode::Literal), vec![0.0, 0.0]);
        assert_eq!(per_class_accuracy(&c, AccuracyMode::Recall), vec![0.0, 0.0]);
    }

    #[test]
    fn group_accuracy_weights() {
        assert!((group_accuracy(&[0.8, 0.4], &[3, 1]).unwrap() - 0.7).abs() < 1e-15);
        assert_eq!(group_accuracy(&[0.8, 0.4, 0.1], &[0, 5, 0]).unwrap(), 0.4);
        assert!(group_accuracy(&[0.5], &[0]).is_err());
    }

    #[test]
    fn variance_examples() {
        assert_eq!(fairness_variance(&[0.3, 0.3]).unwrap(), 0.0);
        assert_eq!(fairness_variance(&[1.0, 0.0]).unwrap(), 0.25);
        assert!((fairness_variance(&[0.6, 0.5, 0.4]).unwrap() - 0.02 / 3.0).abs() < 1e-12);
        assert!(fairness_variance(&[0.5]).is_err());
    }
}
