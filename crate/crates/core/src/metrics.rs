//! Classification metrics over class-index vectors.

use crate::error::{Error, Result};

fn check(truth: &[usize], pred: &[usize]) -> Result<()> {
    if truth.len() != pred.len() {
        return Err(Error::dim(format!(
            "{} true labels vs {} predictions",
            truth.len(),
            pred.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::invalid("metrics need at least one sample"));
    }
    Ok(())
}

pub fn accuracy(truth: &[usize], pred: &[usize]) -> Result<f64> {
    check(truth, pred)?;
    let hits = truth.iter().zip(pred).filter(|(t, p)| t == p).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Counts with rows indexed by true class and columns by predicted class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(truth: &[usize], pred: &[usize], classes: usize) -> Result<Self> {
        check(truth, pred)?;
        let mut counts = vec![0u64; classes * classes];
        for (&t, &p) in truth.iter().zip(pred) {
            if t >= classes || p >= classes {
                return Err(Error::invalid(format!(
                    "label {} outside [0, {classes})",
                    t.max(p)
                )));
            }
            counts[t * classes + p] += 1;
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn true_count(&self, class: usize) -> u64 {
        (0..self.classes).map(|p| self.get(class, p)).sum()
    }

    pub fn predicted_count(&self, class: usize) -> u64 {
        (0..self.classes).map(|t| self.get(t, class)).sum()
    }

    /// `None` when the class never occurs in the truth.
    pub fn recall(&self, class: usize) -> Option<f64> {
        let n = self.true_count(class);
        (n > 0).then(|| self.get(class, class) as f64 / n as f64)
    }

    pub fn precision(&self, class: usize) -> Option<f64> {
        let n = self.predicted_count(class);
        (n > 0).then(|| self.get(class, class) as f64 / n as f64)
    }

    /// `2PR / (P + R)`, and 0 whenever it is undefined.
    pub fn f1(&self, class: usize) -> f64 {
        let p = self.precision(class).unwrap_or(0.0);
        let r = self.recall(class).unwrap_or(0.0);
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    /// Mean recall over the classes present in the truth.
    pub fn average_recall(&self) -> f64 {
        let recalls: Vec<f64> = (0..self.classes).filter_map(|c| self.recall(c)).collect();
        recalls.iter().sum::<f64>() / recalls.len() as f64
    }
}

/// Unweighted mean of per-class recall. Classes absent from `truth` are
/// left out of the mean.
pub fn average_recall(truth: &[usize], pred: &[usize], classes: usize) -> Result<f64> {
    Ok(ConfusionMatrix::new(truth, pred, classes)?.average_recall())
}

pub fn f1_per_class(truth: &[usize], pred: &[usize], classes: usize) -> Result<Vec<f64>> {
    let cm = ConfusionMatrix::new(truth, pred, classes)?;
    Ok((0..classes).map(|c| cm.f1(c)).collect())
}
