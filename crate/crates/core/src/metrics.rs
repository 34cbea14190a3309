//! Classification metrics: confusion matrix, per-class and support-weighted F1.

use crate::error::{contract, Result};

/// `counts[true][pred]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Confusion {
    pub classes: usize,
    pub counts: Vec<Vec<u64>>,
}

impl Confusion {
    pub fn new(predictions: &[usize], labels: &[usize], classes: usize) -> Result<Self> {
        if predictions.len() != labels.len() {
            return contract(format!(
                "{} predictions for {} labels",
                predictions.len(),
                labels.len()
            ));
        }
        let mut counts = vec![vec![0u64; classes]; classes];
        for (&p, &y) in predictions.iter().zip(labels) {
            if p >= classes || y >= classes {
                return contract(format!("class id outside 0..{classes} (pred {p}, label {y})"));
            }
            counts[y][p] += 1;
        }
        Ok(Self { classes, counts })
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn predicted(&self, class: usize) -> u64 {
        self.counts.iter().map(|r| r[class]).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// `2TP / (2TP + FP + FN)`, which equals `2PR / (P + R)` and is 0 when
    /// the class is neither present nor predicted.
    pub fn f1(&self, class: usize) -> f64 {
        let tp = self.counts[class][class];
        let fp = self.predicted(class) - tp;
        let fn_ = self.support(class) - tp;
        let denom = 2 * tp + fp + fn_;
        if denom == 0 {
            0.0
        } else {
            (2 * tp) as f64 / denom as f64
        }
    }

    pub fn per_class_f1(&self) -> Vec<f64> {
        (0..self.classes).map(|k| self.f1(k)).collect()
    }

    /// Support-weighted mean of the per-class F1 scores.
    pub fn weighted_f1(&self) -> f64 {
        let total = self.total() as f64;
        let mut acc = 0.0;
        for k in 0..self.classes {
            let n = self.support(k);
            if n > 0 {
                acc += n as f64 * self.f1(k);
            }
        }
        acc / total
    }

    pub fn accuracy(&self) -> f64 {
        let correct: u64 = (0..self.classes).map(|k| self.counts[k][k]).sum();
        correct as f64 / self.total() as f64
    }
}

/// Weighted F1 over `classes` classes.
pub fn wf1(predictions: &[usize], labels: &[usize], classes: usize) -> Result<f64> {
    if labels.is_empty() {
        return contract("wf1 of an empty input");
    }
    Ok(Confusion::new(predictions, labels, classes)?.weighted_f1())
}

/// Evaluation summary for one model on one dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub per_class_f1: Vec<f64>,
    pub wf1: f64,
    pub confusion: Confusion,
    /// Fraction of noise-flipped training samples predicted as their flipped label.
    pub memorization_rate: f64,
    /// Fraction of evaluation samples where both branch heads agree on argmax.
    pub branch_agreement: f64,
}

impl MetricsReport {
    pub fn new(predictions: &[usize], labels: &[usize], classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return contract("metrics of an empty input");
        }
        let confusion = Confusion::new(predictions, labels, classes)?;
        Ok(Self {
            per_class_f1: confusion.per_class_f1(),
            wf1: confusion.weighted_f1(),
            confusion,
            memorization_rate: 0.0,
            branch_agreement: 0.0,
        })
    }
}

/// Fraction of `a[i] == b[i]`; 0 for empty input.
pub fn agreement(a: &[usize], b: &[usize]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_all_wrong() {
        let y = [0, 1, 2, 3, 1, 1];
        assert_eq!(wf1(&y, &y, 4).unwrap(), 1.0);
        assert_eq!(wf1(&[2; 5], &[1; 5], 4).unwrap(), 0.0);
        assert!(wf1(&[], &[], 4).is_err());
        assert!(wf1(&[0], &[4], 4).is_err());
    }

    #[test]
    fn small_counting_case() {
        // class 0: tp 1, fp 1, fn 1 -> P = R = 1/2
        // class 1: tp 2, fp 1, fn 1 -> P = R = 2/3
        let c = Confusion::new(&[0, 1, 1, 1, 0], &[0, 0, 1, 1, 1], 2).unwrap();
        let f = c.per_class_f1();
        assert!((f[0] - 0.5).abs() < 1e-15);
        assert!((f[1] - 2.0 / 3.0).abs() < 1e-15);
        let w = c.weighted_f1();
        assert!((w - (0.4 * 0.5 + 0.6 * 2.0 / 3.0)).abs() < 1e-15);
        assert_eq!(w, (2.0 * 0.5 + 3.0 * f[1]) / 5.0);
        assert_eq!(c.support(1), 3);
    }

    #[test]
    fn balanced_equals_macro() {
        let y = [0, 0, 1, 1, 2, 2, 3, 3];
        let p = [0, 1, 1, 2, 2, 3, 3, 0];
        let c = Confusion::new(&p, &y, 4).unwrap();
        let macro_f1 = c.per_class_f1().iter().sum::<f64>() / 4.0;
        assert!((c.weighted_f1() - macro_f1).abs() < 1e-12);
    }

    #[test]
    fn report_rows_sum_to_support() {
        let r = MetricsReport::new(&[0, 0, 0], &[0, 1, 2], 4).unwrap();
        for k in 0..4 {
            assert_eq!(r.confusion.counts[k].iter().sum::<u64>(), r.confusion.support(k));
        }
        assert_eq!(r.confusion.predicted(0), 3);
        assert_eq!(agreement(&[1, 2], &[1, 3]), 0.5);
    }
}
