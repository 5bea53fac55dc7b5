//! Confusion-matrix accounting and the macro-averaged scores derived from it.
//!
//! The matrix always spans the full label space so reports from different
//! rounds are comparable; macro averages are taken over an explicit class
//! scope, since early rounds know only a subset of classes.

use crate::data::ClassId;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Row-major `classes x classes` count matrix, rows = truth, cols = predicted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    classes: usize,
    counts: Vec<u64>,
}

impl Confusion {
    pub fn new(classes: usize) -> Self {
        Confusion { classes, counts: vec![0; classes * classes] }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn record(&mut self, truth: ClassId, predicted: ClassId) -> Result<()> {
        let (t, p) = (truth as usize, predicted as usize);
        if t >= self.classes || p >= self.classes {
            return Err(Error::OutOfRange {
                what: "class id",
                got: t.max(p),
                limit: self.classes,
            });
        }
        self.counts[t * self.classes + p] += 1;
        Ok(())
    }

    pub fn count(&self, truth: ClassId, predicted: ClassId) -> u64 {
        self.counts[truth as usize * self.classes + predicted as usize]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let trace: u64 = (0..self.classes).map(|i| self.counts[i * self.classes + i]).sum();
        trace as f64 / total as f64
    }

    fn column_sum(&self, c: usize) -> u64 {
        (0..self.classes).map(|t| self.counts[t * self.classes + c]).sum()
    }

    fn row_sum(&self, t: usize) -> u64 {
        self.counts[t * self.classes..(t + 1) * self.classes].iter().sum()
    }

    /// TP / (TP + FP); 0/0 counts as 0.
    pub fn precision(&self, class: ClassId) -> f64 {
        let c = class as usize;
        ratio(self.counts[c * self.classes + c], self.column_sum(c))
    }

    /// TP / (TP + FN); 0/0 counts as 0.
    pub fn recall(&self, class: ClassId) -> f64 {
        let c = class as usize;
        ratio(self.counts[c * self.classes + c], self.row_sum(c))
    }

    /// Harmonic mean of precision and recall; 0 when both are 0.
    pub fn f1(&self, class: ClassId) -> f64 {
        let p = self.precision(class);
        let r = self.recall(class);
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    /// Accuracy over everything recorded plus macro precision/recall/F1 over
    /// the given class scope.
    pub fn scores(&self, scope: &[ClassId]) -> Result<Scores> {
        if scope.is_empty() {
            return Err(Error::Data("empty class scope".into()));
        }
        for &c in scope {
            if c as usize >= self.classes {
                return Err(Error::OutOfRange {
                    what: "scope class",
                    got: c as usize,
                    limit: self.classes,
                });
            }
        }
        let n = scope.len() as f64;
        Ok(Scores {
            accuracy: self.accuracy(),
            precision: scope.iter().map(|&c| self.precision(c)).sum::<f64>() / n,
            recall: scope.iter().map(|&c| self.recall(c)).sum::<f64>() / n,
            f1: scope.iter().map(|&c| self.f1(c)).sum::<f64>() / n,
        })
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Runs `predict` over every `(token ids, truth)` pair and accumulates the
/// confusion matrix over the full `classes`-wide label space.
pub fn evaluate<P>(mut predict: P, samples: &[(Vec<u32>, ClassId)], classes: usize) -> Result<Confusion>
where
    P: FnMut(&[u32]) -> Result<ClassId>,
{
    if samples.is_empty() {
        return Err(Error::Data("empty evaluation set".into()));
    }
    let mut confusion = Confusion::new(classes);
    for (ids, truth) in samples {
        confusion.record(*truth, predict(ids)?)?;
    }
    Ok(confusion)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// diag (10, 8, 9) with errors 0->1 twice, 1->2 once, 2->0 once.
    fn three_class() -> Confusion {
        let mut c = Confusion::new(3);
        for (truth, pred, times) in
            [(0, 0, 10), (1, 1, 8), (2, 2, 9), (0, 1, 2), (1, 2, 1), (2, 0, 1)]
        {
            for _ in 0..times {
                c.record(truth, pred).unwrap();
            }
        }
        c
    }

    #[test]
    fn three_class_counts_match_hand_computed_values() {
        let c = three_class();
        assert_eq!(c.total(), 31);
        assert!((c.accuracy() - 27.0 / 31.0).abs() < 1e-15);
        // class 0: TP 10, FP 1 (from 2), FN 2 (to 1)
        assert!((c.precision(0) - 10.0 / 11.0).abs() < 1e-15);
        assert!((c.recall(0) - 10.0 / 12.0).abs() < 1e-15);
        assert!((c.f1(0) - 20.0 / 23.0).abs() < 1e-15);
        // class 1: TP 8, FP 2, FN 1
        assert!((c.precision(1) - 0.8).abs() < 1e-15);
        assert!((c.recall(1) - 8.0 / 9.0).abs() < 1e-15);
        assert!((c.f1(1) - 16.0 / 19.0).abs() < 1e-15);
        // class 2: TP 9, FP 1, FN 1
        assert!((c.f1(2) - 0.9).abs() < 1e-15);
        let s = c.scores(&[0, 1, 2]).unwrap();
        assert!((s.f1 - 0.8705568268497423).abs() < 1e-12);
        assert!((s.precision - 0.8696969696969697).abs() < 1e-12);
        assert!((s.recall - 0.8740740740740741).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictions_score_one() {
        let mut c = Confusion::new(4);
        for class in 0..4u16 {
            for _ in 0..5 {
                c.record(class, class).unwrap();
            }
        }
        let s = c.scores(&[0, 1, 2, 3]).unwrap();
        assert_eq!(s.accuracy, 1.0);
        assert_eq!(s.precision, 1.0);
        assert_eq!(s.recall, 1.0);
        assert_eq!(s.f1, 1.0);
    }

    #[test]
    fn class_absent_from_truth_and_predictions_contributes_zero() {
        let mut c = Confusion::new(3);
        c.record(0, 0).unwrap();
        c.record(1, 1).unwrap();
        assert_eq!(c.precision(2), 0.0);
        assert_eq!(c.recall(2), 0.0);
        assert_eq!(c.f1(2), 0.0);
        let s = c.scores(&[0, 1, 2]).unwrap();
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn narrower_scope_ignores_out_of_scope_classes() {
        let c = three_class();
        let s = c.scores(&[2]).unwrap();
        assert!((s.f1 - 0.9).abs() < 1e-15);
        // accuracy still spans every recorded sample
        assert!((s.accuracy - 27.0 / 31.0).abs() < 1e-15);
    }

    #[test]
    fn scores_are_recomputable_from_stored_counts() {
        let c = three_class();
        let json = serde_json::to_string(&c).unwrap();
        let back: Confusion = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.scores(&[0, 1, 2]).unwrap(), c.scores(&[0, 1, 2]).unwrap());
    }

    #[test]
    fn out_of_range_ids_are_rejected() {
        let mut c = Confusion::new(2);
        assert!(c.record(2, 0).is_err());
        assert!(c.record(0, 5).is_err());
        assert!(c.scores(&[0, 3]).is_err());
        assert!(c.scores(&[]).is_err());
    }

    #[test]
    fn evaluate_accumulates_over_closure_predictions() {
        let samples: Vec<(Vec<u32>, ClassId)> =
            vec![(vec![2, 4], 0), (vec![2, 5], 1), (vec![2, 6], 1)];
        // predict: first token after CLS decides, token 5 misread as class 0
        let confusion = evaluate(
            |ids| Ok(if ids[1] == 4 || ids[1] == 5 { 0 } else { 1 }),
            &samples,
            2,
        )
        .unwrap();
        assert_eq!(confusion.count(0, 0), 1);
        assert_eq!(confusion.count(1, 0), 1);
        assert_eq!(confusion.count(1, 1), 1);
        assert!((confusion.accuracy() - 2.0 / 3.0).abs() < 1e-15);
        assert!(evaluate(|_| Ok(0), &[], 2).is_err());
    }
}
