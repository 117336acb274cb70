//! Per-class recall, AM measure, balanced risk and timings.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Evaluation of one prediction set. Classes are 0-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    pub recalls: Vec<f64>,
    pub am: f64,
    pub balanced_risk: f64,
    pub accuracy: f64,
    pub fit_seconds: f64,
    pub predict_seconds: f64,
}

/// Neumaier-compensated sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    c: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.c
    }
}

impl FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = KahanSum::default();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// `1{pred != true} / (M * pi[true])`.
pub fn balanced_loss(truth: usize, pred: usize, pi: &[f64]) -> f64 {
    if truth == pred {
        0.0
    } else {
        1.0 / (pi.len() as f64 * pi[truth])
    }
}

/// Builds the report. The balanced risk is the mean balanced loss with
/// `pi` set to the class frequencies of `truth`.
pub fn evaluate(truth: &[usize], pred: &[usize], n_classes: usize) -> Result<EvalReport> {
    if truth.len() != pred.len() {
        return Err(Error::Dimension {
            expected: truth.len(),
            got: pred.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::Empty("no labels to evaluate"));
    }
    let mut confusion = vec![vec![0u64; n_classes]; n_classes];
    for (&t, &p) in truth.iter().zip(pred) {
        if t >= n_classes || p >= n_classes {
            return Err(Error::config(format!(
                "label {} outside 0..{n_classes}",
                t.max(p)
            )));
        }
        confusion[t][p] += 1;
    }
    let row_sums: Vec<u64> = confusion.iter().map(|r| r.iter().sum()).collect();
    if let Some(m) = row_sums.iter().position(|&c| c == 0) {
        return Err(Error::MissingClass(m));
    }
    let recalls: Vec<f64> = (0..n_classes)
        .map(|m| confusion[m][m] as f64 / row_sums[m] as f64)
        .collect();
    let am = recalls.iter().copied().collect::<KahanSum>().value() / n_classes as f64;

    let n = truth.len() as f64;
    let pi: Vec<f64> = row_sums.iter().map(|&c| c as f64 / n).collect();
    let balanced_risk = truth
        .iter()
        .zip(pred)
        .map(|(&t, &p)| balanced_loss(t, p, &pi))
        .collect::<KahanSum>()
        .value()
        / n;
    let correct: u64 = (0..n_classes).map(|m| confusion[m][m]).sum();
    Ok(EvalReport {
        confusion,
        recalls,
        am,
        balanced_risk,
        accuracy: correct as f64 / n,
        fit_seconds: 0.0,
        predict_seconds: 0.0,
    })
}

impl EvalReport {
    /// Report from a confusion matrix alone. The balanced risk sums the
    /// loss of each off-diagonal cell times its count.
    pub fn from_confusion(confusion: Vec<Vec<u64>>) -> Result<Self> {
        let m = confusion.len();
        let row_sums: Vec<u64> = confusion.iter().map(|r| r.iter().sum()).collect();
        if let Some(c) = row_sums.iter().position(|&c| c == 0) {
            return Err(Error::MissingClass(c));
        }
        let n: u64 = row_sums.iter().sum();
        let nf = n as f64;
        let recalls: Vec<f64> = (0..m)
            .map(|c| confusion[c][c] as f64 / row_sums[c] as f64)
            .collect();
        let am = recalls.iter().copied().collect::<KahanSum>().value() / m as f64;
        let pi: Vec<f64> = row_sums.iter().map(|&c| c as f64 / nf).collect();
        let mut risk = KahanSum::default();
        for (t, row) in confusion.iter().enumerate() {
            for (p, &count) in row.iter().enumerate() {
                risk.add(count as f64 * balanced_loss(t, p, &pi));
            }
        }
        let correct: u64 = (0..m).map(|c| confusion[c][c]).sum();
        Ok(Self {
            confusion,
            recalls,
            am,
            balanced_risk: risk.value() / nf,
            accuracy: correct as f64 / nf,
            fit_seconds: 0.0,
            predict_seconds: 0.0,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.recalls.len()
    }

    pub fn with_timings(mut self, fit: Duration, predict: Duration) -> Self {
        self.fit_seconds = fit.as_secs_f64();
        self.predict_seconds = predict.as_secs_f64();
        self
    }

    /// `|AM - (1 - balanced risk)|`.
    pub fn identity_gap(&self) -> f64 {
        (self.am - (1.0 - self.balanced_risk)).abs()
    }

    pub fn csv_header(n_classes: usize) -> Vec<String> {
        let mut h: Vec<String> = ["am", "balanced_risk", "accuracy", "fit_seconds", "predict_seconds"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        h.extend((0..n_classes).map(|m| format!("recall_{m}")));
        h
    }

    pub fn csv_row(&self) -> Vec<String> {
        let mut r = vec![
            self.am.to_string(),
            self.balanced_risk.to_string(),
            self.accuracy.to_string(),
            self.fit_seconds.to_string(),
            self.predict_seconds.to_string(),
        ];
        r.extend(self.recalls.iter().map(|v| v.to_string()));
        r
    }
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

pub fn mean_sd(values: &[f64]) -> MeanSd {
    let n = values.len() as f64;
    if values.is_empty() {
        return MeanSd { mean: f64::NAN, sd: f64::NAN };
    }
    let mean = values.iter().copied().collect::<KahanSum>().value() / n;
    let sd = if values.len() < 2 {
        0.0
    } else {
        let ss = values.iter().map(|v| (v - mean).powi(2)).collect::<KahanSum>().value();
        (ss / (n - 1.0)).sqrt()
    };
    MeanSd { mean, sd }
}

/// Runs `f` and returns its result with the elapsed monotonic time.
pub fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let y = [0, 1, 2, 1, 0];
        let r = evaluate(&y, &y, 3).unwrap();
        assert_eq!(r.recalls, vec![1.0, 1.0, 1.0]);
        assert_eq!(r.am, 1.0);
        assert_eq!(r.balanced_risk, 0.0);
    }

    #[test]
    fn counting_example() {
        let r = evaluate(&[0, 0, 0, 0, 1, 1], &[0, 0, 1, 1, 1, 1], 2).unwrap();
        assert_eq!(r.recalls, vec![0.5, 1.0]);
        assert_eq!(r.am, 0.75);
        assert_eq!(r.confusion, vec![vec![2, 2], vec![0, 2]]);
        assert!(r.identity_gap() <= 1e-12);
    }

    #[test]
    fn all_majority_on_skewed_data() {
        let truth: Vec<usize> = (0..100).map(|i| usize::from(i == 0)).collect();
        let r = evaluate(&truth, &[0; 100], 2).unwrap();
        assert!((r.accuracy - 0.99).abs() < 1e-15);
        assert_eq!(r.am, 0.5);
    }

    #[test]
    fn balanced_loss_examples() {
        let pi = [0.9, 0.1];
        assert_eq!(balanced_loss(1, 1, &pi), 0.0);
        assert!((balanced_loss(1, 0, &pi) - 5.0).abs() < 1e-12);
        assert!((balanced_loss(0, 1, &pi) - 1.0 / 1.8).abs() < 1e-12);
    }

    #[test]
    fn missing_class_named() {
        assert!(matches!(
            evaluate(&[0, 0, 2], &[0, 1, 2], 3),
            Err(Error::MissingClass(1))
        ));
        assert!(evaluate(&[0, 1], &[0], 2).is_err());
    }

    #[test]
    fn constant_classifier_scores_one_over_m() {
        let truth = [0, 1, 2, 2, 1, 0, 0, 3];
        for c in 0..4 {
            let r = evaluate(&truth, &[c; 8], 4).unwrap();
            assert!((r.am - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn from_confusion_agrees_with_evaluate() {
        let truth = [0, 0, 1, 2, 2, 2, 1, 0, 2];
        let pred = [0, 2, 1, 2, 0, 2, 0, 0, 1];
        let a = evaluate(&truth, &pred, 3).unwrap();
        let b = EvalReport::from_confusion(a.confusion.clone()).unwrap();
        assert_eq!(a.recalls, b.recalls);
        assert_eq!(a.am, b.am);
        assert!((a.balanced_risk - b.balanced_risk).abs() < 1e-15);
        assert!(b.identity_gap() < 1e-12);
    }

    #[test]
    fn compensated_sum() {
        let xs = [1e16, 1.0, -1e16];
        assert_eq!(xs.iter().copied().collect::<KahanSum>().value(), 1.0);
    }

    #[test]
    fn mean_sd_values() {
        let s = mean_sd(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.sd - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn json_field_names() {
        let r = evaluate(&[0, 1], &[0, 1], 2).unwrap();
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        for key in ["confusion", "recalls", "am", "balanced_risk", "accuracy", "fit_seconds", "predict_seconds"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(EvalReport::csv_header(2).len(), r.csv_row().len());
    }
}
