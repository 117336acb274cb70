//! Per-class Bernoulli acceptance sampling.
//!
//! Row `i` is kept independently with probability `a[label(i)]`. The
//! under-sampling rule keeps every minority row and thins the other classes
//! to the minority size in expectation; the bagging rule targets an expected
//! total of `s` rows split evenly across classes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng;

/// Acceptance probability per class, each in `(0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceRule {
    per_class: Vec<f64>,
}

impl AcceptanceRule {
    pub fn new(per_class: Vec<f64>) -> Result<Self> {
        if per_class.is_empty() {
            return Err(Error::Empty("acceptance rule needs at least one class"));
        }
        if let Some(a) = per_class.iter().find(|&&a| !(a > 0.0 && a <= 1.0)) {
            return Err(Error::config(format!(
                "acceptance probability {a} outside (0, 1]"
            )));
        }
        Ok(Self { per_class })
    }

    pub fn per_class(&self) -> &[f64] {
        &self.per_class
    }

    pub fn prob(&self, class: usize) -> f64 {
        self.per_class[class]
    }

    pub fn max_prob(&self) -> f64 {
        self.per_class.iter().copied().fold(0.0, f64::max)
    }

    /// `sum_m a_m * n_(m)`.
    pub fn expected_size(&self, ds: &Dataset) -> f64 {
        self.per_class
            .iter()
            .zip(ds.class_counts())
            .map(|(a, &c)| a * c as f64)
            .sum()
    }
}

/// `a_m = n_(1) / n_(m)`; the minority class gets exactly 1.
pub fn undersample_rule(ds: &Dataset) -> AcceptanceRule {
    let n1 = ds.minority_count();
    let per_class = ds
        .class_counts()
        .iter()
        .map(|&c| if c == n1 { 1.0 } else { n1 as f64 / c as f64 })
        .collect();
    AcceptanceRule { per_class }
}

/// `a_m = s / (M * n_(m))` for an expected subsample size
/// `1 <= s <= M * n_(1)`.
pub fn underbag_rule(ds: &Dataset, s: f64) -> Result<AcceptanceRule> {
    let m = ds.n_classes() as f64;
    let cap = m * ds.minority_count() as f64;
    if !(s >= 1.0 && s <= cap) {
        return Err(Error::config(format!(
            "expected subsample size s = {s} outside [1, M*n_(1) = {cap}]"
        )));
    }
    let per_class = ds
        .class_counts()
        .iter()
        .map(|&c| {
            // exact 1 at the cap so this coincides with `undersample_rule`
            let denom = m * c as f64;
            if s == denom { 1.0 } else { s / denom }
        })
        .collect();
    Ok(AcceptanceRule { per_class })
}

/// Accepted row ids, strictly increasing, plus the seed that produced them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubSample {
    pub indices: Vec<usize>,
    pub round_seed: u64,
}

impl SubSample {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// One uniform draw per row in row order; row `i` is kept iff the draw is
/// below its class probability. May return an empty subsample.
pub fn draw(ds: &Dataset, rule: &AcceptanceRule, seed: u64) -> SubSample {
    let mut rng = rng::stream(seed);
    let indices = ds
        .labels()
        .iter()
        .enumerate()
        .filter_map(|(i, &y)| {
            let u: f64 = rng.random();
            (u < rule.prob(y)).then_some(i)
        })
        .collect();
    SubSample {
        indices,
        round_seed: seed,
    }
}
