//! Classification methods behind a common interface, looked up by name.
//!
//! ```
//! use ubknn::methods::{MethodParams, Registry};
//! let registry = Registry::builtin();
//! assert_eq!(registry.names(), vec!["knn", "undersample-knn", "underbag-knn"]);
//! assert!(registry.get("underbag-knn").is_ok());
//! let _ = MethodParams::default();
//! ```

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::ensemble::{UnderBagConfig, UnderBagModel};
use crate::error::{Error, Result};
use crate::kdtree::DEFAULT_LEAF_SIZE;
use crate::knn::{argmax, KnnModel, PosteriorVector};
use crate::params::{self, Multipliers, SmoothnessSpec};
use crate::rng;
use crate::sampler;

/// Expected subsample size, either as a fraction `a` of `M * n_(1)` or as
/// an absolute count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsampleSize {
    Fraction(f64),
    Absolute(f64),
}

impl SubsampleSize {
    pub fn resolve(&self, ds: &Dataset) -> Result<f64> {
        let cap = (ds.n_classes() * ds.minority_count()) as f64;
        match *self {
            SubsampleSize::Fraction(a) => {
                if !(a > 0.0 && a <= 1.0) {
                    return Err(Error::config(format!("s fraction {a} outside (0, 1]")));
                }
                Ok(if a == 1.0 { cap } else { a * cap })
            }
            SubsampleSize::Absolute(s) => Ok(s),
        }
    }
}

/// Theory-driven parameters in place of `k`, `rounds` and `s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AutoParams {
    pub alpha: f64,
    pub mult: Multipliers,
}

impl Default for AutoParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            mult: Multipliers::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodParams {
    pub k: usize,
    pub rounds: usize,
    pub s: SubsampleSize,
    pub seed: u64,
    pub parallel: bool,
    pub leaf_size: usize,
    pub auto: Option<AutoParams>,
}

impl Default for MethodParams {
    fn default() -> Self {
        Self {
            k: 10,
            rounds: 10,
            s: SubsampleSize::Fraction(1.0),
            seed: 0,
            parallel: true,
            leaf_size: DEFAULT_LEAF_SIZE,
            auto: None,
        }
    }
}

/// The parameters a fitted model actually uses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolvedParams {
    pub k: usize,
    pub rounds: usize,
    pub s: f64,
}

pub trait Classifier: Send + Sync {
    fn name(&self) -> &'static str;
    fn fit(&self, ds: &Dataset, params: &MethodParams) -> Result<Box<dyn FittedClassifier>>;
}

pub trait FittedClassifier: Send + Sync {
    fn n_classes(&self) -> usize;

    fn resolved(&self) -> ResolvedParams;

    /// Neighbor votes per class; the posterior is `votes / denominator`.
    fn votes(&self, x: &[f64]) -> Vec<u64>;

    fn denominator(&self) -> u64;

    /// Cumulative votes for every `k` in `1..=k_max`.
    fn votes_by_k(&self, x: &[f64], k_max: usize) -> Vec<Vec<u64>>;

    fn posterior(&self, x: &[f64]) -> PosteriorVector {
        PosteriorVector::from_counts(&self.votes(x), self.denominator())
    }

    fn classify(&self, x: &[f64]) -> usize {
        argmax(&self.votes(x))
    }

    fn predict(&self, queries: ArrayView2<'_, f64>, parallel: bool) -> Vec<usize> {
        let one = |i: usize| self.classify(&queries.row(i).to_vec());
        if parallel {
            (0..queries.nrows()).into_par_iter().map(one).collect()
        } else {
            (0..queries.nrows()).map(one).collect()
        }
    }
}

fn prefix_votes(labels: &[usize], n_classes: usize, k_max: usize) -> Vec<Vec<u64>> {
    let mut acc = vec![0u64; n_classes];
    (0..k_max)
        .map(|j| {
            if let Some(&y) = labels.get(j) {
                acc[y] += 1;
            }
            acc.clone()
        })
        .collect()
}

struct FittedKnn {
    model: KnnModel,
    s: f64,
}

impl FittedClassifier for FittedKnn {
    fn n_classes(&self) -> usize {
        self.model.n_classes()
    }

    fn resolved(&self) -> ResolvedParams {
        ResolvedParams {
            k: self.model.k(),
            rounds: 1,
            s: self.s,
        }
    }

    fn votes(&self, x: &[f64]) -> Vec<u64> {
        self.model.label_counts(x)
    }

    fn denominator(&self) -> u64 {
        self.model.k() as u64
    }

    fn votes_by_k(&self, x: &[f64], k_max: usize) -> Vec<Vec<u64>> {
        prefix_votes(&self.model.neighbor_labels(x, k_max), self.n_classes(), k_max)
    }
}

fn auto_spec(ds: &Dataset, auto: &AutoParams) -> Result<SmoothnessSpec> {
    SmoothnessSpec::new(auto.alpha, ds.dim())
}

/// Plain k-NN over the whole training set.
pub struct StandardKnn;

impl Classifier for StandardKnn {
    fn name(&self) -> &'static str {
        "knn"
    }

    fn fit(&self, ds: &Dataset, p: &MethodParams) -> Result<Box<dyn FittedClassifier>> {
        let k = match &p.auto {
            Some(a) => params::choose_undersampling_k_with(ds.n(), &auto_spec(ds, a)?, &a.mult)?,
            None => p.k,
        };
        let rows: Vec<usize> = (0..ds.n()).collect();
        let model = KnnModel::fit_with_leaf_size(ds, &rows, k, p.leaf_size)?;
        Ok(Box::new(FittedKnn {
            model,
            s: ds.n() as f64,
        }))
    }
}

/// k-NN on one under-sampled copy of the training set. Uses the same
/// subsample as round 0 of under-bagging with the same seed.
pub struct UndersampleKnn;

impl Classifier for UndersampleKnn {
    fn name(&self) -> &'static str {
        "undersample-knn"
    }

    fn fit(&self, ds: &Dataset, p: &MethodParams) -> Result<Box<dyn FittedClassifier>> {
        let rule = sampler::undersample_rule(ds);
        let sample = sampler::draw(ds, &rule, rng::derive_seed(p.seed, 0));
        let k = match &p.auto {
            Some(a) => params::choose_undersampling_k_with(sample.len(), &auto_spec(ds, a)?, &a.mult)?,
            None => p.k,
        };
        let model = KnnModel::fit_with_leaf_size(ds, &sample.indices, k, p.leaf_size)?;
        Ok(Box::new(FittedKnn {
            model,
            s: rule.expected_size(ds),
        }))
    }
}

struct FittedUnderBag {
    model: UnderBagModel,
}

impl FittedClassifier for FittedUnderBag {
    fn n_classes(&self) -> usize {
        self.model.n_classes()
    }

    fn resolved(&self) -> ResolvedParams {
        let c = self.model.config();
        ResolvedParams {
            k: c.k,
            rounds: c.rounds,
            s: c.s,
        }
    }

    fn votes(&self, x: &[f64]) -> Vec<u64> {
        self.model.votes(x)
    }

    fn denominator(&self) -> u64 {
        let c = self.model.config();
        (c.k * c.rounds) as u64
    }

    fn votes_by_k(&self, x: &[f64], k_max: usize) -> Vec<Vec<u64>> {
        self.model.votes_by_k(x, k_max)
    }
}

/// Under-bagging k-NN.
pub struct UnderbagKnn;

impl UnderbagKnn {
    pub fn config(ds: &Dataset, p: &MethodParams) -> Result<UnderBagConfig> {
        let (k, rounds, s) = match &p.auto {
            Some(a) => {
                let c = params::choose_underbagging_with(
                    ds.n(),
                    ds.imbalance_ratio(),
                    &auto_spec(ds, a)?,
                    &a.mult,
                )?;
                (c.k, c.rounds, c.s as f64)
            }
            None => (p.k, p.rounds, p.s.resolve(ds)?),
        };
        Ok(UnderBagConfig {
            rounds,
            k,
            s,
            master_seed: p.seed,
            parallel: p.parallel,
            leaf_size: p.leaf_size,
        })
    }
}

impl Classifier for UnderbagKnn {
    fn name(&self) -> &'static str {
        "underbag-knn"
    }

    fn fit(&self, ds: &Dataset, p: &MethodParams) -> Result<Box<dyn FittedClassifier>> {
        let cfg = Self::config(ds, p)?;
        Ok(Box::new(FittedUnderBag {
            model: UnderBagModel::fit(ds, &cfg)?,
        }))
    }
}

/// Methods by name, in registration order.
pub struct Registry {
    methods: Vec<Box<dyn Classifier>>,
}

impl Registry {
    pub fn empty() -> Self {
        Self {
            methods: Vec::new(),
        }
    }

    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(StandardKnn));
        r.register(Box::new(UndersampleKnn));
        r.register(Box::new(UnderbagKnn));
        r
    }

    /// Adds a method, replacing any method of the same name.
    pub fn register(&mut self, method: Box<dyn Classifier>) {
        match self.methods.iter().position(|m| m.name() == method.name()) {
            Some(i) => self.methods[i] = method,
            None => self.methods.push(method),
        }
    }

    pub fn get(&self, name: &str) -> Result<&dyn Classifier> {
        self.methods
            .iter()
            .find(|m| m.name() == name)
            .map(|m| m.as_ref())
            .ok_or_else(|| Error::UnknownMethod(name.to_string()))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.methods.iter().map(|m| m.name()).collect()
    }
}
