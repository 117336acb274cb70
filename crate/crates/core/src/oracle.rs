//! Reference computations used to check the fast paths.
//!
//! Nothing here is tuned for speed. Neighbor orders come from a full scan
//! sorted by `(squared distance, index)`; bagged weights come from the
//! Generalized Pascal distribution of the trial at which the `j`-th
//! acceptance occurs along that order.

use std::fmt;
use std::sync::Arc;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::kdtree::NeighborList;
use crate::knn::{argmax, PosteriorVector};
use crate::metrics::KahanSum;
use crate::sampler::{AcceptanceRule, SubSample};

fn squared(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + (x - y) * (x - y))
}

/// Indices of `rows` sorted by `(distance to x, index)`, with squared
/// distances.
pub fn brute_order(points: ArrayView2<'_, f64>, rows: &[usize], x: &[f64]) -> Vec<(f64, usize)> {
    let mut all: Vec<(f64, usize)> = rows
        .iter()
        .map(|&i| {
            let row = points.row(i);
            let d2 = match row.as_slice() {
                Some(r) => squared(r, x),
                None => squared(&row.to_vec(), x),
            };
            (d2, i)
        })
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all
}

/// Full-scan k-NN over every row of `points`.
pub fn brute_knn(points: ArrayView2<'_, f64>, x: &[f64], k: usize) -> Result<NeighborList> {
    let n = points.nrows();
    if x.len() != points.ncols() {
        return Err(Error::Dimension {
            expected: points.ncols(),
            got: x.len(),
        });
    }
    if k == 0 || k > n {
        return Err(Error::KTooLarge { k, n });
    }
    let rows: Vec<usize> = (0..n).collect();
    let order = brute_order(points, &rows, x);
    Ok(NeighborList {
        indices: order[..k].iter().map(|p| p.1).collect(),
        distances: order[..k].iter().map(|p| p.0.sqrt()).collect(),
    })
}

/// Success probabilities of independent trials and a target success count.
#[derive(Debug, Clone, PartialEq)]
pub struct GPParams {
    pub probs: Vec<f64>,
    pub j: usize,
}

impl GPParams {
    pub fn new(probs: Vec<f64>, j: usize) -> Result<Self> {
        if j == 0 {
            return Err(Error::config("success count j must be at least 1"));
        }
        if let Some(p) = probs.iter().find(|&&p| !(p > 0.0 && p <= 1.0)) {
            return Err(Error::config(format!("success probability {p} outside (0, 1]")));
        }
        Ok(Self { probs, j })
    }
}

/// `table[i - 1][j - 1]` is the probability that the `j`-th success happens
/// at trial `i`, for `i <= probs.len()` and `j <= j_max`.
pub fn gp_pmf_table(probs: &[f64], j_max: usize) -> Vec<Vec<f64>> {
    // dist[c] = P(c successes among the trials seen so far), c < j_max
    let mut dist = vec![0.0; j_max];
    if j_max > 0 {
        dist[0] = 1.0;
    }
    let mut table = Vec::with_capacity(probs.len());
    for &p in probs {
        let row: Vec<f64> = dist.iter().map(|&d| p * d).collect();
        for c in (0..j_max).rev() {
            let from_below = if c > 0 { dist[c - 1] * p } else { 0.0 };
            dist[c] = dist[c] * (1.0 - p) + from_below;
        }
        table.push(row);
    }
    table
}

/// Probability that the `j`-th success occurs at trial `i` (1-based).
pub fn gp_pmf(params: &GPParams, i: usize) -> f64 {
    if i < params.j || i == 0 || i > params.probs.len() {
        return 0.0;
    }
    gp_pmf_table(&params.probs[..i], params.j)[i - 1][params.j - 1]
}

/// Distribution of the number of successes among the first `ell` trials.
pub fn success_count_pmf(probs: &[f64], ell: usize) -> Vec<f64> {
    let mut dist = vec![0.0; ell + 1];
    dist[0] = 1.0;
    for (t, &p) in probs[..ell].iter().enumerate() {
        for c in (0..=t + 1).rev() {
            let from_below = if c > 0 { dist[c - 1] * p } else { 0.0 };
            dist[c] = dist[c] * (1.0 - p) + from_below;
        }
    }
    dist
}

/// `P(GP(j, p) > ell)`, the mass beyond trial `ell`, computed as the
/// probability of fewer than `j` successes in the first `ell` trials.
pub fn gp_tail(probs: &[f64], j: usize, ell: usize) -> f64 {
    let dist = success_count_pmf(probs, ell);
    dist.iter().take(j).copied().collect::<KahanSum>().value()
}

/// `exp(-(sum_{i<=ell} p_i - j)^2 / (2 ell))` when `sum_{i<=ell} p_i >= j`.
pub fn gp_tail_bound(probs: &[f64], j: usize, ell: usize) -> Option<f64> {
    let mass: f64 = probs[..ell].iter().copied().collect::<KahanSum>().value();
    let gap = mass - j as f64;
    (gap >= 0.0).then(|| (-(gap * gap) / (2.0 * ell as f64)).exp())
}

/// Exact infinite-bagging weights along the full-data neighbor order of `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct BaggedWeights {
    /// Dataset rows, nearest first.
    pub order: Vec<usize>,
    /// Acceptance probability of each row in `order`.
    pub probs: Vec<f64>,
    /// Weight of each row in `order`.
    pub vbar: Vec<f64>,
    /// `1 - sum(vbar)`, computed directly as `(1/k) sum_j P(S_n < j)`.
    pub deficiency: f64,
    pub k: usize,
}

pub fn exact_bagged_weights(
    ds: &Dataset,
    rule: &AcceptanceRule,
    x: &[f64],
    k: usize,
) -> Result<BaggedWeights> {
    let n = ds.n();
    if k == 0 || k > n {
        return Err(Error::KTooLarge { k, n });
    }
    if x.len() != ds.dim() {
        return Err(Error::Dimension {
            expected: ds.dim(),
            got: x.len(),
        });
    }
    let rows: Vec<usize> = (0..n).collect();
    let order: Vec<usize> = brute_order(ds.features().view(), &rows, x)
        .into_iter()
        .map(|p| p.1)
        .collect();
    let probs: Vec<f64> = order.iter().map(|&i| rule.prob(ds.label(i))).collect();
    let table = gp_pmf_table(&probs, k);
    let vbar = table
        .iter()
        .map(|row| row.iter().copied().collect::<KahanSum>().value() / k as f64)
        .collect();
    let total = success_count_pmf(&probs, n);
    let deficiency = (1..=k)
        .map(|j| total.iter().take(j).copied().collect::<KahanSum>().value())
        .collect::<KahanSum>()
        .value()
        / k as f64;
    Ok(BaggedWeights {
        order,
        probs,
        vbar,
        deficiency,
        k,
    })
}

/// `probs[m] = sum_i vbar_i * 1{label(X_(i)) = m}`: the ensemble posterior
/// in the limit of infinitely many rounds.
pub fn infinite_bag_posterior(
    ds: &Dataset,
    rule: &AcceptanceRule,
    x: &[f64],
    k: usize,
) -> Result<PosteriorVector> {
    let w = exact_bagged_weights(ds, rule, x, k)?;
    let mut sums = vec![KahanSum::default(); ds.n_classes()];
    for (&i, &v) in w.order.iter().zip(&w.vbar) {
        sums[ds.label(i)].add(v);
    }
    Ok(PosteriorVector {
        probs: sums.iter().map(KahanSum::value).collect(),
    })
}

/// Round weights along the full-data order, in units of `1/k`: 1 when the
/// row is accepted and at most `k` rows up to and including it are
/// accepted, otherwise 0.
pub fn round_weight_units(accepted_in_order: &[bool], k: usize) -> Vec<u64> {
    let mut seen = 0;
    accepted_in_order
        .iter()
        .map(|&a| {
            seen += a as usize;
            u64::from(a && seen <= k)
        })
        .collect()
}

/// One round's posterior written as a weighted k-NN over the full data.
pub fn weighted_round_posterior(
    ds: &Dataset,
    sample: &SubSample,
    x: &[f64],
    k: usize,
) -> PosteriorVector {
    let mut accepted = vec![false; ds.n()];
    for &i in &sample.indices {
        accepted[i] = true;
    }
    let rows: Vec<usize> = (0..ds.n()).collect();
    let order: Vec<usize> = brute_order(ds.features().view(), &rows, x)
        .into_iter()
        .map(|p| p.1)
        .collect();
    let flags: Vec<bool> = order.iter().map(|&i| accepted[i]).collect();
    let units = round_weight_units(&flags, k);
    let mut votes = vec![0u64; ds.n_classes()];
    for (&i, &u) in order.iter().zip(&units) {
        votes[ds.label(i)] += u;
    }
    PosteriorVector::from_counts(&votes, k as u64)
}

/// `eta^w_m = (eta_m / pi_m) / sum_j (eta_j / pi_j)`.
pub fn weighted_posterior(eta: &[f64], pi: &[f64]) -> Vec<f64> {
    let ratios: Vec<f64> = eta.iter().zip(pi).map(|(e, p)| e / p).collect();
    let total: f64 = ratios.iter().sum();
    ratios.iter().map(|r| r / total).collect()
}

/// `eta^u_m = (eta_m / n_(m)) / sum_j (eta_j / n_(j))`.
pub fn undersampled_posterior(eta: &[f64], class_counts: &[usize]) -> Vec<f64> {
    let pi: Vec<f64> = class_counts.iter().map(|&c| c as f64).collect();
    weighted_posterior(eta, &pi)
}

pub type EtaFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// A distribution with known posterior `eta` and priors `pi`.
#[derive(Clone)]
pub struct SyntheticTruth {
    pub name: String,
    pub dim: usize,
    pub pi: Vec<f64>,
    pub eta: EtaFn,
}

impl fmt::Debug for SyntheticTruth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SyntheticTruth")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("pi", &self.pi)
            .finish()
    }
}

impl SyntheticTruth {
    pub fn n_classes(&self) -> usize {
        self.pi.len()
    }

    pub fn eta(&self, x: &[f64]) -> Vec<f64> {
        (self.eta)(x)
    }

    pub fn eta_w(&self, x: &[f64]) -> Vec<f64> {
        weighted_posterior(&self.eta(x), &self.pi)
    }

    pub fn bayes_balanced(&self, x: &[f64]) -> usize {
        bayes_balanced_classify(self, x)
    }
}

/// `argmax_m eta^w_m(x)`, i.e. `argmax_m eta_m(x) / pi_m`.
pub fn bayes_balanced_classify(truth: &SyntheticTruth, x: &[f64]) -> usize {
    let eta = truth.eta(x);
    let ratios: Vec<f64> = eta.iter().zip(&truth.pi).map(|(e, p)| e / p).collect();
    argmax(&ratios)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegretEstimate {
    pub regret: f64,
    pub std_error: f64,
    pub am_bayes: f64,
    pub am_candidate: f64,
}

/// AM regret of `predictions` at `points` drawn from `P_X`.
///
/// Labels are integrated out: the recall of class `m` is estimated by
/// `mean(eta_m(x) 1{f(x) = m}) / pi_m`. The regret is the mean of the
/// per-point difference against the Bayes-balanced classifier, which is
/// nonnegative, and its standard error is reported.
pub fn am_regret(
    truth: &SyntheticTruth,
    points: ArrayView2<'_, f64>,
    predictions: &[usize],
) -> Result<RegretEstimate> {
    let n = points.nrows();
    if predictions.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: predictions.len(),
        });
    }
    if n < 2 {
        return Err(Error::Empty("need at least two evaluation points"));
    }
    let m = truth.n_classes() as f64;
    let mut gap = KahanSum::default();
    let mut gap_sq = KahanSum::default();
    let mut am_b = KahanSum::default();
    let mut am_c = KahanSum::default();
    for (row, &f) in points.rows().into_iter().zip(predictions) {
        let x = row.to_vec();
        let eta = truth.eta(&x);
        let star = bayes_balanced_classify(truth, &x);
        let hit_b = eta[star] / truth.pi[star] / m;
        let hit_c = eta[f] / truth.pi[f] / m;
        am_b.add(hit_b);
        am_c.add(hit_c);
        gap.add(hit_b - hit_c);
        gap_sq.add((hit_b - hit_c) * (hit_b - hit_c));
    }
    let nf = n as f64;
    let mean = gap.value() / nf;
    let var = ((gap_sq.value() - nf * mean * mean) / (nf - 1.0)).max(0.0);
    Ok(RegretEstimate {
        regret: mean,
        std_error: (var / nf).sqrt(),
        am_bayes: am_b.value() / nf,
        am_candidate: am_c.value() / nf,
    })
}
