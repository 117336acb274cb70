//! Implementation-versus-oracle suites, run by `ubknn oracle-check` and by
//! the acceptance tests.

use std::time::Instant;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::ensemble::{UnderBagConfig, UnderBagModel};
use crate::error::Result;
use crate::kdtree::{KdTree, DEFAULT_LEAF_SIZE};
use crate::knn::KnnModel;
use crate::metrics::{evaluate, EvalReport};
use crate::oracle::{
    brute_knn, exact_bagged_weights, gp_pmf_table, gp_tail, gp_tail_bound,
    infinite_bag_posterior, weighted_round_posterior,
};
use crate::rng::{self, StreamRng};
use crate::sampler::{draw, underbag_rule};

/// Outcome of one suite. `worst` is the largest observed error, or the
/// largest ratio of observed value to bound, depending on the suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub cases: usize,
    pub failures: usize,
    pub worst: f64,
    pub tolerance: f64,
    pub seconds: f64,
    pub detail: String,
}

/// Instance counts for every suite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckSizes {
    pub kdtree: usize,
    pub equivalence: usize,
    pub convergence_rounds: usize,
    pub tail_draws: usize,
    pub bounds: usize,
    pub identity: usize,
}

impl CheckSizes {
    pub fn full() -> Self {
        Self {
            kdtree: 200,
            equivalence: 50,
            convergence_rounds: 10_000,
            tail_draws: 100,
            bounds: 100,
            identity: 1000,
        }
    }

    pub fn quick() -> Self {
        Self {
            kdtree: 20,
            equivalence: 10,
            convergence_rounds: 10_000,
            tail_draws: 20,
            bounds: 20,
            identity: 100,
        }
    }
}

struct Tally {
    name: &'static str,
    start: Instant,
    cases: usize,
    failures: usize,
    worst: f64,
    tolerance: f64,
    first_failure: Option<String>,
}

impl Tally {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Self {
            name,
            start: Instant::now(),
            cases: 0,
            failures: 0,
            worst: 0.0,
            tolerance,
            first_failure: None,
        }
    }

    fn record(&mut self, ok: bool, value: f64, what: impl FnOnce() -> String) {
        self.cases += 1;
        if value.is_nan() || value > self.worst {
            self.worst = value;
        }
        if !ok {
            self.failures += 1;
            if self.first_failure.is_none() {
                self.first_failure = Some(what());
            }
        }
    }

    fn finish(self) -> CheckOutcome {
        CheckOutcome {
            name: self.name.to_string(),
            passed: self.failures == 0 && self.cases > 0,
            cases: self.cases,
            failures: self.failures,
            worst: self.worst,
            tolerance: self.tolerance,
            seconds: self.start.elapsed().as_secs_f64(),
            detail: self.first_failure.unwrap_or_default(),
        }
    }
}

fn random_dataset(r: &mut StreamRng, counts: &[usize], d: usize, grid: Option<u32>) -> Dataset {
    let n: usize = counts.iter().sum();
    let coord = |r: &mut StreamRng| match grid {
        Some(g) => f64::from(r.random_range(0..g)) / f64::from(g),
        None => r.random::<f64>(),
    };
    let features = Array2::from_shape_simple_fn((n, d), || coord(r));
    let mut labels: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(m, &c)| std::iter::repeat_n(m, c))
        .collect();
    // interleave classes so labels are not sorted by row
    for i in (1..n).rev() {
        labels.swap(i, r.random_range(0..=i));
    }
    Dataset::new(features, labels, counts.len()).expect("valid synthetic dataset")
}

fn random_counts(r: &mut StreamRng, m: usize, lo: usize, hi: usize) -> Vec<usize> {
    (0..m).map(|_| r.random_range(lo..=hi)).collect()
}

fn random_query(r: &mut StreamRng, ds: &Dataset) -> Vec<f64> {
    if r.random_bool(0.3) {
        ds.row(r.random_range(0..ds.n())).to_vec()
    } else {
        (0..ds.dim()).map(|_| r.random_range(-0.1..1.1)).collect()
    }
}

/// Tree search against brute force, bit for bit, on random instances with
/// `n <= 2000`, `d` in `1..=8`, `k` in `1..=25`. A third of the instances
/// use coarse grid coordinates so distance ties are common.
pub fn kdtree_exactness(seed: u64, instances: usize) -> Result<CheckOutcome> {
    let mut t = Tally::new("kdtree exactness", 0.0);
    let mut r = rng::stream(rng::derive_seed(seed, 1));
    for inst in 0..instances {
        let d = r.random_range(1..=8);
        let k = r.random_range(1..=25);
        let n = r.random_range(k..=2000);
        let grid = r.random_bool(1.0 / 3.0).then(|| r.random_range(2..=6));
        let ds = random_dataset(&mut r, &[n], d, grid);
        let leaf = [1, 4, DEFAULT_LEAF_SIZE, 64][r.random_range(0..4)];
        let tree = KdTree::build(ds.features().view(), leaf)?;
        if let Err(e) = tree.check_invariants() {
            t.record(false, 1.0, || format!("instance {inst}: {e}"));
            continue;
        }
        for _ in 0..5 {
            let x = random_query(&mut r, &ds);
            let got = tree.knn(&x, k)?;
            let want = brute_knn(ds.features().view(), &x, k)?;
            let same = got.indices == want.indices
                && got.distances.iter().zip(&want.distances).all(|(a, b)| a.to_bits() == b.to_bits());
            t.record(same, f64::from(u8::from(!same)), || {
                format!("instance {inst}: n={n} d={d} k={k} leaf={leaf}")
            });
        }
    }
    Ok(t.finish())
}

/// A round's posterior from k-NN inside the subsample against the weighted
/// full-data form. Exact equality is required.
pub fn formulation_equivalence(seed: u64, instances: usize) -> Result<CheckOutcome> {
    let mut t = Tally::new("formulation equivalence", 0.0);
    let mut r = rng::stream(rng::derive_seed(seed, 2));
    let mut inst = 0;
    while inst < instances {
        let m = r.random_range(2..=4);
        let mut counts = random_counts(&mut r, m, 3, 60);
        counts[0] += r.random_range(0..300);
        let d = r.random_range(1..=4);
        let grid = r.random_bool(0.5).then(|| r.random_range(3..=8));
        let ds = random_dataset(&mut r, &counts, d, grid);
        let cap = (m * ds.minority_count()) as f64;
        let s = r.random_range(1.0..=cap);
        let rule = underbag_rule(&ds, s)?;
        let sample = draw(&ds, &rule, r.random());
        if sample.is_empty() {
            continue;
        }
        inst += 1;
        let k = r.random_range(1..=sample.len() + 3);
        let model = KnnModel::fit(&ds, &sample.indices, k)?;
        for _ in 0..3 {
            let x = random_query(&mut r, &ds);
            let a = model.posterior(&x);
            let b = weighted_round_posterior(&ds, &sample, &x, k);
            let gap = a.sup_distance(&b);
            t.record(a == b, gap, || {
                format!("instance {inst}: {:?} vs {:?}", a.probs, b.probs)
            });
        }
    }
    Ok(t.finish())
}

/// The ensemble posterior with many rounds against the exact infinite-bag
/// posterior on a fixed dataset (`n = 200`, `M = 2`, `k = 5`, `s = 40`).
pub fn bagging_convergence(seed: u64, rounds: usize) -> Result<CheckOutcome> {
    const TOL: f64 = 0.02;
    let mut t = Tally::new("bagging convergence", TOL);
    let mut r = rng::stream(rng::derive_seed(seed, 3));
    let ds = random_dataset(&mut r, &[160, 40], 2, None);
    let (k, s) = (5, 40.0);
    let model = UnderBagModel::fit(&ds, &UnderBagConfig::new(rounds, k, s, r.random()))?;
    for q in 0..20 {
        let x: Vec<f64> = (0..2).map(|_| r.random::<f64>()).collect();
        let got = model.posterior(&x);
        let want = infinite_bag_posterior(&ds, model.rule(), &x, k)?;
        let gap = got.sup_distance(&want);
        t.record(gap <= TOL, gap, || format!("query {q}: sup distance {gap}"));
    }
    Ok(t.finish())
}

fn binom(n: usize, r: usize) -> f64 {
    (0..r).fold(1.0, |acc, t| acc * (n - t) as f64 / (t + 1) as f64)
}

/// Equal-probability pmf against the negative binomial closed form for
/// `i <= 200`, `j <= 20`, then the tail bound on random unequal draws.
pub fn gp_closed_form(seed: u64, tail_draws: usize) -> Result<CheckOutcome> {
    const TOL: f64 = 1e-12;
    let mut t = Tally::new("generalized pascal pmf", TOL);
    for &p in &[0.01, 0.05, 0.2, 0.5, 0.8, 0.99, 1.0] {
        let probs = vec![p; 200];
        let table = gp_pmf_table(&probs, 20);
        for j in 1..=20 {
            for i in 1..=200 {
                let nb = if i < j {
                    0.0
                } else {
                    binom(i - 1, j - 1) * p.powi(j as i32) * (1.0 - p).powi((i - j) as i32)
                };
                let err = (table[i - 1][j - 1] - nb).abs();
                t.record(err <= TOL, err, || format!("p={p} i={i} j={j} err={err}"));
            }
        }
    }
    let mut r = rng::stream(rng::derive_seed(seed, 4));
    let mut applied = 0;
    for draw_ix in 0..tail_draws {
        let n = r.random_range(20..=200);
        let probs: Vec<f64> = (0..n).map(|_| r.random_range(0.2..=1.0)).collect();
        let j = r.random_range(1..=20);
        let ell = r.random_range(j..=n);
        let tail = gp_tail(&probs, j, ell);
        let table = gp_pmf_table(&probs, j);
        let head: f64 = (0..ell).map(|i| table[i][j - 1]).sum();
        let err = (1.0 - head - tail).abs();
        t.record(err <= TOL, err, || format!("tail draw {draw_ix}: mass error {err}"));
        if let Some(b) = gp_tail_bound(&probs, j, ell) {
            applied += 1;
            t.record(tail <= b, 0.0, || format!("tail draw {draw_ix}: {tail} > bound {b}"));
        }
    }
    let mut out = t.finish();
    out.detail = if out.detail.is_empty() {
        format!("tail bound applicable on {applied}/{tail_draws} draws")
    } else {
        out.detail
    };
    Ok(out)
}

/// Relative slack on the weight bound: both sides are a handful of
/// rounded operations apart.
pub const WEIGHT_BOUND_SLACK: f64 = 4.0 * f64::EPSILON;

/// `1 - sum V_i <= exp(-(s - k)^2 / (2n))` and
/// `max V_i <= s / (k M n_(1))` on random instances with `k <= s`.
/// `worst` is the largest ratio of observed value to bound.
pub fn deficiency_bounds(seed: u64, instances: usize) -> Result<CheckOutcome> {
    let mut t = Tally::new("deficiency and weight bounds", 1.0);
    let mut r = rng::stream(rng::derive_seed(seed, 5));
    for inst in 0..instances {
        let m = r.random_range(2..=3);
        let mut counts = random_counts(&mut r, m, 10, 80);
        counts[0] += r.random_range(0..400);
        let d = r.random_range(1..=3);
        let ds = random_dataset(&mut r, &counts, d, None);
        let n = ds.n();
        let cap = (m * ds.minority_count()) as f64;
        let k = r.random_range(1..=10.min(cap as usize));
        let s = r.random_range(k as f64..=cap);
        let rule = underbag_rule(&ds, s)?;
        let x = random_query(&mut r, &ds);
        let w = exact_bagged_weights(&ds, &rule, &x, k)?;
        let def_bound = (-(s - k as f64).powi(2) / (2.0 * n as f64)).exp();
        let max_v = w.vbar.iter().copied().fold(0.0, f64::max);
        let v_bound = s / (k as f64 * cap);
        let summed = 1.0 - w.vbar.iter().sum::<f64>();
        t.record(w.deficiency <= def_bound, w.deficiency / def_bound, || {
            format!("instance {inst}: deficiency {} > {def_bound}", w.deficiency)
        });
        t.record((summed - w.deficiency).abs() <= 1e-12, 0.0, || {
            format!("instance {inst}: 1 - sum V = {summed}, direct {}", w.deficiency)
        });
        t.record(max_v <= v_bound * (1.0 + WEIGHT_BOUND_SLACK), max_v / v_bound, || {
            format!("instance {inst}: max V {max_v} > {v_bound}")
        });
    }
    Ok(t.finish())
}

/// `|AM - (1 - balanced risk)|` on random label and prediction sets.
pub fn am_identity(seed: u64, instances: usize) -> Result<CheckOutcome> {
    const TOL: f64 = 1e-12;
    let mut t = Tally::new("AM identity", TOL);
    let mut r = rng::stream(rng::derive_seed(seed, 6));
    for inst in 0..instances {
        let m = r.random_range(2..=6);
        let n = r.random_range(m..=5000);
        let skew: Vec<f64> = (0..m).map(|_| r.random_range(0.01..1.0)).collect();
        let total: f64 = skew.iter().sum();
        let mut truth: Vec<usize> = (0..m).collect();
        while truth.len() < n {
            let mut u = r.random::<f64>() * total;
            let mut c = 0;
            while c + 1 < m && u >= skew[c] {
                u -= skew[c];
                c += 1;
            }
            truth.push(c);
        }
        let acc = r.random::<f64>();
        let pred: Vec<usize> = truth
            .iter()
            .map(|&y| if r.random::<f64>() < acc { y } else { r.random_range(0..m) })
            .collect();
        let rep = evaluate(&truth, &pred, m)?;
        let gap = rep.identity_gap().max(EvalReport::from_confusion(rep.confusion.clone())?.identity_gap());
        t.record(gap <= TOL, gap, || format!("instance {inst}: gap {gap}"));
    }
    Ok(t.finish())
}

/// Every suite, in a fixed order.
pub fn self_check(seed: u64, sizes: &CheckSizes) -> Result<Vec<CheckOutcome>> {
    Ok(vec![
        kdtree_exactness(seed, sizes.kdtree)?,
        formulation_equivalence(seed, sizes.equivalence)?,
        bagging_convergence(seed, sizes.convergence_rounds)?,
        gp_closed_form(seed, sizes.tail_draws)?,
        deficiency_bounds(seed, sizes.bounds)?,
        am_identity(seed, sizes.identity)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_suites_pass() {
        let mut sizes = CheckSizes::quick();
        sizes.convergence_rounds = 2000;
        for o in self_check(3, &sizes).unwrap() {
            if o.name == "bagging convergence" {
                // fewer rounds than the full check; the envelope is wider
                assert!(o.worst < 0.05, "{o:?}");
            } else {
                assert!(o.passed, "{o:?}");
            }
        }
    }

    #[test]
    fn failures_are_reported() {
        let mut t = Tally::new("x", 0.0);
        t.record(true, 0.0, String::new);
        t.record(false, 2.0, || "bad".into());
        let o = t.finish();
        assert!(!o.passed);
        assert_eq!((o.cases, o.failures, o.worst), (2, 1, 2.0));
        assert_eq!(o.detail, "bad");
    }
}
