//! Cross-validation, k tuning, hyper-parameter sweeps, timing benchmarks and
//! regret curves.

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{stratified_kfold, Dataset, Fold, MinMaxScaler};
use crate::ensemble::{UnderBagConfig, UnderBagModel};
use crate::error::{Error, Result};
use crate::generators::{gen_cube, gen_two_moons, uniform_cube, CubeSpec, TwoMoonsSpec};
use crate::knn::argmax;
use crate::methods::{AutoParams, Classifier, MethodParams, Registry, ResolvedParams, SubsampleSize};
use crate::metrics::{evaluate, mean_sd, timed, EvalReport, MeanSd};
use crate::oracle::{am_regret, RegretEstimate};
use crate::rng;

/// Train and test sets for one fold, scaled with train-fold statistics.
pub fn scaled_split(ds: &Dataset, fold: &Fold) -> Result<(Dataset, Dataset)> {
    let scaled = MinMaxScaler::fit(ds, &fold.train).transform(ds);
    Ok((scaled.subset(&fold.train)?, scaled.subset(&fold.test)?))
}

fn row(view: ArrayView2<'_, f64>, i: usize) -> Vec<f64> {
    view.row(i).to_vec()
}

/// Mean AM over inner folds of `train` for every `k` in `1..=k_max`.
pub fn am_by_k(
    method: &dyn Classifier,
    train: &Dataset,
    params: &MethodParams,
    k_max: usize,
    folds: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if k_max == 0 {
        return Err(Error::config("k_max must be at least 1"));
    }
    let splits = stratified_kfold(train, folds, seed)?;
    let mut totals = vec![0.0; k_max];
    for (f, fold) in splits.iter().enumerate() {
        let inner_train = train.subset(&fold.train)?;
        let p = MethodParams {
            k: k_max,
            auto: None,
            seed: rng::derive_seed(seed, f as u64 + 1),
            ..params.clone()
        };
        let fitted = method.fit(&inner_train, &p)?;
        let m = train.n_classes();
        let feats = train.features().view();
        let confusion = fold
            .test
            .par_iter()
            .fold(
                || vec![vec![vec![0u64; m]; m]; k_max],
                |mut acc, &i| {
                    let votes = fitted.votes_by_k(&row(feats, i), k_max);
                    let y = train.label(i);
                    for (k, v) in votes.iter().enumerate() {
                        acc[k][y][argmax(v)] += 1;
                    }
                    acc
                },
            )
            .reduce(
                || vec![vec![vec![0u64; m]; m]; k_max],
                |mut a, b| {
                    add_confusions(&mut a, &b);
                    a
                },
            );
        for (k, c) in confusion.into_iter().enumerate() {
            totals[k] += EvalReport::from_confusion(c)?.am;
        }
    }
    Ok(totals.iter().map(|t| t / folds as f64).collect())
}

fn add_confusions(a: &mut [Vec<Vec<u64>>], b: &[Vec<Vec<u64>>]) {
    for (x, y) in a.iter_mut().zip(b) {
        for (rx, ry) in x.iter_mut().zip(y) {
            for (cx, cy) in rx.iter_mut().zip(ry) {
                *cx += cy;
            }
        }
    }
}

/// The `k` in `1..=k_max` with the best inner-CV AM; the smallest wins ties.
pub fn tune_k(
    method: &dyn Classifier,
    train: &Dataset,
    params: &MethodParams,
    k_max: usize,
    folds: usize,
    seed: u64,
) -> Result<usize> {
    let am = am_by_k(method, train, params, k_max, folds, seed)?;
    Ok(argmax(&am) + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneConfig {
    pub k_max: usize,
    pub inner_folds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub folds: usize,
    pub repeats: usize,
    pub seed: u64,
    pub tune: Option<TuneConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub repeat: usize,
    pub fold: usize,
    pub k: usize,
    pub rounds: usize,
    pub s: f64,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub am: MeanSd,
    pub balanced_risk: MeanSd,
    pub fit_seconds: MeanSd,
    pub predict_seconds: MeanSd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub folds: Vec<FoldResult>,
    pub summary: CvSummary,
}

/// Fits on `train` and evaluates on `test`, timing both phases.
pub fn fit_and_score(
    method: &dyn Classifier,
    train: &Dataset,
    test: &Dataset,
    params: &MethodParams,
) -> Result<(EvalReport, ResolvedParams)> {
    let (fitted, fit_time) = timed(|| method.fit(train, params));
    let fitted = fitted?;
    let (pred, predict_time) = timed(|| fitted.predict(test.features().view(), params.parallel));
    let report = evaluate(test.labels(), &pred, test.n_classes())?;
    Ok((report.with_timings(fit_time, predict_time), fitted.resolved()))
}

/// Repeated stratified cross-validation.
pub fn cross_validate(
    method: &dyn Classifier,
    ds: &Dataset,
    params: &MethodParams,
    cfg: &CvConfig,
) -> Result<CvResult> {
    if cfg.repeats == 0 {
        return Err(Error::config("repeats must be at least 1"));
    }
    let mut results = Vec::with_capacity(cfg.repeats * cfg.folds);
    for r in 0..cfg.repeats {
        let repeat_seed = rng::derive_seed(cfg.seed, r as u64);
        for (f, fold) in stratified_kfold(ds, cfg.folds, repeat_seed)?.iter().enumerate() {
            let (train, test) = scaled_split(ds, fold)?;
            let fold_seed = rng::derive_seed(repeat_seed, f as u64 + 1);
            let mut p = MethodParams {
                seed: fold_seed,
                ..params.clone()
            };
            if let (Some(t), None) = (&cfg.tune, &params.auto) {
                p.k = tune_k(method, &train, &p, t.k_max, t.inner_folds, fold_seed)?;
            }
            let (report, resolved) = fit_and_score(method, &train, &test, &p)?;
            results.push(FoldResult {
                repeat: r,
                fold: f,
                k: resolved.k,
                rounds: resolved.rounds,
                s: resolved.s,
                report,
            });
        }
    }
    let pick = |g: fn(&EvalReport) -> f64| -> Vec<f64> { results.iter().map(|x| g(&x.report)).collect() };
    let summary = CvSummary {
        am: mean_sd(&pick(|r| r.am)),
        balanced_risk: mean_sd(&pick(|r| r.balanced_risk)),
        fit_seconds: mean_sd(&pick(|r| r.fit_seconds)),
        predict_seconds: mean_sd(&pick(|r| r.predict_seconds)),
    };
    Ok(CvResult {
        folds: results,
        summary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub s_frac: f64,
    pub rounds: usize,
    pub k: usize,
    pub am: f64,
}

/// AM of under-bagging on `test` for every `(a, B, k)` in the grid, where
/// `s = a * M * n_(1)`. One model with `max(B)` rounds is fitted per `a`;
/// smaller `B` use its leading rounds, which are the models a direct fit
/// with that `B` would draw.
pub fn sweep_underbag(
    train: &Dataset,
    test: &Dataset,
    s_fracs: &[f64],
    rounds_grid: &[usize],
    k_max: usize,
    seed: u64,
) -> Result<Vec<SweepCell>> {
    if rounds_grid.is_empty() || s_fracs.is_empty() || k_max == 0 {
        return Err(Error::config("sweep grid is empty"));
    }
    let mut grid = rounds_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    let b_max = *grid.last().expect("nonempty");
    let m = train.n_classes();
    let feats = test.features().view();
    let mut cells = Vec::new();
    for &a in s_fracs {
        let s = SubsampleSize::Fraction(a).resolve(train)?;
        let model = UnderBagModel::fit(train, &UnderBagConfig::new(b_max, k_max, s, seed))?;
        let empty = || vec![vec![vec![vec![0u64; m]; m]; k_max]; grid.len()];
        let confusion = (0..test.n())
            .into_par_iter()
            .fold(empty, |mut acc, i| {
                let votes = model.votes_grid(&row(feats, i), &grid, k_max);
                let y = test.label(i);
                for (c, per_k) in votes.iter().enumerate() {
                    for (k, v) in per_k.iter().enumerate() {
                        acc[c][k][y][argmax(v)] += 1;
                    }
                }
                acc
            })
            .reduce(empty, |mut a, b| {
                for (x, y) in a.iter_mut().zip(&b) {
                    add_confusions(x, y);
                }
                a
            });
        for (c, per_k) in confusion.into_iter().enumerate() {
            for (k, conf) in per_k.into_iter().enumerate() {
                cells.push(SweepCell {
                    s_frac: a,
                    rounds: grid[c],
                    k: k + 1,
                    am: EvalReport::from_confusion(conf)?.am,
                });
            }
        }
    }
    Ok(cells)
}

/// Sweep averaged over repeated stratified folds of `ds`.
pub fn sweep_cv(
    ds: &Dataset,
    s_fracs: &[f64],
    rounds_grid: &[usize],
    k_max: usize,
    folds: usize,
    repeats: usize,
    seed: u64,
) -> Result<Vec<SweepCell>> {
    let mut acc: Vec<SweepCell> = Vec::new();
    let mut runs = 0usize;
    for r in 0..repeats {
        let repeat_seed = rng::derive_seed(seed, r as u64);
        for (f, fold) in stratified_kfold(ds, folds, repeat_seed)?.iter().enumerate() {
            let (train, test) = scaled_split(ds, fold)?;
            let cells = sweep_underbag(
                &train,
                &test,
                s_fracs,
                rounds_grid,
                k_max,
                rng::derive_seed(repeat_seed, f as u64 + 1),
            )?;
            if acc.is_empty() {
                acc = cells;
            } else {
                for (a, c) in acc.iter_mut().zip(cells) {
                    a.am += c.am;
                }
            }
            runs += 1;
        }
    }
    for a in &mut acc {
        a.am /= runs as f64;
    }
    Ok(acc)
}

/// Least-squares fit of `ln y = intercept + slope * ln x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
}

pub fn log_log_fit(xs: &[f64], ys: &[f64]) -> Option<LogLogFit> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Some(LogLogFit {
        slope,
        intercept: my - slope * mx,
    })
}

/// Least-squares `c` in `y = c n ln n` and the largest relative residual.
pub fn nlogn_fit(ns: &[f64], ys: &[f64]) -> (f64, f64) {
    let basis: Vec<f64> = ns.iter().map(|n| n * n.ln()).collect();
    let c = basis.iter().zip(ys).map(|(b, y)| b * y).sum::<f64>()
        / basis.iter().map(|b| b * b).sum::<f64>();
    let worst = basis
        .iter()
        .zip(ys)
        .map(|(b, y)| ((y - c * b) / y).abs())
        .fold(0.0, f64::max);
    (c, worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub n_grid: Vec<usize>,
    pub rho: f64,
    pub k: usize,
    pub rounds: usize,
    pub queries: usize,
    pub repeats: usize,
    pub seed: u64,
    pub parallel: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n: usize,
    pub method: String,
    pub build_seconds: f64,
    pub query_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchFit {
    pub method: String,
    pub phase: String,
    pub slope: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub fits: Vec<BenchFit>,
    /// Constant and worst relative residual of `c n ln n` fitted to the
    /// standard k-NN build times.
    pub nlogn_c: f64,
    pub nlogn_residual: f64,
}

/// Two-moons data with `n` points and imbalance ratio `rho` (binary).
pub fn moons_with_ratio(n: usize, rho: f64, seed: u64) -> Result<Dataset> {
    let minor = ((rho * n as f64) / 2.0).round().max(1.0) as usize;
    if minor >= n {
        return Err(Error::config(format!("rho = {rho} too large for n = {n}")));
    }
    gen_two_moons(&TwoMoonsSpec::new(n - minor, minor, seed))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Build and query timings of standard k-NN against under-bagging with
/// `s = M * n_(1)` over a grid of training sizes.
pub fn bench(cfg: &BenchConfig, registry: &Registry) -> Result<BenchReport> {
    if cfg.repeats == 0 || cfg.n_grid.is_empty() {
        return Err(Error::config("bench needs a nonempty grid and repeats >= 1"));
    }
    let mut rows = Vec::new();
    for &n in &cfg.n_grid {
        let train = moons_with_ratio(n, cfg.rho, rng::derive_seed(cfg.seed, n as u64))?;
        let queries = moons_with_ratio(cfg.queries.max(2), cfg.rho, rng::derive_seed(cfg.seed ^ 1, n as u64))?;
        for name in ["knn", "underbag-knn"] {
            let method = registry.get(name)?;
            let params = MethodParams {
                k: cfg.k,
                rounds: cfg.rounds,
                s: SubsampleSize::Fraction(1.0),
                seed: cfg.seed,
                parallel: cfg.parallel,
                ..MethodParams::default()
            };
            let mut builds = Vec::new();
            let mut query_times = Vec::new();
            for _ in 0..cfg.repeats {
                let (fitted, b) = timed(|| method.fit(&train, &params));
                let fitted = fitted?;
                let (_, q) = timed(|| fitted.predict(queries.features().view(), cfg.parallel));
                builds.push(b.as_secs_f64());
                query_times.push(q.as_secs_f64());
            }
            rows.push(BenchRow {
                n,
                method: name.to_string(),
                build_seconds: median(builds),
                query_seconds: median(query_times),
            });
        }
    }
    let mut fits = Vec::new();
    for name in ["knn", "underbag-knn"] {
        let sel: Vec<&BenchRow> = rows.iter().filter(|r| r.method == name).collect();
        let ns: Vec<f64> = sel.iter().map(|r| r.n as f64).collect();
        for (phase, ys) in [
            ("build", sel.iter().map(|r| r.build_seconds).collect::<Vec<_>>()),
            ("query", sel.iter().map(|r| r.query_seconds).collect()),
        ] {
            fits.push(BenchFit {
                method: name.into(),
                phase: phase.into(),
                slope: log_log_fit(&ns, &ys).map(|f| f.slope),
            });
        }
    }
    let std_rows: Vec<&BenchRow> = rows.iter().filter(|r| r.method == "knn").collect();
    let (nlogn_c, nlogn_residual) = nlogn_fit(
        &std_rows.iter().map(|r| r.n as f64).collect::<Vec<_>>(),
        &std_rows.iter().map(|r| r.build_seconds).collect::<Vec<_>>(),
    );
    Ok(BenchReport {
        rows,
        fits,
        nlogn_c,
        nlogn_residual,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretPoint {
    pub n: usize,
    pub seed: u64,
    pub k: usize,
    pub rounds: usize,
    pub s: f64,
    pub estimate: RegretEstimate,
}

/// AM regret of auto-parameter under-bagging on cube data of size `n`,
/// evaluated at `eval_points` fresh uniform points.
pub fn regret_point(
    spec: &CubeSpec,
    method: &dyn Classifier,
    alpha: f64,
    eval_points: usize,
) -> Result<RegretPoint> {
    let (train, truth) = gen_cube(spec)?;
    let params = MethodParams {
        auto: Some(AutoParams {
            alpha,
            ..Default::default()
        }),
        seed: rng::derive_seed(spec.seed, 1),
        ..MethodParams::default()
    };
    let fitted = method.fit(&train, &params)?;
    let pts = uniform_cube(eval_points, spec.d, rng::derive_seed(spec.seed, 2));
    let pred = fitted.predict(pts.view(), true);
    let estimate = am_regret(&truth, pts.view(), &pred)?;
    let r = fitted.resolved();
    Ok(RegretPoint {
        n: spec.n,
        seed: spec.seed,
        k: r.k,
        rounds: r.rounds,
        s: r.s,
        estimate,
    })
}
