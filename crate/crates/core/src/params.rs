//! Closed-form choices of `k`, `s` and `B` from the smoothness of the
//! posterior.
//!
//! Logarithms are natural. Proportionality constants are taken as 1 and
//! exposed as [`Multipliers`]. Values are rounded half-up, then clamped.

use serde::{Deserialize, Serialize};

use crate::dataset::ImbalanceRatio;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessSpec {
    alpha: f64,
    d: usize,
}

impl SmoothnessSpec {
    pub fn new(alpha: f64, d: usize) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::config(format!("alpha = {alpha} outside (0, 1]")));
        }
        if d == 0 {
            return Err(Error::config("dimension must be at least 1"));
        }
        Ok(Self { alpha, d })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// `d / (2 alpha + d)`.
    fn dim_share(&self) -> f64 {
        let d = self.d as f64;
        d / (2.0 * self.alpha + d)
    }

    fn high_dim(&self) -> bool {
        self.d as f64 > 2.0 * self.alpha
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Multipliers {
    pub s_mult: f64,
    pub k_mult: f64,
}

impl Default for Multipliers {
    fn default() -> Self {
        Self {
            s_mult: 1.0,
            k_mult: 1.0,
        }
    }
}

impl Multipliers {
    fn validate(&self) -> Result<()> {
        if !(self.s_mult > 0.0 && self.k_mult > 0.0) {
            return Err(Error::config("parameter multipliers must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    #[serde(rename = "undersampling")]
    Undersampling,
    #[serde(rename = "underbagging")]
    Underbagging,
    #[serde(rename = "bag1nn-d>2α")]
    Bag1nnHighDim,
    #[serde(rename = "bag1nn-d≤2α")]
    Bag1nnLowDim,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamChoice {
    pub k: usize,
    pub s: usize,
    pub rounds: usize,
    pub regime: Regime,
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

/// `k = s_u^{2a/(2a+d)} (ln s_u)^{d/(2a+d)}`, clamped to `[1, s_u]`.
pub fn choose_undersampling_k(s_u: usize, spec: &SmoothnessSpec) -> Result<usize> {
    choose_undersampling_k_with(s_u, spec, &Multipliers::default())
}

pub fn choose_undersampling_k_with(
    s_u: usize,
    spec: &SmoothnessSpec,
    mult: &Multipliers,
) -> Result<usize> {
    mult.validate()?;
    if s_u < 3 {
        return Err(Error::config(format!(
            "accepted sample count {s_u} is below 3"
        )));
    }
    let t = spec.dim_share();
    let su = s_u as f64;
    let k = mult.k_mult * su.powf(1.0 - t) * su.ln().powf(t);
    Ok(round_half_up(k).clamp(1, s_u))
}

/// Effective minority mass `rho * n`, which equals the integer `M * n_(1)`.
fn rho_n(n: usize, rho: ImbalanceRatio) -> Result<f64> {
    let rn = (rho.value() * n as f64).round();
    if rn.is_nan() || rn < 3.0 {
        return Err(Error::config(format!("rho * n = {rn} is below 3")));
    }
    Ok(rn)
}

fn underbagging_s_raw(rn: f64, spec: &SmoothnessSpec, high_dim: bool) -> f64 {
    let t = spec.dim_share();
    if high_dim {
        rn.powf(t) * rn.ln().powf(1.0 - t)
    } else {
        (rn * rn.ln()).sqrt()
    }
}

/// Under-bagging choice: `s`, then `B = rho n / s` and
/// `k = s (ln(rho n) / rho n)^{d/(2a+d)}`.
pub fn choose_underbagging(n: usize, rho: ImbalanceRatio, spec: &SmoothnessSpec) -> Result<ParamChoice> {
    choose_underbagging_with(n, rho, spec, &Multipliers::default())
}

pub fn choose_underbagging_with(
    n: usize,
    rho: ImbalanceRatio,
    spec: &SmoothnessSpec,
    mult: &Multipliers,
) -> Result<ParamChoice> {
    mult.validate()?;
    let rn = rho_n(n, rho)?;
    let cap = rn as usize;
    let s_raw = mult.s_mult * underbagging_s_raw(rn, spec, spec.high_dim());
    let s = (s_raw.ceil().max(1.0) as usize).clamp(1, cap);
    let rounds = round_half_up(rn / s as f64).max(1);
    let k_raw = mult.k_mult * s as f64 * (rn.ln() / rn).powf(spec.dim_share());
    let k = round_half_up(k_raw).clamp(1, s);
    Ok(ParamChoice {
        k,
        s,
        rounds,
        regime: Regime::Underbagging,
    })
}

/// Bagged 1-NN: `k = 1` with `s` and `B` balancing bias against the
/// number of rounds.
pub fn choose_bag1nn(n: usize, rho: ImbalanceRatio, spec: &SmoothnessSpec) -> Result<ParamChoice> {
    choose_bag1nn_with(n, rho, spec, &Multipliers::default())
}

pub fn choose_bag1nn_with(
    n: usize,
    rho: ImbalanceRatio,
    spec: &SmoothnessSpec,
    mult: &Multipliers,
) -> Result<ParamChoice> {
    mult.validate()?;
    let rn = rho_n(n, rho)?;
    let cap = rn as usize;
    let t = spec.dim_share();
    let (s_raw, regime) = if spec.high_dim() {
        (
            rn.powf(t) * rn.ln().powf(1.0 - 2.0 * t),
            Regime::Bag1nnHighDim,
        )
    } else {
        ((rn * rn.ln()).sqrt(), Regime::Bag1nnLowDim)
    };
    let s = ((mult.s_mult * s_raw).ceil().max(1.0) as usize).clamp(1, cap);
    let rounds = round_half_up(rn / s as f64).max(1);
    Ok(ParamChoice {
        k: 1,
        s,
        rounds,
        regime,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Dataset;
    use ndarray::Array2;

    fn ratio(n: usize, minority: usize) -> ImbalanceRatio {
        let labels: Vec<usize> = (0..n).map(|i| usize::from(i < minority)).collect();
        let ds = Dataset::new(Array2::zeros((n, 1)), labels, 2).unwrap();
        ds.imbalance_ratio()
    }

    fn spec(alpha: f64, d: usize) -> SmoothnessSpec {
        SmoothnessSpec::new(alpha, d).unwrap()
    }

    #[test]
    fn undersampling_k_reference() {
        // sqrt(1000) * sqrt(ln 1000) = 31.623 * 2.6283
        assert_eq!(choose_undersampling_k(1000, &spec(1.0, 2)).unwrap(), 83);
        assert!(choose_undersampling_k(3, &spec(1.0, 2)).unwrap() >= 1);
        assert!(choose_undersampling_k(2, &spec(1.0, 2)).is_err());
    }

    #[test]
    fn undersampling_k_monotone() {
        for (a, d) in [(1.0, 1), (1.0, 2), (0.5, 3), (0.3, 8)] {
            let sp = spec(a, d);
            let ks: Vec<usize> = (3..3000)
                .map(|s| choose_undersampling_k(s, &sp).unwrap())
                .collect();
            assert!(ks.windows(2).all(|w| w[0] <= w[1]), "alpha={a} d={d}");
        }
    }

    #[test]
    fn underbagging_reference_high_dim() {
        // rho * n = 10000 with M = 2, n_(1) = 5000;
        // 10000^{2/3} * (ln 10000)^{1/3} = 464.1589 * 2.0962 = 972.95
        let rho = ratio(20000, 5000);
        let p = choose_underbagging(20000, rho, &spec(1.0, 4)).unwrap();
        assert_eq!((p.s, p.rounds, p.k), (973, 10, 9));
        assert_eq!(p.regime, Regime::Underbagging);
    }

    #[test]
    fn underbagging_reference_low_dim() {
        let rho = ratio(20000, 5000);
        let p = choose_underbagging(20000, rho, &spec(1.0, 2)).unwrap();
        assert_eq!((p.s, p.rounds), (304, 33));
        let p1 = choose_underbagging(20000, rho, &spec(1.0, 1)).unwrap();
        assert_eq!((p1.s, p1.rounds), (304, 33));
    }

    #[test]
    fn regime_boundary_branches_agree() {
        let sp = spec(1.0, 2);
        for rn in [10.0, 200.0, 1e4, 3.7e6] {
            let a = underbagging_s_raw(rn, &sp, true);
            let b = underbagging_s_raw(rn, &sp, false);
            assert!((a - b).abs() <= 1e-9 * b, "rn={rn}");
        }
    }

    #[test]
    fn bounds_hold_on_grid() {
        for n in [10usize, 57, 400, 10_000, 250_000] {
            for minority in [2usize, 5, n / 10, n / 2] {
                if minority == 0 || 2 * minority < 3 {
                    continue;
                }
                let rho = ratio(n, minority);
                let cap = 2 * minority;
                for (a, d) in [(1.0, 1), (1.0, 2), (1.0, 5), (0.25, 2)] {
                    let sp = spec(a, d);
                    for p in [
                        choose_underbagging(n, rho, &sp).unwrap(),
                        choose_bag1nn(n, rho, &sp).unwrap(),
                    ] {
                        assert!(p.k >= 1 && p.k <= p.s && p.s <= cap && p.rounds >= 1);
                        let bs = (p.rounds * p.s) as f64;
                        assert!((bs - cap as f64).abs() <= p.s as f64 / 2.0 + 1.0, "{p:?} cap {cap}");
                    }
                }
            }
        }
    }

    #[test]
    fn bag1nn_cases() {
        let rho = ratio(20000, 5000);
        let low = choose_bag1nn(20000, rho, &spec(1.0, 2)).unwrap();
        assert_eq!(low.k, 1);
        assert_eq!(low.regime, Regime::Bag1nnLowDim);
        let ln = 10000f64.ln();
        assert_eq!(low.s, (10000.0 * ln).sqrt().ceil() as usize);
        assert!((low.rounds as f64 - (10000.0 / ln).sqrt()).abs() <= 1.0);

        let high = choose_bag1nn(20000, rho, &spec(1.0, 4)).unwrap();
        assert_eq!(high.regime, Regime::Bag1nnHighDim);
        let s = 10000f64.powf(2.0 / 3.0) * ln.powf(-1.0 / 3.0);
        let b = 10000f64.powf(1.0 / 3.0) * ln.powf(1.0 / 3.0);
        assert_eq!(high.s, s.ceil() as usize);
        assert!((high.rounds as f64 - b).abs() <= 1.0);
    }

    #[test]
    fn multipliers_scale() {
        let rho = ratio(20000, 5000);
        let base = choose_underbagging(20000, rho, &spec(1.0, 4)).unwrap();
        let m = Multipliers { s_mult: 0.5, k_mult: 2.0 };
        let p = choose_underbagging_with(20000, rho, &spec(1.0, 4), &m).unwrap();
        assert!(p.s < base.s && p.rounds > base.rounds);
        assert!(choose_underbagging_with(20000, rho, &spec(1.0, 4), &Multipliers { s_mult: 0.0, k_mult: 1.0 }).is_err());
    }

    #[test]
    fn small_rho_n_rejected() {
        let rho = ratio(100, 1);
        assert!(choose_underbagging(100, rho, &spec(1.0, 2)).is_err());
        assert!(choose_bag1nn(100, rho, &spec(1.0, 2)).is_err());
        assert!(SmoothnessSpec::new(1.5, 2).is_err());
        assert!(SmoothnessSpec::new(1.0, 0).is_err());
    }
}
