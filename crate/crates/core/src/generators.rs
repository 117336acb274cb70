//! Synthetic data: two moons, and uniform-cube data with a known posterior.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::oracle::SyntheticTruth;
use crate::rng;

/// Majority arc `(cos t, sin t)`, minority arc `(1 - cos t, 0.5 - sin t)`,
/// `t ~ U[0, pi]`, plus isotropic Gaussian noise. Class 0 is the majority.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoMoonsSpec {
    pub n_major: usize,
    pub n_minor: usize,
    pub noise_sd: f64,
    pub seed: u64,
}

impl TwoMoonsSpec {
    pub fn new(n_major: usize, n_minor: usize, seed: u64) -> Self {
        Self {
            n_major,
            n_minor,
            noise_sd: 0.2,
            seed,
        }
    }
}

pub fn gen_two_moons(spec: &TwoMoonsSpec) -> Result<Dataset> {
    if spec.n_major == 0 || spec.n_minor == 0 {
        return Err(Error::config("two moons needs at least one point per class"));
    }
    if !(spec.noise_sd >= 0.0 && spec.noise_sd.is_finite()) {
        return Err(Error::config(format!("noise sd {} must be >= 0", spec.noise_sd)));
    }
    let n = spec.n_major + spec.n_minor;
    let mut r = rng::stream(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sd).expect("finite nonnegative sd");
    let mut features = Array2::zeros((n, 2));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let t = r.random::<f64>() * PI;
        let minor = i >= spec.n_major;
        let (x, y) = if minor {
            (1.0 - t.cos(), 0.5 - t.sin())
        } else {
            (t.cos(), t.sin())
        };
        features[[i, 0]] = x + noise.sample(&mut r);
        features[[i, 1]] = y + noise.sample(&mut r);
        labels.push(usize::from(minor));
    }
    Dataset::with_names(
        features,
        labels,
        vec!["major".into(), "minor".into()],
        vec!["x1".into(), "x2".into()],
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CubePreset {
    /// Binary: `eta_1(x) = clip(pi_1 (1 + c sin(2 pi x_1)), eps, 1 - eps)`.
    /// Lipschitz, and `E[eta_1(X)] = pi_1` when the clip is inactive.
    Sine { amplitude: f64, eps: f64 },
    /// `eta(x) = pi` everywhere.
    Constant,
}

impl Default for CubePreset {
    fn default() -> Self {
        CubePreset::Sine {
            amplitude: 0.9,
            eps: 1e-3,
        }
    }
}

/// `X ~ U[0,1]^d`, `Y | X ~ eta(X)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubeSpec {
    pub d: usize,
    pub n: usize,
    pub preset: CubePreset,
    pub pi: Vec<f64>,
    pub seed: u64,
}

impl CubeSpec {
    pub fn truth(&self) -> Result<SyntheticTruth> {
        if self.d == 0 {
            return Err(Error::config("cube dimension must be at least 1"));
        }
        let total: f64 = self.pi.iter().sum();
        if self.pi.len() < 2 || self.pi.iter().any(|&p| p <= 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::config("priors must be positive, sum to 1, and cover 2+ classes"));
        }
        let pi = self.pi.clone();
        match self.preset {
            CubePreset::Sine { amplitude, eps } => {
                if pi.len() != 2 {
                    return Err(Error::config("the sine preset is binary"));
                }
                if !((0.0..=1.0).contains(&amplitude) && eps > 0.0 && eps < 0.5) {
                    return Err(Error::config("sine preset needs 0 <= c <= 1 and 0 < eps < 0.5"));
                }
                let p1 = pi[1];
                Ok(SyntheticTruth {
                    name: format!("sine(c={amplitude})"),
                    dim: self.d,
                    pi: pi.clone(),
                    eta: Arc::new(move |x: &[f64]| {
                        let e = (p1 * (1.0 + amplitude * (2.0 * PI * x[0]).sin())).clamp(eps, 1.0 - eps);
                        vec![1.0 - e, e]
                    }),
                })
            }
            CubePreset::Constant => Ok(SyntheticTruth {
                name: "constant".into(),
                dim: self.d,
                pi: pi.clone(),
                eta: Arc::new(move |_: &[f64]| pi.clone()),
            }),
        }
    }
}

/// `n` points uniform on `[0,1]^d`.
pub fn uniform_cube(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut r = rng::stream(seed);
    Array2::from_shape_simple_fn((n, d), || r.random::<f64>())
}

pub fn gen_cube(spec: &CubeSpec) -> Result<(Dataset, SyntheticTruth)> {
    let truth = spec.truth()?;
    if spec.n == 0 {
        return Err(Error::Empty("cube sample size is zero"));
    }
    let mut r = rng::stream(spec.seed);
    let m = truth.n_classes();
    let mut features = Array2::zeros((spec.n, spec.d));
    let mut labels = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let x: Vec<f64> = (0..spec.d).map(|_| r.random::<f64>()).collect();
        let eta = truth.eta(&x);
        let u: f64 = r.random();
        let mut acc = 0.0;
        let mut y = m - 1;
        for (c, e) in eta.iter().enumerate() {
            acc += e;
            if u < acc {
                y = c;
                break;
            }
        }
        for (j, v) in x.into_iter().enumerate() {
            features[[i, j]] = v;
        }
        labels.push(y);
    }
    let mut counts = vec![0usize; m];
    for &y in &labels {
        counts[y] += 1;
    }
    if let Some(c) = counts.iter().position(|&c| c == 0) {
        return Err(Error::config(format!(
            "class {c} drew no samples; increase n"
        )));
    }
    let names = (0..m).map(|c| c.to_string()).collect();
    let feat = (1..=spec.d).map(|j| format!("x{j}")).collect();
    let ds = Dataset::with_names(features, labels, names, feat)?;
    Ok((ds, truth))
}

/// A generator and its parameters, parsed from strings such as
/// `moons:n_major=20000,n_minor=200,noise=0.2,seed=1` or
/// `cube:d=2,n=4000,pi=0.95/0.05,preset=sine,seed=1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SynthSpec {
    Moons(TwoMoonsSpec),
    Cube(CubeSpec),
}

impl SynthSpec {
    /// Parses `text`; `default_seed` applies when no `seed=` key is given.
    pub fn parse(text: &str, default_seed: u64) -> Result<Self> {
        let (kind, rest) = text.split_once(':').unwrap_or((text, ""));
        let mut keys: Vec<(&str, &str)> = Vec::new();
        for item in rest.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::config(format!("expected key=value, got {item:?}")))?;
            keys.push((k.trim(), v.trim()));
        }
        let bad = |k: &str, v: &str| Error::config(format!("bad value {v:?} for {k}"));
        let num = |k: &str, v: &str| v.parse::<f64>().map_err(|_| bad(k, v));
        let int = |k: &str, v: &str| v.parse::<usize>().map_err(|_| bad(k, v));
        let mut seed = default_seed;
        match kind.trim() {
            "moons" => {
                let mut spec = TwoMoonsSpec::new(1000, 100, 0);
                for (k, v) in keys {
                    match k {
                        "n_major" => spec.n_major = int(k, v)?,
                        "n_minor" => spec.n_minor = int(k, v)?,
                        "noise" => spec.noise_sd = num(k, v)?,
                        "seed" => seed = v.parse().map_err(|_| bad(k, v))?,
                        _ => return Err(Error::config(format!("unknown moons key {k:?}"))),
                    }
                }
                spec.seed = seed;
                Ok(SynthSpec::Moons(spec))
            }
            "cube" => {
                let mut spec = CubeSpec {
                    d: 2,
                    n: 1000,
                    preset: CubePreset::default(),
                    pi: vec![0.95, 0.05],
                    seed: 0,
                };
                let (mut amplitude, mut eps) = (0.9, 1e-3);
                let mut constant = false;
                for (k, v) in keys {
                    match k {
                        "d" => spec.d = int(k, v)?,
                        "n" => spec.n = int(k, v)?,
                        "pi" => {
                            spec.pi = v.split('/').map(|p| num(k, p)).collect::<Result<_>>()?
                        }
                        "preset" => match v {
                            "sine" => constant = false,
                            "constant" => constant = true,
                            _ => return Err(bad(k, v)),
                        },
                        "amp" => amplitude = num(k, v)?,
                        "eps" => eps = num(k, v)?,
                        "seed" => seed = v.parse().map_err(|_| bad(k, v))?,
                        _ => return Err(Error::config(format!("unknown cube key {k:?}"))),
                    }
                }
                spec.preset = if constant {
                    CubePreset::Constant
                } else {
                    CubePreset::Sine { amplitude, eps }
                };
                spec.seed = seed;
                spec.truth()?;
                Ok(SynthSpec::Cube(spec))
            }
            other => Err(Error::config(format!(
                "unknown generator {other:?}; expected moons or cube"
            ))),
        }
    }

    pub fn generate(&self) -> Result<Dataset> {
        match self {
            SynthSpec::Moons(s) => gen_two_moons(s),
            SynthSpec::Cube(s) => gen_cube(s).map(|(ds, _)| ds),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_moons_lie_on_arcs() {
        let spec = TwoMoonsSpec {
            noise_sd: 0.0,
            ..TwoMoonsSpec::new(300, 50, 1)
        };
        let ds = gen_two_moons(&spec).unwrap();
        for i in 0..ds.n() {
            let (x, y) = (ds.row(i)[0], ds.row(i)[1]);
            let r = if ds.label(i) == 0 {
                assert!(y >= 0.0);
                (x * x + y * y).sqrt()
            } else {
                assert!(y <= 0.5);
                ((x - 1.0).powi(2) + (y - 0.5).powi(2)).sqrt()
            };
            assert!((r - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn moons_counts_and_ratio() {
        let ds = gen_two_moons(&TwoMoonsSpec::new(20000, 200, 2)).unwrap();
        assert_eq!(ds.class_counts(), &[20000, 200]);
        assert!((ds.imbalance_ratio().value() - 400.0 / 20200.0).abs() < 1e-15);
        assert!((ds.imbalance_ratio().value() - 0.0198).abs() < 1e-4);
    }

    #[test]
    fn moons_deterministic() {
        let a = gen_two_moons(&TwoMoonsSpec::new(100, 10, 3)).unwrap();
        let b = gen_two_moons(&TwoMoonsSpec::new(100, 10, 3)).unwrap();
        let c = gen_two_moons(&TwoMoonsSpec::new(100, 10, 4)).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn cube_frequencies_within_envelope() {
        let n = 40000;
        for preset in [CubePreset::default(), CubePreset::Constant] {
            let spec = CubeSpec {
                d: 2,
                n,
                preset,
                pi: vec![0.95, 0.05],
                seed: 5,
            };
            let (ds, truth) = gen_cube(&spec).unwrap();
            let freq = ds.class_counts()[1] as f64 / n as f64;
            let sigma = (0.05f64 * 0.95 / n as f64).sqrt();
            assert!((freq - 0.05).abs() < 3.0 * sigma, "freq {freq}");
            let x = [0.25, 0.7];
            let eta = truth.eta(&x);
            assert!((eta.iter().sum::<f64>() - 1.0).abs() < 1e-15);
            assert!(ds.features().iter().all(|&v| (0.0..1.0).contains(&v)));
        }
    }

    #[test]
    fn sine_bayes_boundary() {
        let spec = CubeSpec {
            d: 2,
            n: 10,
            preset: CubePreset::default(),
            pi: vec![0.95, 0.05],
            seed: 0,
        };
        let t = spec.truth().unwrap();
        assert_eq!(t.bayes_balanced(&[0.25, 0.5]), 1);
        assert_eq!(t.bayes_balanced(&[0.75, 0.5]), 0);
    }

    #[test]
    fn cube_rejects_bad_specs() {
        let base = CubeSpec {
            d: 2,
            n: 10,
            preset: CubePreset::default(),
            pi: vec![0.5, 0.5],
            seed: 0,
        };
        assert!(CubeSpec { pi: vec![0.2, 0.3, 0.5], ..base.clone() }.truth().is_err());
        assert!(CubeSpec { pi: vec![0.2, 0.3], ..base.clone() }.truth().is_err());
        assert!(CubeSpec { d: 0, ..base.clone() }.truth().is_err());
        assert!(CubeSpec { preset: CubePreset::Constant, pi: vec![0.2, 0.3, 0.5], ..base }.truth().is_ok());
    }

    #[test]
    fn csv_round_trip() {
        use crate::dataset::{read_csv, LabelColumn, PreprocessSpec};
        let ds = gen_two_moons(&TwoMoonsSpec::new(40, 8, 6)).unwrap();
        let mut buf = Vec::new();
        ds.write_csv_to(&mut buf).unwrap();
        let back = read_csv(
            buf.as_slice(),
            &LabelColumn::Name("label".into()),
            &PreprocessSpec::unscaled(),
            None,
        )
        .unwrap();
        assert_eq!(back.class_counts(), ds.class_counts());
        assert_eq!(back.features(), ds.features());
    }

    #[test]
    fn synth_spec_parsing() {
        let s = SynthSpec::parse("moons:n_major=300,n_minor=20,noise=0.1", 9).unwrap();
        assert_eq!(
            s,
            SynthSpec::Moons(TwoMoonsSpec { n_major: 300, n_minor: 20, noise_sd: 0.1, seed: 9 })
        );
        assert_eq!(s.generate().unwrap().class_counts(), &[300, 20]);
        let c = SynthSpec::parse("cube:d=3,n=500,pi=0.9/0.1,preset=constant,seed=4", 9).unwrap();
        match c {
            SynthSpec::Cube(spec) => {
                assert_eq!((spec.d, spec.n, spec.seed), (3, 500, 4));
                assert_eq!(spec.preset, CubePreset::Constant);
                assert_eq!(spec.pi, vec![0.9, 0.1]);
            }
            _ => panic!("expected cube"),
        }
        for bad in ["blobs:n=3", "moons:n_major", "moons:size=3", "cube:pi=0.5/0.6", "moons:noise=x"] {
            assert!(SynthSpec::parse(bad, 0).is_err(), "{bad}");
        }
    }
}
