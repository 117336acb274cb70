//! Under-bagging k-NN.
//!
//! Each of `B` rounds draws a Bernoulli subsample with the bagging acceptance
//! rule, builds its own k-d tree and answers queries with a plain k-NN
//! posterior. The ensemble posterior is the uniform average over rounds.
//!
//! Round votes are summed as integers in round order and divided once by
//! `k * B`, so the result does not depend on parallelism or on the order in
//! which rounds are combined.

use std::io::{Read, Write};

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::kdtree::DEFAULT_LEAF_SIZE;
use crate::knn::{argmax, KnnModel, PosteriorVector};
use crate::rng;
use crate::sampler::{self, AcceptanceRule, SubSample};

const MAGIC: &[u8; 8] = b"UBKNNMDL";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnderBagConfig {
    pub rounds: usize,
    pub k: usize,
    /// Expected subsample size per round.
    pub s: f64,
    pub master_seed: u64,
    pub parallel: bool,
    pub leaf_size: usize,
}

impl UnderBagConfig {
    pub fn new(rounds: usize, k: usize, s: f64, master_seed: u64) -> Self {
        Self {
            rounds,
            k,
            s,
            master_seed,
            parallel: true,
            leaf_size: DEFAULT_LEAF_SIZE,
        }
    }

    /// Under-bagging with `s = M * n_(1)`, the largest admissible size.
    pub fn full_size(ds: &Dataset, rounds: usize, k: usize, master_seed: u64) -> Self {
        let s = (ds.n_classes() * ds.minority_count()) as f64;
        Self::new(rounds, k, s, master_seed)
    }

    pub fn validate(&self, ds: &Dataset) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::config("bagging rounds must be at least 1"));
        }
        if self.k == 0 {
            return Err(Error::config("k must be at least 1"));
        }
        if self.leaf_size == 0 {
            return Err(Error::config("leaf size must be at least 1"));
        }
        sampler::underbag_rule(ds, self.s).map(|_| ())
    }

    pub fn round_seed(&self, b: usize) -> u64 {
        rng::derive_seed(self.master_seed, b as u64)
    }
}

#[derive(Debug, Clone)]
struct Round {
    sample: SubSample,
    model: Option<KnnModel>,
}

#[derive(Debug, Clone)]
pub struct UnderBagModel {
    config: UnderBagConfig,
    rule: AcceptanceRule,
    rounds: Vec<Round>,
    n_classes: usize,
    dim: usize,
    fingerprint: [u8; 32],
}

impl UnderBagModel {
    pub fn fit(ds: &Dataset, cfg: &UnderBagConfig) -> Result<Self> {
        cfg.validate(ds)?;
        let rule = sampler::underbag_rule(ds, cfg.s)?;
        let draw = |b: usize| sampler::draw(ds, &rule, cfg.round_seed(b));
        let samples: Vec<SubSample> = if cfg.parallel {
            (0..cfg.rounds).into_par_iter().map(draw).collect()
        } else {
            (0..cfg.rounds).map(draw).collect()
        };
        Self::assemble(ds, cfg.clone(), rule, samples)
    }

    /// Rebuilds a model from stored subsamples, e.g. after loading a
    /// container. The subsamples are used as given, in the given order.
    pub fn from_subsamples(
        ds: &Dataset,
        cfg: &UnderBagConfig,
        samples: Vec<SubSample>,
    ) -> Result<Self> {
        cfg.validate(ds)?;
        if samples.len() != cfg.rounds {
            return Err(Error::config(format!(
                "{} subsamples given for {} rounds",
                samples.len(),
                cfg.rounds
            )));
        }
        if let Some(bad) = samples
            .iter()
            .flat_map(|s| &s.indices)
            .find(|&&i| i >= ds.n())
        {
            return Err(Error::config(format!("subsample row {bad} out of range")));
        }
        let rule = sampler::underbag_rule(ds, cfg.s)?;
        Self::assemble(ds, cfg.clone(), rule, samples)
    }

    fn assemble(
        ds: &Dataset,
        config: UnderBagConfig,
        rule: AcceptanceRule,
        samples: Vec<SubSample>,
    ) -> Result<Self> {
        if samples.iter().all(|s| s.is_empty()) {
            return Err(Error::AllRoundsEmpty(samples.len()));
        }
        let build = |sample: SubSample| -> Result<Round> {
            let model = if sample.is_empty() {
                None
            } else {
                Some(KnnModel::fit_with_leaf_size(
                    ds,
                    &sample.indices,
                    config.k,
                    config.leaf_size,
                )?)
            };
            Ok(Round { sample, model })
        };
        let rounds: Result<Vec<Round>> = if config.parallel {
            samples.into_par_iter().map(build).collect()
        } else {
            samples.into_iter().map(build).collect()
        };
        Ok(Self {
            rounds: rounds?,
            config,
            rule,
            n_classes: ds.n_classes(),
            dim: ds.dim(),
            fingerprint: ds.fingerprint(),
        })
    }

    pub fn config(&self) -> &UnderBagConfig {
        &self.config
    }

    pub fn rule(&self) -> &AcceptanceRule {
        &self.rule
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_rounds(&self) -> usize {
        self.rounds.len()
    }

    pub fn fingerprint(&self) -> &[u8; 32] {
        &self.fingerprint
    }

    pub fn subsamples(&self) -> impl Iterator<Item = &SubSample> {
        self.rounds.iter().map(|r| &r.sample)
    }

    pub fn round_model(&self, b: usize) -> Option<&KnnModel> {
        self.rounds[b].model.as_ref()
    }

    pub fn empty_rounds(&self) -> usize {
        self.rounds.iter().filter(|r| r.model.is_none()).count()
    }

    /// `(1/B) * sum_b max(0, k - s_b) / k` where `s_b` is the size of round `b`.
    pub fn deficiency(&self) -> f64 {
        let k = self.config.k;
        let missing: usize = self
            .rounds
            .iter()
            .map(|r| k.saturating_sub(r.sample.len()))
            .sum();
        missing as f64 / (k * self.rounds.len()) as f64
    }

    /// Neighbor counts per class summed over all rounds.
    pub fn votes(&self, x: &[f64]) -> Vec<u64> {
        let mut votes = vec![0u64; self.n_classes];
        for m in self.rounds.iter().filter_map(|r| r.model.as_ref()) {
            for y in m.neighbor_labels(x, self.config.k) {
                votes[y] += 1;
            }
        }
        votes
    }

    /// `votes / (k * B)`.
    pub fn posterior(&self, x: &[f64]) -> PosteriorVector {
        let denom = (self.config.k * self.rounds.len()) as u64;
        PosteriorVector::from_counts(&self.votes(x), denom)
    }

    pub fn classify(&self, x: &[f64]) -> usize {
        argmax(&self.votes(x))
    }

    /// Predictions and posteriors for every row of `queries`.
    pub fn predict_batch(
        &self,
        queries: ArrayView2<'_, f64>,
    ) -> Result<(Vec<usize>, Vec<PosteriorVector>)> {
        if queries.ncols() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: queries.ncols(),
            });
        }
        let one = |i: usize| {
            let row = queries.row(i);
            let x = row.as_slice().map(|s| s.to_vec()).unwrap_or_else(|| row.to_vec());
            let p = self.posterior(&x);
            (p.argmax(), p)
        };
        let out: Vec<(usize, PosteriorVector)> = if self.config.parallel {
            (0..queries.nrows()).into_par_iter().map(one).collect()
        } else {
            (0..queries.nrows()).map(one).collect()
        };
        Ok(out.into_iter().unzip())
    }

    /// Cumulative votes for every `k` in `1..=k_max` and every prefix of
    /// rounds listed in `checkpoints`. Entry `[c][k - 1][m]` holds the
    /// class-`m` votes of the first `checkpoints[c]` rounds using `k`
    /// neighbors per round. Checkpoints must be nondecreasing and at most `B`.
    pub fn votes_grid(&self, x: &[f64], checkpoints: &[usize], k_max: usize) -> Vec<Vec<Vec<u64>>> {
        let m_count = self.n_classes;
        let mut acc = vec![vec![0u64; m_count]; k_max];
        let mut out = Vec::with_capacity(checkpoints.len());
        let mut done = 0;
        for &cp in checkpoints {
            let cp = cp.min(self.rounds.len());
            for round in &self.rounds[done.min(cp)..cp] {
                if let Some(m) = &round.model {
                    let labels = m.neighbor_labels(x, k_max);
                    let mut prefix = vec![0u64; m_count];
                    for (j, row) in acc.iter_mut().enumerate() {
                        if let Some(&y) = labels.get(j) {
                            prefix[y] += 1;
                        }
                        for (a, p) in row.iter_mut().zip(&prefix) {
                            *a += p;
                        }
                    }
                }
            }
            done = done.max(cp);
            out.push(acc.clone());
        }
        out
    }

    /// Cumulative votes over all rounds for every `k` in `1..=k_max`.
    pub fn votes_by_k(&self, x: &[f64], k_max: usize) -> Vec<Vec<u64>> {
        self.votes_grid(x, &[self.rounds.len()], k_max)
            .pop()
            .unwrap_or_default()
    }

    /// Writes the replayable container: config, dataset fingerprint and the
    /// accepted rows of every round.
    pub fn write_to<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        out.write_all(&self.fingerprint)?;
        let c = &self.config;
        for v in [c.rounds as u64, c.k as u64, c.s.to_bits(), c.master_seed] {
            out.write_all(&v.to_le_bytes())?;
        }
        out.write_all(&[c.parallel as u8])?;
        for v in [c.leaf_size as u64, self.n_classes as u64, self.dim as u64] {
            out.write_all(&v.to_le_bytes())?;
        }
        for r in &self.rounds {
            out.write_all(&r.sample.round_seed.to_le_bytes())?;
            out.write_all(&(r.sample.indices.len() as u64).to_le_bytes())?;
            for &i in &r.sample.indices {
                out.write_all(&(i as u64).to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads a container written by [`write_to`](Self::write_to) and rebuilds
    /// the round models against `ds`, which must be the training data the
    /// model was fitted on.
    pub fn read_from<R: Read>(input: &mut R, ds: &Dataset) -> Result<Self> {
        let mut magic = [0u8; 8];
        read_bytes(input, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Container("not a model container".into()));
        }
        let mut v4 = [0u8; 4];
        read_bytes(input, &mut v4)?;
        let version = u32::from_le_bytes(v4);
        if version != FORMAT_VERSION {
            return Err(Error::Container(format!("unsupported version {version}")));
        }
        let mut fp = [0u8; 32];
        read_bytes(input, &mut fp)?;
        if fp != ds.fingerprint() {
            return Err(Error::Container(
                "dataset fingerprint does not match the fitted data".into(),
            ));
        }
        let rounds = read_u64(input)? as usize;
        let k = read_u64(input)? as usize;
        let s = f64::from_bits(read_u64(input)?);
        let master_seed = read_u64(input)?;
        let mut flag = [0u8; 1];
        read_bytes(input, &mut flag)?;
        let leaf_size = read_u64(input)? as usize;
        let n_classes = read_u64(input)? as usize;
        let dim = read_u64(input)? as usize;
        if n_classes != ds.n_classes() || dim != ds.dim() {
            return Err(Error::Container("class count or dimension mismatch".into()));
        }
        let mut samples = Vec::with_capacity(rounds.min(1 << 16));
        for _ in 0..rounds {
            let round_seed = read_u64(input)?;
            let len = read_u64(input)? as usize;
            if len > ds.n() {
                return Err(Error::Container(format!("round of {len} rows")));
            }
            let indices = (0..len)
                .map(|_| read_u64(input).map(|v| v as usize))
                .collect::<Result<Vec<_>>>()?;
            samples.push(SubSample {
                indices,
                round_seed,
            });
        }
        let cfg = UnderBagConfig {
            rounds,
            k,
            s,
            master_seed,
            parallel: flag[0] != 0,
            leaf_size,
        };
        Self::from_subsamples(ds, &cfg, samples)
    }
}

fn read_bytes<R: Read>(input: &mut R, buf: &mut [u8]) -> Result<()> {
    input
        .read_exact(buf)
        .map_err(|e| Error::Container(e.to_string()))
}

fn read_u64<R: Read>(input: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_bytes(input, &mut b)?;
    Ok(u64::from_le_bytes(b))
}
