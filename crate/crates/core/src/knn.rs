//! Plain k-NN posterior estimation over a set of dataset rows.
//!
//! The posterior for class `m` is the number of class-`m` rows among the
//! first `min(k, |rows|)` neighbors divided by `k`. When fewer than `k` rows
//! are indexed the vector is deficient: its mass is `|rows| / k`.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::kdtree::{KdTree, DEFAULT_LEAF_SIZE};

/// Class scores in `[0, 1]` whose sum may be below one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorVector {
    pub probs: Vec<f64>,
}

impl PosteriorVector {
    pub fn zeros(n_classes: usize) -> Self {
        Self {
            probs: vec![0.0; n_classes],
        }
    }

    /// `counts[m] / denom` for every class.
    pub fn from_counts(counts: &[u64], denom: u64) -> Self {
        let d = denom as f64;
        Self {
            probs: counts.iter().map(|&c| c as f64 / d).collect(),
        }
    }

    pub fn mass(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Index of the largest entry; the smallest class id wins ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }

    pub fn sup_distance(&self, other: &PosteriorVector) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// First index of the maximum.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// k-NN over a fixed subset of dataset rows.
#[derive(Debug, Clone)]
pub struct KnnModel {
    tree: KdTree,
    rows: Vec<usize>,
    labels: Vec<usize>,
    k: usize,
    n_classes: usize,
}

impl KnnModel {
    pub fn fit(ds: &Dataset, indices: &[usize], k: usize) -> Result<Self> {
        Self::fit_with_leaf_size(ds, indices, k, DEFAULT_LEAF_SIZE)
    }

    /// Indexes the given rows (sorted and deduplicated). The tree reports
    /// positions in the sorted row list, so distance ties resolve to the
    /// smaller dataset row.
    pub fn fit_with_leaf_size(
        ds: &Dataset,
        indices: &[usize],
        k: usize,
        leaf_size: usize,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::config("k must be at least 1"));
        }
        if indices.is_empty() {
            return Err(Error::Empty("k-NN model needs at least one row"));
        }
        let mut rows = indices.to_vec();
        rows.sort_unstable();
        rows.dedup();
        if let Some(&bad) = rows.iter().find(|&&r| r >= ds.n()) {
            return Err(Error::config(format!("row {bad} out of range")));
        }
        let local: Vec<usize> = (0..rows.len()).collect();
        let tree = KdTree::build_with_ids(ds.features().view(), &rows, &local, leaf_size)?;
        let labels = rows.iter().map(|&r| ds.label(r)).collect();
        Ok(Self {
            tree,
            rows,
            labels,
            k,
            n_classes: ds.n_classes(),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// `min(k, |rows|)`.
    pub fn effective_k(&self) -> usize {
        self.k.min(self.rows.len())
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn tree(&self) -> &KdTree {
        &self.tree
    }

    /// Dataset rows of the first `min(k, |rows|)` neighbors of `x`.
    pub fn neighbors(&self, x: &[f64], k: usize) -> Vec<usize> {
        self.local_neighbors(x, k)
            .into_iter()
            .map(|j| self.rows[j])
            .collect()
    }

    fn local_neighbors(&self, x: &[f64], k: usize) -> Vec<usize> {
        let k = k.min(self.rows.len());
        if k == 0 {
            return Vec::new();
        }
        self.tree
            .knn(x, k)
            .expect("query dimension matches the fitted data")
            .indices
    }

    /// Labels of the first `min(k_max, |rows|)` neighbors, nearest first.
    pub fn neighbor_labels(&self, x: &[f64], k_max: usize) -> Vec<usize> {
        self.local_neighbors(x, k_max)
            .into_iter()
            .map(|j| self.labels[j])
            .collect()
    }

    /// Per-class neighbor counts among the first `min(k, |rows|)` neighbors.
    pub fn label_counts(&self, x: &[f64]) -> Vec<u64> {
        let mut counts = vec![0u64; self.n_classes];
        for y in self.neighbor_labels(x, self.k) {
            counts[y] += 1;
        }
        counts
    }

    pub fn posterior(&self, x: &[f64]) -> PosteriorVector {
        PosteriorVector::from_counts(&self.label_counts(x), self.k as u64)
    }

    pub fn classify(&self, x: &[f64]) -> usize {
        argmax(&self.label_counts(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_ds(xs: &[f64], labels: &[usize], m: usize) -> Dataset {
        let features = ndarray::Array2::from_shape_fn((xs.len(), 1), |(i, _)| xs[i]);
        Dataset::new(features, labels.to_vec(), m).unwrap()
    }

    #[test]
    fn counts_neighbor_labels() {
        let ds = line_ds(&[0.0, 1.0, 2.0, 10.0, 11.0], &[0, 0, 1, 1, 1], 2);
        let model = KnnModel::fit(&ds, &[0, 1, 2, 3, 4], 3).unwrap();
        let p = model.posterior(&[0.5]);
        assert_eq!(p.probs, vec![2.0 / 3.0, 1.0 / 3.0]);
        assert_eq!(model.classify(&[0.5]), 0);
    }

    #[test]
    fn deficient_mass_when_subset_smaller_than_k() {
        let ds = line_ds(&[0.0, 1.0, 2.0, 3.0], &[0, 1, 1, 0], 2);
        let model = KnnModel::fit(&ds, &[0, 1, 2], 5).unwrap();
        let p = model.posterior(&[0.0]);
        assert_eq!(p.probs, vec![1.0 / 5.0, 2.0 / 5.0]);
        assert!((p.mass() - 0.6).abs() < 1e-15);
        assert_eq!(model.effective_k(), 3);
        assert_eq!(model.k(), 5);
    }

    #[test]
    fn one_nn_is_one_hot() {
        let ds = line_ds(&[0.0, 5.0], &[1, 0], 2);
        let model = KnnModel::fit(&ds, &[0, 1], 1).unwrap();
        assert_eq!(model.posterior(&[4.0]).probs, vec![1.0, 0.0]);
        assert_eq!(model.classify(&[4.0]), 0);
        assert_eq!(model.classify(&[1.0]), 1);
    }

    #[test]
    fn argmax_ties_pick_smallest_class() {
        assert_eq!(PosteriorVector { probs: vec![0.5, 0.5] }.argmax(), 0);
        assert_eq!(PosteriorVector { probs: vec![0.2, 0.7, 0.1] }.argmax(), 1);
        assert_eq!(argmax(&[0u64, 3, 3]), 1);
    }

    #[test]
    fn indexes_exactly_the_given_rows() {
        let ds = line_ds(&[0.0, 1.0, 2.0, 3.0], &[0, 1, 0, 1], 2);
        let model = KnnModel::fit(&ds, &[3, 1, 3], 2).unwrap();
        assert_eq!(model.rows(), &[1, 3]);
        assert_eq!(model.neighbors(&[0.0], 2), vec![1, 3]);
    }

    #[test]
    fn empty_indices_rejected() {
        let ds = line_ds(&[0.0, 1.0], &[0, 1], 2);
        assert!(matches!(KnnModel::fit(&ds, &[], 1), Err(Error::Empty(_))));
    }

    #[test]
    fn classify_invariant_under_monotone_transform() {
        let p = PosteriorVector {
            probs: vec![0.1, 0.45, 0.45, 0.0],
        };
        let t: Vec<f64> = p.probs.iter().map(|v| (3.0 * v + 1.0f64).ln()).collect();
        assert_eq!(p.argmax(), argmax(&t));
    }
}
