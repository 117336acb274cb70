//! Exact Euclidean k-nearest-neighbor search with a static k-d tree.
//!
//! Nodes split on the dimension of widest spread at the median. Points are
//! copied into leaf order at build time so leaf scans are contiguous.
//! Distance ties are broken by the smaller point id, which makes results
//! identical to a full scan sorted by `(distance, id)`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use ndarray::ArrayView2;

use crate::error::{Error, Result};

pub const DEFAULT_LEAF_SIZE: usize = 16;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        dim: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Neighbors sorted by ascending `(distance, id)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborList {
    pub indices: Vec<usize>,
    pub distances: Vec<f64>,
}

impl NeighborList {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Squared Euclidean distance, summed in dimension order.
#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let t = x - y;
        acc += t * t;
    }
    acc
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    d2: f64,
    id: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2
            .total_cmp(&other.d2)
            .then_with(|| self.id.cmp(&other.id))
    }
}

#[derive(Debug, Clone)]
pub struct KdTree {
    dim: usize,
    leaf_size: usize,
    points: Vec<f64>,
    ids: Vec<usize>,
    nodes: Vec<Node>,
}

impl KdTree {
    /// Indexes every row of `points`; neighbor ids are row numbers.
    pub fn build(points: ArrayView2<'_, f64>, leaf_size: usize) -> Result<Self> {
        let rows: Vec<usize> = (0..points.nrows()).collect();
        Self::build_subset(points, &rows, leaf_size)
    }

    /// Indexes only `rows` of `points`; neighbor ids are the row numbers
    /// from `rows`, so tie-breaking follows the original row order.
    pub fn build_subset(points: ArrayView2<'_, f64>, rows: &[usize], leaf_size: usize) -> Result<Self> {
        Self::build_with_ids(points, rows, rows, leaf_size)
    }

    /// Indexes `rows` of `points`, reporting `ids[j]` for `rows[j]`. Ties
    /// are broken by the smaller id.
    pub fn build_with_ids(
        points: ArrayView2<'_, f64>,
        rows: &[usize],
        ids: &[usize],
        leaf_size: usize,
    ) -> Result<Self> {
        let dim = points.ncols();
        if rows.len() != ids.len() {
            return Err(Error::Dimension {
                expected: rows.len(),
                got: ids.len(),
            });
        }
        if rows.is_empty() {
            return Err(Error::Empty("k-d tree needs at least one point"));
        }
        if dim == 0 {
            return Err(Error::Empty("k-d tree needs at least one dimension"));
        }
        let leaf_size = leaf_size.max(1);
        let mut coords = Vec::with_capacity(rows.len() * dim);
        for &r in rows {
            coords.extend(points.row(r).iter().copied());
        }
        let mut perm: Vec<usize> = (0..rows.len()).collect();
        let mut nodes = Vec::with_capacity(2 * rows.len() / leaf_size + 1);
        let n = rows.len();
        build_node(&coords, ids, dim, leaf_size, &mut perm, 0, n, &mut nodes);

        let mut ordered = Vec::with_capacity(coords.len());
        for &p in &perm {
            ordered.extend_from_slice(&coords[p * dim..(p + 1) * dim]);
        }
        let ids = perm.iter().map(|&p| ids[p]).collect();
        Ok(Self {
            dim,
            leaf_size,
            points: ordered,
            ids,
            nodes,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn leaf_size(&self) -> usize {
        self.leaf_size
    }

    /// Number of edges on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// The `k` nearest indexed points to `x`.
    pub fn knn(&self, x: &[f64], k: usize) -> Result<NeighborList> {
        if x.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: x.len(),
            });
        }
        if k == 0 {
            return Err(Error::config("k must be at least 1"));
        }
        if k > self.len() {
            return Err(Error::KTooLarge { k, n: self.len() });
        }
        let mut search = Search {
            tree: self,
            x,
            k,
            heap: BinaryHeap::with_capacity(k + 1),
            off: vec![0.0; self.dim],
        };
        search.visit(0);
        let sorted = search.heap.into_sorted_vec();
        Ok(NeighborList {
            indices: sorted.iter().map(|c| c.id).collect(),
            distances: sorted.iter().map(|c| c.d2.sqrt()).collect(),
        })
    }

    /// Checks the structural invariants; used by tests.
    #[doc(hidden)]
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let mut seen = vec![0u32; self.len()];
        self.check_node(0, &mut seen)?;
        if seen.iter().any(|&s| s != 1) {
            return Err("a point is not covered by exactly one leaf".into());
        }
        Ok(())
    }

    fn check_node(&self, i: usize, seen: &mut [u32]) -> std::result::Result<(usize, usize), String> {
        match self.nodes[i] {
            Node::Leaf { start, end } => {
                if end - start > self.leaf_size {
                    return Err(format!("leaf of {} points", end - start));
                }
                for s in &mut seen[start..end] {
                    *s += 1;
                }
                Ok((start, end))
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let (ls, le) = self.check_node(left, seen)?;
                let (rs, re) = self.check_node(right, seen)?;
                for p in ls..le {
                    if self.points[p * self.dim + dim] > value {
                        return Err(format!("left point above split {value}"));
                    }
                }
                for p in rs..re {
                    if self.points[p * self.dim + dim] < value {
                        return Err(format!("right point below split {value}"));
                    }
                }
                Ok((ls.min(rs), le.max(re)))
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn build_node(
    coords: &[f64],
    ids: &[usize],
    dim: usize,
    leaf_size: usize,
    perm: &mut [usize],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let me = nodes.len();
    if end - start <= leaf_size {
        nodes.push(Node::Leaf { start, end });
        return me;
    }
    let slice = &mut perm[start..end];
    let mut split_dim = 0;
    let mut best_spread = f64::NEG_INFINITY;
    for j in 0..dim {
        let (lo, hi) = slice.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| {
            let v = coords[p * dim + j];
            (lo.min(v), hi.max(v))
        });
        if hi - lo > best_spread {
            best_spread = hi - lo;
            split_dim = j;
        }
    }
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| {
        coords[a * dim + split_dim]
            .total_cmp(&coords[b * dim + split_dim])
            .then_with(|| ids[a].cmp(&ids[b]))
    });
    let value = coords[slice[mid] * dim + split_dim];
    nodes.push(Node::Leaf { start, end }); // placeholder
    let left = build_node(coords, ids, dim, leaf_size, perm, start, start + mid, nodes);
    let right = build_node(coords, ids, dim, leaf_size, perm, start + mid, end, nodes);
    nodes[me] = Node::Split {
        dim: split_dim,
        value,
        left,
        right,
    };
    me
}

struct Search<'a> {
    tree: &'a KdTree,
    x: &'a [f64],
    k: usize,
    heap: BinaryHeap<Candidate>,
    off: Vec<f64>,
}

impl Search<'_> {
    fn offer(&mut self, c: Candidate) {
        if self.heap.len() < self.k {
            self.heap.push(c);
        } else if c < *self.heap.peek().expect("full heap") {
            self.heap.pop();
            self.heap.push(c);
        }
    }

    /// Lower bound on the squared distance to the current cell. Summed in
    /// the same order as `sq_dist` with per-dimension terms no larger than
    /// the true ones, so rounding cannot push it above a real distance.
    fn bound(&self) -> f64 {
        let mut acc = 0.0;
        for &o in &self.off {
            acc += o * o;
        }
        acc
    }

    fn prune(&self, bound: f64) -> bool {
        self.heap.len() == self.k && bound > self.heap.peek().expect("full heap").d2
    }

    fn visit(&mut self, node: usize) {
        match self.tree.nodes[node] {
            Node::Leaf { start, end } => {
                let d = self.tree.dim;
                for p in start..end {
                    let d2 = sq_dist(self.x, &self.tree.points[p * d..(p + 1) * d]);
                    self.offer(Candidate {
                        d2,
                        id: self.tree.ids[p],
                    });
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = self.x[dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.visit(near);
                let saved = self.off[dim];
                self.off[dim] = diff.abs();
                let bound = self.bound();
                if !self.prune(bound) {
                    self.visit(far);
                }
                self.off[dim] = saved;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn brute(points: &Array2<f64>, x: &[f64], k: usize) -> Vec<usize> {
        let mut all: Vec<(f64, usize)> = (0..points.nrows())
            .map(|i| (sq_dist(x, points.row(i).as_slice().unwrap()), i))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.into_iter().take(k).map(|(_, i)| i).collect()
    }

    #[test]
    fn single_point() {
        let pts = array![[1.5, -2.0]];
        let tree = KdTree::build(pts.view(), 16).unwrap();
        let nl = tree.knn(&[0.0, 0.0], 1).unwrap();
        assert_eq!(nl.indices, vec![0]);
        assert_eq!(tree.depth(), 0);
    }

    #[test]
    fn line_points_split_at_median() {
        let pts = array![[0.0], [1.0], [2.0], [3.0]];
        let tree = KdTree::build(pts.view(), 1).unwrap();
        tree.check_invariants().unwrap();
        match tree.nodes[0] {
            Node::Split { value, .. } => assert!(value == 1.0 || value == 2.0),
            _ => panic!("root should split"),
        }
        for i in 0..4 {
            let nl = tree.knn(&[i as f64], 1).unwrap();
            assert_eq!(nl.indices, vec![i]);
            assert_eq!(nl.distances, vec![0.0]);
        }
    }

    #[test]
    fn hand_geometry() {
        let pts = array![[0.0, 0.0], [3.0, 0.0], [0.0, 4.0]];
        let tree = KdTree::build(pts.view(), 1).unwrap();
        let nl = tree.knn(&[0.0, 0.0], 2).unwrap();
        assert_eq!(nl.indices, vec![0, 1]);
        assert_eq!(nl.distances, vec![0.0, 3.0]);
    }

    #[test]
    fn ties_break_by_smaller_id() {
        let pts = array![[1.0], [-1.0], [1.0], [-1.0], [0.0]];
        let tree = KdTree::build(pts.view(), 1).unwrap();
        let nl = tree.knn(&[0.0], 4).unwrap();
        assert_eq!(nl.indices, vec![4, 0, 1, 2]);
    }

    #[test]
    fn duplicate_points() {
        let pts = Array2::from_elem((40, 2), 0.25);
        let tree = KdTree::build(pts.view(), 4).unwrap();
        tree.check_invariants().unwrap();
        let nl = tree.knn(&[0.0, 0.0], 5).unwrap();
        assert_eq!(nl.indices, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn subset_reports_original_ids() {
        let pts = array![[0.0], [10.0], [1.0], [11.0], [2.0]];
        let tree = KdTree::build_subset(pts.view(), &[1, 3, 4], 1).unwrap();
        assert_eq!(tree.knn(&[0.0], 2).unwrap().indices, vec![4, 1]);
    }

    #[test]
    fn errors() {
        let pts = array![[0.0], [1.0]];
        assert!(matches!(
            KdTree::build_subset(pts.view(), &[], 4),
            Err(Error::Empty(_))
        ));
        let tree = KdTree::build(pts.view(), 4).unwrap();
        assert!(matches!(tree.knn(&[0.0], 3), Err(Error::KTooLarge { k: 3, n: 2 })));
        assert!(matches!(tree.knn(&[0.0, 1.0], 1), Err(Error::Dimension { .. })));
    }

    #[test]
    fn depth_bound_for_median_splits() {
        use rand::Rng;
        let mut rng = crate::rng::stream(3);
        for &(n, leaf) in &[(1000usize, 16usize), (1025, 16), (4096, 1), (77, 5), (17, 16)] {
            let pts = Array2::from_shape_fn((n, 3), |_| rng.random::<f64>());
            let tree = KdTree::build(pts.view(), leaf).unwrap();
            tree.check_invariants().unwrap();
            let bound = (n as f64 / leaf as f64).log2().ceil().max(0.0) as usize + 1;
            assert!(tree.depth() <= bound, "n={n} leaf={leaf} depth={}", tree.depth());
        }
    }

    #[test]
    fn self_query_returns_itself() {
        use rand::Rng;
        let mut rng = crate::rng::stream(11);
        let pts = Array2::from_shape_fn((1000, 4), |_| rng.random::<f64>());
        let tree = KdTree::build(pts.view(), DEFAULT_LEAF_SIZE).unwrap();
        for i in 0..1000 {
            let nl = tree.knn(pts.row(i).as_slice().unwrap(), 1).unwrap();
            assert_eq!(nl.indices, vec![i]);
            assert_eq!(nl.distances, vec![0.0]);
        }
    }

    #[test]
    fn matches_scan_on_random_queries() {
        use rand::Rng;
        let mut rng = crate::rng::stream(5);
        let pts = Array2::from_shape_fn((500, 5), |_| rng.random::<f64>());
        let tree = KdTree::build(pts.view(), DEFAULT_LEAF_SIZE).unwrap();
        for _ in 0..100 {
            let q: Vec<f64> = (0..5).map(|_| rng.random()).collect();
            assert_eq!(tree.knn(&q, 10).unwrap().indices, brute(&pts, &q, 10));
        }
    }
}
