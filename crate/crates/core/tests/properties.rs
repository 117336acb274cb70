use ndarray::Array2;
use proptest::prelude::*;

use ubknn::dataset::Dataset;
use ubknn::ensemble::{UnderBagConfig, UnderBagModel};
use ubknn::kdtree::KdTree;
use ubknn::knn::KnnModel;
use ubknn::metrics::evaluate;
use ubknn::oracle::{brute_knn, exact_bagged_weights, weighted_round_posterior};
use ubknn::sampler::{draw, underbag_rule};

fn points(max_n: usize, max_d: usize) -> impl Strategy<Value = (usize, Vec<f64>)> {
    (1..=max_d, 1..=max_n).prop_flat_map(|(d, n)| {
        let coord = prop_oneof![(0u8..4).prop_map(|v| f64::from(v) / 4.0), -1.0..1.0f64];
        (Just(d), prop::collection::vec(coord, n * d))
    })
}

fn labelled(max_n: usize) -> impl Strategy<Value = Dataset> {
    (1usize..=3, 6..=max_n, 2usize..=3).prop_flat_map(|(d, n, m)| {
        let coord = prop_oneof![(0u8..4).prop_map(|v| f64::from(v) / 4.0), -1.0..1.0f64];
        (prop::collection::vec(coord, n * d), prop::collection::vec(0..m, n)).prop_map(move |(flat, mut labels)| {
            for (c, l) in labels.iter_mut().take(m).enumerate() {
                *l = c;
            }
            Dataset::new(Array2::from_shape_vec((n, d), flat).unwrap(), labels, m).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn tree_matches_brute_force((d, flat) in points(300, 5), k in 1usize..20, leaf in 1usize..32, q in prop::collection::vec(-1.2..1.2f64, 5)) {
        let n = flat.len() / d;
        let pts = Array2::from_shape_vec((n, d), flat).unwrap();
        let k = k.min(n);
        let tree = KdTree::build(pts.view(), leaf).unwrap();
        prop_assert!(tree.check_invariants().is_ok());
        let x = &q[..d];
        let got = tree.knn(x, k).unwrap();
        let want = brute_knn(pts.view(), x, k).unwrap();
        prop_assert_eq!(got.indices, want.indices);
        prop_assert_eq!(got.distances, want.distances);
        let on_point = pts.row(n / 2).to_vec();
        prop_assert_eq!(tree.knn(&on_point, k).unwrap(), brute_knn(pts.view(), &on_point, k).unwrap());
    }

    #[test]
    fn round_posterior_mass(ds in labelled(120), frac in 0.05..1.0f64, k in 1usize..15, seed: u64) {
        let s = (frac * (ds.n_classes() * ds.minority_count()) as f64).max(1.0);
        let rule = underbag_rule(&ds, s).unwrap();
        let sample = draw(&ds, &rule, seed);
        prop_assume!(!sample.is_empty());
        let model = KnnModel::fit(&ds, &sample.indices, k).unwrap();
        let x = ds.row(0).to_vec();
        let p = model.posterior(&x);
        let want = (sample.len().min(k)) as f64 / k as f64;
        prop_assert!((p.mass() - want).abs() < 1e-12);
        prop_assert!(p.probs.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert_eq!(p, weighted_round_posterior(&ds, &sample, &x, k));
    }

    #[test]
    fn ensemble_mass_and_deficiency(ds in labelled(80), rounds in 1usize..8, k in 1usize..6, seed: u64) {
        let s = (ds.n_classes() * ds.minority_count()) as f64;
        prop_assume!(k as f64 <= s);
        let cfg = UnderBagConfig::new(rounds, k, s, seed);
        let Ok(model) = UnderBagModel::fit(&ds, &cfg) else { return Ok(()); };
        let x = ds.row(ds.n() - 1).to_vec();
        let p = model.posterior(&x);
        prop_assert!(p.mass() <= 1.0 + 1e-12);
        prop_assert!((p.mass() - (1.0 - model.deficiency())).abs() < 1e-12);
        let w = exact_bagged_weights(&ds, model.rule(), &x, k.min(ds.n())).unwrap();
        prop_assert!(w.vbar.iter().all(|&v| v >= 0.0));
        prop_assert!((1.0 - w.vbar.iter().sum::<f64>() - w.deficiency).abs() < 1e-12);
    }

    #[test]
    fn am_matches_one_minus_balanced_risk(pairs in prop::collection::vec((0usize..4, 0usize..4), 4..400)) {
        let mut truth: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let pred: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        truth[..4].copy_from_slice(&[0, 1, 2, 3]);
        let r = evaluate(&truth, &pred, 4).unwrap();
        prop_assert!(r.identity_gap() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&r.am));
    }
}
