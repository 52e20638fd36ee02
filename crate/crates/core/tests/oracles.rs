mod common;

use cofedrec::clustering::{kmeans, ItemMembership, KMeansParams};
use cofedrec::model::{
    bce_loss, predict, scl_loss, ItemEmbeddingMatrix, SclVariant, ScoreFunction,
};
use cofedrec::partition::{elbow_split, group_aggregate, SimilarityScores};
use cofedrec::Parallelism;
use proptest::prelude::*;

#[test]
fn elbow_matches_brute_force() {
    assert_eq!(common::elbow_suite(1000, 11), 0);
}

#[test]
fn elbow_integer_oracle_agrees_with_float_oracle() {
    let sorted = [9i64, 8, 8, 3, 2, 0];
    let f: Vec<f64> = sorted.iter().map(|&x| x as f64).collect();
    assert_eq!(
        common::elbow_oracle_int(&sorted),
        common::elbow_oracle_f64(&f)
    );
}

#[test]
fn kmeans_keeps_exhaustive_optimum() {
    let (n, failures, worst) = common::kmeans_suite(200, 12);
    assert_eq!(failures, 0, "{failures}/{n} instances, worst gap {worst:e}");
}

#[test]
fn kmeans_brute_force_sanity() {
    let pts = vec![vec![0.0], vec![0.1], vec![5.0], vec![5.2]];
    let (labels, obj) = common::kmeans_brute_force(&pts, 2);
    assert_eq!(labels[0], labels[1]);
    assert_eq!(labels[2], labels[3]);
    assert!((obj - (0.005 + 0.02)).abs() < 1e-12);
}

#[test]
fn losses_match_scalar_oracles() {
    let [scl, item_s, bce] = common::loss_suite(100, 13);
    assert_eq!(scl.1, 0, "scl worst rel err {:e}", scl.2);
    assert_eq!(item_s.1, 0, "item_s worst rel err {:e}", item_s.2);
    assert_eq!(bce.1, 0, "bce worst rel err {:e}", bce.2);
}

#[test]
fn gradients_match_central_differences() {
    for (variant, seed) in [
        (SclVariant::SupContrast, 21),
        (SclVariant::ItemS, 22),
        (SclVariant::None, 23),
    ] {
        let (_, worst) = common::gradient_suite(variant, 50, seed, 1e-5);
        assert!(worst <= 1e-4, "{variant}: worst relative error {worst:e}");
    }
}

#[test]
fn kmeans_identical_points_single_dominant_cluster() {
    let m = ItemEmbeddingMatrix::from_rows(&vec![vec![1.0, 2.0]; 20]).unwrap();
    let r = kmeans(
        &m,
        3,
        KMeansParams::default(),
        &mut common::rng(1),
        Parallelism::Sequential,
    )
    .unwrap();
    let largest = *r.membership.sizes().iter().max().unwrap();
    assert!(largest >= 20 - 2, "sizes {:?}", r.membership.sizes());
    assert_eq!(r.objective, 0.0);
}

fn matrix(rows: usize, dim: usize) -> impl Strategy<Value = ItemEmbeddingMatrix> {
    prop::collection::vec(-2.0f64..2.0, rows * dim)
        .prop_map(move |data| ItemEmbeddingMatrix::from_vec(rows, dim, data).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scl_permutation_invariant(
        v in matrix(6, 3),
        labels in prop::collection::vec(0usize..2, 6),
        perm in Just((0..6).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        let m = ItemMembership::new(labels.clone(), 2).unwrap();
        let a = scl_loss(&v, &m, 0.5, None).unwrap().loss;
        let rows: Vec<Vec<f64>> = perm.iter().map(|&p| v.row(p).to_vec()).collect();
        let pv = ItemEmbeddingMatrix::from_rows(&rows).unwrap();
        let pm = ItemMembership::new(perm.iter().map(|&p| labels[p]).collect(), 2).unwrap();
        let b = scl_loss(&pv, &pm, 0.5, None).unwrap().loss;
        prop_assert!(common::rel_close(a, b, 1e-12) || (a - b).abs() < 1e-12);
    }

    #[test]
    fn bce_is_nonnegative(
        preds in prop::collection::vec(0.0f64..=1.0, 1..20),
        seed in any::<u64>(),
    ) {
        let labels: Vec<f64> = preds.iter().enumerate().map(|(i, _)| ((seed >> (i % 64)) & 1) as f64).collect();
        prop_assert!(bce_loss(&preds, &labels).unwrap() >= 0.0);
    }

    #[test]
    fn predict_is_monotone(a in -30.0f64..30.0, b in -30.0f64..30.0) {
        let f = ScoreFunction { weights: vec![1.0], bias: 0.0 };
        let (pa, pb) = (predict(&f, &[a]).unwrap(), predict(&f, &[b]).unwrap());
        if a < b { prop_assert!(pa <= pb); }
        prop_assert!(pa > 0.0 && pa < 1.0);
    }

    #[test]
    fn aggregation_is_order_independent_and_linear(
        ms in prop::collection::vec(matrix(4, 2), 1..6),
        c in -3.0f64..3.0,
        perm_seed in any::<u64>(),
    ) {
        let members: Vec<(usize, &ItemEmbeddingMatrix)> = ms.iter().enumerate().collect();
        let base = group_aggregate(&members).unwrap();
        let mut shuffled = members.clone();
        let n = shuffled.len();
        for i in (1..n).rev() {
            shuffled.swap(i, (perm_seed as usize).wrapping_mul(31).wrapping_add(i) % (i + 1));
        }
        prop_assert_eq!(&group_aggregate(&shuffled).unwrap(), &base);
        let scaled: Vec<ItemEmbeddingMatrix> = ms.iter().map(|m| m.scaled(c)).collect();
        let sm: Vec<(usize, &ItemEmbeddingMatrix)> = scaled.iter().enumerate().collect();
        let agg = group_aggregate(&sm).unwrap();
        for (x, y) in agg.as_slice().iter().zip(base.as_slice()) {
            prop_assert!((x - c * y).abs() <= 1e-12 * (1.0 + (c * y).abs()));
        }
    }

    #[test]
    fn elbow_split_partitions_and_keeps_core(
        scores in prop::collection::vec(-1.0f64..1.0, 1..60),
        core_pick in any::<prop::sample::Index>(),
    ) {
        let pairs: Vec<(usize, f64)> = scores.iter().copied().enumerate().map(|(i, s)| (i * 3, s)).collect();
        let core = pairs[core_pick.index(pairs.len())].0;
        let split = elbow_split(&SimilarityScores { core, category: 0, scores: pairs.clone() });
        prop_assert!(split.similar.binary_search(&core).is_ok());
        let mut all: Vec<usize> = split.similar.iter().chain(&split.dissimilar).copied().collect();
        all.sort_unstable();
        let mut ids: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        ids.sort_unstable();
        prop_assert_eq!(all, ids);
        for w in split.sorted_scores.windows(2) {
            prop_assert!(w[0].1 > w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0));
        }
        for s in &split.sorted_scores[..=split.elbow_rank] {
            prop_assert!(split.similar.binary_search(&s.0).is_ok());
        }
    }
}
