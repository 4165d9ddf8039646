mod common;

use common::*;
use proptest::prelude::*;
use repsim::metrics::{linear_cka, normalize_for_procrustes, procrustes_distance, procrustes_similarity};
use repsim::rng::SplitMix64;
use repsim::tensor::singular_values;
use repsim::Matrix;

#[test]
fn singular_values_match_gram_eigenvalues() {
    let mut rng = SplitMix64::new(11);
    for (rows, cols) in [(3, 3), (8, 5), (5, 8), (40, 12), (1, 4), (16, 1)] {
        let m = random_matrix(rows, cols, &mut rng);
        let ours = singular_values(&m).unwrap();
        let oracle = gram_singular_values(&m);
        let scale = oracle[0];
        for (k, (a, b)) in ours.iter().zip(&oracle).enumerate() {
            assert!((a - b).abs() <= 1e-8 * scale, "{rows}x{cols} σ{k}: {a} vs {b}");
        }
        assert!(ours.windows(2).all(|w| w[0] >= w[1]));
    }
}

#[test]
fn oracle_eigenvalues_sanity() {
    let a = vec![vec![2.0, 1.0], vec![1.0, 2.0]];
    let e = symmetric_eigenvalues(&a);
    assert!((e[0] - 3.0).abs() < 1e-12 && (e[1] - 1.0).abs() < 1e-12);
}

#[test]
fn cka_matches_gram_form() {
    let mut rng = SplitMix64::new(12);
    for _ in 0..30 {
        let n = 3 + rng.below(40);
        let x = random_matrix(n, 1 + rng.below(10), &mut rng);
        let y = random_matrix(n, 1 + rng.below(10), &mut rng);
        let ours = linear_cka(&x, &y).unwrap().value;
        assert!((ours - gram_cka(&x, &y)).abs() < 1e-10);
    }
}

#[test]
fn procrustes_matches_rotation_scan() {
    let mut rng = SplitMix64::new(13);
    for _ in 0..10 {
        let n = 3 + rng.below(30);
        let x = random_matrix(n, 2, &mut rng);
        let y = random_matrix(n, 2, &mut rng);
        let d = procrustes_distance(
            &normalize_for_procrustes(&x).unwrap(),
            &normalize_for_procrustes(&y).unwrap(),
        )
        .unwrap();
        assert!((d - rotation_scan_procrustes(&x, &y, 1e-4)).abs() < 1e-6);
    }
}

#[test]
fn procrustes_recovers_orthogonal_shift() {
    let mut rng = SplitMix64::new(14);
    let x = random_matrix(30, 5, &mut rng);
    let q = random_orthogonal(5, &mut rng);
    let y = x.matmul(&q).unwrap().map(|v| 2.5 * v + 4.0);
    assert!((procrustes_similarity(&x, &y).unwrap().value - 1.0).abs() < 1e-10);
}

fn matrix_strategy(
    rows: std::ops::Range<usize>,
    cols: std::ops::Range<usize>,
) -> impl Strategy<Value = (Matrix, Matrix)> {
    (rows, cols.clone(), cols).prop_flat_map(|(n, p, q)| {
        (
            prop::collection::vec(-5.0f64..5.0, n * p),
            prop::collection::vec(-5.0f64..5.0, n * q),
        )
            .prop_map(move |(a, b)| (Matrix::new(n, p, a).unwrap(), Matrix::new(n, q, b).unwrap()))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cka_is_symmetric_and_bounded((x, y) in matrix_strategy(4..30, 1..6)) {
        let a = linear_cka(&x, &y).unwrap().value;
        let b = linear_cka(&y, &x).unwrap().value;
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!((linear_cka(&x, &x).unwrap().value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scores_invariant_to_orthogonal_maps_and_scaling((x, y) in matrix_strategy(4..30, 1..6), seed in 0u64..1000, c in 0.1f64..10.0) {
        let mut rng = SplitMix64::new(seed);
        let q = random_orthogonal(x.cols(), &mut rng);
        let xq = x.matmul(&q).unwrap().scale(c);
        let base = linear_cka(&x, &y).unwrap().value;
        prop_assert!((linear_cka(&xq, &y).unwrap().value - base).abs() < 1e-10);
        let pbase = procrustes_similarity(&x, &y).unwrap().value;
        prop_assert!((procrustes_similarity(&xq, &y).unwrap().value - pbase).abs() < 1e-10);
    }

    #[test]
    fn scores_invariant_to_joint_row_permutation((x, y) in matrix_strategy(4..30, 1..6), seed in 0u64..1000) {
        let mut perm: Vec<usize> = (0..x.rows()).collect();
        SplitMix64::new(seed).shuffle(&mut perm);
        let (xp, yp) = (x.select_rows(&perm), y.select_rows(&perm));
        prop_assert!((linear_cka(&xp, &yp).unwrap().value - linear_cka(&x, &y).unwrap().value).abs() < 1e-10);
        prop_assert!((procrustes_similarity(&xp, &yp).unwrap().value - procrustes_similarity(&x, &y).unwrap().value).abs() < 1e-10);
    }
}
