//! Properties of Sinkhorn normalization and permutation composition.

use kalman_assoc::sinkhorn::{compose_permutations, sinkhorn_normalize, ScoreMatrix};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn scores(max_k: usize, bound: f64) -> impl Strategy<Value = DMatrix<f64>> {
    (1..=max_k).prop_flat_map(move |k| {
        prop::collection::vec(-bound..bound, k * k).prop_map(move |v| DMatrix::from_vec(k, k, v))
    })
}

fn scores_with_order(
    max_k: usize,
    bound: f64,
) -> impl Strategy<Value = (DMatrix<f64>, Vec<usize>)> {
    scores(max_k, bound).prop_flat_map(|s| {
        let k = s.nrows();
        (Just(s), Just((0..k).collect::<Vec<_>>()).prop_shuffle())
    })
}

fn normalize(s: &DMatrix<f64>, iters: usize) -> DMatrix<f64> {
    sinkhorn_normalize(&ScoreMatrix(s.clone()), iters)
        .unwrap()
        .0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn moderate_scores_are_doubly_stochastic(s in scores(64, 1.5)) {
        let p = sinkhorn_normalize(&ScoreMatrix(s), 20).unwrap();
        prop_assert!(p.0.iter().all(|&v| v >= 0.0));
        prop_assert!(p.marginal_error() < 1e-6, "marginal error {}", p.marginal_error());
    }

    #[test]
    fn row_constants_cancel(
        s in scores(12, 20.0),
        shifts in prop::collection::vec(-50.0..50.0f64, 12),
    ) {
        let mut shifted = s.clone();
        for (i, mut row) in shifted.row_iter_mut().enumerate() {
            row.add_scalar_mut(shifts[i]);
        }
        let diff = (normalize(&s, 20) - normalize(&shifted, 20)).abs().max();
        prop_assert!(diff < 1e-8, "difference {diff}");
    }

    #[test]
    fn simultaneous_permutation_commutes((s, order) in scores_with_order(12, 20.0)) {
        let k = s.nrows();
        let permuted = DMatrix::from_fn(k, k, |i, j| s[(order[i], order[j])]);
        let p = normalize(&s, 20);
        let q = normalize(&permuted, 20);
        let diff = DMatrix::from_fn(k, k, |i, j| (q[(i, j)] - p[(order[i], order[j])]).abs()).max();
        prop_assert!(diff < 1e-10, "difference {diff}");
    }

    #[test]
    fn more_iterations_never_increase_error(s in scores(16, 20.0)) {
        let sm = ScoreMatrix(s);
        let mut prev = f64::INFINITY;
        for iters in 1..=40 {
            let err = sinkhorn_normalize(&sm, iters).unwrap().marginal_error_sum();
            prop_assert!(err <= prev, "iteration {iters}: {err} > {prev}");
            prev = err;
        }
    }

    #[test]
    fn composition_stays_nearly_doubly_stochastic(
        a in scores(8, 1.5),
        seeds in prop::collection::vec(prop::collection::vec(-1.5..1.5f64, 64), 2),
    ) {
        let k = a.nrows();
        let mut assocs = vec![sinkhorn_normalize(&ScoreMatrix(a), 20).unwrap()];
        for v in &seeds {
            let s = DMatrix::from_iterator(k, k, v.iter().copied().take(k * k));
            assocs.push(sinkhorn_normalize(&ScoreMatrix(s), 20).unwrap());
        }
        let p = compose_permutations(&assocs).unwrap();
        prop_assert!(p.marginal_error() < 1e-5, "marginal error {}", p.marginal_error());
    }
}
