//! Properties of pairwise features, the scorer and the appearance matrix.

use kalman_assoc::assoc_net::{
    appearance_matrix, mlp_forward, pairwise_features, score_matrix, AppearanceHead, BoundingBox,
    EmbeddingTable, ScorerParams,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn bbox() -> impl Strategy<Value = BoundingBox> {
    (-500.0..500.0, -500.0..500.0, 1.0..200.0, 1.0..200.0)
        .prop_map(|(cx, cy, w, h)| BoundingBox::new(cx, cy, w, h, 1.0))
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn swapping_boxes_negates_offsets(a in bbox(), b in bbox()) {
        let ab = pairwise_features(&a, &b).0;
        let ba = pairwise_features(&b, &a).0;
        for i in 0..4 {
            prop_assert!(close(ab[i], -ba[i]), "entry {i}: {} vs {}", ab[i], ba[i]);
        }
        prop_assert_eq!(ab[4], ba[4]);
    }

    #[test]
    fn features_ignore_translation(a in bbox(), b in bbox(), dx in -300.0..300.0, dy in -300.0..300.0) {
        let shift = |r: &BoundingBox| BoundingBox::new(r.cx + dx, r.cy + dy, r.w, r.h, r.conf);
        let f = pairwise_features(&a, &b).0;
        let g = pairwise_features(&shift(&a), &shift(&b)).0;
        for i in 0..4 {
            prop_assert!(close(f[i], g[i]), "entry {i}: {} vs {}", f[i], g[i]);
        }
        prop_assert!((f[4] - g[4]).abs() <= 1e-9);
    }

    #[test]
    fn center_offsets_ignore_uniform_scale(a in bbox(), b in bbox(), s in 0.1..10.0) {
        let scale = |r: &BoundingBox| BoundingBox::new(r.cx * s, r.cy * s, r.w * s, r.h * s, r.conf);
        let f = pairwise_features(&a, &b).0;
        let g = pairwise_features(&scale(&a), &scale(&b)).0;
        for i in 0..2 {
            prop_assert!(close(f[i], g[i]), "entry {i}: {} vs {}", f[i], g[i]);
        }
    }

    #[test]
    fn score_matrix_is_pairwise_forward(
        boxes in prop::collection::vec((bbox(), bbox()), 1..6),
        seed in any::<u64>(),
    ) {
        let params = ScorerParams::init(8, &mut ChaCha8Rng::seed_from_u64(seed));
        let (prev, cur): (Vec<_>, Vec<_>) = boxes.into_iter().unzip();
        let s = score_matrix(&params, &prev, &cur).unwrap();
        for (i, a) in prev.iter().enumerate() {
            for (j, b) in cur.iter().enumerate() {
                prop_assert_eq!(s.0[(i, j)], mlp_forward(&params, &pairwise_features(a, b)));
            }
        }
    }

    #[test]
    fn appearance_rows_are_distributions(
        raw in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 6), 2..10),
        weights in prop::collection::vec(-1.0..1.0f64, 36),
        temperature in 0.05..2.0,
    ) {
        prop_assume!(raw.iter().all(|v| v.iter().map(|x| x * x).sum::<f64>() > 1e-3));
        let head = AppearanceHead {
            weights: DMatrix::from_vec(6, 6, weights) + DMatrix::identity(6, 6) * 3.0,
            temperature,
        };
        let mut table = EmbeddingTable::new(6);
        let ids: Vec<String> = (0..raw.len()).map(|i| format!("1:{i}")).collect();
        for (id, v) in ids.iter().zip(&raw) {
            table.insert(id.clone(), DVector::from_vec(v.clone())).unwrap();
        }
        let half = ids.len() / 2;
        let u = appearance_matrix(&head, &table, &ids[..half], &ids[half..]).unwrap();
        for row in u.row_iter() {
            prop_assert!((row.sum() - 1.0).abs() <= 1e-12, "row sum {}", row.sum());
            prop_assert!(row.iter().all(|&v| v > 0.0 && v < 1.0) || row.len() == 1);
        }
    }
}
