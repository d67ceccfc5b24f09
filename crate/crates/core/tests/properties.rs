use proptest::collection::vec;
use proptest::prelude::*;

use deepccg::ccg_head::{log_predictive, ClassPosterior, PosteriorSet};
use deepccg::embedding::{backward, forward, init_mlp};
use deepccg::memory::{lasso_select_indices, SelectionConfig};

fn posterior_set(means: &[Vec<f64>], counts: &[usize], shift: &[f64]) -> PosteriorSet {
    let posts = means
        .iter()
        .zip(counts)
        .enumerate()
        .map(|(c, (m, &count))| ClassPosterior {
            class_id: c,
            mean: m.iter().zip(shift).map(|(a, t)| a + t).collect(),
            count,
            prior_a: f64::INFINITY,
        })
        .collect();
    PosteriorSet::from_posteriors(shift.len(), f64::INFINITY, posts).unwrap()
}

fn instance() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<usize>, Vec<f64>, Vec<f64>)> {
    (1usize..4, 2usize..5).prop_flat_map(|(d, k)| {
        (
            vec(vec(-5.0..5.0f64, d), k),
            vec(1usize..6, k),
            vec(-5.0..5.0f64, d),
            vec(-20.0..20.0f64, d),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn predictive_is_normalized((means, counts, z, _) in instance()) {
        let post = posterior_set(&means, &counts, &vec![0.0; z.len()]);
        let allowed: Vec<usize> = (0..means.len()).collect();
        let total: f64 = log_predictive(&post, &z, &allowed).unwrap().values().map(|l| l.exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn predictive_is_shift_equivariant((means, counts, z, t) in instance()) {
        let allowed: Vec<usize> = (0..means.len()).collect();
        let base = log_predictive(&posterior_set(&means, &counts, &vec![0.0; z.len()]), &z, &allowed).unwrap();
        let moved_z: Vec<f64> = z.iter().zip(&t).map(|(a, b)| a + b).collect();
        let moved = log_predictive(&posterior_set(&means, &counts, &t), &moved_z, &allowed).unwrap();
        for c in allowed {
            prop_assert!((base[&c] - moved[&c]).abs() < 1e-8);
        }
    }

    #[test]
    fn backward_is_linear_in_upstream(
        seed in 0u64..1000,
        width in 1usize..6,
        x in vec(-2.0..2.0f64, 3),
        g1 in vec(-2.0..2.0f64, 2),
        g2 in vec(-2.0..2.0f64, 2),
        alpha in -3.0..3.0f64,
    ) {
        let params = init_mlp(&[3, width, 2], seed).unwrap();
        let (_, cache) = forward(&params, &[x]).unwrap();
        let grad = |g: &[f64]| backward(&params, &cache, &[g.to_vec()]).unwrap().flat();
        let combined: Vec<f64> = g1.iter().zip(&g2).map(|(a, b)| alpha * a + b).collect();
        let lhs = grad(&combined);
        let rhs: Vec<f64> = grad(&g1).iter().zip(grad(&g2)).map(|(a, b)| alpha * a + b).collect();
        for (a, b) in lhs.iter().zip(&rhs) {
            prop_assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn selection_stays_within_candidates(zs in vec(vec(-3.0..3.0f64, 2), 0..14), m in 0usize..6) {
        let picked = lasso_select_indices(&zs, m, &SelectionConfig::default());
        prop_assert_eq!(picked.len(), m.min(zs.len()));
        prop_assert!(picked.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(picked.iter().all(|&i| i < zs.len()));
    }
}
