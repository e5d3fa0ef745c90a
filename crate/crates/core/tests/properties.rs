use kinopt::kinetic::{
    collision_mask, effective_mask, hard_collision, pairwise_relatives, soft_collision, thm3_oracle, KineticConfig,
};
use kinopt::linalg::{norm, Rng};
use kinopt::metrics::{cosine_matrix, neuron_similarity, weight_correlation};
use kinopt::optim::{adam_step, OptimizerConfig, ParamState};
use kinopt::Matrix;
use proptest::prelude::*;

fn matrix(rows: std::ops::RangeInclusive<usize>, cols: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Matrix> {
    (rows, cols).prop_flat_map(|(n, d)| {
        prop::collection::vec(-3.0f64..3.0, n * d).prop_map(move |v| Matrix::from_vec(n, d, v).unwrap())
    })
}

fn layer() -> impl Strategy<Value = (Matrix, Matrix)> {
    (2usize..=12, 1usize..=6).prop_flat_map(|(n, d)| {
        let m = move || prop::collection::vec(-2.0f64..2.0, n * d).prop_map(move |v| Matrix::from_vec(n, d, v).unwrap());
        (m(), m())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn mask_grows_with_coll_coef((w, g) in layer(), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let rel = pairwise_relatives(&w, &g).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(collision_mask(&rel, lo).is_subset_of(&collision_mask(&rel, hi)));
    }

    #[test]
    fn mask_is_symmetric_without_diagonal((w, g) in layer(), c in 0.0f64..=1.0) {
        let rel = pairwise_relatives(&w, &g).unwrap();
        let mask = collision_mask(&rel, c);
        for i in 0..mask.len() {
            prop_assert!(!mask.get(i, i));
            for j in 0..mask.len() {
                prop_assert_eq!(mask.get(i, j), mask.get(j, i));
            }
        }
    }

    #[test]
    fn zero_coef_is_identity((w, g) in layer(), seed in any::<u64>()) {
        prop_assert_eq!(&soft_collision(&w, &g, &KineticConfig::soft(0.0)).unwrap(), &g);
        prop_assert_eq!(&hard_collision(&w, &g, &KineticConfig::hard(0.0), &mut Rng::new(seed)).unwrap(), &g);
    }

    #[test]
    fn matched_collisions_conserve_the_layer((w, g) in layer(), c in 0.0f64..=1.0, seed in any::<u64>()) {
        let cfg = KineticConfig { hard_max_one_collision_per_neuron: true, ..KineticConfig::hard(c) };
        let out = hard_collision(&w, &g, &cfg, &mut Rng::new(seed)).unwrap();
        let mask = effective_mask(&pairwise_relatives(&w, &g).unwrap(), &cfg);
        for i in 0..mask.len() {
            prop_assert!((0..mask.len()).filter(|&j| mask.get(i, j)).count() <= 1);
        }
        for k in 0..g.cols() {
            let before: f64 = (0..g.rows()).map(|i| g.get(i, k)).sum();
            let after: f64 = (0..g.rows()).map(|i| out.get(i, k)).sum();
            prop_assert!((after - before).abs() < 1e-12, "column {}: {} vs {}", k, after, before);
        }
        let energy = |m: &Matrix| m.as_slice().iter().map(|x| x * x).sum::<f64>();
        let e0 = energy(&g);
        if e0 > 0.0 {
            prop_assert!((energy(&out) - e0).abs() <= 1e-12 * e0);
        }
        for i in 0..g.rows() {
            let touched = (0..mask.len()).any(|j| mask.get(i, j));
            if !touched {
                prop_assert_eq!(out.row(i), g.row(i));
            }
        }
    }

    #[test]
    fn soft_with_orthogonal_weights_scales_the_gradient(
        d in 1usize..=6,
        scales in prop::collection::vec(0.1f64..5.0, 6),
        g in matrix(6..=6, 6..=6),
        c in 0.0f64..=1.0,
    ) {
        let n = d;
        let w = Matrix::from_fn(n, d, |i, j| if i == j { scales[i] } else { 0.0 });
        let g = Matrix::from_fn(n, d, |i, j| g.get(i, j));
        let out = soft_collision(&w, &g, &KineticConfig::soft(c)).unwrap();
        for (o, x) in out.as_slice().iter().zip(g.as_slice()) {
            prop_assert!((o - (1.0 - c) * x).abs() <= 1e-15 * x.abs().max(1.0));
        }
    }

    #[test]
    fn cosines_ignore_positive_row_scale(w in matrix(1..=10, 1..=8), s in prop::collection::vec(1e-3f64..1e3, 10)) {
        let scaled = Matrix::from_fn(w.rows(), w.cols(), |i, j| s[i] * w.get(i, j));
        let (a, b) = (cosine_matrix(&w), cosine_matrix(&scaled));
        for i in 0..w.rows() {
            for j in 0..w.rows() {
                prop_assert!((a.get(i, j) - b.get(i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn similarity_bounds(w in matrix(2..=10, 1..=8)) {
        let c = cosine_matrix(&w);
        let n = w.rows() as f64;
        let corr = weight_correlation(&c);
        let sim = neuron_similarity(&c);
        prop_assert!(corr <= n * (n - 1.0) + 1e-9);
        prop_assert!(sim <= corr + 1e-15);
        prop_assert_eq!(corr == 0.0, (0..w.rows()).all(|i| (0..w.rows()).all(|j| i == j || c.get(i, j) == 0.0)));
    }

    #[test]
    fn adam_steps_stay_within_twice_the_learning_rate(
        grads in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 4), 2..60),
        lr in 1e-5f64..1e-1,
    ) {
        let cfg = OptimizerConfig::adam(lr);
        let mut state = ParamState::new(4);
        let mut w = vec![0.0; 4];
        for (t, g) in grads.iter().enumerate() {
            let before = w.clone();
            adam_step(&mut state, t as u64 + 1, &mut w, g, &cfg).unwrap();
            for (a, b) in w.iter().zip(&before) {
                prop_assert!((a - b).abs() <= 2.0 * lr, "step {} moved {}", t + 1, (a - b).abs());
            }
        }
    }
}

/// Pairs whose weights have equal norms, where the first-order analysis of
/// the mean hard step is exact: the collision moves the pair apart.
#[test]
fn equal_norm_pairs_separate_under_hard_collisions() {
    let mut rng = Rng::new(17);
    let cfg = KineticConfig::hard(1.0);
    let (mut tried, mut lowered) = (0, 0);
    while tried < 100 {
        let d = 2 + rng.below(6);
        let wi: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let mut wj: Vec<f64> = wi.iter().map(|x| x + rng.normal()).collect();
        let s = norm(&wi) / norm(&wj);
        wj.iter_mut().for_each(|x| *x *= s);
        let gi: Vec<f64> = wi.iter().map(|x| -x + 0.3 * rng.normal()).collect();
        let gj: Vec<f64> = wj.iter().map(|x| -x + 0.3 * rng.normal()).collect();
        let w = Matrix::from_rows(&[wi, wj]).unwrap();
        let g = Matrix::from_rows(&[gi, gj]).unwrap();
        let Ok(r) = thm3_oracle(&w, &g, 1e-6, &cfg, &mut rng, 4000) else {
            continue;
        };
        tried += 1;
        if r.delta() < 0.0 {
            lowered += 1;
        }
    }
    assert!(lowered >= 95, "{lowered}/100");
}

/// With gradients exactly anti-parallel to their weights the plain step keeps
/// every cosine, so any change comes from the repulsion and must lower it.
#[test]
fn soft_repulsion_lowers_similarity_without_gradient_noise() {
    let mut rng = Rng::new(23);
    let cfg = KineticConfig {
        soft_zero_diagonal: true,
        ..KineticConfig::soft(0.1)
    };
    let mut checked = 0;
    while checked < 200 {
        let d = 2 + rng.below(8);
        let wi: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let wj: Vec<f64> = wi.iter().map(|x| x + rng.normal()).collect();
        let (bi, bj) = (rng.uniform_range(0.5, 2.0), rng.uniform_range(0.5, 2.0));
        let gi: Vec<f64> = wi.iter().map(|x| -bi * x).collect();
        let gj: Vec<f64> = wj.iter().map(|x| -bj * x).collect();
        let w = Matrix::from_rows(&[wi, wj]).unwrap();
        let g = Matrix::from_rows(&[gi, gj]).unwrap();
        let Ok(r) = thm3_oracle(&w, &g, 1e-4, &cfg, &mut rng, 1) else {
            continue;
        };
        checked += 1;
        assert!(r.delta() < 0.0, "{r:?}");
    }
}
