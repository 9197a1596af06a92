use mqlab_core::geometry::{
    check_orthonormal, greedy_packing, greedy_rli, is_maximal, is_separated, khintchine_sweep, ones_tail_exact,
    projection_tail, rli_orthonormal,
};
use mqlab_core::linalg::{dist2, OrthoBasis};
use mqlab_core::oracle::random_ball_point;
use mqlab_core::rng::rng_from_seed;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

mod common;
use common::project_out_rows;

fn unit_gaussian(d: usize, rng: &mut impl Rng) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let n = v.iter().map(|c| c * c).sum::<f64>().sqrt();
    v.iter().map(|c| c / n).collect()
}

/// Largest α-separated subset by trying every subset.
fn brute_force_max(points: &[Vec<f64>], alpha: f64) -> usize {
    let n = points.len();
    (0u32..1 << n)
        .filter(|mask| {
            let idx: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
            is_separated(points, &idx, alpha)
        })
        .map(|m| m.count_ones() as usize)
        .max()
        .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn greedy_packing_is_maximal_and_bounded(seed in any::<u64>(), n in 1usize..=12) {
        let mut rng = rng_from_seed(seed);
        let pts: Vec<Vec<f64>> = (0..n).map(|_| random_ball_point(3, &mut rng)).collect();
        let mut dists: Vec<f64> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| dist2(&pts[i], &pts[j]))
            .collect();
        dists.sort_by(f64::total_cmp);
        let alpha = dists.get(dists.len() / 2).copied().unwrap_or(0.5).max(1e-6);
        let got = greedy_packing(&pts, alpha);
        prop_assert!(!got.indices.is_empty());
        prop_assert!(is_separated(&pts, &got.indices, alpha));
        prop_assert!(is_maximal(&pts, &got.indices, alpha));
        prop_assert!(got.indices.len() <= brute_force_max(&pts, alpha));
    }
}

#[test]
fn rli_residuals_match_explicit_projectors() {
    let mut rng = rng_from_seed(21);
    let pts: Vec<Vec<f64>> = (0..50).map(|_| unit_gaussian(16, &mut rng)).collect();
    let seq = greedy_rli(&pts, 0.3, 50).unwrap();
    assert_eq!(seq.indices.len() + seq.rejected.len(), 50);
    let norm = |v: &[f64]| v.iter().map(|c| c * c).sum::<f64>().sqrt();
    for (k, &i) in seq.indices.iter().enumerate() {
        let prefix: Vec<Vec<f64>> = seq.indices[..k].iter().map(|&j| pts[j].clone()).collect();
        let r = norm(&project_out_rows(&prefix, &pts[i]));
        assert!((r - seq.residual_norms[k]).abs() < 1e-9, "step {k}: {r} vs {}", seq.residual_norms[k]);
    }
    for &(i, r) in &seq.rejected {
        let prefix: Vec<Vec<f64>> = seq.indices.iter().copied().filter(|&j| j < i).map(|j| pts[j].clone()).collect();
        let want = norm(&project_out_rows(&prefix, &pts[i]));
        assert!((want - r).abs() < 1e-9);
        assert!(r < 0.3);
    }

    // the accepted sequence is δ-RLI for δ = 1 − √(1 − γ²) and yields an orthonormal U
    let xs: Vec<Vec<f64>> = seq.indices.iter().map(|&i| pts[i].clone()).collect();
    let u = rli_orthonormal(&xs, 1.0 - (1.0 - 0.09f64).sqrt(), 3).unwrap();
    assert_eq!(u.columns.len(), xs.len() / 2);
    check_orthonormal(&u.columns, 1e-9).unwrap();
    assert!(u.verified, "worst ratio {} vs bound {}", u.worst_ratio, u.bound);
}

#[test]
fn khintchine_agrees_with_the_binomial_tail() {
    let d = 16;
    let ts = [0.5, 1.0, 1.5, 2.0, 2.5];
    let rows = khintchine_sweep(&vec![1.0f64; d], &ts, 200_000, 8);
    for r in &rows {
        let exact = ones_tail_exact(d, r.t);
        let se = (exact * (1.0 - exact) / r.trials as f64).sqrt().max(1e-6);
        assert!((r.empirical - exact).abs() <= 4.0 * se, "t={} {} vs {exact}", r.t, r.empirical);
    }
}

#[test]
fn projection_tail_is_monotone_in_t() {
    let (d, r) = (64, 8);
    let mut rng = rng_from_seed(4);
    let mut basis = OrthoBasis::<f64>::new(d);
    while basis.rank() < r {
        basis.push(&unit_gaussian(d, &mut rng), 1e-9);
    }
    let u = basis.vectors().to_vec();
    let tails: Vec<usize> =
        [0.0, 0.05, 0.1, 0.15, 0.2, 0.3].iter().map(|&t| projection_tail(&u, t, 20_000, 6).unwrap().hits).collect();
    assert_eq!(tails[0], 20_000);
    assert!(tails.windows(2).all(|w| w[1] <= w[0]), "{tails:?}");
    assert!(*tails.last().unwrap() < tails[1]);
}
