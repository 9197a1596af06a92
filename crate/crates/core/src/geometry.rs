//! Packings, robustly linearly independent sequences, and Monte Carlo checks
//! of the concentration facts used alongside them.

use rand::{Rng as _, SeedableRng};
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{dist2, dot, norm2, OrthoBasis};
use crate::rng::{sub_seed, Rng};
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("point {index} has norm {norm}, expected a unit vector")]
    NonUnitInput { index: usize, norm: f64 },
    #[error("vector {index} keeps {projection} of its norm inside the span of its predecessors")]
    NotRli { index: usize, projection: f64 },
    #[error("columns are not orthonormal (worst Gram entry error {0})")]
    NotOrthonormal(f64),
}

const UNIT_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PackingResult {
    pub indices: Vec<usize>,
    pub alpha: f64,
}

/// Scans `points` in order and keeps each one at distance `≥ alpha` from
/// everything kept so far.
pub fn greedy_packing<T: Scalar>(points: &[Vec<T>], alpha: f64) -> PackingResult {
    assert!(alpha > 0.0, "packing radius must be positive");
    let a = T::lit(alpha);
    let mut indices: Vec<usize> = Vec::new();
    for (i, p) in points.iter().enumerate() {
        if indices.iter().all(|&j| dist2(p, &points[j]) >= a) {
            indices.push(i);
        }
    }
    PackingResult { indices, alpha }
}

pub fn is_separated<T: Scalar>(points: &[Vec<T>], subset: &[usize], alpha: f64) -> bool {
    let a = T::lit(alpha);
    subset
        .iter()
        .enumerate()
        .all(|(k, &i)| subset[k + 1..].iter().all(|&j| dist2(&points[i], &points[j]) >= a))
}

/// No point outside `subset` could be added without breaking separation.
pub fn is_maximal<T: Scalar>(points: &[Vec<T>], subset: &[usize], alpha: f64) -> bool {
    let a = T::lit(alpha);
    (0..points.len())
        .filter(|i| !subset.contains(i))
        .all(|i| subset.iter().any(|&j| dist2(&points[i], &points[j]) < a))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RliSequence {
    pub indices: Vec<usize>,
    pub gamma_rli: f64,
    /// Residual norm of each accepted point at acceptance time.
    pub residual_norms: Vec<f64>,
    /// `(index, residual norm)` of each rejected candidate.
    pub rejected: Vec<(usize, f64)>,
}

fn check_unit<T: Scalar>(points: &[Vec<T>]) -> Result<(), GeometryError> {
    for (index, p) in points.iter().enumerate() {
        let norm = norm2(p).as_f64();
        if (norm - 1.0).abs() > UNIT_TOL {
            return Err(GeometryError::NonUnitInput { index, norm });
        }
    }
    Ok(())
}

/// Greedily extends a `gamma_rli`-RLI sequence with points whose residual
/// against the span of the accepted prefix is at least `gamma_rli`.
pub fn greedy_rli<T: Scalar>(points: &[Vec<T>], gamma_rli: f64, max_len: usize) -> Result<RliSequence, GeometryError> {
    assert!(gamma_rli > 0.0 && gamma_rli <= 1.0, "RLI threshold must lie in (0, 1]");
    check_unit(points)?;
    let d = points.first().map_or(0, |p| p.len());
    let mut basis = OrthoBasis::<T>::new(d);
    let mut seq = RliSequence { indices: Vec::new(), gamma_rli, residual_norms: Vec::new(), rejected: Vec::new() };
    for (i, p) in points.iter().enumerate() {
        if seq.indices.len() >= max_len {
            break;
        }
        let r = norm2(&basis.residual(p)).as_f64();
        if r >= gamma_rli {
            basis.push(p, T::zero());
            seq.indices.push(i);
            seq.residual_norms.push(r);
        } else {
            seq.rejected.push((i, r));
        }
    }
    Ok(seq)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RliOrthonormal<T> {
    /// Columns of `U`.
    pub columns: Vec<Vec<T>>,
    pub verified: bool,
    /// Largest observed `‖Uᵀa‖∞ / ‖Xᵀa‖∞`; the claim is that it stays `≤ d/δ`.
    pub worst_ratio: f64,
    pub bound: f64,
    pub probes: usize,
    pub violations: usize,
}

/// Gaussian probes used by [`rli_orthonormal`].
pub const GAUSSIAN_PROBES: usize = 10_000;
/// Up to this dimension every sign vector is also used as a probe; above it,
/// [`GAUSSIAN_PROBES`] random sign vectors are drawn instead.
pub const EXHAUSTIVE_SIGN_DIM: usize = 12;

/// Builds `U` from the normalized Gram–Schmidt residuals of the 1st, 3rd, 5th, …
/// vectors (against all their predecessors), then probes the inequality
/// `‖Uᵀa‖∞ ≤ (d/δ)‖Xᵀa‖∞`.
///
/// Every vector must keep at most `1 − δ` of its norm inside the span of the
/// vectors before it.
pub fn rli_orthonormal<T: Scalar>(xs: &[Vec<T>], delta: f64, seed: u64) -> Result<RliOrthonormal<T>, GeometryError> {
    assert!(delta > 0.0 && delta <= 1.0, "delta must lie in (0, 1]");
    check_unit(xs)?;
    let d = xs.first().map_or(0, |p| p.len());
    let mut basis = OrthoBasis::<T>::new(d);
    let mut columns = Vec::new();
    let want = xs.len() / 2;
    for (i, x) in xs.iter().enumerate() {
        let projection = norm2(&basis.project(x)).as_f64();
        if projection > 1.0 - delta {
            return Err(GeometryError::NotRli { index: i, projection });
        }
        if i % 2 == 0 && columns.len() < want {
            let mut r = basis.residual(x);
            let n = norm2(&r);
            r.iter_mut().for_each(|c| *c /= n);
            columns.push(r);
        }
        basis.push(x, T::zero());
    }

    let bound = d as f64 / delta;
    let ratio = |a: &[T]| -> f64 {
        let u = columns.iter().map(|c| dot(c, a).as_f64().abs()).fold(0.0, f64::max);
        let x = xs.iter().map(|c| dot(c, a).as_f64().abs()).fold(0.0, f64::max);
        if x > 0.0 {
            u / x
        } else if u > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    };
    let mut rng = Rng::seed_from_u64(seed);
    let mut ratios = Vec::with_capacity(2 * GAUSSIAN_PROBES);
    for _ in 0..GAUSSIAN_PROBES {
        let a: Vec<T> = (0..d).map(|_| T::lit(rng.sample::<f64, _>(StandardNormal))).collect();
        ratios.push(ratio(&a));
    }
    if d <= EXHAUSTIVE_SIGN_DIM {
        for mask in 0u64..(1 << d) {
            let a: Vec<T> = (0..d).map(|c| if mask >> c & 1 == 1 { -T::one() } else { T::one() }).collect();
            ratios.push(ratio(&a));
        }
    } else {
        for _ in 0..GAUSSIAN_PROBES {
            let a: Vec<T> = (0..d).map(|_| if rng.random::<bool>() { -T::one() } else { T::one() }).collect();
            ratios.push(ratio(&a));
        }
    }
    let violations = ratios.iter().filter(|&&r| !(r <= bound)).count();
    let worst_ratio = ratios.iter().copied().fold(0.0, f64::max);
    Ok(RliOrthonormal { columns, verified: violations == 0, worst_ratio, bound, probes: ratios.len(), violations })
}

// ---------------------------------------------------------------------------
// Concentration
// ---------------------------------------------------------------------------

const BLOCK: usize = 4096;

/// Counts hits of `event` over `trials` draws, in fixed-size blocks with one
/// sub-seed each so the total does not depend on thread scheduling.
fn monte_carlo<F>(trials: usize, seed: u64, event: F) -> usize
where
    F: Fn(&mut Rng) -> bool + Sync,
{
    let blocks = trials.div_ceil(BLOCK);
    (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = Rng::seed_from_u64(sub_seed(seed, b as u64));
            let n = BLOCK.min(trials - b * BLOCK);
            (0..n).filter(|_| event(&mut rng)).count()
        })
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    pub t: f64,
    pub hits: usize,
    pub trials: usize,
    pub empirical: f64,
}

impl TailEstimate {
    fn new(t: f64, hits: usize, trials: usize) -> Self {
        TailEstimate { t, hits, trials, empirical: hits as f64 / trials as f64 }
    }

    /// Binomial standard error at the empirical rate.
    pub fn std_err(&self) -> f64 {
        (self.empirical * (1.0 - self.empirical) / self.trials as f64).sqrt()
    }
}

/// `P[|Σ σᵢ xᵢ| ≥ t‖x‖₂]` for Rademacher `σ`.
pub fn khintchine_tail<T: Scalar>(x: &[T], t: f64, trials: usize, seed: u64) -> TailEstimate {
    assert!(trials >= 1 && t >= 0.0);
    let thr = t * norm2(x).as_f64();
    let hits = monte_carlo(trials, seed, |rng| {
        let s: f64 = x.iter().map(|c| if rng.random::<bool>() { c.as_f64() } else { -c.as_f64() }).sum();
        s.abs() >= thr
    });
    TailEstimate::new(t, hits, trials)
}

/// Exact `P[|Σ σᵢ| ≥ t√d]`: the sum is `2B − d` with `B ~ Bin(d, 1/2)`.
pub fn ones_tail_exact(d: usize, t: f64) -> f64 {
    let thr = t * (d as f64).sqrt();
    let mut c = 1.0f64;
    let mut total = 0.0;
    for b in 0..=d {
        if b > 0 {
            c = c * (d - b + 1) as f64 / b as f64;
        }
        if ((2 * b) as f64 - d as f64).abs() >= thr {
            total += c;
        }
    }
    total / 2f64.powi(d as i32)
}

/// Least-squares `c₂` in `empirical ≈ exp(−c₂ t²)`, over points with a
/// nonzero estimate and `t > 0`.
pub fn fit_subgaussian(rows: &[TailEstimate]) -> Option<f64> {
    let (num, den) = rows
        .iter()
        .filter(|r| r.t > 0.0 && r.empirical > 0.0)
        .fold((0.0, 0.0), |(n, d), r| (n - r.t * r.t * r.empirical.ln(), d + r.t.powi(4)));
    (den > 0.0).then_some(num / den)
}

/// Tail at each `t`, all on the same seed.
pub fn khintchine_sweep<T: Scalar>(x: &[T], ts: &[f64], trials: usize, seed: u64) -> Vec<TailEstimate> {
    ts.iter().map(|&t| khintchine_tail(x, t, trials, seed)).collect()
}

/// Checks `UᵀU = I` for the column list `u`.
pub fn check_orthonormal<T: Scalar>(u: &[Vec<T>], tol: f64) -> Result<(), GeometryError> {
    let mut worst = 0.0f64;
    for (i, a) in u.iter().enumerate() {
        for (j, b) in u.iter().enumerate() {
            let want = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((dot(a, b).as_f64() - want).abs());
        }
    }
    if worst > tol {
        Err(GeometryError::NotOrthonormal(worst))
    } else {
        Ok(())
    }
}

/// `P[|‖Uᵀv‖² − r/d| ≥ t]` for `v` uniform on `(1/√d){±1}^d`.
pub fn projection_tail<T: Scalar>(u: &[Vec<T>], t: f64, trials: usize, seed: u64) -> Result<TailEstimate, GeometryError> {
    assert!(trials >= 1);
    check_orthonormal(u, 1e-9)?;
    let d = u.first().map_or(1, |c| c.len());
    let mean = u.len() as f64 / d as f64;
    let s = 1.0 / (d as f64).sqrt();
    let hits = monte_carlo(trials, seed, |rng| {
        let v: Vec<f64> = (0..d).map(|_| if rng.random::<bool>() { s } else { -s }).collect();
        let q: f64 = u
            .iter()
            .map(|c| {
                let p: f64 = c.iter().zip(&v).map(|(a, b)| a.as_f64() * b).sum();
                p * p
            })
            .sum();
        (q - mean).abs() >= t
    });
    Ok(TailEstimate::new(t, hits, trials))
}

/// `min(d²t²/(16r), dt/4)`, the exponent shape of the projection bound.
pub fn projection_exponent(d: usize, r: usize, t: f64) -> f64 {
    let df = d as f64;
    (df * df * t * t / (16.0 * r as f64)).min(df * t / 4.0)
}

/// Largest `c` with `empirical ≤ exp(−c·projection_exponent)` at every row;
/// `None` when every estimate is zero.
pub fn fit_projection(rows: &[TailEstimate], d: usize, r: usize) -> Option<f64> {
    rows.iter()
        .filter(|e| e.empirical > 0.0 && e.t > 0.0)
        .map(|e| -e.empirical.ln() / projection_exponent(d, r, e.t))
        .reduce(f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::unit;

    #[test]
    fn packing_small_cases() {
        let one = vec![vec![0.3f64, 0.1]];
        assert_eq!(greedy_packing(&one, 1.0).indices, vec![0]);
        let dup = vec![vec![0.5f64, 0.5], vec![0.5, 0.5]];
        assert_eq!(greedy_packing(&dup, 0.1).indices, vec![0]);
    }

    #[test]
    fn basis_vectors_are_rli() {
        let e: Vec<Vec<f64>> = (0..5).map(|i| unit(5, i)).collect();
        let s = greedy_rli(&e, 1.0, 10).unwrap();
        assert_eq!(s.indices, vec![0, 1, 2, 3, 4]);
        assert!(s.residual_norms.iter().all(|&r| (r - 1.0).abs() < 1e-15));
        let s = greedy_rli(&[unit::<f64>(3, 0), unit(3, 0)], 0.5, 10).unwrap();
        assert_eq!(s.indices, vec![0]);
        assert_eq!(s.rejected, vec![(1, 0.0)]);
        assert!(matches!(greedy_rli(&[vec![2.0f64, 0.0]], 0.5, 1), Err(GeometryError::NonUnitInput { .. })));
    }

    #[test]
    fn orthonormal_input_gives_ratio_at_most_one() {
        let e: Vec<Vec<f64>> = (0..4).map(|i| unit(6, i)).collect();
        let r = rli_orthonormal(&e, 1.0, 1).unwrap();
        assert_eq!(r.columns, vec![unit::<f64>(6, 0), unit(6, 2)]);
        assert!(r.verified && r.worst_ratio <= 1.0);
        let dup = vec![unit::<f64>(4, 0), unit(4, 0)];
        assert!(matches!(rli_orthonormal(&dup, 0.1, 1), Err(GeometryError::NotRli { index: 1, .. })));
    }

    #[test]
    fn single_coordinate_khintchine() {
        let e = unit::<f64>(6, 0);
        assert_eq!(khintchine_tail(&e, 0.5, 1000, 3).empirical, 1.0);
        assert_eq!(khintchine_tail(&e, 2.0, 1000, 3).empirical, 0.0);
    }

    #[test]
    fn exact_ones_tail() {
        assert_eq!(ones_tail_exact(4, 0.0), 1.0);
        // |2B − 4| ≥ 2 ⇔ B ∈ {0, 1, 3, 4}
        assert!((ones_tail_exact(4, 1.0) - 10.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn projection_degenerate_cases() {
        let id: Vec<Vec<f64>> = (0..8).map(|i| unit(8, i)).collect();
        assert_eq!(projection_tail(&id, 0.01, 500, 1).unwrap().empirical, 0.0);
        assert_eq!(projection_tail(&[unit::<f64>(8, 0)], 0.01, 500, 1).unwrap().empirical, 0.0);
        let bad = vec![vec![1.0f64, 1.0]];
        assert!(matches!(projection_tail(&bad, 0.1, 10, 1), Err(GeometryError::NotOrthonormal(_))));
    }

    #[test]
    fn monte_carlo_is_schedule_independent() {
        let x = vec![0.5f64, -0.2, 0.9, 0.1];
        let a = khintchine_tail(&x, 0.7, 20_000, 9);
        let b = khintchine_tail(&x, 0.7, 20_000, 9);
        assert_eq!(a, b);
    }
}
