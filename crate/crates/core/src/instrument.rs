//! Measurements taken on transcripts: correlation times, a certified
//! reference optimum, and the frequency checks built on top of them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::{HardInstance, Params};
use crate::linalg::{dot, norm2, scale, OrthoBasis};
use crate::optimizer::{run_observed, Algorithm, AlgorithmSpec, OptimizerError, Transcript};
use crate::scalar::Scalar;

/// Stands for `tᵢ = ∞`; compares greater than any round number.
pub const NEVER: usize = usize::MAX;

#[derive(Debug, Error, PartialEq)]
pub enum InstrumentError {
    #[error("transcript was produced on instance {transcript:#018x}, not {instance:#018x}")]
    InstanceMismatch { transcript: u64, instance: u64 },
    #[error("N·log²d = {0} is at most 1, the optimum bound is vacuous")]
    BoundNotMeaningful(f64),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrelationTimes {
    /// 1-based rounds, [`NEVER`] when the condition is never met.
    pub times: Vec<usize>,
    /// 0-based index into the transcript rounds of each witnessing query.
    pub witness_queries: Vec<Option<usize>>,
}

impl CorrelationTimes {
    pub fn is_finite(&self, i: usize) -> bool {
        self.times[i] != NEVER
    }

    pub fn all_infinite(&self) -> bool {
        self.times.iter().all(|&t| t == NEVER)
    }

    /// `"3;17;inf"`.
    pub fn to_field(&self) -> String {
        self.times
            .iter()
            .map(|&t| if t == NEVER { "inf".to_string() } else { t.to_string() })
            .collect::<Vec<_>>()
            .join(";")
    }
}

/// Online form of [`correlation_times`], fed one query at a time.
#[derive(Clone, Debug)]
pub struct CorrelationTracker {
    threshold: f64,
    xi: f64,
    seen: usize,
    times: CorrelationTimes,
}

impl CorrelationTracker {
    pub fn new(params: &Params) -> Self {
        CorrelationTracker {
            threshold: params.gamma / 4.0,
            xi: params.xi,
            seen: 0,
            times: CorrelationTimes {
                times: vec![NEVER; params.n_terms],
                witness_queries: vec![None; params.n_terms],
            },
        }
    }

    /// Records the query of round `t` (1-based, consecutive).
    pub fn observe<T: Scalar>(&mut self, inst: &HardInstance<T>, t: usize, x: &[T]) {
        let idx = self.seen;
        self.seen += 1;
        if self.times.times.iter().all(|&s| s != NEVER) {
            return;
        }
        if inst.a_matrix().norm_inf_mul(x).as_f64() > self.xi {
            return;
        }
        for (i, v) in inst.nemirovski_vectors().iter().enumerate() {
            if self.times.times[i] == NEVER && dot(v, x).as_f64().abs() >= self.threshold {
                self.times.times[i] = t;
                self.times.witness_queries[i] = Some(idx);
            }
        }
    }

    pub fn time(&self, i: usize) -> usize {
        self.times.times[i]
    }

    pub fn finish(self) -> CorrelationTimes {
        self.times
    }
}

fn check_same<T: Scalar>(tr: &Transcript<T>, inst: &HardInstance<T>) -> Result<(), InstrumentError> {
    if let Some(r) = &tr.instance_ref {
        let fp = inst.fingerprint();
        if r.fingerprint != fp {
            return Err(InstrumentError::InstanceMismatch { transcript: r.fingerprint, instance: fp });
        }
    }
    Ok(())
}

/// First round at which a query is `γ/4`-correlated with `vᵢ` while staying
/// `ξ`-orthogonal to every row of `A`.
pub fn correlation_times<T: Scalar>(
    tr: &Transcript<T>,
    inst: &HardInstance<T>,
) -> Result<CorrelationTimes, InstrumentError> {
    check_same(tr, inst)?;
    let mut tracker = CorrelationTracker::new(inst.params());
    for r in &tr.rounds {
        tracker.observe(inst, r.t, &r.x);
    }
    Ok(tracker.finish())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceOptimum<T> {
    pub point: Vec<T>,
    pub value: T,
    pub projector_rank: usize,
    /// The construction left the ball and was scaled back to unit norm.
    pub rescaled: bool,
    /// `‖A x̂‖∞`.
    pub row_residual: T,
}

/// `−(1/(√d L))·1/(√N log²d)` with logarithms in `base`.
pub fn optimum_threshold(params: &Params, base: f64) -> f64 {
    let lg = (params.d as f64).ln() / base.ln();
    -1.0 / ((params.d as f64).sqrt() * params.l_scale) / ((params.n_terms as f64).sqrt() * lg * lg)
}

/// Feasible point orthogonal to the row space of `A` and anti-correlated with
/// every `vᵢ`; its value upper-bounds `min F`.
pub fn reference_optimum<T: Scalar>(inst: &HardInstance<T>) -> Result<ReferenceOptimum<T>, InstrumentError> {
    let p = inst.params();
    let lg = p.log_d();
    let strength = p.n_terms as f64 * lg * lg;
    if !(strength > 1.0) {
        return Err(InstrumentError::BoundNotMeaningful(strength));
    }
    let d = p.d;
    let mut basis = OrthoBasis::<T>::new(d);
    for j in 0..inst.a_matrix().nrows() {
        basis.push(&inst.a_matrix().row_as::<T>(j), T::lit(1e-9));
    }
    let mut x = vec![T::zero(); d];
    for v in inst.nemirovski_vectors() {
        for (xi, ri) in x.iter_mut().zip(basis.residual(v)) {
            *xi += ri;
        }
    }
    scale(-T::one() / T::lit((p.n_terms as f64).sqrt() * lg), &mut x);
    let n = norm2(&x);
    let rescaled = n > T::one();
    if rescaled {
        scale(T::one() / n, &mut x);
    }
    let value = inst.eval_f(&x).expect("reference point lies in the ball").value;
    Ok(ReferenceOptimum {
        row_residual: inst.a_matrix().norm_inf_mul(&x),
        point: x,
        value,
        projector_rank: basis.rank(),
        rescaled,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ordering {
    pub ordered: bool,
    /// 0-based `i` with `tᵢ < tᵢ₋₁`.
    pub first_violation: Option<usize>,
}

pub fn check_ordering(times: &CorrelationTimes) -> Ordering {
    let first_violation = times.times.windows(2).position(|w| w[1] < w[0]).map(|i| i + 1);
    Ordering { ordered: first_violation.is_none(), first_violation }
}

/// `tᵢ ≤ tᵢ₊₁ ≤ t_budget` and `tᵢ₊₁ − tᵢ ≤ n_rows/2`.
pub fn gap_event(times: &CorrelationTimes, i: usize, t_budget: usize, n_rows: usize) -> bool {
    let (a, b) = (times.times[i], times.times[i + 1]);
    a <= b && b <= t_budget && 2 * (b - a) <= n_rows
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapIndex {
    /// 0-based.
    pub i_star: usize,
    pub success_rate: f64,
    pub rates: Vec<f64>,
}

/// Index maximizing the empirical frequency of [`gap_event`]; ties go to the
/// smaller index.
pub fn gap_index(trials: &[CorrelationTimes], t_budget: usize, n_rows: usize) -> GapIndex {
    assert!(!trials.is_empty(), "gap_index needs at least one trial");
    let n = trials[0].times.len();
    assert!(n >= 2, "gap_index needs at least two terms");
    let rates: Vec<f64> = (0..n - 1)
        .map(|i| {
            let hits = trials.iter().filter(|c| gap_event(c, i, t_budget, n_rows)).count();
            hits as f64 / trials.len() as f64
        })
        .collect();
    let mut i_star = 0;
    for (i, &r) in rates.iter().enumerate() {
        if r > rates[i_star] {
            i_star = i;
        }
    }
    GapIndex { i_star, success_rate: rates[i_star], rates }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSuccess {
    /// `F(output) − F(x̂)`.
    pub gap: f64,
    pub success: bool,
}

pub fn success_at<T: Scalar>(inst: &HardInstance<T>, out: &[T], reference: &ReferenceOptimum<T>) -> EpsilonSuccess {
    let f = inst.eval_f(out).expect("outputs lie in the ball").value;
    let gap = (f - reference.value).as_f64();
    EpsilonSuccess { gap, success: gap <= inst.params().eps }
}

pub fn epsilon_success<T: Scalar>(
    tr: &Transcript<T>,
    inst: &HardInstance<T>,
    reference: &ReferenceOptimum<T>,
) -> Result<EpsilonSuccess, InstrumentError> {
    check_same(tr, inst)?;
    Ok(success_at(inst, &tr.final_output, reference))
}

/// One line of the per-trial instrument table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub seed: u64,
    pub d: usize,
    pub times: String,
    pub ordered: bool,
    pub gap: f64,
    pub success: bool,
}

impl TrialRow {
    pub fn new(seed: u64, d: usize, times: &CorrelationTimes, eps: EpsilonSuccess) -> Self {
        TrialRow {
            seed,
            d,
            times: times.to_field(),
            ordered: check_ordering(times).ordered,
            gap: eps.gap,
            success: eps.success,
        }
    }
}

/// Runs `alg` on `inst` while tracking correlation times; returns the times
/// and the final output.
pub fn tracked_run<T: Scalar, A: Algorithm<T> + ?Sized>(
    alg: &A,
    inst: &HardInstance<T>,
    t_budget: usize,
    seed: u64,
) -> Result<(CorrelationTimes, Vec<T>), OptimizerError> {
    let mut tracker = CorrelationTracker::new(inst.params());
    let out = run_observed(alg, inst, t_budget, seed, |t, x, _, _| tracker.observe(inst, t, x))?;
    Ok((tracker.finish(), out))
}

/// One seeded trial: instance and algorithm both drawn from `seed`.
pub fn run_trial<T: Scalar>(
    spec: &AlgorithmSpec,
    params: &Params,
    seed: u64,
    t_budget: usize,
) -> Result<(CorrelationTimes, TrialRow), OptimizerError> {
    let inst = HardInstance::<T>::sample(params, seed)?;
    let reference = reference_optimum(&inst)?;
    let alg = spec.build::<T>(params.d);
    let (times, out) = tracked_run(alg.as_ref(), &inst, t_budget, seed)?;
    let row = TrialRow::new(seed, params.d, &times, success_at(&inst, &out, &reference));
    Ok((times, row))
}
