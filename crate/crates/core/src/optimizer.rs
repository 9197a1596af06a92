//! Memory-constrained first-order algorithms.
//!
//! An algorithm is a state machine over an explicit bit string: it picks each
//! query from the current [`MemoryState`] alone, and folds each oracle answer
//! back into a new state of the same declared length. The harness in [`run`]
//! is the only channel between an algorithm and an oracle.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use rayon::prelude::*;

use crate::instance::{HardInstance, InstanceError, InstanceRef, Params};
use crate::instrument::reference_optimum;
use crate::linalg::{dot, norm2, project_ball};
use crate::oracle::{FirstOrderOracle, OracleAnswer, Provenance};
use crate::scalar::Scalar;

/// Fixed-length bit string carried between rounds.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MemoryState {
    words: Vec<u64>,
    len: usize,
}

/// Round-1 messages of the communication game are memory states.
pub type Message = MemoryState;

impl MemoryState {
    pub fn zeros(len: usize) -> Self {
        MemoryState { words: vec![0; len.div_ceil(64)], len }
    }

    /// One 64-bit word per coordinate.
    pub fn from_f64s(vals: &[f64]) -> Self {
        MemoryState { words: vals.iter().map(|v| v.to_bits()).collect(), len: 64 * vals.len() }
    }

    pub fn from_scalars<T: Scalar>(vals: &[T]) -> Self {
        MemoryState {
            words: vals.iter().map(|v| v.as_f64().to_bits()).collect(),
            len: 64 * vals.len(),
        }
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut m = MemoryState::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            m.set_bit(i, b);
        }
        m
    }

    pub fn len_bits(&self) -> usize {
        self.len
    }

    pub fn bit(&self, i: usize) -> bool {
        assert!(i < self.len);
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    pub fn set_bit(&mut self, i: usize, b: bool) {
        assert!(i < self.len);
        let mask = 1u64 << (i % 64);
        if b {
            self.words[i / 64] |= mask;
        } else {
            self.words[i / 64] &= !mask;
        }
    }

    pub fn bits(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(|i| self.bit(i))
    }

    /// Reads word `i` as an `f64`; the state must be word aligned.
    pub fn f64_at(&self, i: usize) -> f64 {
        f64::from_bits(self.words[i])
    }

    pub fn scalar_at<T: Scalar>(&self, i: usize) -> T {
        T::lit(self.f64_at(i))
    }

    pub fn scalars<T: Scalar>(&self, from: usize, count: usize) -> Vec<T> {
        self.words[from..from + count].iter().map(|&w| T::lit(f64::from_bits(w))).collect()
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum AlgorithmError {
    #[error("ellipsoid shape matrix lost positive definiteness (gᵀPg = {quad})")]
    DegenerateEllipsoid { quad: f64 },
    #[error("memory state has {got} bits, expected {want}")]
    BadState { got: usize, want: usize },
}

#[derive(Debug, Error, PartialEq)]
pub enum OptimizerError {
    #[error("state has {got} bits after round {round}, declared {want}")]
    StateSizeViolation { round: usize, got: usize, want: usize },
    #[error("query of round {round} has norm {norm}")]
    QueryOutOfBall { round: usize, norm: f64 },
    #[error("algorithm failed in round {round}: {source}")]
    Algorithm { round: usize, source: AlgorithmError },
    #[error(transparent)]
    Oracle(#[from] InstanceError),
    #[error("query budget must be at least 1")]
    ZeroBudget,
    #[error(transparent)]
    Reference(#[from] crate::instrument::InstrumentError),
}

/// A deterministic `S`-bit algorithm.
///
/// `query`, `update` and `output` see nothing but their arguments.
pub trait Algorithm<T: Scalar>: Send + Sync {
    fn name(&self) -> String;
    fn dim(&self) -> usize;
    /// `S`, the number of bits kept between rounds.
    fn declared_size(&self) -> usize;
    fn init(&self, seed: u64) -> MemoryState;
    fn query(&self, m: &MemoryState) -> Vec<T>;
    fn update(&self, m: &MemoryState, value: T, subgradient: &[T]) -> Result<MemoryState, AlgorithmError>;
    fn output(&self, m: &MemoryState) -> Vec<T>;
    fn halted(&self, _m: &MemoryState) -> bool {
        false
    }
}

impl<T: Scalar, A: Algorithm<T> + ?Sized> Algorithm<T> for Box<A> {
    fn name(&self) -> String {
        (**self).name()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn declared_size(&self) -> usize {
        (**self).declared_size()
    }
    fn init(&self, seed: u64) -> MemoryState {
        (**self).init(seed)
    }
    fn query(&self, m: &MemoryState) -> Vec<T> {
        (**self).query(m)
    }
    fn update(&self, m: &MemoryState, value: T, subgradient: &[T]) -> Result<MemoryState, AlgorithmError> {
        (**self).update(m, value, subgradient)
    }
    fn output(&self, m: &MemoryState) -> Vec<T> {
        (**self).output(m)
    }
    fn halted(&self, m: &MemoryState) -> bool {
        (**self).halted(m)
    }
}

/// One query/answer exchange. The subgradient itself is not kept: for the hard
/// family it is determined by the provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord<T> {
    /// 1-based round number.
    pub t: usize,
    pub x: Vec<T>,
    pub value: T,
    pub provenance: Provenance,
    pub state_bits: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transcript<T> {
    pub instance_ref: Option<InstanceRef>,
    pub algorithm: String,
    pub declared_size: usize,
    pub t_budget: usize,
    pub seed: u64,
    pub rounds: Vec<RoundRecord<T>>,
    pub final_output: Vec<T>,
}

impl<T: Scalar> Transcript<T> {
    pub fn queries(&self) -> impl Iterator<Item = &[T]> {
        self.rounds.iter().map(|r| r.x.as_slice())
    }

    pub fn state_sizes(&self) -> Vec<usize> {
        self.rounds.iter().map(|r| r.state_bits).collect()
    }

    /// JSONL: a header record with the instance reference, one record per round,
    /// then an output record.
    pub fn to_jsonl(&self, extra_header: &serde_json::Value) -> String {
        let mut out = String::new();
        let header = serde_json::json!({
            "kind": "header",
            "instance": self.instance_ref,
            "algorithm": self.algorithm,
            "declared_size": self.declared_size,
            "t_budget": self.t_budget,
            "seed": self.seed,
            "config": extra_header,
        });
        out.push_str(&header.to_string());
        out.push('\n');
        for r in &self.rounds {
            let rec = serde_json::json!({
                "t": r.t,
                "x": r.x.iter().map(|v| v.as_f64()).collect::<Vec<_>>(),
                "value": r.value.as_f64(),
                "provenance": r.provenance,
                "state_bits": r.state_bits,
            });
            out.push_str(&rec.to_string());
            out.push('\n');
        }
        let fin = serde_json::json!({
            "kind": "output",
            "x": self.final_output.iter().map(|v| v.as_f64()).collect::<Vec<_>>(),
        });
        out.push_str(&fin.to_string());
        out.push('\n');
        out
    }
}

/// Query, answer and post-update state of a single round.
pub struct Step<T> {
    pub x: Vec<T>,
    pub answer: OracleAnswer<T>,
    pub next: Option<MemoryState>,
}

fn check_state<T: Scalar, A: Algorithm<T> + ?Sized>(
    alg: &A,
    m: &MemoryState,
    round: usize,
) -> Result<(), OptimizerError> {
    if m.len_bits() != alg.declared_size() {
        return Err(OptimizerError::StateSizeViolation {
            round,
            got: m.len_bits(),
            want: alg.declared_size(),
        });
    }
    Ok(())
}

/// Executes round `t` from state `m`. With `last` set the query is the
/// algorithm's output point and no update happens.
pub fn step<T: Scalar, A: Algorithm<T> + ?Sized, O: FirstOrderOracle<T> + ?Sized>(
    alg: &A,
    oracle: &O,
    m: &MemoryState,
    t: usize,
    last: bool,
) -> Result<Step<T>, OptimizerError> {
    let x = if last { alg.output(m) } else { alg.query(m) };
    let n = norm2(&x);
    if !(n <= T::one() + T::ball_tolerance()) {
        return Err(OptimizerError::QueryOutOfBall { round: t, norm: n.as_f64() });
    }
    let answer = oracle.answer(&x)?;
    let next = if last {
        None
    } else {
        let next = alg
            .update(m, answer.value, &answer.subgradient)
            .map_err(|source| OptimizerError::Algorithm { round: t, source })?;
        check_state(alg, &next, t)?;
        Some(next)
    };
    Ok(Step { x, answer, next })
}

/// Runs `alg` against `oracle` for at most `t_budget` rounds, handing every
/// round to `observe`. The final round queries the output point, so the last
/// query always equals the returned output.
pub fn run_observed<T, A, O, F>(
    alg: &A,
    oracle: &O,
    t_budget: usize,
    seed: u64,
    mut observe: F,
) -> Result<Vec<T>, OptimizerError>
where
    T: Scalar,
    A: Algorithm<T> + ?Sized,
    O: FirstOrderOracle<T> + ?Sized,
    F: FnMut(usize, &[T], &OracleAnswer<T>, usize),
{
    if t_budget == 0 {
        return Err(OptimizerError::ZeroBudget);
    }
    let mut m = alg.init(seed);
    check_state(alg, &m, 0)?;
    for t in 1..=t_budget {
        let last = t == t_budget || alg.halted(&m);
        let s = step(alg, oracle, &m, t, last)?;
        match s.next {
            Some(next) => {
                observe(t, &s.x, &s.answer, next.len_bits());
                m = next;
            }
            None => {
                observe(t, &s.x, &s.answer, m.len_bits());
                return Ok(s.x);
            }
        }
    }
    unreachable!("the final round always returns")
}

/// Full-transcript variant of [`run_observed`].
pub fn run<T, A, O>(alg: &A, oracle: &O, t_budget: usize, seed: u64) -> Result<Transcript<T>, OptimizerError>
where
    T: Scalar,
    A: Algorithm<T> + ?Sized,
    O: FirstOrderOracle<T> + ?Sized,
{
    let mut rounds = Vec::new();
    let final_output = run_observed(alg, oracle, t_budget, seed, |t, x, ans, bits| {
        rounds.push(RoundRecord {
            t,
            x: x.to_vec(),
            value: ans.value,
            provenance: ans.provenance,
            state_bits: bits,
        })
    })?;
    Ok(Transcript {
        instance_ref: oracle.instance_ref(),
        algorithm: alg.name(),
        declared_size: alg.declared_size(),
        t_budget,
        seed,
        rounds,
        final_output,
    })
}

// ---------------------------------------------------------------------------
// Projected subgradient descent
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepRule {
    Fixed { eta: f64 },
    /// `η_t = scale/√t`.
    Decreasing { scale: f64 },
}

/// `x_{t+1} = Proj_B(x_t − η_t g_t)`.
///
/// State layout, one 64-bit word each: the iterate, then a round counter when
/// the step decreases or averaging is on, then the running average of the
/// queried points when averaging is on.
#[derive(Clone, Debug)]
pub struct SubgradientDescent {
    d: usize,
    rule: StepRule,
    averaging: bool,
}

pub fn subgradient_descent(d: usize, rule: StepRule, averaging: bool) -> SubgradientDescent {
    SubgradientDescent { d, rule, averaging }
}

impl SubgradientDescent {
    fn has_counter(&self) -> bool {
        self.averaging || matches!(self.rule, StepRule::Decreasing { .. })
    }

    fn words(&self) -> usize {
        self.d + usize::from(self.has_counter()) + if self.averaging { self.d } else { 0 }
    }
}

impl<T: Scalar> Algorithm<T> for SubgradientDescent {
    fn name(&self) -> String {
        match self.rule {
            StepRule::Fixed { eta } => format!("subgradient(fixed={eta})"),
            StepRule::Decreasing { scale } => format!("subgradient(decreasing={scale})"),
        }
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn declared_size(&self) -> usize {
        64 * self.words()
    }

    fn init(&self, _seed: u64) -> MemoryState {
        MemoryState::from_f64s(&vec![0.0; self.words()])
    }

    fn query(&self, m: &MemoryState) -> Vec<T> {
        let mut x = m.scalars(0, self.d);
        project_ball(&mut x);
        x
    }

    fn update(&self, m: &MemoryState, _value: T, g: &[T]) -> Result<MemoryState, AlgorithmError> {
        let want = <Self as Algorithm<T>>::declared_size(self);
        if m.len_bits() != want {
            return Err(AlgorithmError::BadState { got: m.len_bits(), want });
        }
        let x: Vec<T> = <Self as Algorithm<T>>::query(self, m);
        let count = if self.has_counter() { m.f64_at(self.d) + 1.0 } else { 0.0 };
        let eta = match self.rule {
            StepRule::Fixed { eta } => T::lit(eta),
            StepRule::Decreasing { scale } => T::lit(scale / count.sqrt()),
        };
        let mut next: Vec<T> = x.iter().zip(g).map(|(&xi, &gi)| xi - eta * gi).collect();
        project_ball(&mut next);
        let mut words: Vec<T> = next;
        if self.has_counter() {
            words.push(T::lit(count));
        }
        if self.averaging {
            let avg: Vec<T> = m.scalars(self.d + 1, self.d);
            let w = T::one() / T::lit(count);
            words.extend(avg.iter().zip(&x).map(|(&a, &xi)| a + (xi - a) * w));
        }
        Ok(MemoryState::from_scalars(&words))
    }

    fn output(&self, m: &MemoryState) -> Vec<T> {
        if self.averaging && m.f64_at(self.d) > 0.0 {
            let mut a = m.scalars(self.d + 1, self.d);
            project_ball(&mut a);
            a
        } else {
            <Self as Algorithm<T>>::query(self, m)
        }
    }
}

// ---------------------------------------------------------------------------
// Ellipsoid method
// ---------------------------------------------------------------------------

/// Central-cut ellipsoid method over the unit ball.
///
/// The localization set is `{c + B u : ‖u‖₂ ≤ 1}`, i.e. shape matrix `P = BBᵀ`,
/// starting from the unit ball. State: the center `c` followed by `B`
/// (row-major), one 64-bit word per entry, so `S = 64·(d + d²)`. Keeping the
/// factor instead of `P` means the shape can never turn indefinite through
/// rounding, which the explicit update does after a few thousand cuts on
/// badly scaled objectives. After each objective cut, ball cuts (normal `c`)
/// are applied until the center is feasible again.
#[derive(Clone, Debug)]
pub struct Ellipsoid {
    d: usize,
    max_feasibility_cuts: usize,
}

pub fn ellipsoid_method(d: usize) -> Ellipsoid {
    Ellipsoid { d, max_feasibility_cuts: 64 * d }
}

impl Ellipsoid {
    fn decode<T: Scalar>(&self, m: &MemoryState) -> (Vec<T>, Vec<T>) {
        (m.scalars(0, self.d), m.scalars(self.d, self.d * self.d))
    }

    /// Central cut with normal `g`; `Ok(false)` when `g` vanishes.
    fn cut<T: Scalar>(&self, c: &mut [T], b: &mut [T], g: &[T]) -> Result<bool, AlgorithmError> {
        let n = self.d;
        if g.iter().all(|v| v.is_zero()) {
            return Ok(false);
        }
        let mut h = vec![T::zero(); n];
        for (i, &gi) in g.iter().enumerate() {
            for (hk, &bik) in h.iter_mut().zip(&b[i * n..(i + 1) * n]) {
                *hk += bik * gi;
            }
        }
        let hn = norm2(&h);
        if !(hn > T::zero()) || !hn.is_finite() {
            return Err(AlgorithmError::DegenerateEllipsoid { quad: (hn * hn).as_f64() });
        }
        let p: Vec<T> = h.iter().map(|&v| v / hn).collect();
        let bp: Vec<T> = (0..n).map(|i| dot(&b[i * n..(i + 1) * n], &p)).collect();
        let nf = T::lit(n as f64);
        let shift = T::one() / (nf + T::one());
        for (ci, &v) in c.iter_mut().zip(&bp) {
            *ci -= shift * v;
        }
        let alpha = nf / (nf * nf - T::one()).sqrt();
        let beta = ((nf - T::one()) / (nf + T::one())).sqrt() - T::one();
        for i in 0..n {
            let row = &mut b[i * n..(i + 1) * n];
            for (bij, &pj) in row.iter_mut().zip(&p) {
                *bij = alpha * (*bij + beta * bp[i] * pj);
            }
        }
        Ok(true)
    }
}

impl<T: Scalar> Algorithm<T> for Ellipsoid {
    fn name(&self) -> String {
        "ellipsoid".into()
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn declared_size(&self) -> usize {
        64 * (self.d + self.d * self.d)
    }

    fn init(&self, _seed: u64) -> MemoryState {
        let n = self.d;
        let mut words = vec![0.0; n + n * n];
        for i in 0..n {
            words[n + i * n + i] = 1.0;
        }
        MemoryState::from_f64s(&words)
    }

    fn query(&self, m: &MemoryState) -> Vec<T> {
        let mut c = m.scalars(0, self.d);
        project_ball(&mut c);
        c
    }

    fn update(&self, m: &MemoryState, _value: T, g: &[T]) -> Result<MemoryState, AlgorithmError> {
        let want = <Self as Algorithm<T>>::declared_size(self);
        if m.len_bits() != want {
            return Err(AlgorithmError::BadState { got: m.len_bits(), want });
        }
        let (mut c, mut b) = self.decode::<T>(m);
        if !self.cut(&mut c, &mut b, g)? {
            return Ok(m.clone());
        }
        let mut cuts = 0;
        while norm2(&c) > T::one() && cuts < self.max_feasibility_cuts {
            let normal = c.clone();
            self.cut(&mut c, &mut b, &normal)?;
            cuts += 1;
        }
        let mut words = c;
        words.extend(b);
        Ok(MemoryState::from_scalars(&words))
    }

    fn output(&self, m: &MemoryState) -> Vec<T> {
        <Self as Algorithm<T>>::query(self, m)
    }
}

/// Serializable choice of reference optimizer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AlgorithmSpec {
    Subgradient { rule: StepRule, averaging: bool },
    Ellipsoid,
}

impl AlgorithmSpec {
    pub fn build<T: Scalar>(&self, d: usize) -> Box<dyn Algorithm<T>> {
        match *self {
            AlgorithmSpec::Subgradient { rule, averaging } => Box::new(subgradient_descent(d, rule, averaging)),
            AlgorithmSpec::Ellipsoid => Box::new(ellipsoid_method(d)),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            AlgorithmSpec::Subgradient { .. } => "subgradient",
            AlgorithmSpec::Ellipsoid => "ellipsoid",
        }
    }
}

/// One line of the frontier table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontierRow {
    pub alg: String,
    pub d: usize,
    pub s_bits: usize,
    pub seeds: usize,
    /// Median over seeds of the first query count whose normalized gap
    /// `(F(x_t) − F(x̂))·√d·L` is at most each threshold; `None` when fewer than
    /// half of the seeds get there within the budget.
    pub queries_to_gap: Vec<Option<usize>>,
    /// Seeds that reached each threshold.
    pub reached: Vec<usize>,
}

/// First query count (1-based) at which each normalized gap threshold is met
/// on the instance sampled from `seed`.
pub fn queries_to_gap<T: Scalar>(
    spec: &AlgorithmSpec,
    params: &Params,
    seed: u64,
    t_budget: usize,
    gaps: &[f64],
) -> Result<Vec<Option<usize>>, OptimizerError> {
    let inst = HardInstance::<T>::sample(params, seed)?;
    let reference = reference_optimum(&inst)?;
    let unit = (params.d as f64).sqrt() * params.l_scale;
    let alg = spec.build::<T>(params.d);
    let mut hits = vec![None; gaps.len()];
    run_observed(alg.as_ref(), &inst, t_budget, seed, |t, _x, ans, _| {
        let g = (ans.value - reference.value).as_f64() * unit;
        for (h, &thr) in hits.iter_mut().zip(gaps) {
            if h.is_none() && g <= thr {
                *h = Some(t + 1);
            }
        }
    })?;
    Ok(hits)
}

/// Aggregates per-seed first hits (`per_seed[seed][gap]`) into a table row.
pub fn frontier_row(
    alg: &str,
    d: usize,
    s_bits: usize,
    seeds: usize,
    per_seed: &[Vec<Option<usize>>],
    gaps: usize,
) -> FrontierRow {
    let mut queries_to_gap = Vec::new();
    let mut reached = Vec::new();
    for g in 0..gaps {
        let mut ts: Vec<usize> = per_seed.iter().map(|h| h[g].unwrap_or(usize::MAX)).collect();
        ts.sort_unstable();
        let med = ts[(ts.len() - 1) / 2];
        queries_to_gap.push((med != usize::MAX).then_some(med));
        reached.push(ts.iter().filter(|&&t| t != usize::MAX).count());
    }
    FrontierRow { alg: alg.to_string(), d, s_bits, seeds, queries_to_gap, reached }
}

/// Queries needed to reach each gap threshold, per algorithm and dimension.
/// With no thresholds the rows carry only the memory size.
pub fn measure_frontier<T: Scalar>(
    algs: &[AlgorithmSpec],
    params: &[Params],
    seeds: &[u64],
    t_budget: usize,
    gaps: &[f64],
) -> Result<Vec<FrontierRow>, OptimizerError> {
    assert!(!algs.is_empty() && !params.is_empty() && !seeds.is_empty(), "frontier lists must be nonempty");
    let mut rows = Vec::new();
    for spec in algs {
        for p in params {
            let s_bits = spec.build::<T>(p.d).declared_size();
            let per_seed: Vec<Vec<Option<usize>>> = if gaps.is_empty() {
                Vec::new()
            } else {
                seeds
                    .par_iter()
                    .map(|&seed| queries_to_gap::<T>(spec, p, seed, t_budget, gaps))
                    .collect::<Result<_, _>>()?
            };
            rows.push(frontier_row(spec.label(), p.d, s_bits, seeds.len(), &per_seed, gaps.len()));
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{derive_params, HardInstance, Profile};

    #[test]
    fn memory_state_bits() {
        let mut m = MemoryState::zeros(70);
        m.set_bit(69, true);
        m.set_bit(3, true);
        assert!(m.bit(69) && m.bit(3) && !m.bit(4));
        assert_eq!(m.bits().filter(|&b| b).count(), 2);
        let back = MemoryState::from_bits(&m.bits().collect::<Vec<_>>());
        assert_eq!(back, m);
        let f = MemoryState::from_f64s(&[1.5, -2.0]);
        assert_eq!(f.len_bits(), 128);
        assert_eq!(f.f64_at(1), -2.0);
    }

    #[test]
    fn declared_sizes() {
        let sgd = subgradient_descent(8, StepRule::Fixed { eta: 0.1 }, false);
        assert_eq!(<SubgradientDescent as Algorithm<f64>>::declared_size(&sgd), 64 * 8);
        let sgd = subgradient_descent(8, StepRule::Fixed { eta: 0.1 }, true);
        assert_eq!(<SubgradientDescent as Algorithm<f64>>::declared_size(&sgd), 64 * (2 * 8 + 1));
        let e = ellipsoid_method(8);
        assert_eq!(<Ellipsoid as Algorithm<f64>>::declared_size(&e), 64 * (8 + 64));
    }

    #[test]
    fn zero_budget_is_rejected() {
        let p = derive_params(8, 0.5, &Profile::desk()).unwrap();
        let inst = HardInstance::<f64>::sample(&p, 0).unwrap();
        let e = ellipsoid_method(8);
        assert_eq!(run(&e, &inst, 0, 0).unwrap_err(), OptimizerError::ZeroBudget);
    }

    #[test]
    fn factored_cut_matches_shape_matrix_update() {
        let n = 3;
        let e = ellipsoid_method(n);
        let mut c = vec![0.1f64, 0.0, -0.2];
        let mut b = vec![1.0, 0.2, 0.0, 0.0, 0.7, 0.1, 0.3, 0.0, 0.5];
        let g = [1.0, 2.0, -1.0];
        let p0: Vec<f64> = (0..9).map(|k| dot(&b[(k / 3) * 3..(k / 3) * 3 + 3], &b[(k % 3) * 3..(k % 3) * 3 + 3])).collect();
        // textbook update on P = BBᵀ
        let pg: Vec<f64> = (0..n).map(|i| dot(&p0[i * n..(i + 1) * n], &g)).collect();
        let q = dot(&g, &pg).sqrt();
        let nf = n as f64;
        let want_c: Vec<f64> = c.iter().zip(&pg).map(|(ci, v)| ci - v / q / (nf + 1.0)).collect();
        let want_p: Vec<f64> = (0..9)
            .map(|k| nf * nf / (nf * nf - 1.0) * (p0[k] - 2.0 / (nf + 1.0) * pg[k / 3] * pg[k % 3] / (q * q)))
            .collect();
        assert!(e.cut(&mut c, &mut b, &g).unwrap());
        let p1: Vec<f64> = (0..9).map(|k| dot(&b[(k / 3) * 3..(k / 3) * 3 + 3], &b[(k % 3) * 3..(k % 3) * 3 + 3])).collect();
        for k in 0..9 {
            assert!((p1[k] - want_p[k]).abs() < 1e-12);
        }
        for i in 0..n {
            assert!((c[i] - want_c[i]).abs() < 1e-12);
        }
        assert!(!e.cut(&mut c, &mut b, &[0.0; 3]).unwrap());
    }
}
