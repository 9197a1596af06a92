//! The correlated orthogonal vector game, its referee, and the reduction that
//! turns a memory-bounded optimizer into a protocol for it.

use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};
use thiserror::Error;

use crate::instance::{nemirovski_max, outer_scale, scaled_signs, HardInstance, InstanceError, Params, Term};
use crate::instrument::{gap_event, reference_optimum, success_at, CorrelationTracker, NEVER};
use crate::linalg::{dot, norm2, sign_dot, SignMatrix};
use crate::optimizer::{run_observed, Algorithm, MemoryState, Message};
use crate::oracle::{FirstOrderOracle, OracleAnswer, Provenance};
use crate::rng::{sub_seed, Rng};
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum GameError {
    #[error("round-1 message has {got} bits, the budget is exactly {want}")]
    MessageLengthViolation { got: usize, want: usize },
    #[error("round-3 entry {index} is not a row of A")]
    RowNotInMatrix { index: usize },
    #[error("round 3 carried {got} entries, at most {want} allowed")]
    TooManyEntries { got: usize, want: usize },
    #[error("Bob's output has norm {norm}")]
    OutputOutOfBall { norm: f64 },
    #[error("input shape does not match the game: {0}")]
    Shape(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameParams {
    pub d: usize,
    pub k_msg: usize,
    pub n_rows: usize,
    pub s_corr: f64,
    pub xi: f64,
}

impl GameParams {
    pub fn from_params(p: &Params) -> Self {
        GameParams { d: p.d, k_msg: p.k_msg, n_rows: p.n_rows, s_corr: p.s_corr, xi: p.xi }
    }

    pub fn message_bits(&self) -> usize {
        self.k_msg * self.d
    }

    /// `√(s/d)`.
    pub fn corr_threshold(&self) -> f64 {
        (self.s_corr / self.d as f64).sqrt()
    }

    pub fn rows(&self) -> usize {
        self.d / 2
    }
}

/// Round-3 payload: a row of `A` or nil.
pub type Entry = Option<Vec<i8>>;

/// A deterministic three-round protocol. `v` is passed as its sign pattern;
/// the vector itself is `v/√d`.
pub trait Protocol<T: Scalar>: Sync {
    fn alice_round1(&self, a: &SignMatrix) -> Message;
    fn alice_round3(&self, a: &SignMatrix, v: &[i8]) -> Vec<Entry>;
    fn bob_output(&self, m: &Message, v: &[i8], rows: &[Entry]) -> Vec<T>;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameOutcome {
    pub orthogonal: bool,
    pub correlated: bool,
    pub success: bool,
    /// `|⟨v, x⟩|`.
    pub correlation: f64,
    /// `‖A x‖∞`.
    pub row_norm: f64,
}

/// Evaluates both success predicates for an output `x`.
pub fn judge<T: Scalar>(a: &SignMatrix, v: &[i8], x: &[T], gp: &GameParams) -> GameOutcome {
    let row_norm = a.norm_inf_mul(x).as_f64();
    let correlation = sign_dot(v, x).as_f64().abs() / (gp.d as f64).sqrt();
    let orthogonal = row_norm <= gp.xi;
    let correlated = correlation >= gp.corr_threshold();
    GameOutcome { orthogonal, correlated, success: orthogonal && correlated, correlation, row_norm }
}

fn check_shapes(a: &SignMatrix, v: &[i8], gp: &GameParams) -> Result<(), GameError> {
    if a.ncols() != gp.d || a.nrows() != gp.rows() || v.len() != gp.d {
        return Err(GameError::Shape(format!(
            "A is {}x{}, v has {} entries, game wants {}x{}",
            a.nrows(),
            a.ncols(),
            v.len(),
            gp.rows(),
            gp.d
        )));
    }
    Ok(())
}

/// Referee: drives the three rounds and validates every message.
pub fn play<T: Scalar, P: Protocol<T> + ?Sized>(
    proto: &P,
    a: &SignMatrix,
    v: &[i8],
    gp: &GameParams,
) -> Result<GameOutcome, GameError> {
    check_shapes(a, v, gp)?;
    let m = proto.alice_round1(a);
    if m.len_bits() != gp.message_bits() {
        return Err(GameError::MessageLengthViolation { got: m.len_bits(), want: gp.message_bits() });
    }
    let rows = proto.alice_round3(a, v);
    if rows.len() > gp.n_rows {
        return Err(GameError::TooManyEntries { got: rows.len(), want: gp.n_rows });
    }
    for (index, r) in rows.iter().enumerate() {
        if let Some(r) = r {
            if !a.contains_row(r) {
                return Err(GameError::RowNotInMatrix { index });
            }
        }
    }
    let x = proto.bob_output(&m, v, &rows);
    let n = norm2(&x);
    if x.len() != gp.d || !(n <= T::one() + T::ball_tolerance()) {
        return Err(GameError::OutputOutOfBall { norm: n.as_f64() });
    }
    Ok(judge(a, v, &x, gp))
}

/// Rescales Bob's output to the unit sphere; short outputs become `e₁`.
pub struct Normalized<P> {
    inner: P,
    min_norm: f64,
}

/// Wraps `proto` and returns the game it now targets, with tolerance `√d·ξ`.
pub fn normalize_output<P>(proto: P, gp: &GameParams) -> (Normalized<P>, GameParams) {
    let target = GameParams { xi: (gp.d as f64).sqrt() * gp.xi, ..gp.clone() };
    (Normalized { inner: proto, min_norm: gp.corr_threshold() }, target)
}

pub fn normalize_vector<T: Scalar>(x: &[T], min_norm: f64) -> Vec<T> {
    let n = norm2(x);
    if n.as_f64() < min_norm {
        let mut e = vec![T::zero(); x.len()];
        e[0] = T::one();
        e
    } else {
        x.iter().map(|&c| c / n).collect()
    }
}

impl<T: Scalar, P: Protocol<T>> Protocol<T> for Normalized<P> {
    fn alice_round1(&self, a: &SignMatrix) -> Message {
        self.inner.alice_round1(a)
    }

    fn alice_round3(&self, a: &SignMatrix, v: &[i8]) -> Vec<Entry> {
        self.inner.alice_round3(a, v)
    }

    fn bob_output(&self, m: &Message, v: &[i8], rows: &[Entry]) -> Vec<T> {
        normalize_vector(&self.inner.bob_output(m, v, rows), self.min_norm)
    }
}

/// Draws trial `trial`'s `(A, v)` from the master seed.
pub fn sample_game_input(gp: &GameParams, seed: u64, trial: u64) -> (SignMatrix, Vec<i8>) {
    let mut rng = Rng::seed_from_u64(sub_seed(seed, trial));
    let a = SignMatrix::random(gp.rows(), gp.d, &mut rng);
    let v = SignMatrix::random(1, gp.d, &mut rng).row(0).to_vec();
    (a, v)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuccessEstimate {
    pub successes: usize,
    pub trials: usize,
    pub rate: f64,
    pub ci95: (f64, f64),
}

/// Two-sided 95% Clopper–Pearson interval.
pub fn binomial_ci95(successes: usize, trials: usize) -> (f64, f64) {
    assert!(trials > 0 && successes <= trials);
    let (k, n) = (successes as f64, trials as f64);
    let lo = if successes == 0 { 0.0 } else { Beta::new(k, n - k + 1.0).unwrap().inverse_cdf(0.025) };
    let hi = if successes == trials { 1.0 } else { Beta::new(k + 1.0, n - k).unwrap().inverse_cdf(0.975) };
    (lo, hi)
}

impl SuccessEstimate {
    pub fn from_counts(successes: usize, trials: usize) -> Self {
        SuccessEstimate {
            successes,
            trials,
            rate: successes as f64 / trials as f64,
            ci95: binomial_ci95(successes, trials),
        }
    }
}

/// Plays `trials` independent games; trial `i` uses sub-seed `i` of `seed`.
pub fn estimate_success<T: Scalar, P: Protocol<T> + ?Sized>(
    proto: &P,
    gp: &GameParams,
    trials: usize,
    seed: u64,
) -> Result<SuccessEstimate, GameError> {
    assert!(trials >= 1, "estimate_success needs at least one trial");
    let outcomes: Result<Vec<GameOutcome>, GameError> = (0..trials as u64)
        .into_par_iter()
        .map(|i| {
            let (a, v) = sample_game_input(gp, seed, i);
            play(proto, &a, &v, gp)
        })
        .collect();
    let hits = outcomes?.iter().filter(|o| o.success).count();
    Ok(SuccessEstimate::from_counts(hits, trials))
}

// ---------------------------------------------------------------------------
// Reduction
// ---------------------------------------------------------------------------

/// Memory-to-communication reduction: Alice optimizes `F_{A,V}` until the `i*`-th
/// correlation time, ships the memory state, then reports which of the next
/// `n` oracle answers on `F_{A,V′}` were rows. Bob replays the optimizer.
pub struct Reduction<A> {
    alg: A,
    params: Params,
    i_star: usize,
    n_rows: usize,
    t_budget: usize,
    shared_seed: u64,
    alg_seed: u64,
}

impl<A> Reduction<A> {
    /// `params` fixes the instance family; `i_star` is 0-based.
    pub fn new(alg: A, params: &Params, i_star: usize, n_rows: usize, t_budget: usize, shared_seed: u64) -> Self {
        assert!(i_star + 1 < params.n_terms, "i_star must leave a successor term");
        Reduction { alg, params: params.clone(), i_star, n_rows, t_budget, shared_seed, alg_seed: 0 }
    }

    /// Game parameters seen by the referee: `k = S/d`.
    pub fn game_params<T: Scalar>(&self) -> Result<GameParams, GameError>
    where
        A: Algorithm<T>,
    {
        let s = self.alg.declared_size();
        let d = self.params.d;
        if s % d != 0 {
            return Err(GameError::MessageLengthViolation { got: s, want: (s / d + 1) * d });
        }
        Ok(GameParams {
            d,
            k_msg: s / d,
            n_rows: self.n_rows,
            s_corr: self.params.s_corr,
            xi: self.params.xi,
        })
    }

    /// `v₁..v_N` from the shared seed.
    pub fn public_vectors(&self) -> SignMatrix {
        let mut rng = Rng::seed_from_u64(self.shared_seed);
        SignMatrix::random(self.params.n_terms, self.params.d, &mut rng)
    }

    fn instance<T: Scalar>(&self, a: &SignMatrix, v: Option<&[i8]>) -> HardInstance<T> {
        let inst = HardInstance::from_parts(self.params.clone(), a.clone(), self.public_vectors(), self.shared_seed);
        match v {
            Some(v) => inst.with_nemirovski_replaced(self.i_star + 1, v),
            None => inst,
        }
    }
}

/// Everything one reduction trial produced, for the log and the referee.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReductionTrace {
    /// `t_{i*}` on `F_{A,V}`; `None` when it never happens.
    pub t_istar: Option<usize>,
    pub message_bits: usize,
    pub outcome: GameOutcome,
    /// Round within Bob's replay (1-based) whose query he output.
    pub bob_round: Option<usize>,
    /// True `F_{A,V′}` at Bob's output is also `≤ 1/(√d L)`.
    pub true_value_ok: Option<bool>,
    /// Runs on `F_{A,V}` and `F_{A,V′}` query the same points before `t_{i*}`.
    pub prefix_agrees: bool,
    /// Replay rounds, up to Bob's stopping point, where his query differs
    /// from Alice's.
    pub mismatch_rounds: usize,
    /// Optimizer `ε`-succeeds on `F_{A,V′}` within the budget.
    pub eps_success: bool,
    /// Gap event at `i*` for correlation times on `F_{A,V′}`.
    pub gap_event: bool,
    /// Joint event `ε-success ∧ gap ∧ fidelity`.
    pub joint: bool,
}

/// Plain query/update execution for `rounds` rounds from `m`, feeding each
/// query and answer to `f`; stops early when `f` returns `false`.
fn drive<T, A, O, F>(alg: &A, oracle: &O, mut m: MemoryState, rounds: usize, mut f: F) -> Result<MemoryState, ()>
where
    T: Scalar,
    A: Algorithm<T>,
    O: FirstOrderOracle<T> + ?Sized,
    F: FnMut(usize, &MemoryState, &[T], &OracleAnswer<T>) -> bool,
{
    for j in 1..=rounds {
        let x = alg.query(&m);
        let ans = oracle.answer(&x).map_err(|_| ())?;
        if !f(j, &m, &x, &ans) {
            return Ok(m);
        }
        m = alg.update(&m, ans.value, &ans.subgradient).map_err(|_| ())?;
    }
    Ok(m)
}

/// Bob's stand-in oracle: rows from Alice's list, Nemirovski terms from `V′`.
/// Arithmetic mirrors [`first_order`](crate::oracle::first_order) so that a
/// faithful replay is bit-identical.
struct BobOracle<'a, T> {
    params: &'a Params,
    vs: &'a [Vec<T>],
    entry: Option<&'a [i8]>,
}

impl<T: Scalar> FirstOrderOracle<T> for BobOracle<'_, T> {
    fn dim(&self) -> usize {
        self.params.d
    }

    fn answer(&self, x: &[T]) -> Result<OracleAnswer<T>, InstanceError> {
        let scale: T = outer_scale(self.params);
        match self.entry {
            Some(row) => {
                let p = sign_dot(row, x);
                let l = T::lit(self.params.l_scale);
                let sign = if p < T::zero() { -1.0 } else { 1.0 };
                let c = T::lit(sign) / T::lit(self.params.d as f64).sqrt();
                Ok(OracleAnswer {
                    value: (l * p.abs() - T::one()) * scale,
                    subgradient: row.iter().map(|&s| T::lit(f64::from(s)) * c).collect(),
                    provenance: Provenance::Other,
                })
            }
            None => {
                let (val, term) = nemirovski_max(self.vs, x, self.params.gamma);
                let Term::Nem { index } = term else { unreachable!("nemirovski_max yields Nem terms") };
                let mut g = self.vs[index].clone();
                crate::linalg::scale(scale, &mut g);
                Ok(OracleAnswer { value: val * scale, subgradient: g, provenance: term.into() })
            }
        }
    }
}

impl<A> Reduction<A> {
    fn round1<T: Scalar>(&self, a: &SignMatrix) -> (MemoryState, Option<usize>, Vec<Vec<T>>)
    where
        A: Algorithm<T>,
    {
        let inst = self.instance::<T>(a, None);
        let mut tracker = CorrelationTracker::new(&self.params);
        let mut found = None;
        let mut prefix = Vec::new();
        let _ = drive(&self.alg, &inst, self.alg.init(self.alg_seed), self.t_budget, |t, m, x, _| {
            tracker.observe(&inst, t, x);
            if tracker.time(self.i_star) == t {
                found = Some((m.clone(), t));
                return false;
            }
            prefix.push(x.to_vec());
            true
        });
        match found {
            Some((m, t)) => (m, Some(t), prefix),
            None => (MemoryState::zeros(self.alg.declared_size()), None, prefix),
        }
    }

    /// Alice's real execution on `F_{A,V′}`: the queries of rounds
    /// `t_{i*}..t_{i*}+n−1`, the row entries, and whether it agreed with the
    /// `F_{A,V}` run before `t_{i*}`.
    fn round3<T: Scalar>(&self, a: &SignMatrix, v: &[i8], t_istar: Option<usize>, prefix: &[Vec<T>]) -> (Vec<Entry>, Vec<Vec<T>>, bool)
    where
        A: Algorithm<T>,
    {
        let Some(t0) = t_istar else {
            return (vec![None; self.n_rows], Vec::new(), false);
        };
        let inst = self.instance::<T>(a, Some(v));
        let mut entries = Vec::with_capacity(self.n_rows);
        let mut queries = Vec::with_capacity(self.n_rows);
        let mut agrees = true;
        let _ = drive(&self.alg, &inst, self.alg.init(self.alg_seed), t0 + self.n_rows - 1, |t, _, x, ans| {
            if t < t0 {
                agrees &= prefix.get(t - 1).is_some_and(|p| p.as_slice() == x);
            } else {
                queries.push(x.to_vec());
                entries.push(match ans.provenance {
                    Provenance::Row { row, .. } => Some(a.row(row).to_vec()),
                    _ => None,
                });
            }
            true
        });
        entries.resize(self.n_rows, None);
        (entries, queries, agrees)
    }

    /// Bob's replay; returns the output, its replay round, and every query.
    fn bob<T: Scalar>(&self, m: &Message, v: &[i8], rows: &[Entry]) -> (Vec<T>, Option<usize>, Vec<Vec<T>>)
    where
        A: Algorithm<T>,
    {
        let d = self.params.d;
        let mut signs = self.public_vectors();
        for (c, &sg) in v.iter().enumerate() {
            signs.set(self.i_star + 1, c, sg);
        }
        let vs: Vec<Vec<T>> = (0..signs.nrows()).map(|i| scaled_signs(signs.row(i))).collect();
        let vv: Vec<T> = scaled_signs(v);
        let gamma4 = T::lit(self.params.gamma / 4.0);
        let cap: T = outer_scale(&self.params);
        let mut out = None;
        let mut queries = Vec::new();
        let mut state = m.clone();
        for (j, entry) in rows.iter().enumerate() {
            let x = self.alg.query(&state);
            let oracle = BobOracle { params: &self.params, vs: &vs, entry: entry.as_deref() };
            let Ok(ans) = oracle.answer(&x) else { break };
            queries.push(x.clone());
            if dot(&vv, &x).abs() >= gamma4 && ans.value <= cap {
                out = Some((x.clone(), j + 1));
                break;
            }
            match self.alg.update(&state, ans.value, &ans.subgradient) {
                Ok(next) => state = next,
                Err(_) => break,
            }
        }
        match out {
            Some((x, j)) => (x, Some(j), queries),
            None => (vec![T::zero(); d], None, queries),
        }
    }
}

impl<T: Scalar, A: Algorithm<T>> Protocol<T> for Reduction<A> {
    fn alice_round1(&self, a: &SignMatrix) -> Message {
        self.round1::<T>(a).0
    }

    fn alice_round3(&self, a: &SignMatrix, v: &[i8]) -> Vec<Entry> {
        let (_, t, prefix) = self.round1::<T>(a);
        self.round3::<T>(a, v, t, &prefix).0
    }

    fn bob_output(&self, m: &Message, v: &[i8], rows: &[Entry]) -> Vec<T> {
        self.bob(m, v, rows).0
    }
}

impl<A> Reduction<A> {
    /// One full trial with referee-side diagnostics. The game outcome is
    /// identical to what [`play`] reports for the same `(A, v)`.
    pub fn trace<T: Scalar>(&self, a: &SignMatrix, v: &[i8], gp: &GameParams) -> Result<ReductionTrace, GameError>
    where
        A: Algorithm<T>,
    {
        check_shapes(a, v, gp)?;
        let (m, t_istar, prefix) = self.round1::<T>(a);
        if m.len_bits() != gp.message_bits() {
            return Err(GameError::MessageLengthViolation { got: m.len_bits(), want: gp.message_bits() });
        }
        let (rows, alice_queries, prefix_agrees) = self.round3::<T>(a, v, t_istar, &prefix);
        let (x, bob_round, bob_queries) = self.bob::<T>(&m, v, &rows);
        let outcome = judge(a, v, &x, gp);

        let shifted = self.instance::<T>(a, Some(v));
        let true_value_ok = bob_round.map(|_| shifted.eval_f(&x).map(|e| e.value <= shifted.outer_scale()).unwrap_or(false));
        let mismatch_rounds = if t_istar.is_some() {
            (0..bob_queries.len()).filter(|&j| alice_queries.get(j) != bob_queries.get(j)).count()
        } else {
            0
        };

        // the optimizer's own run on F_{A,V′} with budget T
        let mut tracker = CorrelationTracker::new(&self.params);
        let out = run_observed(&self.alg, &shifted, self.t_budget, self.alg_seed, |t, x, _, _| {
            tracker.observe(&shifted, t, x)
        });
        let times = tracker.finish();
        let eps_success = match (out, reference_optimum(&shifted)) {
            (Ok(o), Ok(r)) => success_at(&shifted, &o, &r).success,
            _ => false,
        };
        let gap = times.times[self.i_star + 1] != NEVER && gap_event(&times, self.i_star, self.t_budget, self.n_rows);
        let fidelity = t_istar.is_some() && prefix_agrees && mismatch_rounds == 0;
        Ok(ReductionTrace {
            t_istar,
            message_bits: m.len_bits(),
            outcome,
            bob_round,
            true_value_ok,
            prefix_agrees,
            mismatch_rounds,
            eps_success,
            gap_event: gap,
            joint: eps_success && gap && fidelity,
        })
    }
}

/// One line of the game trial log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialLog {
    pub trial: u64,
    pub seed: u64,
    pub t_istar: Option<usize>,
    pub success: bool,
    pub orthogonal: bool,
    pub correlated: bool,
    pub correlation: f64,
    pub row_norm: f64,
    pub mismatch_rounds: usize,
    pub prefix_agrees: bool,
    pub eps_success: bool,
    pub gap_event: bool,
    pub joint: bool,
    pub true_value_ok: Option<bool>,
    pub message_bits: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReductionSummary {
    pub success: SuccessEstimate,
    pub joint: SuccessEstimate,
    pub message_bits_exact: bool,
    /// Re-judging every reported success from the logged quantities agrees.
    pub referee_recheck: bool,
    pub mismatch_trials: usize,
}

/// Runs `trials` traced reduction games on inputs drawn like [`estimate_success`].
pub fn run_reduction_trials<T: Scalar, A: Algorithm<T>>(
    red: &Reduction<A>,
    gp: &GameParams,
    trials: usize,
    seed: u64,
) -> Result<(Vec<TrialLog>, ReductionSummary), GameError> {
    assert!(trials >= 1, "need at least one trial");
    let logs: Result<Vec<TrialLog>, GameError> = (0..trials as u64)
        .into_par_iter()
        .map(|i| {
            let (a, v) = sample_game_input(gp, seed, i);
            let tr = red.trace::<T>(&a, &v, gp)?;
            Ok(TrialLog {
                trial: i,
                seed: sub_seed(seed, i),
                t_istar: tr.t_istar,
                success: tr.outcome.success,
                orthogonal: tr.outcome.orthogonal,
                correlated: tr.outcome.correlated,
                correlation: tr.outcome.correlation,
                row_norm: tr.outcome.row_norm,
                mismatch_rounds: tr.mismatch_rounds,
                prefix_agrees: tr.prefix_agrees,
                eps_success: tr.eps_success,
                gap_event: tr.gap_event,
                joint: tr.joint,
                true_value_ok: tr.true_value_ok,
                message_bits: tr.message_bits,
            })
        })
        .collect();
    let logs = logs?;
    let summary = summarize(&logs, gp);
    Ok((logs, summary))
}

/// Aggregates a trial log; used both live and when re-reading a log file.
pub fn summarize(logs: &[TrialLog], gp: &GameParams) -> ReductionSummary {
    let n = logs.len();
    let hits = logs.iter().filter(|l| l.success).count();
    let joint = logs.iter().filter(|l| l.joint).count();
    let referee_recheck = logs.iter().filter(|l| l.success).all(|l| {
        l.row_norm <= gp.xi && l.correlation >= gp.corr_threshold() && l.orthogonal && l.correlated
    });
    ReductionSummary {
        success: SuccessEstimate::from_counts(hits, n),
        joint: SuccessEstimate::from_counts(joint, n),
        message_bits_exact: logs.iter().all(|l| l.message_bits == gp.message_bits()),
        referee_recheck,
        mismatch_trials: logs.iter().filter(|l| l.mismatch_rounds > 0).count(),
    }
}
