//! Tables of Bob's outputs, the level schedule, and a micro-scale run of the
//! iterative encoding over those tables.
//!
//! All counts that can outgrow a machine word are kept as base-2 exponents.

use std::collections::{BTreeSet, HashSet};

use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{binomial_ci95, Entry, Protocol};
use crate::instance::scaled_signs;
use crate::linalg::{dot, norm2, sign_dot, OrthoBasis, SignMatrix};
use crate::optimizer::{MemoryState, Message};
use crate::rng::{sub_seed, Rng};
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum EncodingError {
    #[error("degenerate level schedule: {0}")]
    DegenerateSchedule(String),
    #[error("enumeration in {stage} needs {needed} items, cap is {cap}")]
    CapExceeded { stage: String, needed: f64, cap: f64 },
    #[error("micro configuration rejected: {0}")]
    BadConfig(String),
}

fn cap_check(stage: &str, needed: f64, cap: f64) -> Result<(), EncodingError> {
    if needed > cap {
        Err(EncodingError::CapExceeded { stage: stage.into(), needed, cap })
    } else {
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Level schedule
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSchedule {
    pub delta_cap: f64,
    pub levels: usize,
    /// `s_0..s_H` as reals.
    pub s_real: Vec<f64>,
    /// `s_0..s_H` rounded to the nearest integer, at least 1.
    pub s: Vec<usize>,
    /// `s_{≤0}..s_{≤H}`, sums of the rounded `s_1..s_h`.
    pub s_leq: Vec<usize>,
    /// `α_h = d^{alpha_exp[h]}`.
    pub alpha_exp: Vec<f64>,
    /// `Γ_h = 2^{gamma_log2[h]}`.
    pub gamma_log2: Vec<i128>,
    /// `N_h = 2^{n_log2[h]}`.
    pub n_log2: Vec<f64>,
    pub l_seq_real: f64,
    pub l_seq: usize,
}

/// `Δ = d/n`.
pub fn delta_cap(d: usize, n: usize) -> f64 {
    d as f64 / n as f64
}

/// `α_h` as an exponent of `d`: `−8^{h+1}`.
pub fn alpha_exponent(h: usize) -> f64 {
    -(8f64.powi(h as i32 + 1))
}

pub fn level_schedule(d: usize, s: f64, k: usize, n: usize, log_base: f64) -> Result<LevelSchedule, EncodingError> {
    if n == 0 || n > d {
        return Err(EncodingError::DegenerateSchedule(format!("Δ = d/n undefined or below 1 (n = {n})")));
    }
    if !(s >= 1.0) || k == 0 {
        return Err(EncodingError::DegenerateSchedule("s and k must be at least 1".into()));
    }
    let lg = (d as f64).ln() / log_base.ln();
    let delta = delta_cap(d, n);
    let s0 = s / lg.powi(2);
    let ratio = delta / lg.powi(5);
    let top = d as f64 / 10.0;
    if s0 < 1.0 {
        return Err(EncodingError::DegenerateSchedule(format!("s₀ = s/log²d = {s0} < 1")));
    }
    if s0 >= top {
        return Err(EncodingError::DegenerateSchedule("H = 0: s/log²d already reaches d/10".into()));
    }
    if ratio <= 1.0 {
        return Err(EncodingError::DegenerateSchedule(format!(
            "Δ/log⁵d = {ratio} ≤ 1, the step sizes never reach d/10"
        )));
    }
    let mut h = 0usize;
    while s0 * ratio.powi(h as i32) < top {
        h += 1;
    }
    let mut s_real: Vec<f64> = (0..h).map(|i| s0 * ratio.powi(i as i32)).collect();
    s_real.push(top);
    let s_int: Vec<usize> = s_real.iter().map(|&x| (x.round() as usize).max(1)).collect();
    let mut s_leq = vec![0usize];
    for i in 1..=h {
        s_leq.push(s_leq[i - 1] + s_int[i]);
    }
    let l_seq_real = s / (4.0 * lg.powi(8));
    Ok(LevelSchedule {
        delta_cap: delta,
        levels: h,
        alpha_exp: (0..=h).map(alpha_exponent).collect(),
        gamma_log2: s_int.iter().map(|&sh| (sh as i128) * d as i128 - 2 * (k as i128) * d as i128).collect(),
        n_log2: s_real.iter().map(|&sh| sh / lg).collect(),
        s_real,
        s: s_int,
        s_leq,
        l_seq: (l_seq_real.round() as usize).max(1),
        l_seq_real,
    })
}

// ---------------------------------------------------------------------------
// Tables
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableEntry<T> {
    pub v_index: usize,
    /// Row indices into `B`, `None` for nil.
    pub rows: Vec<Option<usize>>,
    pub x: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table<T> {
    pub message: Message,
    pub base_rows: usize,
    pub entries: Vec<TableEntry<T>>,
}

/// Default cap on `(m+1)^n·|V|`.
pub const TABLE_CAP: f64 = 1e6;

/// Every output of Bob for message `m`, `v ∈ vs` and each ordered `n_rows`-tuple
/// over `rows(B) ∪ {nil}`; tuples are enumerated with nil first, then rows in
/// order, last position fastest.
pub fn build_table<T: Scalar, P: Protocol<T> + ?Sized>(
    proto: &P,
    m: &Message,
    b: &SignMatrix,
    vs: &[Vec<i8>],
    n_rows: usize,
    cap: f64,
) -> Result<Table<T>, EncodingError> {
    let choices = b.nrows() + 1;
    cap_check("table", (choices as f64).powi(n_rows as i32) * vs.len() as f64, cap)?;
    let mut entries = Vec::new();
    for (v_index, v) in vs.iter().enumerate() {
        let mut tuple = vec![0usize; n_rows];
        loop {
            let rows: Vec<Option<usize>> = tuple.iter().map(|&c| c.checked_sub(1)).collect();
            let payload: Vec<Entry> = rows.iter().map(|r| r.map(|j| b.row(j).to_vec())).collect();
            let x = proto.bob_output(m, v, &payload);
            entries.push(TableEntry { v_index, rows, x });
            // odometer
            let mut pos = n_rows;
            loop {
                if pos == 0 {
                    break;
                }
                pos -= 1;
                tuple[pos] += 1;
                if tuple[pos] < choices {
                    break;
                }
                tuple[pos] = 0;
                if pos == 0 {
                    pos = usize::MAX;
                    break;
                }
            }
            if pos == usize::MAX || n_rows == 0 {
                break;
            }
        }
    }
    Ok(Table { message: m.clone(), base_rows: b.nrows(), entries })
}

/// Indices of entries with `‖Bx‖∞ ≤ xi_prime`, in table order.
pub fn orthogonal_entries<T: Scalar>(table: &Table<T>, b: &SignMatrix, xi_prime: f64) -> Vec<usize> {
    table
        .entries
        .iter()
        .enumerate()
        .filter(|(_, e)| b.norm_inf_mul(&e.x).as_f64() <= xi_prime)
        .map(|(i, _)| i)
        .collect()
}

// ---------------------------------------------------------------------------
// Orthogonal blocks
// ---------------------------------------------------------------------------

/// Sign row number `r` of `{±1}^d`: bit `c` set means coordinate `c` is `−1`.
pub fn sign_row(d: usize, r: u64) -> Vec<i8> {
    (0..d).map(|c| if r >> c & 1 == 1 { -1 } else { 1 }).collect()
}

/// Sign rows `ξ′`-orthogonal to every `x` in `xs`.
pub fn orthogonal_rows<T: Scalar>(xs: &[Vec<T>], d: usize, xi_prime: f64) -> Vec<u64> {
    (0..1u64 << d)
        .filter(|&r| {
            let row = sign_row(d, r);
            xs.iter().all(|x| sign_dot(&row, x).as_f64().abs() <= xi_prime)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum CountMode {
    /// Requires `2^{s_rows·d} ≤ cap`.
    Exact { cap: f64 },
    MonteCarlo { samples: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockCount {
    /// Exact count, when computed exactly.
    pub exact: Option<u128>,
    /// `log₂` of the (estimated) count; `-inf` for zero.
    pub log2: f64,
    /// 95% interval on the fraction of blocks, Monte Carlo mode only.
    pub fraction_ci95: Option<(f64, f64)>,
    pub sample_members: Vec<Vec<Vec<i8>>>,
}

/// Number of `s_rows × d` sign matrices whose rows are all `ξ′`-orthogonal to
/// every `x` in `xs`. Rows are constrained independently, so the exact count
/// is `|R|^{s_rows}` with `R` the admissible rows.
pub fn orth_block_count<T: Scalar>(
    xs: &[Vec<T>],
    s_rows: usize,
    d: usize,
    xi_prime: f64,
    mode: CountMode,
) -> Result<BlockCount, EncodingError> {
    const KEEP: usize = 4;
    match mode {
        CountMode::Exact { cap } => {
            cap_check("orth_block_count", 2f64.powi((s_rows * d) as i32), cap)?;
            let rows = orthogonal_rows(xs, d, xi_prime);
            let count = (rows.len() as u128).pow(s_rows as u32);
            let sample_members = if rows.is_empty() && s_rows > 0 {
                Vec::new()
            } else {
                (0..KEEP.min(count as usize))
                    .map(|i| (0..s_rows).map(|j| sign_row(d, rows[(i + j) % rows.len()])).collect())
                    .collect()
            };
            Ok(BlockCount {
                exact: Some(count),
                log2: (count as f64).log2(),
                fraction_ci95: None,
                sample_members,
            })
        }
        CountMode::MonteCarlo { samples, seed } => {
            assert!(samples > 0);
            let mut rng = Rng::seed_from_u64(seed);
            let mut hits = 0usize;
            let mut sample_members = Vec::new();
            for _ in 0..samples {
                let m = SignMatrix::random(s_rows, d, &mut rng);
                if m.rows().all(|r| xs.iter().all(|x| sign_dot(r, x).as_f64().abs() <= xi_prime)) {
                    hits += 1;
                    if sample_members.len() < KEEP {
                        sample_members.push(m.rows().map(|r| r.to_vec()).collect());
                    }
                }
            }
            let frac = hits as f64 / samples as f64;
            Ok(BlockCount {
                exact: None,
                log2: frac.log2() + (s_rows * d) as f64,
                fraction_ci95: Some(binomial_ci95(hits, samples)),
                sample_members,
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Partitions
// ---------------------------------------------------------------------------

/// Rows `[d/2]` split into blocks of sizes `d/2 − s_{≤h}`, `s_h`, `s_{≤h−1}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Partition {
    pub p1: Vec<usize>,
    pub p2: Vec<usize>,
    pub p3: Vec<usize>,
}

fn combinations(pool: &[usize], k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    if pool.len() < k {
        return Vec::new();
    }
    let mut out = Vec::new();
    for (i, &first) in pool.iter().enumerate() {
        for mut rest in combinations(&pool[i + 1..], k - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// All partitions with `|P2| = s_h`, `|P3| = s_prev`, in lexicographic order of
/// `(P2, P3)`.
pub fn partitions(rows: usize, s_h: usize, s_prev: usize) -> Vec<Partition> {
    if s_h + s_prev > rows {
        return Vec::new();
    }
    let all: Vec<usize> = (0..rows).collect();
    let mut out = Vec::new();
    for p2 in combinations(&all, s_h) {
        let rest: Vec<usize> = all.iter().copied().filter(|r| !p2.contains(r)).collect();
        for p3 in combinations(&rest, s_prev) {
            let p1 = rest.iter().copied().filter(|r| !p3.contains(r)).collect();
            out.push(Partition { p1, p2: p2.clone(), p3 });
        }
    }
    out
}

impl Partition {
    pub fn rows(&self) -> usize {
        self.p1.len() + self.p2.len() + self.p3.len()
    }

    /// Row `j` of block `τ` lands at row `P_τ(j)`.
    pub fn assemble(&self, a1: &SignMatrix, a2: &SignMatrix, a3: &SignMatrix) -> SignMatrix {
        let d = a1.ncols().max(a2.ncols()).max(a3.ncols());
        let mut rows = vec![Vec::new(); self.rows()];
        for (block, idx) in [(a1, &self.p1), (a2, &self.p2), (a3, &self.p3)] {
            assert_eq!(block.nrows(), idx.len(), "block height must match its part");
            for (j, &r) in idx.iter().enumerate() {
                rows[r] = block.row(j).to_vec();
            }
        }
        SignMatrix::from_rows(rows, d)
    }

    pub fn split(&self, m: &SignMatrix) -> (SignMatrix, SignMatrix, SignMatrix) {
        let take = |idx: &[usize]| SignMatrix::from_rows(idx.iter().map(|&r| m.row(r).to_vec()).collect(), m.ncols());
        (take(&self.p1), take(&self.p2), take(&self.p3))
    }
}

// ---------------------------------------------------------------------------
// Micro protocol
// ---------------------------------------------------------------------------

/// A small honest protocol for micro runs with `k = 1`: Alice sends the signs
/// of her first row, then the rows with the smallest `|⟨a, v⟩|`; Bob outputs
/// the normalized part of `v` orthogonal to every row he has seen (`e₁` when
/// nothing is left).
///
/// `v` is nudged by `jitter` times a fixed irrational direction first, so the
/// outputs avoid accidental orthogonality to sign rows Bob never saw.
#[derive(Clone, Debug)]
pub struct MicroProtocol {
    pub d: usize,
    pub n_rows: usize,
    pub jitter: f64,
}

impl MicroProtocol {
    pub fn new(d: usize, n_rows: usize) -> Self {
        MicroProtocol { d, n_rows, jitter: 0.1 }
    }

    fn offset(&self) -> Vec<f64> {
        (0..self.d).map(|c| ((c as f64 + 2.0).sqrt().fract() - 0.5) * self.jitter).collect()
    }
}

impl MicroProtocol {
    pub fn decode_message(&self, m: &Message) -> Vec<i8> {
        (0..self.d).map(|c| if m.bit(c) { -1 } else { 1 }).collect()
    }
}

impl<T: Scalar> Protocol<T> for MicroProtocol {
    fn alice_round1(&self, a: &SignMatrix) -> Message {
        MemoryState::from_bits(&a.row(0).iter().map(|&s| s < 0).collect::<Vec<_>>())
    }

    fn alice_round3(&self, a: &SignMatrix, v: &[i8]) -> Vec<Entry> {
        let mut order: Vec<(i64, usize)> = a
            .rows()
            .enumerate()
            .map(|(j, r)| (r.iter().zip(v).map(|(&x, &y)| i64::from(x) * i64::from(y)).sum::<i64>().abs(), j))
            .collect();
        order.sort();
        order.iter().take(self.n_rows).map(|&(_, j)| Some(a.row(j).to_vec())).collect()
    }

    fn bob_output(&self, m: &Message, v: &[i8], rows: &[Entry]) -> Vec<T> {
        let mut basis = OrthoBasis::<T>::new(self.d);
        let first: Vec<T> = self.decode_message(m).iter().map(|&s| T::lit(f64::from(s))).collect();
        basis.push(&first, T::lit(1e-9));
        for r in rows.iter().flatten() {
            let r: Vec<T> = r.iter().map(|&s| T::lit(f64::from(s))).collect();
            basis.push(&r, T::lit(1e-9));
        }
        let target: Vec<T> =
            scaled_signs::<T>(v).iter().zip(self.offset()).map(|(&a, o)| a + T::lit(o)).collect();
        let res = basis.residual(&target);
        let n = norm2(&res);
        if n.as_f64() < 1e-9 {
            let mut e = vec![T::zero(); self.d];
            e[0] = T::one();
            e
        } else {
            res.iter().map(|&c| c / n).collect()
        }
    }
}

// ---------------------------------------------------------------------------
// Micro encoding run
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MicroConfig {
    pub d: usize,
    pub k: usize,
    pub n: usize,
    /// `s_1`; with `H = 1` this is also `s_{≤1}`.
    pub s1: usize,
    pub l_seq: usize,
    pub v_count: usize,
    /// Matrices sampled to collect the messages the protocol actually emits.
    pub a_samples: usize,
    pub xi_prime: f64,
    /// RLI threshold `α₀/4`.
    pub rli_gamma: f64,
    pub seed: u64,
    pub cap: f64,
}

impl Default for MicroConfig {
    fn default() -> Self {
        let d = 6;
        MicroConfig {
            d,
            k: 1,
            n: 1,
            s1: d / 2,
            l_seq: 2,
            v_count: 6,
            a_samples: 12,
            xi_prime: 1e-6,
            rli_gamma: (d as f64).powf(alpha_exponent(0)) / 4.0,
            seed: 0,
            cap: 1e7,
        }
    }
}

impl MicroConfig {
    pub fn validate(&self) -> Result<(), EncodingError> {
        let bad = |m: &str| Err(EncodingError::BadConfig(m.into()));
        if self.d < 4 || self.d > 8 || self.d % 2 != 0 {
            return bad("d must be 4, 6 or 8");
        }
        if self.k != 1 {
            return bad("micro runs use k = 1");
        }
        if self.n == 0 {
            return bad("n must be at least 1");
        }
        if self.s1 == 0 || self.s1 > self.d / 2 {
            return bad("s1 must lie in [1, d/2]");
        }
        if self.l_seq == 0 || self.v_count == 0 || self.a_samples == 0 {
            return bad("l_seq, v_count and a_samples must be positive");
        }
        if !(self.rli_gamma > 0.0 && self.rli_gamma <= 1.0) {
            return bad("rli_gamma must lie in (0, 1]");
        }
        Ok(())
    }

    /// `log₂ Γ_1 = s_1·d − 2kd`.
    pub fn gamma_log2(&self) -> i64 {
        (self.s1 * self.d) as i64 - (2 * self.k * self.d) as i64
    }
}

/// One `(M, P, A_{1,1})` visit of the level loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetRecord {
    pub level: usize,
    pub message: usize,
    pub partition: usize,
    /// Row-major sign bits of `A_{1,1}`.
    pub a1_bits: String,
    pub orthogonal_entries: usize,
    pub rli_sequences: usize,
    /// `|𝒮|`.
    pub s_count: u128,
    pub s_log2: f64,
    pub gamma_log2: i64,
    pub pass: bool,
    /// `log₂|𝒥| = log₂|𝒮| + d·s_{≤0}`.
    pub j_log2: f64,
}

/// A threshold-passing, nonempty `𝒥` with its explicit members of `𝒮`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmittedSet {
    pub message: usize,
    pub partition: usize,
    pub a1: Vec<Vec<i8>>,
    /// Each member is an `s_1`-tuple of sign-row numbers.
    pub s_members: Vec<Vec<u64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodingReport {
    pub config: MicroConfig,
    pub levels: usize,
    pub messages: Vec<String>,
    pub partitions: usize,
    pub a1_per_partition: u64,
    pub tables_built: usize,
    pub table_entries: usize,
    pub table_bound_equal: usize,
    pub rli_sequences: usize,
    pub threshold_pass: usize,
    pub threshold_fail: usize,
    pub emitted_sets: usize,
    /// Distinct matrices placed in `𝒜_1`.
    pub a_size: usize,
    /// Members re-checked by the independent pass, and how many failed.
    pub recheck_members: usize,
    pub recheck_failures: usize,
    /// Emitted sets whose `|𝒥|` exceeds `Γ_1·2^{d·s_{≤0}}`.
    pub counting_violations: usize,
    pub records: Vec<SetRecord>,
}

fn is_unit<T: Scalar>(x: &[T]) -> bool {
    (norm2(x).as_f64() - 1.0).abs() <= 1e-9
}

/// All ordered, repetition-free `len`-tuples over `pool` (lexicographic in
/// positions) that form a `gamma`-RLI sequence.
fn rli_tuples<T: Scalar>(xs: &[&Vec<T>], len: usize, gamma: f64) -> Vec<Vec<usize>> {
    fn go<T: Scalar>(
        xs: &[&Vec<T>],
        len: usize,
        gamma: f64,
        prefix: &mut Vec<usize>,
        basis: &OrthoBasis<T>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if prefix.len() == len {
            out.push(prefix.clone());
            return;
        }
        for i in 0..xs.len() {
            if prefix.contains(&i) {
                continue;
            }
            if norm2(&basis.residual(xs[i])).as_f64() >= gamma {
                let mut next = basis.clone();
                next.push(xs[i], T::zero());
                prefix.push(i);
                go(xs, len, gamma, prefix, &next, out);
                prefix.pop();
            }
        }
    }
    let mut out = Vec::new();
    let d = xs.first().map_or(0, |x| x.len());
    go(xs, len, gamma, &mut Vec::new(), &OrthoBasis::new(d), &mut out);
    out
}

/// Members of `∪_seq R_seq^{s}` given each sequence's admissible rows, as
/// sorted `s`-tuples of row numbers.
fn union_of_products(masks: &[Vec<u64>], s: usize, d: usize, cap: f64) -> Result<Vec<Vec<u64>>, EncodingError> {
    // per row, the set of masks containing it
    let words = masks.len().div_ceil(64).max(1);
    let mut member = vec![vec![0u64; words]; 1 << d];
    for (mi, rows) in masks.iter().enumerate() {
        for &r in rows {
            member[r as usize][mi / 64] |= 1 << (mi % 64);
        }
    }
    let live: Vec<u64> = (0..1u64 << d).filter(|&r| member[r as usize].iter().any(|&w| w != 0)).collect();
    cap_check("S union", (live.len() as f64).powi(s as i32), cap)?;
    let mut out = Vec::new();
    fn go(live: &[u64], member: &[Vec<u64>], s: usize, acc: Vec<u64>, tuple: &mut Vec<u64>, out: &mut Vec<Vec<u64>>) {
        if tuple.len() == s {
            out.push(tuple.clone());
            return;
        }
        for &r in live {
            let next: Vec<u64> = acc.iter().zip(&member[r as usize]).map(|(a, b)| a & b).collect();
            if next.iter().any(|&w| w != 0) {
                tuple.push(r);
                go(live, member, s, next, tuple, out);
                tuple.pop();
            }
        }
    }
    go(&live, &member, s, vec![u64::MAX; words], &mut Vec::new(), &mut out);
    Ok(out)
}

fn bits_string(m: &SignMatrix) -> String {
    m.bits().map(|b| if b { '1' } else { '0' }).collect()
}

fn message_string(m: &Message) -> String {
    m.bits().map(|b| if b { '1' } else { '0' }).collect()
}

/// The public vectors `V` of a micro run.
pub fn micro_vectors(cfg: &MicroConfig) -> Vec<Vec<i8>> {
    let mut rng = Rng::seed_from_u64(sub_seed(cfg.seed, 1));
    (0..cfg.v_count).map(|_| SignMatrix::random(1, cfg.d, &mut rng).row(0).to_vec()).collect()
}

/// The level-1 loop at micro scale: messages come from the protocol on sampled
/// matrices, partitions and `A_{1,1}` are enumerated exhaustively, RLI
/// sequences are scanned in lexicographic index order.
pub fn encode_micro<P: Protocol<f64> + ?Sized>(proto: &P, cfg: &MicroConfig) -> Result<EncodingReport, EncodingError> {
    cfg.validate()?;
    let d = cfg.d;
    let half = d / 2;
    let mut rng = Rng::seed_from_u64(sub_seed(cfg.seed, 0));
    let mut msgs = BTreeSet::new();
    let mut messages = Vec::new();
    for _ in 0..cfg.a_samples {
        let a = SignMatrix::random(half, d, &mut rng);
        let m = proto.alice_round1(&a);
        if m.len_bits() != cfg.k * d {
            return Err(EncodingError::BadConfig(format!("protocol message has {} bits, want kd = {}", m.len_bits(), cfg.k * d)));
        }
        if msgs.insert(message_string(&m)) {
            messages.push(m);
        }
    }
    messages.sort_by_key(message_string);
    let vs = micro_vectors(cfg);

    let a1_rows = half - cfg.s1;
    let parts = partitions(half, cfg.s1, 0);
    cap_check("A_{h,1}", 2f64.powi((a1_rows * d) as i32), cfg.cap)?;
    cap_check(
        "level loop",
        messages.len() as f64 * parts.len() as f64 * 2f64.powi((a1_rows * d) as i32),
        cfg.cap,
    )?;
    let a1_count = 1u64 << (a1_rows * d);
    let gamma_log2 = cfg.gamma_log2();

    let mut report = EncodingReport {
        config: cfg.clone(),
        levels: 1,
        messages: messages.iter().map(message_string).collect(),
        partitions: parts.len(),
        a1_per_partition: a1_count,
        tables_built: 0,
        table_entries: 0,
        table_bound_equal: 0,
        rli_sequences: 0,
        threshold_pass: 0,
        threshold_fail: 0,
        emitted_sets: 0,
        a_size: 0,
        recheck_members: 0,
        recheck_failures: 0,
        counting_violations: 0,
        records: Vec::new(),
    };
    let mut emitted = Vec::new();
    let mut a_set: HashSet<Vec<bool>> = HashSet::new();

    for (mi, m) in messages.iter().enumerate() {
        for (pi, part) in parts.iter().enumerate() {
            for a1_code in 0..a1_count {
                let bits: Vec<bool> = (0..a1_rows * d).map(|b| a1_code >> b & 1 == 1).collect();
                let a1 = SignMatrix::from_bits(a1_rows, d, bits);
                let table = build_table::<f64, _>(proto, m, &a1, &vs, cfg.n, cfg.cap)?;
                report.tables_built += 1;
                report.table_entries += table.entries.len();
                let bound = vs.len() * (a1_rows + 1).pow(cfg.n as u32);
                let distinct: HashSet<Vec<u64>> =
                    table.entries.iter().map(|e| e.x.iter().map(|c| c.to_bits()).collect()).collect();
                if distinct.len() == bound {
                    report.table_bound_equal += 1;
                }
                let orth = orthogonal_entries(&table, &a1, cfg.xi_prime);
                let pool: Vec<&Vec<f64>> =
                    orth.iter().map(|&i| &table.entries[i].x).filter(|x| is_unit(x)).collect();
                let seqs = rli_tuples(&pool, cfg.l_seq, cfg.rli_gamma);
                report.rli_sequences += seqs.len();
                let masks: Vec<Vec<u64>> = {
                    let mut set = BTreeSet::new();
                    for sq in &seqs {
                        let xs: Vec<Vec<f64>> = sq.iter().map(|&i| pool[i].clone()).collect();
                        set.insert(orthogonal_rows(&xs, d, cfg.xi_prime));
                    }
                    set.into_iter().collect()
                };
                let s_members = union_of_products(&masks, cfg.s1, d, cfg.cap)?;
                let s_count = s_members.len() as u128;
                let s_log2 = (s_count as f64).log2();
                let pass = s_count == 0 || s_log2 <= gamma_log2 as f64;
                let j_log2 = s_log2;
                report.records.push(SetRecord {
                    level: 1,
                    message: mi,
                    partition: pi,
                    a1_bits: bits_string(&a1),
                    orthogonal_entries: orth.len(),
                    rli_sequences: seqs.len(),
                    s_count,
                    s_log2,
                    gamma_log2,
                    pass,
                    j_log2,
                });
                if pass {
                    report.threshold_pass += 1;
                } else {
                    report.threshold_fail += 1;
                }
                if pass && s_count > 0 {
                    if j_log2 > gamma_log2 as f64 {
                        report.counting_violations += 1;
                    }
                    let a3 = SignMatrix::empty(d);
                    for t in &s_members {
                        let a2 = SignMatrix::from_rows(t.iter().map(|&r| sign_row(d, r)).collect(), d);
                        a_set.insert(part.assemble(&a1, &a2, &a3).bits().collect());
                    }
                    emitted.push(EmittedSet {
                        message: mi,
                        partition: pi,
                        a1: a1.rows().map(|r| r.to_vec()).collect(),
                        s_members,
                    });
                }
            }
        }
    }
    report.emitted_sets = emitted.len();
    report.a_size = a_set.len();

    for set in &emitted {
        let part = &parts[set.partition];
        let a1 = SignMatrix::from_rows(set.a1.clone(), d);
        let check = MembershipCheck::new(proto, &messages[set.message], &a1, &vs, cfg);
        for t in &set.s_members {
            report.recheck_members += 1;
            let a2 = SignMatrix::from_rows(t.iter().map(|&r| sign_row(d, r)).collect(), d);
            let whole = part.assemble(&a1, &a2, &SignMatrix::empty(d));
            let (b1, b2, b3) = part.split(&whole);
            let ok = b1 == a1 && b2 == a2 && b3.nrows() == 0 && check.admits(&b2);
            if !ok {
                report.recheck_failures += 1;
            }
        }
    }
    Ok(report)
}

/// Independent membership test for `𝒮_{M,P,A₁}`: rebuilds the table directly,
/// measures residuals with normal equations, and checks a candidate block
/// against every RLI sequence.
pub struct MembershipCheck {
    seqs: Vec<Vec<Vec<f64>>>,
    xi_prime: f64,
}

/// `‖x − proj_{span(ys)} x‖` via the Gram system `G c = Yᵀx`.
fn residual_norm_normal_eq(ys: &[Vec<f64>], x: &[f64]) -> f64 {
    let k = ys.len();
    if k == 0 {
        return norm2(x);
    }
    let mut g: Vec<Vec<f64>> = (0..k).map(|i| (0..k).map(|j| dot(&ys[i], &ys[j])).collect()).collect();
    let mut rhs: Vec<f64> = ys.iter().map(|y| dot(y, x)).collect();
    // Gaussian elimination with partial pivoting
    for col in 0..k {
        let piv = (col..k).max_by(|&a, &b| g[a][col].abs().total_cmp(&g[b][col].abs())).unwrap();
        g.swap(col, piv);
        rhs.swap(col, piv);
        if g[col][col].abs() < 1e-300 {
            continue;
        }
        for r in col + 1..k {
            let f = g[r][col] / g[col][col];
            for c in col..k {
                g[r][c] -= f * g[col][c];
            }
            rhs[r] -= f * rhs[col];
        }
    }
    let mut c = vec![0.0; k];
    for i in (0..k).rev() {
        let s: f64 = (i + 1..k).map(|j| g[i][j] * c[j]).sum();
        c[i] = if g[i][i].abs() < 1e-300 { 0.0 } else { (rhs[i] - s) / g[i][i] };
    }
    let mut r = x.to_vec();
    for (ci, y) in c.iter().zip(ys) {
        for (rv, yv) in r.iter_mut().zip(y) {
            *rv -= ci * yv;
        }
    }
    norm2(&r)
}

impl MembershipCheck {
    pub fn new<P: Protocol<f64> + ?Sized>(proto: &P, m: &Message, a1: &SignMatrix, vs: &[Vec<i8>], cfg: &MicroConfig) -> Self {
        let mut outs: Vec<Vec<f64>> = Vec::new();
        let rows: Vec<Entry> = std::iter::once(None).chain(a1.rows().map(|r| Some(r.to_vec()))).collect();
        let mut tuple = vec![0usize; cfg.n];
        for v in vs {
            tuple.iter_mut().for_each(|t| *t = 0);
            'tuples: loop {
                let payload: Vec<Entry> = tuple.iter().map(|&c| rows[c].clone()).collect();
                let x = proto.bob_output(m, v, &payload);
                let orth = a1.rows().all(|r| sign_dot(r, &x).abs() <= cfg.xi_prime);
                if orth && (norm2(&x) - 1.0).abs() <= 1e-9 {
                    outs.push(x);
                }
                for pos in (0..cfg.n).rev() {
                    tuple[pos] += 1;
                    if tuple[pos] < rows.len() {
                        continue 'tuples;
                    }
                    tuple[pos] = 0;
                }
                break;
            }
        }
        let mut seqs = Vec::new();
        let mut idx = vec![0usize; cfg.l_seq];
        let total = outs.len().pow(cfg.l_seq as u32);
        for code in 0..total {
            let mut c = code;
            for slot in idx.iter_mut().rev() {
                *slot = c % outs.len();
                c /= outs.len();
            }
            let distinct = idx.iter().collect::<HashSet<_>>().len() == idx.len();
            if !distinct {
                continue;
            }
            let ys: Vec<Vec<f64>> = idx.iter().map(|&i| outs[i].clone()).collect();
            let rli = (0..ys.len()).all(|j| residual_norm_normal_eq(&ys[..j], &ys[j]) >= cfg.rli_gamma);
            if rli {
                seqs.push(ys);
            }
        }
        MembershipCheck { seqs, xi_prime: cfg.xi_prime }
    }

    pub fn sequences(&self) -> usize {
        self.seqs.len()
    }

    pub fn admits(&self, a2: &SignMatrix) -> bool {
        self.seqs.iter().any(|ys| a2.rows().all(|r| ys.iter().all(|y| sign_dot(r, y).abs() <= self.xi_prime)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_exponents() {
        assert_eq!(alpha_exponent(0), -8.0);
        assert_eq!(alpha_exponent(1), -64.0);
        assert_eq!(alpha_exponent(2), -512.0);
    }

    #[test]
    fn delta_and_degenerate_schedule() {
        assert_eq!(delta_cap(1024, 32), 32.0);
        assert!(matches!(level_schedule(1024, 2000.0, 4, 32, 2.0), Err(EncodingError::DegenerateSchedule(_))));
    }

    #[test]
    fn schedule_top_level_is_tenth_of_d() {
        // natural log keeps log⁵d small enough for a genuine multi-level schedule
        let d = 1usize << 40;
        let s = level_schedule(d, 4000.0, 1, 4, std::f64::consts::E).unwrap();
        assert_eq!(*s.s_real.last().unwrap(), d as f64 / 10.0);
        assert!(s.levels >= 1);
        for h in 1..s.levels {
            assert!(s.s_real[h] > s.s_real[h - 1]);
        }
        assert_eq!(s.s_leq[0], 0);
        assert_eq!(s.alpha_exp[1], s.alpha_exp[0] * 8.0);
    }

    #[test]
    fn partitions_round_trip() {
        let ps = partitions(3, 2, 0);
        assert_eq!(ps.len(), 3);
        let a1 = SignMatrix::from_rows(vec![vec![1, -1, 1, 1]], 4);
        let a2 = SignMatrix::from_rows(vec![vec![-1, -1, 1, 1], vec![1, 1, 1, -1]], 4);
        for p in &ps {
            let m = p.assemble(&a1, &a2, &SignMatrix::empty(4));
            assert_eq!(p.split(&m), (a1.clone(), a2.clone(), SignMatrix::empty(4)));
        }
        assert_eq!(partitions(4, 1, 2).len(), 4 * 3);
    }

    #[test]
    fn block_count_simple_cases() {
        let e1 = vec![vec![1.0f64, 0.0, 0.0, 0.0]];
        let c = orth_block_count(&e1, 1, 4, 0.5, CountMode::Exact { cap: 1e6 }).unwrap();
        assert_eq!(c.exact, Some(0));
        let none: Vec<Vec<f64>> = Vec::new();
        let c = orth_block_count(&none, 2, 4, 0.5, CountMode::Exact { cap: 1e6 }).unwrap();
        assert_eq!(c.exact, Some(256));
        assert!(orth_block_count(&none, 3, 10, 0.5, CountMode::Exact { cap: 1e6 }).is_err());
    }

    #[test]
    fn table_shapes() {
        let proto = MicroProtocol::new(4, 1);
        let m = MemoryState::zeros(4);
        let vs = vec![vec![1, 1, -1, 1], vec![1, -1, -1, 1]];
        let t = build_table::<f64, _>(&proto, &m, &SignMatrix::empty(4), &vs, 1, TABLE_CAP).unwrap();
        assert_eq!(t.entries.len(), 2);
        assert!(t.entries.iter().all(|e| e.rows == vec![None]));
        let b = SignMatrix::from_rows(vec![vec![1, -1, 1, -1]], 4);
        let t = build_table::<f64, _>(&proto, &m, &b, &vs, 1, TABLE_CAP).unwrap();
        assert_eq!(t.entries.len(), 4);
        let t = build_table::<f64, _>(&proto, &m, &b, &vs[..1], 3, TABLE_CAP).unwrap();
        assert_eq!(t.entries.len(), 8);
        assert!(build_table::<f64, _>(&proto, &m, &b, &vs, 30, 1e6).is_err());
    }

    #[test]
    fn normal_equation_residual_agrees_with_gram_schmidt() {
        let ys = vec![vec![1.0, 0.0, 0.0], vec![1.0, 1.0, 0.0]];
        let x = [0.3, 0.4, 0.5];
        assert!((residual_norm_normal_eq(&ys, &x) - 0.5).abs() < 1e-12);
    }
}
