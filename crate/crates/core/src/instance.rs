//! The hard function family
//!
//! ```text
//! F(x) = 1/(√d·L) · max{ L‖Ax‖∞ − 1, maxᵢ (⟨vᵢ, x⟩ − i·γ) }
//! ```
//!
//! with `A ∈ {−1,1}^{(d/2)×d}` and `vᵢ ∈ (1/√d)·{−1,1}^d`, together with
//! its parameter schedule, sampling and on-disk formats.

use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::linalg::{dot, norm2, random_bits, sign_dot, SignMatrix};
use crate::rng::rng_from_seed;
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum InstanceError {
    #[error("dimension {0} must be even and at least 4")]
    NonEvenDimension(usize),
    #[error("tradeoff exponent {0} must lie in (0, 1)")]
    DeltaOutOfRange(f64),
    #[error("override violates invariant: {0}")]
    OverrideViolatesInvariant(String),
    #[error("scaling factor L = {0} is not a finite number; use the desk-scale profile to simulate")]
    NonFiniteScale(f64),
    #[error("query norm {norm} exceeds the unit ball")]
    NormTooLarge { norm: f64 },
    #[error("query has dimension {got}, instance has {want}")]
    DimensionMismatch { got: usize, want: usize },
    #[error("malformed instance file: {0}")]
    Format(String),
}

/// DeskScale default for the Nemirovski step γ.
pub const DESK_GAMMA: f64 = 0.6;
/// DeskScale default for the number of Nemirovski terms N.
pub const DESK_TERMS: usize = 2;

/// Full parameter pack of one hard function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub d: usize,
    pub delta: f64,
    pub gamma: f64,
    pub n_terms: usize,
    /// The scaling factor `L` inside `F`; may be `inf` under the asymptotic profile.
    pub l_scale: f64,
    /// `ln L`, kept separately because `L` overflows at asymptotic scale.
    pub ln_l_scale: f64,
    pub s_corr: f64,
    pub k_msg: usize,
    pub n_rows: usize,
    pub xi: f64,
    pub xi_prime: f64,
    pub eps: f64,
    pub log_base: f64,
}

impl Params {
    pub fn log(&self, x: f64) -> f64 {
        x.ln() / self.log_base.ln()
    }

    /// `log d` in the configured base.
    pub fn log_d(&self) -> f64 {
        self.log(self.d as f64)
    }

    pub fn rows(&self) -> usize {
        self.d / 2
    }

    /// Checks the invariants that make `F` simulable.
    pub fn validate(&self) -> Result<(), InstanceError> {
        check_dim(self.d)?;
        check_delta(self.delta)?;
        let bad = |m: &str| Err(InstanceError::OverrideViolatesInvariant(m.to_string()));
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return bad("gamma must be positive");
        }
        if self.n_terms < 2 {
            return bad("n_terms must be at least 2");
        }
        if !(self.l_scale >= 1.0) {
            return bad("l_scale must be at least 1");
        }
        if !(self.log_base > 1.0) {
            return bad("log_base must exceed 1");
        }
        if self.k_msg == 0 || self.n_rows == 0 || !(self.s_corr > 0.0) {
            return bad("k_msg, n_rows and s_corr must be positive");
        }
        if !self.l_scale.is_finite() {
            return Err(InstanceError::NonFiniteScale(self.l_scale));
        }
        Ok(())
    }
}

/// Optional replacements applied by the desk-scale profile.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeskOverrides {
    pub l_scale: Option<f64>,
    pub gamma: Option<f64>,
    pub n_terms: Option<usize>,
    pub s_corr: Option<f64>,
    pub k_msg: Option<usize>,
    pub n_rows: Option<usize>,
    pub log_base: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Profile {
    /// Asymptotic formulas evaluated verbatim.
    Asymptotic { log_base: f64 },
    /// Finite `L` (default `d³`) and parameters that are meaningful at small `d`.
    DeskScale(DeskOverrides),
}

impl Profile {
    pub fn desk() -> Self {
        Profile::DeskScale(DeskOverrides::default())
    }
}

fn check_dim(d: usize) -> Result<(), InstanceError> {
    if d < 4 || d % 2 != 0 {
        Err(InstanceError::NonEvenDimension(d))
    } else {
        Ok(())
    }
}

fn check_delta(delta: f64) -> Result<(), InstanceError> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(InstanceError::DeltaOutOfRange(delta))
    }
}

fn round_at_least(x: f64, floor: usize) -> usize {
    if x.is_finite() && x > floor as f64 {
        x.round() as usize
    } else {
        floor
    }
}

/// Builds the parameter pack for dimension `d` and tradeoff exponent `delta`.
pub fn derive_params(d: usize, delta: f64, profile: &Profile) -> Result<Params, InstanceError> {
    check_dim(d)?;
    check_delta(delta)?;
    let df = d as f64;
    match profile {
        Profile::Asymptotic { log_base } => {
            if !(*log_base > 1.0) {
                return Err(InstanceError::OverrideViolatesInvariant(
                    "log_base must exceed 1".into(),
                ));
            }
            let lg = df.ln() / log_base.ln();
            let gamma = lg.powi(2) / df.powf(delta / 4.0);
            let n_terms = round_at_least(df.powf(delta / 6.0) / lg.powi(4), 2);
            let ln_l = lg.powi(5);
            let l_scale = ln_l.exp();
            let memory = df.powf(2.0 - delta);
            let queries = df.powf(1.0 + delta / 6.0);
            let xi = 2.0 * (-ln_l).exp();
            Ok(Params {
                d,
                delta,
                gamma,
                n_terms,
                l_scale,
                ln_l_scale: ln_l,
                s_corr: df.powf(1.0 - delta / 2.0) * lg.powi(2),
                k_msg: round_at_least(memory / df, 1),
                n_rows: round_at_least(40.0 * queries / n_terms as f64, 1),
                xi,
                xi_prime: df.sqrt() * xi,
                eps: (-ln_l).exp() / (df * df),
                log_base: *log_base,
            })
        }
        Profile::DeskScale(o) => {
            let log_base = o.log_base.unwrap_or(2.0);
            let l_scale = o.l_scale.unwrap_or(df.powi(3));
            let gamma = o.gamma.unwrap_or(DESK_GAMMA);
            let n_terms = o.n_terms.unwrap_or(DESK_TERMS);
            let queries = df.powf(1.0 + delta / 6.0);
            let p = Params {
                d,
                delta,
                gamma,
                n_terms,
                l_scale,
                ln_l_scale: l_scale.ln(),
                s_corr: o.s_corr.unwrap_or(df * (gamma / 4.0).powi(2)),
                k_msg: o.k_msg.unwrap_or_else(|| round_at_least(df.powf(1.0 - delta), 1)),
                n_rows: o
                    .n_rows
                    .unwrap_or_else(|| round_at_least(40.0 * queries / n_terms.max(1) as f64, 1)),
                xi: 2.0 / l_scale,
                xi_prime: df.sqrt() * 2.0 / l_scale,
                eps: 1.0 / (df * df * l_scale),
                log_base,
            };
            p.validate().map_err(|e| match e {
                InstanceError::NonFiniteScale(_) => {
                    InstanceError::OverrideViolatesInvariant("l_scale must be finite".into())
                }
                other => other,
            })?;
            Ok(p)
        }
    }
}

/// Which piece of the max achieves `F(x)`. Indices are 0-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Term {
    /// `sign·L⟨aⱼ, x⟩ − 1`, `sign ∈ {+1, −1}`.
    Row { row: usize, sign: i8 },
    /// `⟨vᵢ, x⟩ − (i+1)·γ`.
    Nem { index: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult<T> {
    pub value: T,
    pub achieving_term: Term,
    /// Every signed row term (`+` then `−` per row) followed by the Nemirovski terms,
    /// all before the outer scaling.
    pub raw_terms: Option<Vec<T>>,
}

/// Identifies the instance a transcript was produced against.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceRef {
    pub seed: u64,
    pub fingerprint: u64,
    pub params: Params,
}

/// A sampled member of the family.
#[derive(Clone, Debug, PartialEq)]
pub struct HardInstance<T> {
    params: Params,
    a: SignMatrix,
    nem_signs: SignMatrix,
    nem: Vec<Vec<T>>,
    seed: u64,
}

impl<T: Scalar> HardInstance<T> {
    /// Draws `A` (row-major) and then `v₁..v_N` from the stream keyed by `seed`.
    pub fn sample(params: &Params, seed: u64) -> Result<Self, InstanceError> {
        params.validate()?;
        let mut rng = rng_from_seed(seed);
        let a = SignMatrix::random(params.rows(), params.d, &mut rng);
        let nem_signs = SignMatrix::random(params.n_terms, params.d, &mut rng);
        Ok(Self::from_parts(params.clone(), a, nem_signs, seed))
    }

    pub fn from_parts(params: Params, a: SignMatrix, nem_signs: SignMatrix, seed: u64) -> Self {
        assert_eq!(a.nrows(), params.rows());
        assert_eq!(a.ncols(), params.d);
        assert_eq!(nem_signs.nrows(), params.n_terms);
        assert_eq!(nem_signs.ncols(), params.d);
        let s = T::one() / T::lit(params.d as f64).sqrt();
        let nem = (0..nem_signs.nrows())
            .map(|i| nem_signs.row_as::<T>(i).into_iter().map(|c| c * s).collect())
            .collect();
        HardInstance { params, a, nem_signs, nem, seed }
    }

    /// Same `A` with the `index`-th Nemirovski vector replaced by `signs/√d`.
    pub fn with_nemirovski_replaced(&self, index: usize, signs: &[i8]) -> Self {
        let mut ns = self.nem_signs.clone();
        for (c, &s) in signs.iter().enumerate() {
            ns.set(index, c, s);
        }
        Self::from_parts(self.params.clone(), self.a.clone(), ns, self.seed)
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.params.d
    }

    pub fn a_matrix(&self) -> &SignMatrix {
        &self.a
    }

    pub fn nemirovski_signs(&self) -> &SignMatrix {
        &self.nem_signs
    }

    pub fn nemirovski_vectors(&self) -> &[Vec<T>] {
        &self.nem
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Content hash over params, `A` and the Nemirovski signs.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.params).expect("params serialize"));
        h.update(pack_bits(self.a.bits()));
        h.update(pack_bits(self.nem_signs.bits()));
        let out = h.finalize();
        u64::from_le_bytes(out[..8].try_into().unwrap())
    }

    pub fn instance_ref(&self) -> InstanceRef {
        InstanceRef { seed: self.seed, fingerprint: self.fingerprint(), params: self.params.clone() }
    }

    pub fn outer_scale(&self) -> T {
        outer_scale(&self.params)
    }

    fn check_query(&self, x: &[T]) -> Result<(), InstanceError> {
        if x.len() != self.params.d {
            return Err(InstanceError::DimensionMismatch { got: x.len(), want: self.params.d });
        }
        let n = norm2(x);
        if !(n <= T::one() + T::ball_tolerance()) {
            return Err(InstanceError::NormTooLarge { norm: n.as_f64() });
        }
        Ok(())
    }

    /// The inner maximum (before the `1/(√d L)` factor) and its achieving term.
    ///
    /// Rows take precedence over Nemirovski terms on ties; within each group the
    /// smallest index wins, and a row with `⟨aⱼ, x⟩ = 0` reports sign `+`.
    pub fn inner_max(&self, x: &[T]) -> (T, Term) {
        let l = T::lit(self.params.l_scale);
        let mut row_best = T::neg_infinity();
        let mut row_term = Term::Row { row: 0, sign: 1 };
        for (j, r) in self.a.rows().enumerate() {
            let p = sign_dot(r, x);
            let val = l * p.abs() - T::one();
            if val > row_best {
                row_best = val;
                row_term = Term::Row { row: j, sign: if p < T::zero() { -1 } else { 1 } };
            }
        }
        let (nem_best, nem_term) = self.nemirovski_max(&self.nem, x);
        if row_best >= nem_best {
            (row_best, row_term)
        } else {
            (nem_best, nem_term)
        }
    }

    /// `maxᵢ ⟨vᵢ, x⟩ − (i+1)γ` over an arbitrary list, smallest index on ties.
    pub fn nemirovski_max(&self, vs: &[Vec<T>], x: &[T]) -> (T, Term) {
        nemirovski_max(vs, x, self.params.gamma)
    }

    pub fn eval_f(&self, x: &[T]) -> Result<EvalResult<T>, InstanceError> {
        self.check_query(x)?;
        let (inner, term) = self.inner_max(x);
        Ok(EvalResult { value: inner * self.outer_scale(), achieving_term: term, raw_terms: None })
    }

    /// Like [`eval_f`](Self::eval_f) but keeps every unscaled term.
    pub fn eval_f_with_terms(&self, x: &[T]) -> Result<EvalResult<T>, InstanceError> {
        let mut res = self.eval_f(x)?;
        let l = T::lit(self.params.l_scale);
        let gamma = T::lit(self.params.gamma);
        let mut raw = Vec::with_capacity(2 * self.a.nrows() + self.nem.len());
        for r in self.a.rows() {
            let p = sign_dot(r, x);
            raw.push(l * p - T::one());
            raw.push(-l * p - T::one());
        }
        for (i, v) in self.nem.iter().enumerate() {
            raw.push(dot(v, x) - T::lit((i + 1) as f64) * gamma);
        }
        res.raw_terms = Some(raw);
        Ok(res)
    }

    pub(crate) fn check(&self, x: &[T]) -> Result<(), InstanceError> {
        self.check_query(x)
    }
}

/// `1/(√d L)`.
pub fn outer_scale<T: Scalar>(p: &Params) -> T {
    T::one() / (T::lit(p.d as f64).sqrt() * T::lit(p.l_scale))
}

pub fn nemirovski_max<T: Scalar>(vs: &[Vec<T>], x: &[T], gamma: f64) -> (T, Term) {
    let gamma = T::lit(gamma);
    let mut best = T::neg_infinity();
    let mut idx = 0;
    for (i, v) in vs.iter().enumerate() {
        let val = dot(v, x) - T::lit((i + 1) as f64) * gamma;
        if val > best {
            best = val;
            idx = i;
        }
    }
    (best, Term::Nem { index: idx })
}

pub fn sample_instance<T: Scalar>(params: &Params, seed: u64) -> Result<HardInstance<T>, InstanceError> {
    HardInstance::sample(params, seed)
}

// ---------------------------------------------------------------------------
// Binary container
// ---------------------------------------------------------------------------

pub const MAGIC: &[u8; 5] = b"MTIN1";

fn pack_bits(bits: impl IntoIterator<Item = bool>) -> Vec<u8> {
    let mut out = Vec::new();
    for (i, b) in bits.into_iter().enumerate() {
        if i % 8 == 0 {
            out.push(0);
        }
        if b {
            *out.last_mut().unwrap() |= 1 << (i % 8);
        }
    }
    out
}

fn unpack_bits(bytes: &[u8], n: usize) -> Vec<bool> {
    (0..n).map(|i| (bytes[i / 8] >> (i % 8)) & 1 == 1).collect()
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], InstanceError> {
        if self.pos + n > self.buf.len() {
            return Err(InstanceError::Format("truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u64(&mut self) -> Result<u64, InstanceError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, InstanceError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

impl<T: Scalar> HardInstance<T> {
    /// Layout: `MTIN1`, then little-endian fixed-width params
    /// (`d:u64 delta:f64 gamma:f64 n_terms:u64 l_scale:f64 ln_l_scale:f64
    /// s_corr:f64 k_msg:u64 n_rows:u64 xi:f64 xi_prime:f64 eps:f64
    /// log_base:f64 seed:u64`), then `A` at one bit per entry row-major
    /// (bit set = +1, LSB first, zero-padded to a byte), then the Nemirovski
    /// sign bits in the same packing.
    pub fn to_bytes(&self) -> Vec<u8> {
        let p = &self.params;
        let mut out = MAGIC.to_vec();
        out.extend((p.d as u64).to_le_bytes());
        out.extend(p.delta.to_le_bytes());
        out.extend(p.gamma.to_le_bytes());
        out.extend((p.n_terms as u64).to_le_bytes());
        out.extend(p.l_scale.to_le_bytes());
        out.extend(p.ln_l_scale.to_le_bytes());
        out.extend(p.s_corr.to_le_bytes());
        out.extend((p.k_msg as u64).to_le_bytes());
        out.extend((p.n_rows as u64).to_le_bytes());
        out.extend(p.xi.to_le_bytes());
        out.extend(p.xi_prime.to_le_bytes());
        out.extend(p.eps.to_le_bytes());
        out.extend(p.log_base.to_le_bytes());
        out.extend(self.seed.to_le_bytes());
        out.extend(pack_bits(self.a.bits()));
        out.extend(pack_bits(self.nem_signs.bits()));
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, InstanceError> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(5)? != MAGIC {
            return Err(InstanceError::Format("bad magic".into()));
        }
        let d = r.u64()? as usize;
        let delta = r.f64()?;
        let gamma = r.f64()?;
        let n_terms = r.u64()? as usize;
        let l_scale = r.f64()?;
        let ln_l_scale = r.f64()?;
        let s_corr = r.f64()?;
        let k_msg = r.u64()? as usize;
        let n_rows = r.u64()? as usize;
        let xi = r.f64()?;
        let xi_prime = r.f64()?;
        let eps = r.f64()?;
        let log_base = r.f64()?;
        let seed = r.u64()?;
        let params = Params {
            d,
            delta,
            gamma,
            n_terms,
            l_scale,
            ln_l_scale,
            s_corr,
            k_msg,
            n_rows,
            xi,
            xi_prime,
            eps,
            log_base,
        };
        params.validate()?;
        let a_bits = params.rows() * d;
        let a_bytes = r.take(a_bits.div_ceil(8))?;
        let v_bits = n_terms * d;
        let v_bytes = r.take(v_bits.div_ceil(8))?;
        if r.pos != buf.len() {
            return Err(InstanceError::Format("trailing bytes".into()));
        }
        let a = SignMatrix::from_bits(params.rows(), d, unpack_bits(a_bytes, a_bits));
        let v = SignMatrix::from_bits(n_terms, d, unpack_bits(v_bytes, v_bits));
        Ok(Self::from_parts(params, a, v, seed))
    }

    /// Human-readable export: params, seed, `A` and the Nemirovski signs as ±1 arrays.
    pub fn to_json(&self) -> serde_json::Value {
        let rows = |m: &SignMatrix| -> Vec<Vec<i8>> { m.rows().map(|r| r.to_vec()).collect() };
        serde_json::json!({
            "format": "MTIN1",
            "params": self.params,
            "seed": self.seed,
            "a_matrix": rows(&self.a),
            "nemirovski_signs": rows(&self.nem_signs),
        })
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self, InstanceError> {
        let fmt = |e: serde_json::Error| InstanceError::Format(e.to_string());
        let params: Params = serde_json::from_value(v["params"].clone()).map_err(fmt)?;
        params.validate()?;
        let seed: u64 = serde_json::from_value(v["seed"].clone()).map_err(fmt)?;
        let a: Vec<Vec<i8>> = serde_json::from_value(v["a_matrix"].clone()).map_err(fmt)?;
        let n: Vec<Vec<i8>> = serde_json::from_value(v["nemirovski_signs"].clone()).map_err(fmt)?;
        let ok = |m: &Vec<Vec<i8>>, rows: usize| {
            m.len() == rows && m.iter().all(|r| r.len() == params.d && r.iter().all(|&s| s == 1 || s == -1))
        };
        if !ok(&a, params.rows()) || !ok(&n, params.n_terms) {
            return Err(InstanceError::Format("matrix shape or entries invalid".into()));
        }
        Ok(Self::from_parts(
            params.clone(),
            SignMatrix::from_rows(a, params.d),
            SignMatrix::from_rows(n, params.d),
            seed,
        ))
    }
}

/// Uniform draw from `(1/√d)·{−1,1}^d`, returned as signs.
pub fn random_signs(d: usize, rng: &mut impl RngCore) -> Vec<i8> {
    random_bits(d, rng).into_iter().map(|b| if b { 1 } else { -1 }).collect()
}

pub fn scaled_signs<T: Scalar>(signs: &[i8]) -> Vec<T> {
    let s = T::one() / T::lit(signs.len() as f64).sqrt();
    signs.iter().map(|&c| T::from_i8(c).unwrap() * s).collect()
}
