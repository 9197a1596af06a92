//! Exact first-order oracle for the hard family and an independent probe-based
//! subgradient checker.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::instance::{HardInstance, InstanceError, InstanceRef, Term};
use crate::linalg::{dot, norm2, scale, sub};
use crate::rng::rng_from_seed;
use crate::scalar::Scalar;

/// Where a subgradient came from. Indices are 0-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Row { row: usize, sign: i8 },
    Nem { index: usize },
    /// Answers from oracles outside the hard family (test functions).
    Other,
}

impl Provenance {
    pub fn is_row(&self) -> bool {
        matches!(self, Provenance::Row { .. })
    }
}

impl From<Term> for Provenance {
    fn from(t: Term) -> Self {
        match t {
            Term::Row { row, sign } => Provenance::Row { row, sign },
            Term::Nem { index } => Provenance::Nem { index },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleAnswer<T> {
    pub value: T,
    pub subgradient: Vec<T>,
    pub provenance: Provenance,
}

/// Anything an algorithm can query: value plus one subgradient.
pub trait FirstOrderOracle<T: Scalar>: Sync {
    fn dim(&self) -> usize;
    fn answer(&self, x: &[T]) -> Result<OracleAnswer<T>, InstanceError>;

    fn instance_ref(&self) -> Option<InstanceRef> {
        None
    }
}

/// The oracle of the hard family.
///
/// Row answers return `±aⱼ/√d` with the smallest maximizing `j` and the sign of
/// `⟨aⱼ, x⟩` (`+` at zero); otherwise `vᵢ/(√d L)` with the smallest maximizing `i`.
/// Ties between a row term and a Nemirovski term go to the row.
pub fn first_order<T: Scalar>(inst: &HardInstance<T>, x: &[T]) -> Result<OracleAnswer<T>, InstanceError> {
    inst.check(x)?;
    let (inner, term) = inst.inner_max(x);
    let value = inner * inst.outer_scale();
    let d = inst.dim();
    let subgradient = match term {
        Term::Row { row, sign } => {
            let c = T::lit(f64::from(sign)) / T::lit(d as f64).sqrt();
            inst.a_matrix().row(row).iter().map(|&s| T::from_i8(s).unwrap() * c).collect()
        }
        Term::Nem { index } => {
            let mut g = inst.nemirovski_vectors()[index].clone();
            scale(inst.outer_scale(), &mut g);
            g
        }
    };
    Ok(OracleAnswer { value, subgradient, provenance: term.into() })
}

impl<T: Scalar> FirstOrderOracle<T> for HardInstance<T> {
    fn dim(&self) -> usize {
        HardInstance::dim(self)
    }

    fn answer(&self, x: &[T]) -> Result<OracleAnswer<T>, InstanceError> {
        first_order(self, x)
    }

    fn instance_ref(&self) -> Option<InstanceRef> {
        Some(HardInstance::instance_ref(self))
    }
}

/// Outcome of [`verify_subgradient`].
#[derive(Clone, Debug, PartialEq)]
pub struct SubgradientReport {
    pub probes: usize,
    pub violations: usize,
    /// Largest `F(x) + ⟨g, y − x⟩ − F(y)` seen; `-inf` when no probe ran.
    pub worst_gap: f64,
}

pub const SUBGRADIENT_TOL: f64 = 1e-9;

/// Uniform point of the unit ball.
pub fn random_ball_point<T: Scalar, R: Rng>(d: usize, rng: &mut R) -> Vec<T> {
    let mut g: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let r: f64 = rng.random::<f64>().powf(1.0 / d as f64);
    for v in g.iter_mut() {
        *v *= r / n;
    }
    g.into_iter().map(T::lit).collect()
}

/// Samples `probes` points of the ball and counts violations of
/// `F(y) ≥ F(x) + ⟨g, y − x⟩ − 1e-9`.
pub fn verify_subgradient<T: Scalar, O: FirstOrderOracle<T> + ?Sized>(
    oracle: &O,
    x: &[T],
    ans: &OracleAnswer<T>,
    probes: usize,
    seed: u64,
) -> Result<SubgradientReport, InstanceError> {
    let mut rng = rng_from_seed(seed);
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..probes {
        let y: Vec<T> = random_ball_point(x.len(), &mut rng);
        let fy = oracle.answer(&y)?.value;
        let lin = ans.value + dot(&ans.subgradient, &sub(&y, x));
        let gap = (lin - fy).as_f64();
        worst = worst.max(gap);
        if gap > SUBGRADIENT_TOL {
            violations += 1;
        }
    }
    Ok(SubgradientReport { probes, violations, worst_gap: worst })
}

/// `‖g‖₂` bound every answer of the hard family satisfies.
pub fn subgradient_norm_ok<T: Scalar>(ans: &OracleAnswer<T>) -> bool {
    norm2(&ans.subgradient) <= T::one() + T::ball_tolerance()
}
