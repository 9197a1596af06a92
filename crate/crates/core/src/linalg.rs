//! Small dense helpers: slice arithmetic, sign matrices and an incremental
//! Gram–Schmidt basis.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn norm2<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

pub fn norm_inf<T: Scalar>(a: &[T]) -> T {
    a.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
}

/// `y += alpha * x`
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale<T: Scalar>(alpha: T, x: &mut [T]) {
    for xi in x.iter_mut() {
        *xi *= alpha;
    }
}

pub fn sub<T: Scalar>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| x - y).collect()
}

pub fn dist2<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<T>()
        .sqrt()
}

/// Rescales `x` into the closed unit ball (no-op inside).
pub fn project_ball<T: Scalar>(x: &mut [T]) {
    let n = norm2(x);
    if n > T::one() {
        scale(T::one() / n, x);
    }
}

pub fn unit<T: Scalar>(d: usize, i: usize) -> Vec<T> {
    let mut e = vec![T::zero(); d];
    e[i] = T::one();
    e
}

/// `⟨s, x⟩` for a ±1 row `s`.
pub fn sign_dot<T: Scalar>(s: &[i8], x: &[T]) -> T {
    debug_assert_eq!(s.len(), x.len());
    let mut acc = T::zero();
    for (&si, &xi) in s.iter().zip(x) {
        if si > 0 {
            acc += xi;
        } else {
            acc -= xi;
        }
    }
    acc
}

/// A dense matrix with entries in {−1, +1}, stored row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SignMatrix {
    rows: usize,
    cols: usize,
    data: Vec<i8>,
}

impl SignMatrix {
    pub fn from_rows(rows: Vec<Vec<i8>>, cols: usize) -> Self {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "row length mismatch");
            assert!(r.iter().all(|&s| s == 1 || s == -1), "entries must be ±1");
            data.extend(r);
        }
        SignMatrix { rows: n, cols, data }
    }

    /// Builds from row-major bits, `true` meaning +1.
    pub fn from_bits(rows: usize, cols: usize, bits: impl IntoIterator<Item = bool>) -> Self {
        let data: Vec<i8> = bits
            .into_iter()
            .take(rows * cols)
            .map(|b| if b { 1 } else { -1 })
            .collect();
        assert_eq!(data.len(), rows * cols, "not enough bits");
        SignMatrix { rows, cols, data }
    }

    /// Uniform ±1 entries, drawn row-major from 64-bit words.
    pub fn random(rows: usize, cols: usize, rng: &mut impl RngCore) -> Self {
        SignMatrix::from_bits(rows, cols, random_bits(rows * cols, rng))
    }

    pub fn empty(cols: usize) -> Self {
        SignMatrix { rows: 0, cols, data: Vec::new() }
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, j: usize) -> &[i8] {
        &self.data[j * self.cols..(j + 1) * self.cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[i8]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }

    pub fn get(&self, j: usize, c: usize) -> i8 {
        self.data[j * self.cols + c]
    }

    pub fn set(&mut self, j: usize, c: usize, s: i8) {
        assert!(s == 1 || s == -1);
        self.data[j * self.cols + c] = s;
    }

    pub fn bits(&self) -> impl Iterator<Item = bool> + '_ {
        self.data.iter().map(|&s| s > 0)
    }

    pub fn mul_vec<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        self.rows().map(|r| sign_dot(r, x)).collect()
    }

    /// `‖B x‖∞`; zero for a matrix without rows.
    pub fn norm_inf_mul<T: Scalar>(&self, x: &[T]) -> T {
        self.rows()
            .fold(T::zero(), |m, r| m.max(sign_dot(r, x).abs()))
    }

    pub fn contains_row(&self, row: &[i8]) -> bool {
        self.rows().any(|r| r == row)
    }

    pub fn row_as<T: Scalar>(&self, j: usize) -> Vec<T> {
        self.row(j).iter().map(|&s| T::from_i8(s).unwrap()).collect()
    }
}

pub fn random_bits(n: usize, rng: &mut impl RngCore) -> Vec<bool> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let w = rng.next_u64();
        for b in 0..64 {
            if out.len() == n {
                break;
            }
            out.push((w >> b) & 1 == 1);
        }
    }
    out
}

/// Orthonormal basis grown one vector at a time by modified Gram–Schmidt
/// with a second re-orthogonalization pass.
#[derive(Clone, Debug)]
pub struct OrthoBasis<T> {
    dim: usize,
    vectors: Vec<Vec<T>>,
}

impl<T: Scalar> OrthoBasis<T> {
    pub fn new(dim: usize) -> Self {
        OrthoBasis { dim, vectors: Vec::new() }
    }

    pub fn rank(&self) -> usize {
        self.vectors.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vectors(&self) -> &[Vec<T>] {
        &self.vectors
    }

    /// Component of `x` orthogonal to the current span.
    pub fn residual(&self, x: &[T]) -> Vec<T> {
        let mut r = x.to_vec();
        for _ in 0..2 {
            for q in &self.vectors {
                let c = dot(q, &r);
                axpy(-c, q, &mut r);
            }
        }
        r
    }

    /// Orthogonal projection of `x` onto the current span.
    pub fn project(&self, x: &[T]) -> Vec<T> {
        sub(x, &self.residual(x))
    }

    /// Appends the normalized residual of `x` when its norm exceeds `tol`;
    /// returns the residual norm either way.
    pub fn push(&mut self, x: &[T], tol: T) -> (T, bool) {
        let mut r = self.residual(x);
        let n = norm2(&r);
        if n > tol && self.vectors.len() < self.dim {
            scale(T::one() / n, &mut r);
            self.vectors.push(r);
            (n, true)
        } else {
            (n, false)
        }
    }
}
