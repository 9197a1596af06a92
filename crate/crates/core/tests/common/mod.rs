//! Plain dense helpers shared by the integration tests, kept independent of
//! the library's own linear algebra.
#![allow(dead_code)]

use mqlab_core::linalg::SignMatrix;

pub fn dense(m: &SignMatrix) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|j| (0..m.ncols()).map(|c| f64::from(m.get(j, c))).collect()).collect()
}

pub fn ip(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `v − Aᵀ(AAᵀ)⁻¹Av` by Gaussian elimination on the Gram matrix.
pub fn project_out_rows(a: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    let m = a.len();
    let mut g: Vec<Vec<f64>> = (0..m).map(|i| (0..m).map(|j| ip(&a[i], &a[j])).collect()).collect();
    let mut rhs: Vec<f64> = a.iter().map(|r| ip(r, v)).collect();
    for c in 0..m {
        let piv = (c..m).max_by(|&x, &y| g[x][c].abs().total_cmp(&g[y][c].abs())).unwrap();
        g.swap(c, piv);
        rhs.swap(c, piv);
        for r in 0..m {
            if r != c {
                let f = g[r][c] / g[c][c];
                for k in c..m {
                    g[r][k] -= f * g[c][k];
                }
                rhs[r] -= f * rhs[c];
            }
        }
    }
    let coef: Vec<f64> = (0..m).map(|i| rhs[i] / g[i][i]).collect();
    let mut out = v.to_vec();
    for (row, c) in a.iter().zip(&coef) {
        for (o, x) in out.iter_mut().zip(row) {
            *o -= c * x;
        }
    }
    out
}
