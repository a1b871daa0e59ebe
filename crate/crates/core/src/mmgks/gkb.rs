//! Golub–Kahan bidiagonalization used to seed the solution subspace.

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm, scale};
use crate::operators::SparseOperator;

/// Output of `ℓ` bidiagonalization steps: `H V = U B` with `B` lower
/// bidiagonal of size `(ℓ+1) × ℓ`.
#[derive(Clone, Debug)]
pub struct Bidiagonalization {
    /// Columns of `V`, each of length `n`.
    pub v: Vec<Vec<f64>>,
    /// Columns of `U`, each of length `m`.
    pub u: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl Bidiagonalization {
    /// Dense `B`, row-major, `(u.len()) × (v.len())`.
    pub fn b_matrix(&self) -> Vec<Vec<f64>> {
        let (rows, cols) = (self.u.len(), self.v.len());
        let mut b = vec![vec![0.0; cols]; rows];
        for j in 0..cols {
            b[j][j] = self.alpha[j];
            if j + 1 < rows {
                b[j + 1][j] = self.beta[j + 1];
            }
        }
        b
    }
}

fn reorthogonalize(x: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for q in basis {
            let c = dot(q, x);
            axpy(x, -c, q);
        }
    }
}

/// Runs up to `ell` steps from `u₁ = b/‖b‖` with full reorthogonalization.
/// Stops early on breakdown and returns the basis built so far.
pub fn bidiagonalize(h: &SparseOperator, b: &[f64], ell: usize) -> Result<Bidiagonalization> {
    if b.len() != h.n_rows() {
        return Err(Error::Shape(format!("b has {} entries, H has {} rows", b.len(), h.n_rows())));
    }
    if ell == 0 || ell > h.n_rows().min(h.n_cols()) {
        return Err(Error::InvalidArgument(format!(
            "subspace size {ell} outside 1..={}",
            h.n_rows().min(h.n_cols())
        )));
    }
    let beta1 = norm(b);
    if beta1 == 0.0 {
        return Err(Error::InvalidArgument("zero right-hand side".into()));
    }
    let tol = 1e-13 * h.frobenius_norm().max(f64::MIN_POSITIVE);
    let mut u1 = b.to_vec();
    scale(&mut u1, 1.0 / beta1);
    let mut out = Bidiagonalization {
        v: Vec::with_capacity(ell),
        u: vec![u1],
        alpha: Vec::with_capacity(ell),
        beta: vec![beta1],
    };
    for j in 0..ell {
        let mut v = h.transpose_multiply(&out.u[j]);
        if let Some(prev) = out.v.last() {
            axpy(&mut v, -out.beta[j], prev);
        }
        reorthogonalize(&mut v, &out.v);
        let alpha = norm(&v);
        if alpha <= tol {
            break;
        }
        scale(&mut v, 1.0 / alpha);
        let mut u = h.multiply(&v);
        axpy(&mut u, -alpha, &out.u[j]);
        out.v.push(v);
        out.alpha.push(alpha);
        reorthogonalize(&mut u, &out.u);
        let beta = norm(&u);
        if beta <= tol {
            break;
        }
        scale(&mut u, 1.0 / beta);
        out.u.push(u);
        out.beta.push(beta);
    }
    Ok(out)
}

/// Orthonormal `V_ℓ` from [`bidiagonalize`].
pub fn gkb_seed(h: &SparseOperator, b: &[f64], ell: usize) -> Result<Vec<Vec<f64>>> {
    Ok(bidiagonalize(h, b, ell)?.v)
}
