//! Dense complex helpers shared by the metric and solver modules.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

/// Relative asymmetry tolerated before a Hermitian factorization.
pub const HERMITIAN_TOL: f64 = 1e-9;

#[inline]
pub fn cis(theta: f64) -> C64 {
    C64::from_polar(1.0, theta)
}

/// Unitary DFT matrix, `F[a, b] = exp(-j 2 pi a b / n) / sqrt(n)`.
pub fn dft_matrix(n: usize) -> CMatrix {
    let scale = 1.0 / (n as f64).sqrt();
    CMatrix::from_fn(n, n, |a, b| {
        let phase = -2.0 * std::f64::consts::PI * ((a * b) % n) as f64 / n as f64;
        cis(phase) * scale
    })
}

pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

/// Max |m - m^H| relative to max |m|.
pub fn hermitian_defect(m: &CMatrix) -> f64 {
    let scale = m.iter().fold(0.0f64, |acc, z| acc.max(z.norm())).max(1e-300);
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in i..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst / scale
}

/// log det of a Hermitian positive-definite matrix through Cholesky.
pub fn logdet_hpd(m: &CMatrix, context: &'static str) -> Result<f64> {
    if m.nrows() != m.ncols() {
        return Err(Error::dim(context, m.nrows(), m.ncols()));
    }
    let defect = hermitian_defect(m);
    if defect > HERMITIAN_TOL {
        return Err(Error::Numerical(format!(
            "{context}: matrix not Hermitian (relative defect {defect:.3e})"
        )));
    }
    let chol = hermitian_part(m)
        .cholesky()
        .ok_or_else(|| Error::Numerical(format!("{context}: matrix not positive definite")))?;
    Ok(chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.re.ln()).sum())
}

/// Solve `m x = rhs` for Hermitian positive-definite `m`.
pub fn solve_hpd(m: &CMatrix, rhs: &CMatrix, context: &'static str) -> Result<CMatrix> {
    let chol = hermitian_part(m)
        .cholesky()
        .ok_or_else(|| Error::Numerical(format!("{context}: matrix not positive definite")))?;
    Ok(chol.solve(rhs))
}

pub fn inverse_hpd(m: &CMatrix, context: &'static str) -> Result<CMatrix> {
    let chol = hermitian_part(m)
        .cholesky()
        .ok_or_else(|| Error::Numerical(format!("{context}: matrix not positive definite")))?;
    Ok(hermitian_part(&chol.inverse()))
}

/// `x^H a x`.
pub fn quad_form(x: &CVector, a: &CMatrix) -> C64 {
    x.dotc(&(a * x))
}

/// `x^H a y`.
pub fn bilinear(x: &CVector, a: &CMatrix, y: &CVector) -> C64 {
    x.dotc(&(a * y))
}

pub fn trace(m: &CMatrix) -> C64 {
    m.diagonal().iter().sum()
}

pub fn frobenius_sq(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

/// Real part of a nominally real scalar; fails if the imaginary residue
/// exceeds `tol` relative to the modulus (absolute below unit modulus).
pub fn real_part(z: C64, tol: f64, context: &'static str) -> Result<f64> {
    let scale = z.norm().max(1.0);
    if z.im.abs() > tol * scale {
        return Err(Error::Numerical(format!(
            "{context}: imaginary residue {:.3e} on a real quantity",
            z.im
        )));
    }
    Ok(z.re)
}

/// Circularly-symmetric complex Gaussian vector with per-entry variance `var`.
pub fn cscg_vector<R: Rng + ?Sized>(rng: &mut R, n: usize, var: f64) -> CVector {
    let s = (var / 2.0).sqrt();
    CVector::from_fn(n, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re * s, im * s)
    })
}

pub fn cscg_matrix<R: Rng + ?Sized>(rng: &mut R, r: usize, c: usize, var: f64) -> CMatrix {
    let v = cscg_vector(rng, r * c, var);
    CMatrix::from_column_slice(r, c, v.as_slice())
}

/// Real embedding of a Hermitian form: `z^H Q z = xi^T E(Q) xi`, `xi = [Re z; Im z]`.
pub fn embed_hermitian(q: &CMatrix) -> DMatrix<f64> {
    let n = q.nrows();
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let z = q[(i, j)];
            out[(i, j)] = z.re;
            out[(i, j + n)] = -z.im;
            out[(i + n, j)] = z.im;
            out[(i + n, j + n)] = z.re;
        }
    }
    out
}

/// `[Re v; Im v]`, so that `Re(v^H z) = embed(v) . embed(z)`.
pub fn embed_vector(v: &CVector) -> DVector<f64> {
    let n = v.len();
    DVector::from_fn(2 * n, |i, _| if i < n { v[i].re } else { v[i - n].im })
}

pub fn unembed_vector(xi: &DVector<f64>) -> CVector {
    let n = xi.len() / 2;
    CVector::from_fn(n, |i, _| C64::new(xi[i], xi[i + n]))
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eigenvalue(m: &CMatrix) -> f64 {
    let e = nalgebra::SymmetricEigen::new(hermitian_part(m));
    e.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

pub fn max_abs(m: &CMatrix) -> f64 {
    max_abs_slice(m.as_slice())
}

pub fn max_abs_slice(v: &[C64]) -> f64 {
    v.iter().fold(0.0f64, |acc, z| acc.max(z.norm()))
}
