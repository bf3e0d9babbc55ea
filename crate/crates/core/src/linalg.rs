//! Small dense helpers on top of nalgebra's dynamic matrices.
//!
//! Every bound matrix in the filters is symmetric positive (semi)definite, so
//! the helpers here lean on Cholesky factorizations and symmetric eigenvalues.

use nalgebra::{DMatrix, DVector};

/// Tolerance on the smallest eigenvalue when testing positive semidefiniteness.
pub const PSD_TOL: f64 = 1e-10;

/// Builds a matrix from row slices.
///
/// Panics if the rows are ragged.
pub fn mat(rows: &[&[f64]]) -> DMatrix<f64> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, |r| r.len());
    assert!(rows.iter().all(|r| r.len() == ncols), "ragged rows");
    DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j])
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn symmetrized(mut m: DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&mut m);
    m
}

/// Largest absolute asymmetry `max |m_ij - m_ji|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max(libm::fabs(m[(i, j)] - m[(j, i)]));
        }
    }
    worst
}

/// Eigenvalues of the symmetric part of `m`.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    symmetrized(m.clone()).symmetric_eigenvalues()
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    sym_eigenvalues(m).min()
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    sym_eigenvalues(m).max()
}

pub fn is_psd(m: &DMatrix<f64>) -> bool {
    m.is_square() && min_eigenvalue(m) >= -PSD_TOL
}

/// `a ⪯ b + tol·I` in the Loewner order.
pub fn loewner_le(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
    max_eigenvalue(&(a - b)) <= tol
}

/// Inverse of a symmetric positive definite matrix, `None` if Cholesky fails.
pub fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let inv = symmetrized(m.clone()).cholesky()?.inverse();
    Some(symmetrized(inv))
}

/// Solves `m X = rhs` for symmetric positive definite `m`.
pub fn spd_solve(m: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    Some(symmetrized(m.clone()).cholesky()?.solve(rhs))
}

/// Condition number of a symmetric matrix from its eigenvalues.
pub fn sym_condition(m: &DMatrix<f64>) -> f64 {
    let ev = sym_eigenvalues(m);
    let lo = ev.iter().fold(f64::INFINITY, |a, &b| a.min(libm::fabs(b)));
    let hi = ev.iter().fold(0.0f64, |a, &b| a.max(libm::fabs(b)));
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Condition number of a general square matrix, `σ_max / σ_min`.
pub fn condition(m: &DMatrix<f64>) -> f64 {
    let gram = m.transpose() * m;
    let ev = sym_eigenvalues(&gram);
    let lo = ev.min().max(0.0);
    let hi = ev.max().max(0.0);
    if lo == 0.0 {
        f64::INFINITY
    } else {
        libm::sqrt(hi / lo)
    }
}

/// Spectral norm `‖m‖₂ = sqrt(λ_max(mᵀm))`.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let gram = m.transpose() * m;
    libm::sqrt(max_eigenvalue(&gram).max(0.0))
}

/// Block-diagonal concatenation.
pub fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Vertical concatenation of matrices with equal column counts.
pub fn vstack(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        out.view_mut((r, 0), (b.nrows(), cols)).copy_from(b);
        r += b.nrows();
    }
    out
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, &b| a.max(libm::fabs(b)))
}
