//! Square roots of symmetric positive semidefinite matrices.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a root `M` with `MᵀM = G` is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RootMethod {
    /// Cholesky when positive definite, clamped eigendecomposition otherwise.
    #[default]
    Auto,
    Cholesky,
    Eigen,
}

/// Negative eigenvalues above this (relative) are rounding noise and clamped.
pub const NEGATIVE_EIGEN_TOL: f64 = 1e-8;
const CLAMP_BELOW: f64 = 1e-12;

fn symmetrize(g: &DMatrix<f64>) -> DMatrix<f64> {
    (g + g.transpose()) * 0.5
}

fn scale_of(g: &DMatrix<f64>) -> f64 {
    g.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0)
}

/// Smallest eigenvalue of the symmetric part of `g`.
pub fn min_eigenvalue(g: &DMatrix<f64>) -> f64 {
    if g.nrows() == 0 {
        return 0.0;
    }
    symmetrize(g).symmetric_eigenvalues().min()
}

pub fn is_psd(g: &DMatrix<f64>, rel_tol: f64) -> bool {
    min_eigenvalue(g) >= -rel_tol * scale_of(g)
}

fn cholesky_root(g: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let chol = g.clone().cholesky()?;
    let l = chol.l();
    let floor = CLAMP_BELOW * scale_of(g);
    if l.diagonal().iter().any(|d| d * d <= floor) {
        return None;
    }
    Some(l.transpose())
}

fn eigen_root(g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = g.clone().symmetric_eigen();
    let scale = scale_of(g);
    let n = g.nrows();
    let mut m = DMatrix::zeros(n, n);
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda < -NEGATIVE_EIGEN_TOL * scale {
            return Err(Error::Factorization(format!("eigenvalue {lambda:e} is negative")));
        }
        let root = if lambda < CLAMP_BELOW * scale { 0.0 } else { lambda.sqrt() };
        for j in 0..n {
            m[(k, j)] = root * eig.eigenvectors[(j, k)];
        }
    }
    Ok(m)
}

/// Returns `(M, method used)` with `MᵀM = G` (square, same size as `G`).
pub fn psd_root(g: &DMatrix<f64>, method: RootMethod) -> Result<(DMatrix<f64>, RootMethod)> {
    if g.nrows() != g.ncols() {
        return Err(Error::Dimension(format!("{}x{} matrix is not square", g.nrows(), g.ncols())));
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Factorization("matrix has non-finite entries".into()));
    }
    let g = symmetrize(g);
    match method {
        RootMethod::Cholesky => cholesky_root(&g)
            .map(|m| (m, RootMethod::Cholesky))
            .ok_or_else(|| Error::Factorization("matrix is not positive definite".into())),
        RootMethod::Eigen => Ok((eigen_root(&g)?, RootMethod::Eigen)),
        RootMethod::Auto => match cholesky_root(&g) {
            Some(m) => Ok((m, RootMethod::Cholesky)),
            None => Ok((eigen_root(&g)?, RootMethod::Eigen)),
        },
    }
}
