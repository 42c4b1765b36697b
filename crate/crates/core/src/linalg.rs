//! Small dense helpers on top of nalgebra: symmetric functional calculus and
//! spectral norms.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{LabError, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Eigenvalues at or below this fraction of the largest eigenvalue count as
/// zero when deciding positive definiteness.
pub const SPD_TOLERANCE: f64 = 1e-12;

/// Relative tolerance for the symmetry check on input matrices.
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
}

pub fn is_symmetric(m: &Mat) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = max_abs(m).max(f64::MIN_POSITIVE);
    let n = m.nrows();
    (0..n).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= SYMMETRY_TOLERANCE * scale))
}

pub fn sym_eigen(m: &Mat) -> SymmetricEigen<f64, nalgebra::Dyn> {
    SymmetricEigen::new(symmetrize(m))
}

/// Applies a scalar function through the eigendecomposition of a symmetric matrix.
pub fn sym_apply(m: &Mat, f: impl Fn(f64) -> f64) -> Mat {
    let eig = sym_eigen(m);
    let q = &eig.eigenvectors;
    let vals = eig.eigenvalues.map(f);
    let out = q * Mat::from_diagonal(&vals) * q.transpose();
    symmetrize(&out)
}

/// Fails unless every eigenvalue exceeds `SPD_TOLERANCE` times the largest one.
pub fn check_spd(m: &Mat) -> Result<()> {
    if !m.is_square() {
        return Err(LabError::NotSpd(format!(
            "{}x{} matrix is not square",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(LabError::NotSpd("non-finite entry".into()));
    }
    if !is_symmetric(m) {
        return Err(LabError::NotSpd("matrix is not symmetric".into()));
    }
    let eig = sym_eigen(m);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(max > 0.0) || min <= SPD_TOLERANCE * max {
        return Err(LabError::NotSpd(format!(
            "eigenvalues in [{min:e}, {max:e}]"
        )));
    }
    Ok(())
}

/// `m^s` for symmetric positive definite `m`.
pub fn spd_power(m: &Mat, s: f64) -> Result<Mat> {
    check_spd(m)?;
    if s == 1.0 {
        return Ok(symmetrize(m));
    }
    Ok(sym_apply(m, |x| x.powf(s)))
}

pub fn spd_inverse(m: &Mat) -> Result<Mat> {
    spd_power(m, -1.0)
}

/// Largest eigenvalue of a symmetric matrix.
pub fn lambda_max(m: &Mat) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    sym_eigen(m).eigenvalues.max()
}

/// Operator norm `‖m‖_{2→2}` (largest singular value).
pub fn spectral_norm(m: &Mat) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    if m.nrows() == 1 || m.ncols() == 1 {
        return m.norm();
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0f64, |a, &b| a.max(b))
}

/// Spectral norm of a symmetric matrix: largest absolute eigenvalue.
pub fn sym_spectral_norm(m: &Mat) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    sym_eigen(m)
        .eigenvalues
        .iter()
        .fold(0.0f64, |a, &b| a.max(b.abs()))
}
