//! Dense symmetric-positive-definite helpers shared by every filter.
//!
//! Covariances are stored as [`SpdMatrix`], which is symmetrized on
//! construction. Positive definiteness is checked lazily: whenever a filter
//! factors or solves with a covariance, a failed Cholesky factorization is
//! retried once with a small diagonal jitter and then reported as
//! [`FilterError::NotPositiveDefinite`].

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{FilterError, Result};

/// Default threshold for [`rcond_check`].
pub const DEFAULT_RCOND_THRESHOLD: f64 = 1e-12;

/// Relative size of the one-shot diagonal jitter, scaled by `trace(M)/n`.
pub const JITTER_SCALE: f64 = 1e-12;

/// Returns `(M + Mᵀ)/2`.
pub fn symmetrize(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(FilterError::dimension(
            "symmetrize",
            "square matrix",
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    Ok((m + m.transpose()) * 0.5)
}

/// A symmetric matrix intended to be positive definite.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix(DMatrix<f64>);

impl SpdMatrix {
    /// Symmetrizes `m` and wraps it. Fails on non-square or non-finite input.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        let m = symmetrize(&m)?;
        if m.iter().any(|v| !v.is_finite()) {
            return Err(FilterError::NonFinite {
                context: "covariance matrix",
            });
        }
        Ok(SpdMatrix(m))
    }

    /// Like [`SpdMatrix::new`] but also requires a successful factorization.
    pub fn new_checked(m: DMatrix<f64>) -> Result<Self> {
        let spd = Self::new(m)?;
        spd_sqrt_factor(&spd)?;
        Ok(spd)
    }

    pub fn identity(n: usize) -> Self {
        SpdMatrix(DMatrix::identity(n, n))
    }

    /// `s·I`, the reading used for scalar noise covariances.
    pub fn scaled_identity(n: usize, s: f64) -> Self {
        SpdMatrix(DMatrix::identity(n, n) * s)
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        SpdMatrix(DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

impl AsRef<DMatrix<f64>> for SpdMatrix {
    fn as_ref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

fn cholesky_with_jitter(m: &SpdMatrix) -> Result<Cholesky<f64, Dyn>> {
    let n = m.dim();
    if n == 0 {
        return Err(FilterError::dimension("cholesky", "n >= 1", 0));
    }
    if let Some(chol) = Cholesky::new(m.0.clone()) {
        return Ok(chol);
    }
    let eps = JITTER_SCALE * m.trace() / n as f64;
    if eps.is_finite() && eps > 0.0 {
        let jittered = &m.0 + DMatrix::identity(n, n) * eps;
        if let Some(chol) = Cholesky::new(jittered) {
            return Ok(chol);
        }
    }
    Err(FilterError::NotPositiveDefinite { step: None })
}

/// Lower-triangular `S` with `S·Sᵀ = M`.
pub fn spd_sqrt_factor(m: &SpdMatrix) -> Result<DMatrix<f64>> {
    cholesky_with_jitter(m).map(|c| c.unpack())
}

/// Solves `M·X = B` through the Cholesky factor of `M`.
pub fn solve_spd(m: &SpdMatrix, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if b.nrows() != m.dim() {
        return Err(FilterError::dimension(
            "solve_spd",
            format!("{} rows", m.dim()),
            format!("{} rows", b.nrows()),
        ));
    }
    Ok(cholesky_with_jitter(m)?.solve(b))
}

/// Reciprocal 2-norm condition number `σ_min/σ_max`; zero for singular or empty input.
pub fn rcond(m: &DMatrix<f64>) -> f64 {
    if !m.is_square() || m.is_empty() || m.iter().any(|v| !v.is_finite()) {
        return 0.0;
    }
    let sv = m.singular_values();
    let max = sv.max();
    if max <= 0.0 {
        return 0.0;
    }
    sv.min() / max
}

/// True iff the reciprocal condition number of `m` is at least `threshold`.
pub fn rcond_check(m: &DMatrix<f64>, threshold: f64) -> bool {
    m.is_square() && rcond(m) >= threshold
}

/// Relative Frobenius distance `‖a − b‖ / max(‖b‖, tiny)`.
pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let denom = b.norm().max(f64::MIN_POSITIVE);
    (a - b).norm() / denom
}
