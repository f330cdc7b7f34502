//! Two unscented filters that reduce to the Kalman filter on linear systems.
//!
//! The classical unscented step leaves `C·Q·Cᵀ` out of `P_z` and `Q·Cᵀ` out
//! of `P_ez`, because the process noise enters after the sigma points are
//! propagated. The two variants restore those terms differently:
//!
//! | quantity  | UKF                 | EUKF-A                 | EUKF-C                      |
//! |-----------|---------------------|------------------------|-----------------------------|
//! | sigma scale | `P`               | `P + A⁻¹QA⁻ᵀ`          | `P`                         |
//! | `P_prior` | `X̃ W_d X̃ᵀ + Q`      | `X̃ W_d X̃ᵀ`             | `X̃ W_d X̃ᵀ + Q`              |
//! | `P_z`     | `Ỹ W_d Ỹᵀ + R`      | `Ỹ W_d Ỹᵀ + R`         | `Ỹ W_d Ỹᵀ + CQCᵀ + R`       |
//! | `P_ez`    | `X̃ W_d Ỹᵀ`          | `X̃ W_d Ỹᵀ`             | `X̃ W_d Ỹᵀ + QCᵀ`            |
//!
//! EUKF-A needs `A_k = ∂f/∂x` at `x̂_{k|k}` to be invertible; EUKF-C needs
//! `C_{k+1} = ∂g/∂x`, evaluated at the propagated sigma mean.

use nalgebra::{DMatrix, DVector};

use crate::error::{FilterError, Result};
use crate::kf::FilterStepRecord;
use crate::numerics::{rcond, DEFAULT_RCOND_THRESHOLD, SpdMatrix};
use crate::statespace::{StateEstimate, SystemModel};
use crate::ukf::{unscented_step, Variant};

/// `P_{k|k} + A_k⁻¹·Q_k·A_k⁻ᵀ`, the matrix EUKF-A draws sigma points from.
pub fn eukfa_sigma_scale(
    model: &SystemModel,
    est: &StateEstimate,
    u: &DVector<f64>,
    k: usize,
) -> Result<SpdMatrix> {
    let a = model.jacobian_dynamics(&est.mean, u, k)?;
    let rc = rcond(&a);
    if rc < DEFAULT_RCOND_THRESHOLD {
        return Err(FilterError::SingularDynamicsJacobian { step: Some(k), rcond: rc });
    }
    let lu = a.lu();
    let q = model.process_noise(k);
    // Z = A⁻¹Q, then (A⁻¹QA⁻ᵀ)ᵀ = A⁻¹Zᵀ
    let z = lu
        .solve(q.as_matrix())
        .ok_or(FilterError::SingularDynamicsJacobian { step: Some(k), rcond: rc })?;
    let inflation: DMatrix<f64> = lu
        .solve(&z.transpose())
        .ok_or(FilterError::SingularDynamicsJacobian { step: Some(k), rcond: rc })?
        .transpose();
    SpdMatrix::new(est.cov.as_matrix() + inflation)
}

/// One EUKF-A step: inflated sigma scale, no `+Q` in the prior covariance.
pub fn eukfa_step(
    model: &SystemModel,
    est: &StateEstimate,
    u: &DVector<f64>,
    y: &DVector<f64>,
    alpha: f64,
) -> Result<(StateEstimate, FilterStepRecord)> {
    unscented_step(model, est, u, y, alpha, Variant::EukfA)
}

/// One EUKF-C step: classical sigma points, `CQCᵀ` and `QCᵀ` added to `P_z`, `P_ez`.
pub fn eukfc_step(
    model: &SystemModel,
    est: &StateEstimate,
    u: &DVector<f64>,
    y: &DVector<f64>,
    alpha: f64,
) -> Result<(StateEstimate, FilterStepRecord)> {
    unscented_step(model, est, u, y, alpha, Variant::EukfC)
}
