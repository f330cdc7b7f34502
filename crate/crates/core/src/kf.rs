//! Linear Kalman filter and the gain-quality evaluator `P(K)`.

use std::ops::Deref;

use nalgebra::{DMatrix, DVector};

use crate::error::{FilterError, Result};
use crate::numerics::{solve_spd, spd_sqrt_factor, SpdMatrix};
use crate::statespace::{LinearSystem, StateEstimate};

/// Every intermediate of one predict/update cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct KfStep {
    pub prior_mean: DVector<f64>,
    pub prior_cov: SpdMatrix,
    pub gain: DMatrix<f64>,
    /// `P_z`, the innovation covariance.
    pub innovation_cov: SpdMatrix,
    /// `P_ez`, the state/innovation cross covariance.
    pub cross_cov: DMatrix<f64>,
    pub posterior_mean: DVector<f64>,
    pub posterior_cov: SpdMatrix,
}

/// Per-filter output of one step; `step` is the index of the posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterStepRecord {
    pub step: usize,
    pub kf: KfStep,
    /// `y − ŷ` with the filter's own predicted output.
    pub innovation: DVector<f64>,
}

impl Deref for FilterStepRecord {
    type Target = KfStep;
    fn deref(&self) -> &KfStep {
        &self.kf
    }
}

impl FilterStepRecord {
    pub fn estimate(&self) -> StateEstimate {
        StateEstimate {
            mean: self.kf.posterior_mean.clone(),
            cov: self.kf.posterior_cov.clone(),
            step: self.step,
        }
    }
}

/// `(A·x̂ + B·u, A·P·Aᵀ + Q)`.
pub fn kf_predict(
    sys: &LinearSystem,
    est: &StateEstimate,
    u: &DVector<f64>,
) -> Result<(DVector<f64>, SpdMatrix)> {
    let k = est.step;
    let a = sys.a.at(k);
    if est.mean.len() != sys.state_dim() {
        return Err(FilterError::dimension("kf_predict state", sys.state_dim(), est.mean.len()));
    }
    if u.len() != sys.input_dim() {
        return Err(FilterError::dimension("kf_predict input", sys.input_dim(), u.len()));
    }
    let mut mean = &a * &est.mean;
    if sys.input_dim() > 0 {
        mean += sys.b.at(k) * u;
    }
    let cov = &a * est.cov.as_matrix() * a.transpose() + sys.q.at(k).as_matrix();
    Ok((mean, SpdMatrix::new(cov)?))
}

/// `(P_z, P_ez) = (C·P·Cᵀ + R, P·Cᵀ)` with `C`, `R` taken at step `k`.
pub fn kf_innovation(
    sys: &LinearSystem,
    prior_cov: &SpdMatrix,
    k: usize,
) -> Result<(SpdMatrix, DMatrix<f64>)> {
    let c = sys.c.at(k);
    if c.ncols() != prior_cov.dim() {
        return Err(FilterError::dimension("kf_innovation", c.ncols(), prior_cov.dim()));
    }
    let pez = prior_cov.as_matrix() * c.transpose();
    let pz = &c * &pez + sys.r.at(k).as_matrix();
    Ok((SpdMatrix::new(pz)?, pez))
}

/// `K` solving `K·P_z = P_ez`, computed without forming `P_z⁻¹`.
pub fn kf_gain(pz: &SpdMatrix, pez: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if pez.ncols() != pz.dim() {
        return Err(FilterError::dimension("kf_gain", pz.dim(), pez.ncols()));
    }
    // K·P_z = P_ez  <=>  P_z·Kᵀ = P_ezᵀ
    Ok(solve_spd(pz, &pez.transpose())?.transpose())
}

/// `x̂ + K(y − ŷ)` and `P_prior − K·P_ezᵀ`.
pub fn kf_update(
    prior_mean: &DVector<f64>,
    prior_cov: &SpdMatrix,
    gain: &DMatrix<f64>,
    pez: &DMatrix<f64>,
    y: &DVector<f64>,
    predicted_y: &DVector<f64>,
) -> Result<(DVector<f64>, SpdMatrix)> {
    if y.len() != predicted_y.len() || gain.ncols() != y.len() || gain.shape() != pez.shape() {
        return Err(FilterError::dimension(
            "kf_update",
            format!("gain {}x{}", prior_mean.len(), y.len()),
            format!("gain {}x{}, P_ez {}x{}", gain.nrows(), gain.ncols(), pez.nrows(), pez.ncols()),
        ));
    }
    let mean = prior_mean + gain * (y - predicted_y);
    let cov = SpdMatrix::new(prior_cov.as_matrix() - gain * pez.transpose())?;
    spd_sqrt_factor(&cov)?;
    Ok((mean, cov))
}

/// Posterior covariance achieved by an arbitrary gain `K` under the true
/// covariances: `P + K·P_z·Kᵀ − K·P_ezᵀ − P_ez·Kᵀ`.
pub fn evaluate_gain_cov(
    prior_cov: &SpdMatrix,
    pz: &SpdMatrix,
    pez: &DMatrix<f64>,
    gain: &DMatrix<f64>,
) -> Result<SpdMatrix> {
    if gain.shape() != pez.shape() || pez.nrows() != prior_cov.dim() || pez.ncols() != pz.dim() {
        return Err(FilterError::dimension(
            "evaluate_gain_cov",
            format!("{}x{}", prior_cov.dim(), pz.dim()),
            format!("gain {}x{}", gain.nrows(), gain.ncols()),
        ));
    }
    let cross = gain * pez.transpose();
    let p = prior_cov.as_matrix() + gain * pz.as_matrix() * gain.transpose()
        - &cross
        - cross.transpose();
    SpdMatrix::new(p)
}

/// Gain, posterior mean and covariance from prior moments. Shared by every
/// filter in the crate.
pub(crate) fn correct(
    prior_mean: DVector<f64>,
    prior_cov: SpdMatrix,
    pz: SpdMatrix,
    pez: DMatrix<f64>,
    y: &DVector<f64>,
    predicted_y: &DVector<f64>,
) -> Result<(KfStep, DVector<f64>)> {
    let gain = kf_gain(&pz, &pez)?;
    let (posterior_mean, posterior_cov) =
        kf_update(&prior_mean, &prior_cov, &gain, &pez, y, predicted_y)?;
    Ok((
        KfStep {
            prior_mean,
            prior_cov,
            gain,
            innovation_cov: pz,
            cross_cov: pez,
            posterior_mean,
            posterior_cov,
        },
        y - predicted_y,
    ))
}

/// One full Kalman filter step from `x̂_{k|k}` to `x̂_{k+1|k+1}`.
pub fn kf_step(
    sys: &LinearSystem,
    est: &StateEstimate,
    u: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<(StateEstimate, FilterStepRecord)> {
    let next = est.step + 1;
    let run = || {
        let (prior_mean, prior_cov) = kf_predict(sys, est, u)?;
        let (pz, pez) = kf_innovation(sys, &prior_cov, next)?;
        let predicted_y = sys.c.at(next) * &prior_mean;
        correct(prior_mean, prior_cov, pz, pez, y, &predicted_y)
    };
    let (kf, innovation) = run().map_err(|e| e.at_step(next))?;
    let record = FilterStepRecord {
        step: next,
        kf,
        innovation,
    };
    Ok((record.estimate(), record))
}

/// Joseph-form posterior `(I − KC)P(I − KC)ᵀ + KRKᵀ`.
#[cfg(test)]
pub(crate) fn joseph_posterior(
    prior_cov: &DMatrix<f64>,
    gain: &DMatrix<f64>,
    c: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> DMatrix<f64> {
    let n = prior_cov.nrows();
    let ikc = DMatrix::identity(n, n) - gain * c;
    &ikc * prior_cov * ikc.transpose() + gain * r * gain.transpose()
}
