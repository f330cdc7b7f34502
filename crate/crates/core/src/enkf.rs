//! Stochastic ensemble Kalman filter with perturbed observations.
//!
//! Used as the reference for posterior covariance on nonlinear models. The
//! gain is `K = P̂_xy·(P̂_yy + R)⁻¹` where `P̂_yy` is the sample covariance of
//! the noise-free predicted outputs and `R` is added exactly. All sample
//! covariances use the `N − 1` divisor.
//!
//! Member work runs in parallel; every reduction is a fixed-order sum over
//! members, so results do not depend on the thread count.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{FilterError, Result};
use crate::kf::{kf_gain, FilterStepRecord, KfStep};
use crate::numerics::{spd_sqrt_factor, SpdMatrix};
use crate::rng::{CounterRng, DrawKind};
use crate::statespace::{StateEstimate, SystemModel};

pub const DEFAULT_ENSEMBLE_SIZE: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    /// `n × N`, one member per column.
    members: DMatrix<f64>,
    seed: u64,
    step: usize,
}

impl Ensemble {
    pub fn members(&self) -> &DMatrix<f64> {
        &self.members
    }
    pub fn size(&self) -> usize {
        self.members.ncols()
    }
    pub fn step(&self) -> usize {
        self.step
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn mean(&self) -> DVector<f64> {
        column_mean(&self.members)
    }
    pub fn covariance(&self) -> Result<SpdMatrix> {
        let mean = self.mean();
        let dev = centered(&self.members, &mean);
        SpdMatrix::new(sample_cross_cov(&dev, &dev))
    }
    pub fn estimate(&self) -> Result<StateEstimate> {
        StateEstimate::new(self.mean(), self.covariance()?, self.step)
    }
}

/// Cholesky factor of a noise covariance; an all-zero covariance maps to a zero factor.
pub(crate) fn noise_factor(cov: &SpdMatrix) -> Result<DMatrix<f64>> {
    if cov.as_matrix().amax() == 0.0 {
        return Ok(DMatrix::zeros(cov.dim(), cov.dim()));
    }
    spd_sqrt_factor(cov)
}

/// `L·ξ` with `ξ` a standard normal vector drawn from `rng`.
pub(crate) fn correlated_normal(factor: &DMatrix<f64>, rng: &mut CounterRng) -> DVector<f64> {
    let xi = DVector::from_fn(factor.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
    factor * xi
}

fn column_mean(m: &DMatrix<f64>) -> DVector<f64> {
    let mut sum = DVector::zeros(m.nrows());
    for col in m.column_iter() {
        sum += col;
    }
    sum / m.ncols() as f64
}

fn centered(m: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut col in out.column_iter_mut() {
        col -= mean;
    }
    out
}

/// `A·Bᵀ/(N − 1)` for centered member matrices.
fn sample_cross_cov(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a * b.transpose() / (a.ncols() as f64 - 1.0)
}

/// Draws `N` members from `N(x̂₀, P₀)`.
pub fn enkf_init(est: &StateEstimate, size: usize, seed: u64) -> Result<Ensemble> {
    if size < 2 {
        return Err(FilterError::InvalidParameter(format!(
            "ensemble size must be at least 2, got {size}"
        )));
    }
    let n = est.mean.len();
    let factor = spd_sqrt_factor(&est.cov)?;
    let mut members = DMatrix::zeros(n, size);
    let step = est.step as u64;
    members
        .as_mut_slice()
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(j, col)| {
            let mut rng = CounterRng::new(seed, j as u64, step, DrawKind::EnsembleInit);
            let x = &est.mean + correlated_normal(&factor, &mut rng);
            col.copy_from_slice(x.as_slice());
        });
    Ok(Ensemble {
        members,
        seed,
        step: est.step,
    })
}

/// Forecast every member through `f` with process noise, then assimilate `y`
/// with per-member perturbed observations.
pub fn enkf_step(
    model: &SystemModel,
    ens: &Ensemble,
    u: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<(Ensemble, StateEstimate, FilterStepRecord)> {
    let k = ens.step;
    let next = k + 1;
    let run = || -> Result<_> {
        let (n, p, size) = (model.state_dim(), model.output_dim(), ens.size());
        if ens.members.nrows() != n {
            return Err(FilterError::dimension("enkf_step ensemble", n, ens.members.nrows()));
        }
        if y.len() != p {
            return Err(FilterError::dimension("measurement", p, y.len()));
        }
        let q_factor = noise_factor(&model.process_noise(k))?;
        let r = model.measurement_noise(next);
        let r_factor = noise_factor(&r)?;
        let seed = ens.seed;

        let mut forecast = ens.members.clone();
        let mut outputs = DMatrix::zeros(p, size);
        forecast
            .as_mut_slice()
            .par_chunks_mut(n)
            .zip(outputs.as_mut_slice().par_chunks_mut(p.max(1)))
            .enumerate()
            .try_for_each(|(j, (xcol, ycol))| -> Result<()> {
                let x = DVector::from_column_slice(xcol);
                let mut rng = CounterRng::new(seed, j as u64, next as u64, DrawKind::EnsembleProcess);
                let xf = model.step_dynamics(&x, u, k)? + correlated_normal(&q_factor, &mut rng);
                let yf = model.measure(&xf, next)?;
                if xf.iter().chain(yf.iter()).any(|v| !v.is_finite()) {
                    return Err(FilterError::FilterDiverged { step: None });
                }
                xcol.copy_from_slice(xf.as_slice());
                ycol[..p].copy_from_slice(yf.as_slice());
                Ok(())
            })?;

        let prior_mean = column_mean(&forecast);
        let predicted_y = column_mean(&outputs);
        let x_dev = centered(&forecast, &prior_mean);
        let y_dev = centered(&outputs, &predicted_y);
        let prior_cov = SpdMatrix::new(sample_cross_cov(&x_dev, &x_dev))?;
        let pz = SpdMatrix::new(sample_cross_cov(&y_dev, &y_dev) + r.as_matrix())?;
        let pez = sample_cross_cov(&x_dev, &y_dev);
        let gain = kf_gain(&pz, &pez)?;

        let mut analysis = forecast;
        analysis
            .as_mut_slice()
            .par_chunks_mut(n)
            .zip(outputs.as_slice().par_chunks(p.max(1)))
            .enumerate()
            .for_each(|(j, (xcol, ycol))| {
                let mut rng = CounterRng::new(seed, j as u64, next as u64, DrawKind::EnsembleObservation);
                let perturbed = y + correlated_normal(&r_factor, &mut rng);
                let innov = perturbed - DVector::from_column_slice(&ycol[..p]);
                let dx = &gain * innov;
                for (xi, d) in xcol.iter_mut().zip(dx.iter()) {
                    *xi += d;
                }
            });

        let posterior = Ensemble {
            members: analysis,
            seed,
            step: next,
        };
        let posterior_est = posterior.estimate()?;
        let innovation = y - &predicted_y;
        let record = FilterStepRecord {
            step: next,
            kf: KfStep {
                prior_mean,
                prior_cov,
                gain,
                innovation_cov: pz,
                cross_cov: pez,
                posterior_mean: posterior_est.mean.clone(),
                posterior_cov: posterior_est.cov.clone(),
            },
            innovation,
        };
        Ok((posterior, posterior_est, record))
    };
    run().map_err(|e| e.at_step(next))
}
