use nalgebra::DVector;

use crate::enkf::{correlated_normal, noise_factor};
use crate::error::{FilterError, Result};
use crate::rng::{CounterRng, DrawKind};
use crate::statespace::SystemModel;

/// Simulated states `x_0..=x_N` and measurements `y_0..=y_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub states: Vec<DVector<f64>>,
    pub measurements: Vec<DVector<f64>>,
}

impl Truth {
    pub fn horizon(&self) -> usize {
        self.states.len() - 1
    }
}

/// Samples `x_{k+1} = f(x_k) + w_k`, `y_k = g(x_k) + v_k` for `k = 0..=horizon`.
/// Draws come from the truth streams, which never overlap the ensemble's.
pub fn simulate_truth(model: &SystemModel, x0: &DVector<f64>, horizon: usize, seed: u64) -> Result<Truth> {
    if horizon < 1 {
        return Err(FilterError::InvalidParameter("horizon must be at least 1".into()));
    }
    if x0.len() != model.state_dim() {
        return Err(FilterError::dimension("simulate_truth x0", model.state_dim(), x0.len()));
    }
    let u = model.zero_input();
    let mut states = Vec::with_capacity(horizon + 1);
    let mut measurements = Vec::with_capacity(horizon + 1);
    let mut x = x0.clone();
    for k in 0..=horizon {
        let r = noise_factor(&model.measurement_noise(k))?;
        let mut rng = CounterRng::new(seed, 0, k as u64, DrawKind::TruthMeasurement);
        let y = model.measure(&x, k)? + correlated_normal(&r, &mut rng);
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(FilterError::TruthDiverged { step: k });
        }
        states.push(x.clone());
        measurements.push(y);
        if k < horizon {
            let q = noise_factor(&model.process_noise(k))?;
            let mut rng = CounterRng::new(seed, 0, k as u64, DrawKind::TruthProcess);
            x = model.step_dynamics(&x, &u, k)? + correlated_normal(&q, &mut rng);
        }
    }
    Ok(Truth { states, measurements })
}
