//! Kalman-type filters (KF, EKF, UKF, the two extended unscented variants and
//! a stochastic ensemble filter) with an experiment harness.

pub mod ekf;
pub mod enkf;
pub mod error;
pub mod eukf;
pub mod harness;
pub mod kf;
pub mod numerics;
pub mod rng;
pub mod statespace;
pub mod ukf;

pub use ekf::ekf_step;
pub use enkf::{enkf_init, enkf_step, Ensemble, DEFAULT_ENSEMBLE_SIZE};
pub use error::{FilterError, Result};
pub use eukf::{eukfa_step, eukfc_step};
pub use kf::{kf_step, FilterStepRecord, KfStep};
pub use numerics::SpdMatrix;
pub use statespace::{
    make_lorenz, make_vdp, LinearSystem, Schedule, StateEstimate, SystemModel,
};
pub use ukf::{ukf_step, ukf_weights, UkfWeights, DEFAULT_ALPHA};
