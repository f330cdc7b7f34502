//! Extended Kalman filter: Kalman recursions on the local linearization.

use nalgebra::DVector;

use crate::error::{FilterError, Result};
use crate::kf::{correct, FilterStepRecord};
use crate::numerics::SpdMatrix;
use crate::statespace::{StateEstimate, SystemModel};

/// One EKF step. `A_k` is evaluated at `x̂_{k|k}` and `C_{k+1}` at the
/// prior mean `f(x̂_{k|k}, u)`.
pub fn ekf_step(
    model: &SystemModel,
    est: &StateEstimate,
    u: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<(StateEstimate, FilterStepRecord)> {
    let k = est.step;
    let run = || {
        if y.len() != model.output_dim() {
            return Err(FilterError::dimension("measurement", model.output_dim(), y.len()));
        }
        let a = model.jacobian_dynamics(&est.mean, u, k)?;
        let prior_mean = model.step_dynamics(&est.mean, u, k)?;
        let prior_cov = SpdMatrix::new(
            &a * est.cov.as_matrix() * a.transpose() + model.process_noise(k).as_matrix(),
        )?;
        let c = model.jacobian_measurement(&prior_mean, k + 1)?;
        let pez = prior_cov.as_matrix() * c.transpose();
        let pz = SpdMatrix::new(&c * &pez + model.measurement_noise(k + 1).as_matrix())?;
        let predicted_y = model.measure(&prior_mean, k + 1)?;
        if prior_mean.iter().chain(predicted_y.iter()).any(|v| !v.is_finite()) {
            return Err(FilterError::FilterDiverged { step: None });
        }
        correct(prior_mean, prior_cov, pz, pez, y, &predicted_y)
    };
    let (kf, innovation) = run().map_err(|e| e.at_step(k + 1))?;
    let record = FilterStepRecord {
        step: k + 1,
        kf,
        innovation,
    };
    Ok((record.estimate(), record))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::random_linear_system;
    use crate::kf::kf_step;
    use crate::statespace::{linear_example1, make_lorenz, make_vdp};
    use nalgebra::{dvector, DMatrix};
    use rand::{rngs::StdRng, Rng, SeedableRng};

    #[test]
    fn linear_model_matches_kf_exactly() {
        let sys = linear_example1();
        let model = sys.clone().into_model("ex1");
        let est = StateEstimate::new(dvector![1.0, 1.0], SpdMatrix::identity(2), 0).unwrap();
        let (a, ra) = ekf_step(&model, &est, &model.zero_input(), &dvector![0.7]).unwrap();
        let (b, rb) = kf_step(&sys, &est, &DVector::zeros(0), &dvector![0.7]).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
    }

    #[test]
    fn linear_trajectories_agree_on_random_systems() {
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..20 {
            let sys = random_linear_system(&mut rng, false);
            let model = sys.clone().into_model("rand");
            let n = sys.state_dim();
            let mut ek = StateEstimate::new(DVector::zeros(n), SpdMatrix::identity(n), 0).unwrap();
            let mut kk = ek.clone();
            for _ in 0..30 {
                let y = DVector::from_fn(sys.output_dim(), |_, _| rng.random_range(-2.0..2.0));
                ek = ekf_step(&model, &ek, &model.zero_input(), &y).unwrap().0;
                kk = kf_step(&sys, &kk, &DVector::zeros(0), &y).unwrap().0;
                assert!((&ek.mean - &kk.mean).amax() <= 1e-12 * (1.0 + kk.mean.amax()));
                assert!((ek.cov.as_matrix() - kk.cov.as_matrix()).amax() <= 1e-12 * (1.0 + kk.cov.as_matrix().amax()));
            }
        }
    }

    #[test]
    fn lorenz_prior_covariance() {
        let model = make_lorenz(0.01).unwrap();
        let est = StateEstimate::new(dvector![1.0, 1.0, 1.0], SpdMatrix::identity(3), 0).unwrap();
        let (_, rec) = ekf_step(&model, &est, &model.zero_input(), &dvector![1.26]).unwrap();
        let j = DMatrix::from_row_slice(3, 3, &[
            0.9, 0.1, 0.0,
            0.27, 0.99, -0.01,
            0.01, 0.01, 0.973_333_333_333_333_3,
        ]);
        let expected = &j * j.transpose() + DMatrix::identity(3, 3) * 0.01;
        assert!((rec.prior_cov.as_matrix() - expected).amax() < 1e-12);
        assert!((&rec.prior_mean - dvector![1.0, 1.26, 0.983_333_333_333_333_4]).amax() < 1e-12);
    }

    #[test]
    fn noise_free_limit_drives_output_error_to_zero() {
        let model = make_vdp(0.01, 1.0)
            .unwrap()
            .with_noise(
                SpdMatrix::new(DMatrix::zeros(2, 2)).unwrap(),
                SpdMatrix::scaled_identity(1, 1e-14),
            )
            .unwrap();
        let est = StateEstimate::new(dvector![0.5, -0.5], SpdMatrix::identity(2), 0).unwrap();
        let y = dvector![0.9];
        let (post, _) = ekf_step(&model, &est, &model.zero_input(), &y).unwrap();
        let z = &y - model.measure(&post.mean, 1).unwrap();
        assert!(z.amax() < 1e-10, "{z}");
    }

    #[test]
    fn wrong_measurement_length_is_rejected() {
        let model = make_vdp(0.01, 1.0).unwrap();
        let est = StateEstimate::new(dvector![0.5, -0.5], SpdMatrix::identity(2), 0).unwrap();
        assert!(matches!(
            ekf_step(&model, &est, &model.zero_input(), &dvector![1.0, 2.0]),
            Err(FilterError::Dimension { .. })
        ));
    }
}
