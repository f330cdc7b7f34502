//! Unscented Kalman filter with the symmetric `2n+1` sigma-point set.
//!
//! Sigma points are the columns of
//! `[x̂, x̂ + p_1, …, x̂ + p_n, x̂ − p_1, …, x̂ − p_n]` where `p_i` is the
//! `i`-th column of `α·chol(n·P)`. The weights are `(α²−1)/α²` for the
//! center and `1/(2α²n)` for the rest, so the same vector serves both as
//! mean weights and (as a diagonal matrix) covariance weights.

use nalgebra::{DMatrix, DVector};

use crate::error::{FilterError, Result};
use crate::kf::{correct, FilterStepRecord};
use crate::numerics::{spd_sqrt_factor, SpdMatrix};
use crate::statespace::{StateEstimate, SystemModel};

/// Default sigma-point spread.
pub const DEFAULT_ALPHA: f64 = 1.5;

#[derive(Debug, Clone, PartialEq)]
pub struct UkfWeights {
    alpha: f64,
    state_dim: usize,
    w: DVector<f64>,
}

impl UkfWeights {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn state_dim(&self) -> usize {
        self.state_dim
    }
    /// Weight vector `W` of length `2n+1`.
    pub fn vector(&self) -> &DVector<f64> {
        &self.w
    }
    /// `W_d = diag(W)`.
    pub fn diag(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.w)
    }
    pub fn len(&self) -> usize {
        self.w.len()
    }
    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
}

pub fn ukf_weights(alpha: f64, state_dim: usize) -> Result<UkfWeights> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(FilterError::InvalidParameter(format!("alpha must be positive, got {alpha}")));
    }
    if state_dim == 0 {
        return Err(FilterError::InvalidParameter("state dimension must be at least 1".into()));
    }
    let a2 = alpha * alpha;
    let side = 1.0 / (2.0 * a2 * state_dim as f64);
    let mut w = DVector::from_element(2 * state_dim + 1, side);
    w[0] = (a2 - 1.0) / a2;
    Ok(UkfWeights { alpha, state_dim, w })
}

/// Columns `[c, c + p_i, c − p_i]` with `p_i` the columns of `α·chol(n·scale)`.
pub fn sigma_points(center: &DVector<f64>, scale: &SpdMatrix, alpha: f64) -> Result<DMatrix<f64>> {
    let n = center.len();
    if scale.dim() != n {
        return Err(FilterError::dimension("sigma_points", n, scale.dim()));
    }
    let scaled = SpdMatrix::new(scale.as_matrix() * n as f64)?;
    let spread = spd_sqrt_factor(&scaled)? * alpha;
    let mut points = DMatrix::zeros(n, 2 * n + 1);
    points.set_column(0, center);
    for i in 0..n {
        let p = spread.column(i);
        points.set_column(1 + i, &(center + p));
        points.set_column(1 + n + i, &(center - p));
    }
    Ok(points)
}

/// Images of the sigma points: `X_{k+1|k}` under `f_k` and `Y_{k+1}` under `g_{k+1}`.
pub fn propagate_sigma(
    model: &SystemModel,
    points: &DMatrix<f64>,
    u: &DVector<f64>,
    k: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = model.state_dim();
    if points.nrows() != n {
        return Err(FilterError::dimension("propagate_sigma", n, points.nrows()));
    }
    let cols = points.ncols();
    let mut propagated = DMatrix::zeros(n, cols);
    let mut outputs = DMatrix::zeros(model.output_dim(), cols);
    for i in 0..cols {
        let x = model.step_dynamics(&points.column(i).into_owned(), u, k)?;
        let y = model.measure(&x, k + 1)?;
        propagated.set_column(i, &x);
        outputs.set_column(i, &y);
    }
    if propagated.iter().chain(outputs.iter()).any(|v| !v.is_finite()) {
        return Err(FilterError::FilterDiverged { step: Some(k + 1) });
    }
    Ok((propagated, outputs))
}

/// `M − H(M·W)`: every column minus the weighted mean.
pub fn deviations(m: &DMatrix<f64>, weights: &UkfWeights) -> Result<DMatrix<f64>> {
    if m.ncols() != weights.len() {
        return Err(FilterError::dimension("deviations", weights.len(), m.ncols()));
    }
    let mean = m * weights.vector();
    let mut out = m.clone();
    for mut col in out.column_iter_mut() {
        col -= &mean;
    }
    Ok(out)
}

/// `(X̃ W_d X̃ᵀ + Q, Ỹ W_d Ỹᵀ + R, X̃ W_d Ỹᵀ)`.
pub fn ukf_covariances(
    x_dev: &DMatrix<f64>,
    y_dev: &DMatrix<f64>,
    weights: &UkfWeights,
    q: &SpdMatrix,
    r: &SpdMatrix,
) -> Result<(SpdMatrix, SpdMatrix, DMatrix<f64>)> {
    if x_dev.ncols() != weights.len() || y_dev.ncols() != weights.len() {
        return Err(FilterError::dimension(
            "ukf_covariances",
            weights.len(),
            format!("{} / {}", x_dev.ncols(), y_dev.ncols()),
        ));
    }
    if q.dim() != x_dev.nrows() || r.dim() != y_dev.nrows() {
        return Err(FilterError::dimension(
            "ukf_covariances noise",
            format!("Q {}, R {}", x_dev.nrows(), y_dev.nrows()),
            format!("Q {}, R {}", q.dim(), r.dim()),
        ));
    }
    let xw = weighted_columns(x_dev, weights);
    let yw = weighted_columns(y_dev, weights);
    let p_prior = SpdMatrix::new(&xw * x_dev.transpose() + q.as_matrix())?;
    let pz = SpdMatrix::new(&yw * y_dev.transpose() + r.as_matrix())?;
    spd_sqrt_factor(&pz)?;
    let pez = xw * y_dev.transpose();
    Ok((p_prior, pz, pez))
}

/// `M·W_d` without materializing the diagonal matrix.
fn weighted_columns(m: &DMatrix<f64>, weights: &UkfWeights) -> DMatrix<f64> {
    let mut out = m.clone();
    for (mut col, w) in out.column_iter_mut().zip(weights.vector().iter()) {
        col *= *w;
    }
    out
}

/// Sigma points of one step together with their images.
#[derive(Debug, Clone)]
pub struct SigmaSet {
    pub points: DMatrix<f64>,
    pub propagated: DMatrix<f64>,
    pub outputs: DMatrix<f64>,
    pub weights: UkfWeights,
}

impl SigmaSet {
    pub fn generate(
        model: &SystemModel,
        center: &DVector<f64>,
        scale: &SpdMatrix,
        u: &DVector<f64>,
        k: usize,
        alpha: f64,
    ) -> Result<Self> {
        let weights = ukf_weights(alpha, center.len())?;
        let points = sigma_points(center, scale, alpha)?;
        let (propagated, outputs) = propagate_sigma(model, &points, u, k)?;
        Ok(SigmaSet {
            points,
            propagated,
            outputs,
            weights,
        })
    }

    /// `X_{k+1|k}·W`.
    pub fn predicted_mean(&self) -> DVector<f64> {
        &self.propagated * self.weights.vector()
    }

    /// `Y_{k+1}·W`.
    pub fn predicted_output(&self) -> DVector<f64> {
        &self.outputs * self.weights.vector()
    }
}

/// Which column of the covariance table the unscented step uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Variant {
    Ukf,
    EukfA,
    EukfC,
}

pub(crate) fn unscented_step(
    model: &SystemModel,
    est: &StateEstimate,
    u: &DVector<f64>,
    y: &DVector<f64>,
    alpha: f64,
    variant: Variant,
) -> Result<(StateEstimate, FilterStepRecord)> {
    let k = est.step;
    let run = || {
        if y.len() != model.output_dim() {
            return Err(FilterError::dimension("measurement", model.output_dim(), y.len()));
        }
        let scale = match variant {
            Variant::EukfA => crate::eukf::eukfa_sigma_scale(model, est, u, k)?,
            Variant::Ukf | Variant::EukfC => est.cov.clone(),
        };
        let sigma = SigmaSet::generate(model, &est.mean, &scale, u, k, alpha)?;
        let prior_mean = sigma.predicted_mean();
        let predicted_y = sigma.predicted_output();
        let x_dev = deviations(&sigma.propagated, &sigma.weights)?;
        let y_dev = deviations(&sigma.outputs, &sigma.weights)?;

        let q = model.process_noise(k);
        let r = model.measurement_noise(k + 1);
        let prior_q = match variant {
            Variant::EukfA => SpdMatrix::new(DMatrix::zeros(q.dim(), q.dim()))?,
            Variant::Ukf | Variant::EukfC => q.clone(),
        };
        let (prior_cov, mut pz, mut pez) = ukf_covariances(&x_dev, &y_dev, &sigma.weights, &prior_q, &r)?;
        if variant == Variant::EukfC {
            let c = model.jacobian_measurement(&prior_mean, k + 1)?;
            let qct = q.as_matrix() * c.transpose();
            pz = SpdMatrix::new(pz.as_matrix() + &c * &qct)?;
            pez += qct;
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

/// One classical UKF step from `x̂_{k|k}` to `x̂_{k+1|k+1}`.
pub fn ukf_step(
    model: &SystemModel,
    est: &StateEstimate,
    u: &DVector<f64>,
    y: &DVector<f64>,
    alpha: f64,
) -> Result<(StateEstimate, FilterStepRecord)> {
    unscented_step(model, est, u, y, alpha, Variant::Ukf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::random_linear_system;
    use crate::kf::kf_step;
    use crate::numerics::rel_frobenius;
    use crate::statespace::{linear_example1, make_lorenz, DynamicsFn, LinearSystem, MeasurementFn};
    use nalgebra::{dmatrix, dvector};
    use proptest::prelude::*;
    use rand::{rngs::StdRng, SeedableRng};
    use std::sync::Arc;

    fn ex1_estimate() -> StateEstimate {
        StateEstimate::new(dvector![1.0, 1.0], SpdMatrix::identity(2), 0).unwrap()
    }

    fn identity_model(n: usize) -> SystemModel {
        let f: DynamicsFn = Arc::new(|x, _, _| x.clone());
        let g: MeasurementFn = Arc::new(|x, _| x.clone());
        SystemModel::new("id", n, 0, n, f, g, SpdMatrix::identity(n), SpdMatrix::identity(n)).unwrap()
    }

    #[test]
    fn weight_examples() {
        let w = ukf_weights(1.0, 2).unwrap();
        assert_eq!(w.vector(), &dvector![0.0, 0.25, 0.25, 0.25, 0.25]);

        let w = ukf_weights(1.5, 3).unwrap();
        assert!((w.vector()[0] - 5.0 / 9.0).abs() < 1e-15);
        for i in 1..7 {
            assert!((w.vector()[i] - 1.0 / 13.5).abs() < 1e-15);
        }
        assert_eq!(w.len(), 7);
        assert_eq!(w.diag()[(3, 3)], w.vector()[3]);

        assert!(ukf_weights(0.0, 2).is_err());
        assert!(ukf_weights(-1.0, 2).is_err());
        assert!(ukf_weights(1.0, 0).is_err());
    }

    #[test]
    fn sigma_point_layout() {
        let pts = sigma_points(&DVector::zeros(2), &SpdMatrix::identity(2), 1.0).unwrap();
        let s = 2f64.sqrt();
        let expected = dmatrix![0.0, s, 0.0, -s, 0.0; 0.0, 0.0, s, 0.0, -s];
        assert!((pts - expected).amax() < 1e-15);
    }

    #[test]
    fn propagate_examples() {
        let m = identity_model(2);
        let pts = sigma_points(&dvector![1.0, -1.0], &SpdMatrix::identity(2), 1.5).unwrap();
        let (x, y) = propagate_sigma(&m, &pts, &m.zero_input(), 0).unwrap();
        assert_eq!(x, pts);
        assert_eq!(y, pts);

        let sys = linear_example1();
        let a = sys.a.at(0);
        let c = sys.c.at(0);
        let lm = sys.into_model("ex1");
        let (x, y) = propagate_sigma(&lm, &pts, &lm.zero_input(), 0).unwrap();
        assert!((x - &a * &pts).amax() < 1e-14);
        assert!((y - &c * &a * &pts).amax() < 1e-14);

        let lor = make_lorenz(0.01).unwrap();
        let pts = sigma_points(&dvector![1.0, 1.0, 1.0], &SpdMatrix::identity(3), 1.5).unwrap();
        let (x, _) = propagate_sigma(&lor, &pts, &lor.zero_input(), 0).unwrap();
        assert!((x.column(0) - dvector![1.0, 1.26, 0.983_333_333_333_333_4]).amax() < 1e-12);
    }

    #[test]
    fn propagate_flags_divergence() {
        let f: DynamicsFn = Arc::new(|x, _, _| x.map(|v| if v > 0.5 { f64::INFINITY } else { v }));
        let g: MeasurementFn = Arc::new(|x, _| x.rows(0, 1).into_owned());
        let m = SystemModel::new("blowup", 1, 0, 1, f, g, SpdMatrix::identity(1), SpdMatrix::identity(1)).unwrap();
        let pts = sigma_points(&dvector![0.0], &SpdMatrix::identity(1), 1.0).unwrap();
        assert!(matches!(
            propagate_sigma(&m, &pts, &m.zero_input(), 4),
            Err(FilterError::FilterDiverged { step: Some(5) })
        ));
    }

    #[test]
    fn deviation_examples() {
        let w = ukf_weights(1.5, 2).unwrap();
        let same = DMatrix::from_fn(3, 5, |i, _| i as f64 + 0.5);
        assert!(deviations(&same, &w).unwrap().amax() < 1e-15);

        // linear propagation: deviations = A·[0, αS, −αS]
        let sys = linear_example1();
        let a = sys.a.at(0);
        let p = SpdMatrix::new(dmatrix![2.0, 0.4; 0.4, 1.0]).unwrap();
        let center = dvector![0.7, -0.2];
        let alpha = 1.5;
        let pts = sigma_points(&center, &p, alpha).unwrap();
        let dev = deviations(&(&a * &pts), &w).unwrap();
        let s = spd_sqrt_factor(&SpdMatrix::new(p.as_matrix() * 2.0).unwrap()).unwrap() * alpha;
        let mut expected = DMatrix::zeros(2, 5);
        expected.view_mut((0, 1), (2, 2)).copy_from(&s);
        expected.view_mut((0, 3), (2, 2)).copy_from(&(-&s));
        assert!((dev - &a * expected).amax() < 1e-12);

        assert!(deviations(&DMatrix::zeros(2, 4), &w).is_err());
    }

    #[test]
    fn covariance_examples() {
        let w = ukf_weights(1.5, 2).unwrap();
        let q = SpdMatrix::new(dmatrix![0.3, 0.1; 0.1, 0.2]).unwrap();
        let r = SpdMatrix::new(dmatrix![0.5]).unwrap();
        let (pp, pz, pez) =
            ukf_covariances(&DMatrix::zeros(2, 5), &DMatrix::zeros(1, 5), &w, &q, &r).unwrap();
        assert_eq!((pp, pz, pez), (q, r, DMatrix::zeros(2, 1)));
    }

    #[test]
    fn example1_missing_terms() {
        let sys = linear_example1();
        let model = sys.clone().into_model("ex1");
        let (_, ukf) = ukf_step(&model, &ex1_estimate(), &model.zero_input(), &dvector![0.0], 1.5).unwrap();
        assert!((ukf.innovation_cov.as_matrix()[(0, 0)] - 1.9657).abs() < 1e-12);
        assert!((&ukf.cross_cov - dmatrix![-2.745; 0.147]).amax() < 1e-12);

        let (_, kf) = kf_step(&sys, &ex1_estimate(), &DVector::zeros(0), &dvector![0.0]).unwrap();
        let c = sys.c.at(1);
        let q = sys.q.at(0);
        let pz_gap = kf.innovation_cov.as_matrix() - ukf.innovation_cov.as_matrix();
        assert!((pz_gap - &c * q.as_matrix() * c.transpose()).amax() < 1e-12);
        let pez_gap = &kf.cross_cov - &ukf.cross_cov;
        assert!((pez_gap - q.as_matrix() * c.transpose()).amax() < 1e-12);
    }

    #[test]
    fn example1_ukf_trace() {
        let model = linear_example1().into_model("ex1");
        let (_, rec) = ukf_step(&model, &ex1_estimate(), &model.zero_input(), &dvector![0.0], 1.5).unwrap();
        assert!((rec.posterior_cov.trace() - 8.816).abs() < 1e-3, "{}", rec.posterior_cov.trace());
    }

    #[test]
    fn linear_results_do_not_depend_on_alpha() {
        let model = linear_example1().into_model("ex1");
        let (_, base) = ukf_step(&model, &ex1_estimate(), &model.zero_input(), &dvector![0.3], 1.0).unwrap();
        for alpha in [1.5, 3.0] {
            let (_, rec) = ukf_step(&model, &ex1_estimate(), &model.zero_input(), &dvector![0.3], alpha).unwrap();
            assert!(rel_frobenius(rec.posterior_cov.as_matrix(), base.posterior_cov.as_matrix()) < 1e-10);
            assert!(rel_frobenius(&rec.gain, &base.gain) < 1e-10);
        }
    }

    #[test]
    fn zero_process_noise_matches_kf() {
        let sys = linear_example1();
        let sys = LinearSystem::time_invariant(
            sys.a.at(0),
            None,
            sys.c.at(0),
            SpdMatrix::new(DMatrix::zeros(2, 2)).unwrap(),
            SpdMatrix::identity(1),
        )
        .unwrap();
        let model = sys.clone().into_model("ex1-noq");
        let mut est_k = ex1_estimate();
        let mut est_u = ex1_estimate();
        for i in 0..5 {
            let y = dvector![0.1 * i as f64];
            let (nk, rk) = kf_step(&sys, &est_k, &DVector::zeros(0), &y).unwrap();
            let (nu, ru) = ukf_step(&model, &est_u, &model.zero_input(), &y, 1.5).unwrap();
            assert!(rel_frobenius(ru.posterior_cov.as_matrix(), rk.posterior_cov.as_matrix()) < 1e-10);
            assert!((&nu.mean - &nk.mean).amax() < 1e-10 * (1.0 + nk.mean.amax()));
            est_k = nk;
            est_u = nu;
        }
    }

    #[test]
    fn small_alpha_can_fail_with_step_index() {
        // w0 < 0 for α < 1; a strongly curved map then yields an indefinite P_z
        let f: DynamicsFn = Arc::new(|x, _, _| x.clone());
        let g: MeasurementFn = Arc::new(|x, _| DVector::from_element(1, x[0] * x[0]));
        let m = SystemModel::new(
            "square",
            1,
            0,
            1,
            f,
            g,
            SpdMatrix::scaled_identity(1, 1e-9),
            SpdMatrix::scaled_identity(1, 1e-12),
        )
        .unwrap();
        let est = StateEstimate::new(dvector![0.0], SpdMatrix::identity(1), 3).unwrap();
        let err = ukf_step(&m, &est, &m.zero_input(), &dvector![0.0], 0.5).unwrap_err();
        assert!(matches!(err, FilterError::NotPositiveDefinite { step: Some(4) }), "{err:?}");
    }

    proptest! {
        #[test]
        fn weights_sum_to_one(alpha in 0.05f64..10.0, n in 1usize..12) {
            let w = ukf_weights(alpha, n).unwrap();
            prop_assert!((w.vector().sum() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn sigma_mean_and_covariance_reproduce_inputs(
            n in 1usize..6,
            alpha in prop::sample::select(vec![0.8, 1.0, 1.5, 3.0]),
            entries in prop::collection::vec(-2.0f64..2.0, 36),
            center in prop::collection::vec(-5.0f64..5.0, 6),
        ) {
            let g = DMatrix::from_column_slice(n, n, &entries[..n * n]);
            let p = SpdMatrix::new(&g * g.transpose() + DMatrix::identity(n, n) * 0.05).unwrap();
            let c = DVector::from_column_slice(&center[..n]);
            let w = ukf_weights(alpha, n).unwrap();
            let pts = sigma_points(&c, &p, alpha).unwrap();
            prop_assert!((&pts * w.vector() - &c).amax() < 1e-12 * (1.0 + c.amax()));
            let dev = deviations(&pts, &w).unwrap();
            let cov = &dev * w.diag() * dev.transpose();
            prop_assert!(rel_frobenius(&cov, p.as_matrix()) < 1e-10);
            for i in 1..=n {
                let plus = pts.column(i) - &c;
                let minus = pts.column(i + n) - &c;
                prop_assert!((plus + minus).amax() < 1e-12 * (1.0 + c.amax()));
            }
        }

        #[test]
        fn missing_term_identities_on_random_systems(seed in any::<u64>()) {
            let mut rng = StdRng::seed_from_u64(seed);
            let sys = random_linear_system(&mut rng, false);
            let model = sys.clone().into_model("rand");
            let n = sys.state_dim();
            let est = StateEstimate::new(DVector::zeros(n), SpdMatrix::identity(n), 0).unwrap();
            let y = DVector::zeros(sys.output_dim());
            let (_, kf) = kf_step(&sys, &est, &DVector::zeros(0), &y).unwrap();
            let (_, ukf) = ukf_step(&model, &est, &model.zero_input(), &y, 1.5).unwrap();
            let c = sys.c.at(1);
            let q = sys.q.at(0);
            let pz = ukf.innovation_cov.as_matrix() + &c * q.as_matrix() * c.transpose();
            prop_assert!(rel_frobenius(&pz, kf.innovation_cov.as_matrix()) < 1e-10);
            let pez = &ukf.cross_cov + q.as_matrix() * c.transpose();
            prop_assert!(rel_frobenius(&pez, &kf.cross_cov) < 1e-10);
            prop_assert!(rel_frobenius(ukf.prior_cov.as_matrix(), kf.prior_cov.as_matrix()) < 1e-10);
        }
    }
}
