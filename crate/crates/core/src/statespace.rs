//! Discrete-time state-space models
//! `x_{k+1} = f_k(x_k, u_k) + w_k`, `y_k = g_k(x_k) + v_k`
//! with `w_k ~ N(0, Q_k)` and `v_k ~ N(0, R_k)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{FilterError, Result};
use crate::numerics::SpdMatrix;

pub type DynamicsFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>, usize) -> DVector<f64> + Send + Sync>;
pub type MeasurementFn = Arc<dyn Fn(&DVector<f64>, usize) -> DVector<f64> + Send + Sync>;
pub type DynamicsJacobianFn =
    Arc<dyn Fn(&DVector<f64>, &DVector<f64>, usize) -> DMatrix<f64> + Send + Sync>;
pub type MeasurementJacobianFn = Arc<dyn Fn(&DVector<f64>, usize) -> DMatrix<f64> + Send + Sync>;

/// A quantity that is either fixed or indexed by the step `k`.
#[derive(Clone)]
pub enum Schedule<T> {
    Constant(T),
    Varying(Arc<dyn Fn(usize) -> T + Send + Sync>),
}

impl<T: Clone> Schedule<T> {
    pub fn at(&self, k: usize) -> T {
        match self {
            Schedule::Constant(v) => v.clone(),
            Schedule::Varying(f) => f(k),
        }
    }
}

impl<T> From<T> for Schedule<T> {
    fn from(v: T) -> Self {
        Schedule::Constant(v)
    }
}

impl<T: fmt::Debug> fmt::Debug for Schedule<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Schedule::Constant(v) => f.debug_tuple("Constant").field(v).finish(),
            Schedule::Varying(_) => f.write_str("Varying(..)"),
        }
    }
}

/// Linear time-varying system `x_{k+1} = A_k x_k + B_k u_k + w_k`, `y_k = C_k x_k + v_k`.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub a: Schedule<DMatrix<f64>>,
    pub b: Schedule<DMatrix<f64>>,
    pub c: Schedule<DMatrix<f64>>,
    pub q: Schedule<SpdMatrix>,
    pub r: Schedule<SpdMatrix>,
    state_dim: usize,
    input_dim: usize,
    output_dim: usize,
}

impl LinearSystem {
    /// Time-invariant system. `b = None` means the system has no inputs.
    pub fn time_invariant(
        a: DMatrix<f64>,
        b: Option<DMatrix<f64>>,
        c: DMatrix<f64>,
        q: SpdMatrix,
        r: SpdMatrix,
    ) -> Result<Self> {
        let n = a.nrows();
        let b = b.unwrap_or_else(|| DMatrix::zeros(n, 0));
        let sys = LinearSystem {
            state_dim: n,
            input_dim: b.ncols(),
            output_dim: c.nrows(),
            a: a.into(),
            b: b.into(),
            c: c.into(),
            q: q.into(),
            r: r.into(),
        };
        sys.validate_at(0)?;
        Ok(sys)
    }

    /// Time-varying system; dimensions are taken from step 0.
    pub fn time_varying(
        a: Schedule<DMatrix<f64>>,
        b: Schedule<DMatrix<f64>>,
        c: Schedule<DMatrix<f64>>,
        q: Schedule<SpdMatrix>,
        r: Schedule<SpdMatrix>,
    ) -> Result<Self> {
        let (a0, b0, c0) = (a.at(0), b.at(0), c.at(0));
        let sys = LinearSystem {
            state_dim: a0.nrows(),
            input_dim: b0.ncols(),
            output_dim: c0.nrows(),
            a,
            b,
            c,
            q,
            r,
        };
        sys.validate_at(0)?;
        Ok(sys)
    }

    fn validate_at(&self, k: usize) -> Result<()> {
        let (n, m, p) = (self.state_dim, self.input_dim, self.output_dim);
        let check = |ctx: &'static str, mat: &DMatrix<f64>, rows: usize, cols: usize| {
            if mat.shape() != (rows, cols) {
                Err(FilterError::dimension(
                    ctx,
                    format!("{rows}x{cols}"),
                    format!("{}x{}", mat.nrows(), mat.ncols()),
                ))
            } else {
                Ok(())
            }
        };
        check("LinearSystem A", &self.a.at(k), n, n)?;
        check("LinearSystem B", &self.b.at(k), n, m)?;
        check("LinearSystem C", &self.c.at(k), p, n)?;
        check("LinearSystem Q", self.q.at(k).as_matrix(), n, n)?;
        check("LinearSystem R", self.r.at(k).as_matrix(), p, p)?;
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }
    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn into_model(self, name: impl Into<String>) -> SystemModel {
        let (a, b, c) = (self.a.clone(), self.b.clone(), self.c.clone());
        let (a2, c2) = (self.a.clone(), self.c.clone());
        let input_dim = self.input_dim;
        SystemModel {
            name: name.into(),
            state_dim: self.state_dim,
            input_dim: self.input_dim,
            output_dim: self.output_dim,
            dynamics: Arc::new(move |x, u, k| {
                let mut next = a.at(k) * x;
                if input_dim > 0 {
                    next += b.at(k) * u;
                }
                next
            }),
            measurement: Arc::new(move |x, k| c.at(k) * x),
            dynamics_jacobian: Some(Arc::new(move |_, _, k| a2.at(k))),
            measurement_jacobian: Some(Arc::new(move |_, k| c2.at(k))),
            fd_fallback: true,
            process_noise: self.q.clone(),
            measurement_noise: self.r.clone(),
            linear: Some(self),
        }
    }
}

/// A general nonlinear state-space model.
#[derive(Clone)]
pub struct SystemModel {
    name: String,
    state_dim: usize,
    input_dim: usize,
    output_dim: usize,
    dynamics: DynamicsFn,
    measurement: MeasurementFn,
    dynamics_jacobian: Option<DynamicsJacobianFn>,
    measurement_jacobian: Option<MeasurementJacobianFn>,
    fd_fallback: bool,
    process_noise: Schedule<SpdMatrix>,
    measurement_noise: Schedule<SpdMatrix>,
    linear: Option<LinearSystem>,
}

impl fmt::Debug for SystemModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemModel")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim)
            .field("input_dim", &self.input_dim)
            .field("output_dim", &self.output_dim)
            .field("analytic_dynamics_jacobian", &self.dynamics_jacobian.is_some())
            .field("analytic_measurement_jacobian", &self.measurement_jacobian.is_some())
            .field("linear", &self.linear.is_some())
            .finish()
    }
}

impl SystemModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        state_dim: usize,
        input_dim: usize,
        output_dim: usize,
        dynamics: DynamicsFn,
        measurement: MeasurementFn,
        process_noise: impl Into<Schedule<SpdMatrix>>,
        measurement_noise: impl Into<Schedule<SpdMatrix>>,
    ) -> Result<Self> {
        let model = SystemModel {
            name: name.into(),
            state_dim,
            input_dim,
            output_dim,
            dynamics,
            measurement,
            dynamics_jacobian: None,
            measurement_jacobian: None,
            fd_fallback: true,
            process_noise: process_noise.into(),
            measurement_noise: measurement_noise.into(),
            linear: None,
        };
        if model.process_noise(0).dim() != state_dim {
            return Err(FilterError::dimension(
                "process noise Q",
                state_dim,
                model.process_noise(0).dim(),
            ));
        }
        if model.measurement_noise(0).dim() != output_dim {
            return Err(FilterError::dimension(
                "measurement noise R",
                output_dim,
                model.measurement_noise(0).dim(),
            ));
        }
        Ok(model)
    }

    pub fn with_dynamics_jacobian(mut self, jac: DynamicsJacobianFn) -> Self {
        self.dynamics_jacobian = Some(jac);
        self
    }

    pub fn with_measurement_jacobian(mut self, jac: MeasurementJacobianFn) -> Self {
        self.measurement_jacobian = Some(jac);
        self
    }

    /// Disables the finite-difference fallback for missing Jacobians.
    pub fn without_fd_fallback(mut self) -> Self {
        self.fd_fallback = false;
        self
    }

    /// Replaces the noise covariances, keeping the linear view (if any) in sync.
    pub fn with_noise(mut self, q: SpdMatrix, r: SpdMatrix) -> Result<Self> {
        if q.dim() != self.state_dim || r.dim() != self.output_dim {
            return Err(FilterError::dimension(
                "with_noise",
                format!("Q {0}x{0}, R {1}x{1}", self.state_dim, self.output_dim),
                format!("Q {0}x{0}, R {1}x{1}", q.dim(), r.dim()),
            ));
        }
        if let Some(lin) = self.linear.as_mut() {
            lin.q = q.clone().into();
            lin.r = r.clone().into();
        }
        self.process_noise = q.into();
        self.measurement_noise = r.into();
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn state_dim(&self) -> usize {
        self.state_dim
    }
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }
    pub fn output_dim(&self) -> usize {
        self.output_dim
    }
    pub fn process_noise(&self, k: usize) -> SpdMatrix {
        self.process_noise.at(k)
    }
    pub fn measurement_noise(&self, k: usize) -> SpdMatrix {
        self.measurement_noise.at(k)
    }
    /// The linear description this model was built from, if any.
    pub fn linear(&self) -> Option<&LinearSystem> {
        self.linear.as_ref()
    }

    /// Zero input of the declared dimension.
    pub fn zero_input(&self) -> DVector<f64> {
        DVector::zeros(self.input_dim)
    }

    fn check_state(&self, ctx: &'static str, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.state_dim {
            return Err(FilterError::dimension(ctx, self.state_dim, x.len()));
        }
        Ok(())
    }

    fn check_input(&self, ctx: &'static str, u: &DVector<f64>) -> Result<()> {
        if u.len() != self.input_dim {
            return Err(FilterError::dimension(ctx, self.input_dim, u.len()));
        }
        Ok(())
    }

    /// Noise-free dynamics `f_k(x, u)`.
    pub fn step_dynamics(&self, x: &DVector<f64>, u: &DVector<f64>, k: usize) -> Result<DVector<f64>> {
        self.check_state("step_dynamics state", x)?;
        self.check_input("step_dynamics input", u)?;
        let next = (self.dynamics)(x, u, k);
        if next.len() != self.state_dim {
            return Err(FilterError::dimension("dynamics output", self.state_dim, next.len()));
        }
        Ok(next)
    }

    /// Noise-free measurement `g_k(x)`.
    pub fn measure(&self, x: &DVector<f64>, k: usize) -> Result<DVector<f64>> {
        self.check_state("measure state", x)?;
        let y = (self.measurement)(x, k);
        if y.len() != self.output_dim {
            return Err(FilterError::dimension("measurement output", self.output_dim, y.len()));
        }
        Ok(y)
    }

    /// `∂f/∂x` at `(x, u, k)`.
    pub fn jacobian_dynamics(&self, x: &DVector<f64>, u: &DVector<f64>, k: usize) -> Result<DMatrix<f64>> {
        self.check_state("jacobian_dynamics state", x)?;
        self.check_input("jacobian_dynamics input", u)?;
        if let Some(jac) = &self.dynamics_jacobian {
            return Ok(jac(x, u, k));
        }
        if !self.fd_fallback {
            return Err(FilterError::JacobianUnavailable("dynamics"));
        }
        jacobian_fd(|z| (self.dynamics)(z, u, k), x, None)
    }

    /// `∂g/∂x` at `(x, k)`.
    pub fn jacobian_measurement(&self, x: &DVector<f64>, k: usize) -> Result<DMatrix<f64>> {
        self.check_state("jacobian_measurement state", x)?;
        if let Some(jac) = &self.measurement_jacobian {
            return Ok(jac(x, k));
        }
        if !self.fd_fallback {
            return Err(FilterError::JacobianUnavailable("measurement"));
        }
        jacobian_fd(|z| (self.measurement)(z, k), x, None)
    }

    /// Central-difference `∂f/∂x`, ignoring any analytic Jacobian.
    pub fn jacobian_dynamics_fd(&self, x: &DVector<f64>, u: &DVector<f64>, k: usize) -> Result<DMatrix<f64>> {
        self.check_state("jacobian_dynamics_fd state", x)?;
        jacobian_fd(|z| (self.dynamics)(z, u, k), x, None)
    }
}

/// Default finite-difference step `1e-6·max(1, ‖x‖∞)`.
pub fn default_fd_step(x: &DVector<f64>) -> f64 {
    1e-6 * x.amax().max(1.0)
}

/// Central-difference Jacobian of `func` at `x`. `h = None` uses [`default_fd_step`].
pub fn jacobian_fd<F>(func: F, x: &DVector<f64>, h: Option<f64>) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let h = h.unwrap_or_else(|| default_fd_step(x));
    if !(h > 0.0 && h.is_finite()) {
        return Err(FilterError::InvalidParameter(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let n = x.len();
    let mut jac: Option<DMatrix<f64>> = None;
    let mut probe = x.clone();
    for j in 0..n {
        probe[j] = x[j] + h;
        let plus = func(&probe);
        probe[j] = x[j] - h;
        let minus = func(&probe);
        probe[j] = x[j];
        if plus.iter().chain(minus.iter()).any(|v| !v.is_finite()) {
            return Err(FilterError::NonFinite {
                context: "finite-difference Jacobian",
            });
        }
        let jac = jac.get_or_insert_with(|| DMatrix::zeros(plus.len(), n));
        jac.set_column(j, &((plus - minus) / (2.0 * h)));
    }
    Ok(jac.unwrap_or_else(|| DMatrix::zeros(0, 0)))
}

/// Posterior estimate `(x̂_{k|k}, P_{k|k})` at step `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateEstimate {
    pub mean: DVector<f64>,
    pub cov: SpdMatrix,
    pub step: usize,
}

impl StateEstimate {
    pub fn new(mean: DVector<f64>, cov: SpdMatrix, step: usize) -> Result<Self> {
        if cov.dim() != mean.len() {
            return Err(FilterError::dimension("StateEstimate", mean.len(), cov.dim()));
        }
        Ok(StateEstimate { mean, cov, step })
    }
}

/// Default Van der Pol step size.
pub const VDP_DEFAULT_TS: f64 = 0.01;
/// Default Van der Pol damping.
pub const VDP_DEFAULT_MU: f64 = 1.0;
pub const LORENZ_DEFAULT_TS: f64 = 0.01;
pub const LORENZ_SIGMA: f64 = 10.0;
pub const LORENZ_RHO: f64 = 28.0;
pub const LORENZ_BETA: f64 = 8.0 / 3.0;

/// Euler-discretized Van der Pol oscillator observed through `C = [1 0]`,
/// with `Q = 0.01·I₂` and `R = 1e-4`.
pub fn make_vdp(ts: f64, mu: f64) -> Result<SystemModel> {
    if !(ts > 0.0 && ts.is_finite()) {
        return Err(FilterError::InvalidParameter(format!("T_s must be positive, got {ts}")));
    }
    let f: DynamicsFn = Arc::new(move |x, _, _| {
        let (x1, x2) = (x[0], x[1]);
        DVector::from_vec(vec![x1 + ts * x2, x2 + ts * (mu * (1.0 - x1 * x1) * x2 - x1)])
    });
    let jf: DynamicsJacobianFn = Arc::new(move |x, _, _| {
        let (x1, x2) = (x[0], x[1]);
        DMatrix::from_row_slice(
            2,
            2,
            &[
                1.0,
                ts,
                -ts * (2.0 * mu * x1 * x2 + 1.0),
                1.0 + ts * mu * (1.0 - x1 * x1),
            ],
        )
    });
    let g: MeasurementFn = Arc::new(|x, _| DVector::from_element(1, x[0]));
    let jg: MeasurementJacobianFn = Arc::new(|_, _| DMatrix::from_row_slice(1, 2, &[1.0, 0.0]));
    Ok(SystemModel::new(
        "vdp",
        2,
        0,
        1,
        f,
        g,
        SpdMatrix::scaled_identity(2, 0.01),
        SpdMatrix::scaled_identity(1, 1e-4),
    )?
    .with_dynamics_jacobian(jf)
    .with_measurement_jacobian(jg))
}

/// Forward-Euler Lorenz-63 (σ = 10, ρ = 28, β = 8/3) observed through
/// `C = [0 1 0]`, with `Q = 0.01·I₃` and `R = 1e-4`.
pub fn make_lorenz(ts: f64) -> Result<SystemModel> {
    if !(ts > 0.0 && ts.is_finite()) {
        return Err(FilterError::InvalidParameter(format!("T_s must be positive, got {ts}")));
    }
    let (s, r, b) = (LORENZ_SIGMA, LORENZ_RHO, LORENZ_BETA);
    let f: DynamicsFn = Arc::new(move |x, _, _| {
        let (x1, x2, x3) = (x[0], x[1], x[2]);
        DVector::from_vec(vec![
            x1 + ts * s * (x2 - x1),
            x2 + ts * (x1 * (r - x3) - x2),
            x3 + ts * (x1 * x2 - b * x3),
        ])
    });
    let jf: DynamicsJacobianFn = Arc::new(move |x, _, _| {
        let (x1, x2, x3) = (x[0], x[1], x[2]);
        DMatrix::from_row_slice(
            3,
            3,
            &[
                1.0 - ts * s,
                ts * s,
                0.0,
                ts * (r - x3),
                1.0 - ts,
                -ts * x1,
                ts * x2,
                ts * x1,
                1.0 - ts * b,
            ],
        )
    });
    let g: MeasurementFn = Arc::new(|x, _| DVector::from_element(1, x[1]));
    let jg: MeasurementJacobianFn = Arc::new(|_, _| DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 0.0]));
    Ok(SystemModel::new(
        "lorenz",
        3,
        0,
        1,
        f,
        g,
        SpdMatrix::scaled_identity(3, 0.01),
        SpdMatrix::scaled_identity(1, 1e-4),
    )?
    .with_dynamics_jacobian(jf)
    .with_measurement_jacobian(jg))
}

/// First linear counterexample: `A = [[2.4, 2.1], [0, −0.7]]`, `C = [−0.4, −0.9]`, `Q = I₂`, `R = 1`.
pub fn linear_example1() -> LinearSystem {
    LinearSystem::time_invariant(
        DMatrix::from_row_slice(2, 2, &[2.4, 2.1, 0.0, -0.7]),
        None,
        DMatrix::from_row_slice(1, 2, &[-0.4, -0.9]),
        SpdMatrix::identity(2),
        SpdMatrix::identity(1),
    )
    .expect("example 1 dimensions are consistent")
}

/// Second linear counterexample: `A = [[1.6, −1], [1, 0]]`, `C = [1, −0.3]`, `Q = 0.1·I₂`, `R = 0.1`.
pub fn linear_example2() -> LinearSystem {
    LinearSystem::time_invariant(
        DMatrix::from_row_slice(2, 2, &[1.6, -1.0, 1.0, 0.0]),
        None,
        DMatrix::from_row_slice(1, 2, &[1.0, -0.3]),
        SpdMatrix::scaled_identity(2, 0.1),
        SpdMatrix::scaled_identity(1, 0.1),
    )
    .expect("example 2 dimensions are consistent")
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    fn assert_close<C: nalgebra::Dim>(
        a: &nalgebra::OMatrix<f64, nalgebra::Dyn, C>,
        b: &nalgebra::OMatrix<f64, nalgebra::Dyn, C>,
        tol: f64,
    ) where
        nalgebra::DefaultAllocator: nalgebra::allocator::Allocator<nalgebra::Dyn, C>,
    {
        assert_eq!(a.shape(), b.shape());
        let d = (a - b).amax();
        assert!(d < tol, "max abs diff {d} >= {tol}\n{a}\n{b}");
    }

    #[test]
    fn example1_dynamics() {
        let m = linear_example1().into_model("ex1");
        let x = m.step_dynamics(&dvector![1.0, 1.0], &m.zero_input(), 0).unwrap();
        assert_close(&x, &dvector![4.5, -0.7], 1e-15);
    }

    #[test]
    fn vdp_dynamics_at_unit_state() {
        let ts = 0.01;
        let m = make_vdp(ts, 1.0).unwrap();
        let x = m.step_dynamics(&dvector![1.0, 1.0], &m.zero_input(), 0).unwrap();
        assert_close(&x, &dvector![1.0 + ts, 1.0 - ts], 1e-15);
        let zero = m.step_dynamics(&dvector![0.0, 0.0], &m.zero_input(), 0).unwrap();
        assert_eq!(zero, dvector![0.0, 0.0]);
    }

    #[test]
    fn lorenz_dynamics_at_unit_state() {
        let m = make_lorenz(0.01).unwrap();
        let x = m.step_dynamics(&dvector![1.0, 1.0, 1.0], &m.zero_input(), 0).unwrap();
        assert_close(&x, &dvector![1.0, 1.26, 0.983_333_333_333_333_4], 1e-12);
        let zero = m.step_dynamics(&DVector::zeros(3), &m.zero_input(), 0).unwrap();
        assert_eq!(zero, DVector::zeros(3));
    }

    #[test]
    fn measurements() {
        let vdp = make_vdp(0.01, 1.0).unwrap();
        assert_eq!(vdp.measure(&dvector![3.0, 7.0], 0).unwrap(), dvector![3.0]);
        let lor = make_lorenz(0.01).unwrap();
        assert_eq!(lor.measure(&dvector![1.0, 2.0, 3.0], 0).unwrap(), dvector![2.0]);
        let ex1 = linear_example1().into_model("ex1");
        assert_eq!(ex1.measure(&DVector::zeros(2), 0).unwrap(), dvector![0.0]);
    }

    #[test]
    fn noise_covariances_of_builtins() {
        let vdp = make_vdp(0.01, 1.0).unwrap();
        assert_eq!(vdp.process_noise(0).as_matrix(), &(DMatrix::identity(2, 2) * 0.01));
        assert_eq!(vdp.measurement_noise(0).as_matrix(), &dmatrix![1e-4]);
        let lor = make_lorenz(0.01).unwrap();
        assert_eq!(lor.process_noise(0).as_matrix(), &(DMatrix::identity(3, 3) * 0.01));
        assert_eq!(lor.measurement_noise(0).as_matrix(), &dmatrix![1e-4]);
    }

    #[test]
    fn dimension_errors() {
        let m = make_lorenz(0.01).unwrap();
        assert!(matches!(
            m.step_dynamics(&dvector![1.0, 2.0], &m.zero_input(), 0),
            Err(FilterError::Dimension { .. })
        ));
        assert!(matches!(m.measure(&dvector![1.0], 0), Err(FilterError::Dimension { .. })));
        assert!(matches!(
            m.step_dynamics(&DVector::zeros(3), &dvector![1.0], 0),
            Err(FilterError::Dimension { .. })
        ));
        assert!(make_vdp(0.0, 1.0).is_err());
        assert!(make_lorenz(-1.0).is_err());
    }

    #[test]
    fn analytic_jacobians() {
        let ts = 0.01;
        let vdp = make_vdp(ts, 1.0).unwrap();
        let j = vdp.jacobian_dynamics(&dvector![1.0, 1.0], &vdp.zero_input(), 0).unwrap();
        assert_close(&j, &dmatrix![1.0, ts; -3.0 * ts, 1.0], 1e-15);

        let lor = make_lorenz(ts).unwrap();
        let j = lor.jacobian_dynamics(&dvector![1.0, 1.0, 1.0], &lor.zero_input(), 0).unwrap();
        let expected = dmatrix![
            0.9, 0.1, 0.0;
            0.27, 0.99, -0.01;
            0.01, 0.01, 0.973_333_333_333_333_3
        ];
        assert_close(&j, &expected, 1e-12);

        let ex1 = linear_example1();
        let a = ex1.a.at(0);
        let m = ex1.into_model("ex1");
        for x in [dvector![0.0, 0.0], dvector![5.0, -3.0]] {
            assert_eq!(m.jacobian_dynamics(&x, &m.zero_input(), 3).unwrap(), a);
        }
    }

    #[test]
    fn fd_jacobian_examples() {
        let x = dvector![0.3, -1.2, 2.0];
        let id = jacobian_fd(|z| z.clone(), &x, None).unwrap();
        assert_close(&id, &DMatrix::identity(3, 3), 1e-9);

        let a = dmatrix![1.0, 2.0, 3.0; -1.0, 0.5, 4.0];
        let lin = jacobian_fd(|z| &a * z, &x, None).unwrap();
        assert_close(&lin, &a, 1e-8);

        let lor = make_lorenz(0.01).unwrap();
        let p = dvector![1.0, 1.0, 1.0];
        let fd = lor.jacobian_dynamics_fd(&p, &lor.zero_input(), 0).unwrap();
        let an = lor.jacobian_dynamics(&p, &lor.zero_input(), 0).unwrap();
        assert_close(&fd, &an, 1e-6);
    }

    #[test]
    fn fd_errors() {
        let x = dvector![1.0];
        assert!(matches!(
            jacobian_fd(|z| z.map(|v| if v > 1.0 { f64::NAN } else { v }), &x, None),
            Err(FilterError::NonFinite { .. })
        ));
        assert!(matches!(
            jacobian_fd(|z| z.clone(), &x, Some(0.0)),
            Err(FilterError::InvalidParameter(_))
        ));
    }

    #[test]
    fn missing_jacobian_without_fallback() {
        let f: DynamicsFn = Arc::new(|x, _, _| x.map(|v| v.sin()));
        let g: MeasurementFn = Arc::new(|x, _| x.rows(0, 1).into_owned());
        let m = SystemModel::new(
            "sine",
            2,
            0,
            1,
            f,
            g,
            SpdMatrix::identity(2),
            SpdMatrix::identity(1),
        )
        .unwrap();
        let x = dvector![0.0, 0.5];
        let j = m.jacobian_dynamics(&x, &m.zero_input(), 0).unwrap();
        assert_close(&j, &dmatrix![1.0, 0.0; 0.0, 0.5f64.cos()], 1e-8);
        let m = m.without_fd_fallback();
        assert!(matches!(
            m.jacobian_dynamics(&x, &m.zero_input(), 0),
            Err(FilterError::JacobianUnavailable("dynamics"))
        ));
        assert!(matches!(
            m.jacobian_measurement(&x, 0),
            Err(FilterError::JacobianUnavailable("measurement"))
        ));
    }

    #[test]
    fn linear_model_with_inputs() {
        let a = dmatrix![0.5, 1.0; 0.0, 0.9];
        let b = dmatrix![0.0; 2.0];
        let sys = LinearSystem::time_invariant(
            a.clone(),
            Some(b.clone()),
            dmatrix![1.0, 0.0],
            SpdMatrix::identity(2),
            SpdMatrix::identity(1),
        )
        .unwrap();
        let m = sys.into_model("lin");
        let (x, u) = (dvector![1.0, -2.0], dvector![0.25]);
        assert_eq!(m.step_dynamics(&x, &u, 0).unwrap(), &a * &x + &b * &u);
    }

    #[test]
    fn linear_system_rejects_bad_shapes() {
        let r = LinearSystem::time_invariant(
            DMatrix::identity(2, 2),
            None,
            dmatrix![1.0, 0.0, 0.0],
            SpdMatrix::identity(2),
            SpdMatrix::identity(1),
        );
        assert!(matches!(r, Err(FilterError::Dimension { .. })));
    }

    #[test]
    fn lorenz_noise_free_trajectory_is_bounded() {
        let m = make_lorenz(0.01).unwrap();
        let mut x = dvector![1.0, 1.0, 1.0];
        let u = m.zero_input();
        for k in 0..5000 {
            x = m.step_dynamics(&x, &u, k).unwrap();
            assert!(x.amax() < 100.0, "left the attractor region at {k}: {x}");
        }
    }
}
