//! Batch checks of the linear-system relations between KF, UKF, EUKF-A and
//! EUKF-C over seeded random detectable systems.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::eukf::{eukfa_step, eukfc_step};
use crate::error::Result;
use crate::kf::{evaluate_gain_cov, kf_step};
use crate::numerics::{rcond, rel_frobenius, SpdMatrix};
use crate::statespace::{linear_example1, LinearSystem, StateEstimate};
use crate::ukf::ukf_step;

pub const VERIFY_STEPS: usize = 50;
/// Steps within which UKF must visibly depart from KF.
pub const DEPARTURE_WINDOW: usize = 10;
pub const IDENTITY_TOL: f64 = 1e-10;
pub const EQUIVALENCE_TOL: f64 = 1e-9;
pub const DEPARTURE_MIN: f64 = 1e-6;
pub const ALPHAS: [f64; 3] = [1.0, 1.5, 3.0];

fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn random_spd(rng: &mut StdRng, n: usize, floor: f64) -> SpdMatrix {
    let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    SpdMatrix::new(&g * g.transpose() / n as f64 + DMatrix::identity(n, n) * floor)
        .expect("finite by construction")
}

/// Random time-invariant system with 2–4 states, 1–2 outputs, spectral radius
/// in `[0.3, 1.1]`, an observable (hence detectable) pair `(A, C)`, positive
/// definite `Q` and `R`. With `require_nonsingular` the draw is repeated until
/// `rcond(A) ≥ 1e-6`.
pub fn random_linear_system(rng: &mut StdRng, require_nonsingular: bool) -> LinearSystem {
    loop {
        let n = rng.random_range(2..=4usize);
        let p = rng.random_range(1..=2usize).min(n);
        let raw = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let rho = spectral_radius(&raw);
        if rho < 1e-3 {
            continue;
        }
        let a = raw * (rng.random_range(0.3..1.1) / rho);
        if require_nonsingular && rcond(&a) < 1e-6 {
            continue;
        }
        let c = DMatrix::from_fn(p, n, |_, _| rng.random_range(-1.0..1.0));
        let mut obs = DMatrix::zeros(n * p, n);
        let mut block = c.clone();
        for i in 0..n {
            obs.view_mut((i * p, 0), (p, n)).copy_from(&block);
            block = &block * &a;
        }
        let sv = obs.singular_values();
        if sv.min() < 1e-6 * sv.max() {
            continue;
        }
        let q = random_spd(rng, n, 0.05);
        let r = random_spd(rng, p, 0.1);
        return LinearSystem::time_invariant(a, None, c, q, r).expect("consistent dimensions");
    }
}

/// Pass/fail tally for one relation, with the worst observed deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckSummary {
    pub name: &'static str,
    pub passed: usize,
    pub failed: usize,
    /// Largest deviation seen (for the departure check: the smallest gap).
    pub worst: f64,
    pub tolerance: f64,
}

impl CheckSummary {
    fn new(name: &'static str, tolerance: f64, worst: f64) -> Self {
        CheckSummary { name, passed: 0, failed: 0, worst, tolerance }
    }

    fn record_max(&mut self, deviation: f64) {
        self.worst = self.worst.max(deviation);
        if deviation <= self.tolerance {
            self.passed += 1;
        } else {
            self.failed += 1;
        }
    }

    fn record_min(&mut self, gap: f64) {
        self.worst = self.worst.min(gap);
        if gap > self.tolerance {
            self.passed += 1;
        } else {
            self.failed += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropositionReport {
    pub seed: u64,
    pub trials: usize,
    pub missing_terms: CheckSummary,
    pub trace_inequality: CheckSummary,
    pub ukf_departs: CheckSummary,
    pub zero_q_ukf_matches: CheckSummary,
    pub eukfa_matches_kf: CheckSummary,
    pub eukfc_matches_kf: CheckSummary,
    pub alpha_invariance: CheckSummary,
    /// `(tr P(K^KF), tr P(K^UKF))` at step 1 of the first counterexample.
    pub example1_traces: (f64, f64),
}

impl PropositionReport {
    pub fn checks(&self) -> [&CheckSummary; 7] {
        [
            &self.missing_terms,
            &self.trace_inequality,
            &self.ukf_departs,
            &self.zero_q_ukf_matches,
            &self.eukfa_matches_kf,
            &self.eukfc_matches_kf,
            &self.alpha_invariance,
        ]
    }

    pub fn all_passed(&self) -> bool {
        self.checks().iter().all(|c| c.failed == 0) && self.example1_traces.0 <= self.example1_traces.1
    }
}

impl fmt::Display for PropositionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "seed {} trials {}", self.seed, self.trials)?;
        for c in self.checks() {
            let status = if c.failed == 0 { "PASS" } else { "FAIL" };
            writeln!(
                f,
                "{status} {:<22} {:>5} passed {:>5} failed  worst {:.3e} (tol {:.0e})",
                c.name, c.passed, c.failed, c.worst, c.tolerance
            )?;
        }
        let (kf, ukf) = self.example1_traces;
        let status = if kf <= ukf { "PASS" } else { "FAIL" };
        writeln!(f, "{status} example-1 trace order  tr P(K_kf) = {kf:.4} <= tr P(K_ukf) = {ukf:.4}")
    }
}

fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    rel_frobenius(a, b)
}

fn initial(n: usize) -> StateEstimate {
    StateEstimate::new(DVector::zeros(n), SpdMatrix::identity(n), 0).expect("square")
}

struct Checker {
    report: PropositionReport,
}

impl Checker {
    /// Missing-term identities and the trace inequality, each step evaluated
    /// from the UKF's own posterior so both filters share `P_{k|k}`.
    fn unscented_gaps(&mut self, sys: &LinearSystem, ys: &[DVector<f64>]) -> Result<()> {
        let model = sys.clone().into_model("verify");
        let u = DVector::zeros(0);
        let mut est = initial(sys.state_dim());
        for y in ys {
            let (_, kf) = kf_step(sys, &est, &u, y)?;
            let (next, ukf) = ukf_step(&model, &est, &u, y, 1.5)?;
            let k = est.step;
            let (c, q) = (sys.c.at(k + 1), sys.q.at(k));
            let pz = ukf.innovation_cov.as_matrix() + &c * q.as_matrix() * c.transpose();
            let pez = &ukf.cross_cov + q.as_matrix() * c.transpose();
            let dev = rel(&pz, kf.innovation_cov.as_matrix()).max(rel(&pez, &kf.cross_cov));
            self.report.missing_terms.record_max(dev);

            let best = evaluate_gain_cov(&kf.prior_cov, &kf.innovation_cov, &kf.cross_cov, &kf.gain)?.trace();
            let ukf_true = evaluate_gain_cov(&kf.prior_cov, &kf.innovation_cov, &kf.cross_cov, &ukf.gain)?.trace();
            self.report.trace_inequality.record_max(best - ukf_true);
            est = next;
        }
        Ok(())
    }

    /// Independent trajectories of KF and each unscented variant.
    fn trajectories(&mut self, sys: &LinearSystem, ys: &[DVector<f64>], zero_q: bool) -> Result<()> {
        let model = sys.clone().into_model("verify");
        let u = DVector::zeros(0);
        let n = sys.state_dim();
        let mut kf = initial(n);
        let mut kf_traces = Vec::with_capacity(ys.len());
        let mut kf_records = Vec::with_capacity(ys.len());
        for y in ys {
            let (next, rec) = kf_step(sys, &kf, &u, y)?;
            kf_traces.push(rec.posterior_cov.trace());
            kf_records.push(rec);
            kf = next;
        }

        let mut reference: Vec<Vec<DMatrix<f64>>> = vec![Vec::new(); 3];
        for alpha in ALPHAS {
            let (mut ukf, mut ea, mut ec) = (initial(n), initial(n), initial(n));
            let mut ukf_gap = 0.0f64;
            let mut ukf_dev = 0.0f64;
            let (mut a_dev, mut c_dev) = (0.0f64, 0.0f64);
            let mut covs: Vec<Vec<DMatrix<f64>>> = vec![Vec::new(); 3];
            for (i, y) in ys.iter().enumerate() {
                let (nu, ru) = ukf_step(&model, &ukf, &u, y, alpha)?;
                let (na, ra) = eukfa_step(&model, &ea, &u, y, alpha)?;
                let (nc, rc) = eukfc_step(&model, &ec, &u, y, alpha)?;
                let kr = &kf_records[i];
                if i < DEPARTURE_WINDOW {
                    ukf_gap = ukf_gap.max((ru.posterior_cov.trace() - kf_traces[i]).abs());
                }
                ukf_dev = ukf_dev.max(rel(ru.posterior_cov.as_matrix(), kr.posterior_cov.as_matrix()));
                a_dev = a_dev
                    .max(rel(ra.posterior_cov.as_matrix(), kr.posterior_cov.as_matrix()))
                    .max(rel(&ra.gain, &kr.gain));
                c_dev = c_dev
                    .max(rel(rc.posterior_cov.as_matrix(), kr.posterior_cov.as_matrix()))
                    .max(rel(&rc.gain, &kr.gain));
                covs[0].push(ru.posterior_cov.as_matrix().clone());
                covs[1].push(ra.posterior_cov.as_matrix().clone());
                covs[2].push(rc.posterior_cov.as_matrix().clone());
                (ukf, ea, ec) = (nu, na, nc);
            }
            if alpha == ALPHAS[0] {
                if zero_q {
                    self.report.zero_q_ukf_matches.record_max(ukf_dev);
                } else {
                    self.report.ukf_departs.record_min(ukf_gap);
                }
                self.report.eukfa_matches_kf.record_max(a_dev);
                self.report.eukfc_matches_kf.record_max(c_dev);
                reference = covs;
            } else {
                let dev = reference
                    .iter()
                    .flatten()
                    .zip(covs.iter().flatten())
                    .map(|(r, c)| rel(c, r))
                    .fold(0.0, f64::max);
                self.report.alpha_invariance.record_max(dev);
            }
        }
        Ok(())
    }
}

fn measurements(rng: &mut StdRng, p: usize, steps: usize) -> Vec<DVector<f64>> {
    (0..steps)
        .map(|_| DVector::from_fn(p, |_, _| rng.random_range(-2.0..2.0)))
        .collect()
}

/// Runs every check on `trials` random systems plus two fixed cases: the
/// first counterexample, and a random system with `Q = 0`, where UKF and KF
/// must coincide.
pub fn verify_propositions(seed: u64, trials: usize) -> Result<PropositionReport> {
    if trials == 0 {
        return Err(crate::error::FilterError::InvalidParameter("trials must be at least 1".into()));
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let mut checker = Checker {
        report: PropositionReport {
            seed,
            trials,
            missing_terms: CheckSummary::new("missing-term identity", IDENTITY_TOL, 0.0),
            trace_inequality: CheckSummary::new("trace inequality", IDENTITY_TOL, f64::NEG_INFINITY),
            ukf_departs: CheckSummary::new("ukf departs from kf", DEPARTURE_MIN, f64::INFINITY),
            zero_q_ukf_matches: CheckSummary::new("ukf == kf when Q = 0", EQUIVALENCE_TOL, 0.0),
            eukfa_matches_kf: CheckSummary::new("eukf-a == kf", EQUIVALENCE_TOL, 0.0),
            eukfc_matches_kf: CheckSummary::new("eukf-c == kf", EQUIVALENCE_TOL, 0.0),
            alpha_invariance: CheckSummary::new("alpha invariance", EQUIVALENCE_TOL, 0.0),
            example1_traces: (f64::NAN, f64::NAN),
        },
    };

    let ex1 = linear_example1();
    let y = DVector::zeros(1);
    let (_, kf) = kf_step(&ex1, &initial(2), &DVector::zeros(0), &y)?;
    let (_, ukf) = ukf_step(&ex1.clone().into_model("ex1"), &initial(2), &DVector::zeros(0), &y, 1.5)?;
    checker.report.example1_traces = (
        kf.posterior_cov.trace(),
        evaluate_gain_cov(&kf.prior_cov, &kf.innovation_cov, &kf.cross_cov, &ukf.gain)?.trace(),
    );

    let mut systems: Vec<(LinearSystem, bool)> = (0..trials)
        .map(|_| (random_linear_system(&mut rng, true), false))
        .collect();
    systems.push((ex1, false));
    let base = random_linear_system(&mut rng, true);
    let n = base.state_dim();
    let zero_q = LinearSystem::time_invariant(
        base.a.at(0),
        None,
        base.c.at(0),
        SpdMatrix::new(DMatrix::zeros(n, n))?,
        base.r.at(0),
    )?;
    systems.push((zero_q, true));

    for (sys, is_zero_q) in &systems {
        let ys = measurements(&mut rng, sys.output_dim(), VERIFY_STEPS);
        if !is_zero_q {
            checker.unscented_gaps(sys, &ys)?;
        }
        checker.trajectories(sys, &ys, *is_zero_q)?;
    }
    Ok(checker.report)
}
