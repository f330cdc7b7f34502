//! Canned experiments for the four worked examples, each written to a
//! directory as `results.csv` plus a gnuplot script for the trace figure.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::enkf::DEFAULT_ENSEMBLE_SIZE;
use crate::error::{FilterError, Result};
use crate::kf::{evaluate_gain_cov, kf_step};
use crate::statespace::{linear_example1, StateEstimate};
use crate::ukf::{ukf_step, DEFAULT_ALPHA};
use crate::numerics::SpdMatrix;

use super::config::{ExperimentConfig, FilterKind, ModelId};
use super::csv::export_csv;
use super::experiment::{run_experiment, ExperimentResult};

pub const NONLINEAR_STEPS: usize = 5000;
pub const EXAMPLE2_STEPS: usize = 100;

/// Overrides for the canned settings, mainly to shrink runs in tests.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ReproduceOptions {
    pub seed: u64,
    pub steps: Option<usize>,
    pub ensemble: Option<usize>,
}

pub fn example_config(example: u8, opts: &ReproduceOptions) -> Result<ExperimentConfig> {
    use FilterKind::*;
    let (model, steps, filters) = match example {
        1 => (ModelId::LinearEx1, 1, vec![Kf, Ukf, Eukfa, Eukfc]),
        2 => (ModelId::LinearEx2, EXAMPLE2_STEPS, vec![Kf, Ukf, Eukfa, Eukfc]),
        3 => (ModelId::Vdp, NONLINEAR_STEPS, vec![Enkf, Ekf, Ukf, Eukfa, Eukfc]),
        4 => (ModelId::Lorenz, NONLINEAR_STEPS, vec![Enkf, Ekf, Ukf, Eukfa, Eukfc]),
        _ => return Err(FilterError::InvalidParameter(format!("unknown example {example}, expected 1-4"))),
    };
    Ok(ExperimentConfig {
        model,
        steps: opts.steps.unwrap_or(steps),
        seed: opts.seed,
        alpha: DEFAULT_ALPHA,
        ensemble: opts.ensemble.unwrap_or(DEFAULT_ENSEMBLE_SIZE),
        filters,
        ..Default::default()
    })
}

/// One-step traces of the first counterexample from `x̂ = [1, 1]`, `P = I`:
/// `(tr P_kf, tr P_ukf, tr P(K_ukf))`, the last evaluated with the exact
/// covariances.
pub fn example1_traces() -> Result<(f64, f64, f64)> {
    let sys = linear_example1();
    let est = StateEstimate::new(nalgebra::DVector::from_element(2, 1.0), SpdMatrix::identity(2), 0)?;
    let u = nalgebra::DVector::zeros(0);
    let y = nalgebra::DVector::zeros(1);
    let (_, kf) = kf_step(&sys, &est, &u, &y)?;
    let (_, ukf) = ukf_step(&sys.clone().into_model("ex1"), &est, &u, &y, DEFAULT_ALPHA)?;
    let true_ukf = evaluate_gain_cov(&kf.prior_cov, &kf.innovation_cov, &kf.cross_cov, &ukf.gain)?;
    Ok((kf.posterior_cov.trace(), ukf.posterior_cov.trace(), true_ukf.trace()))
}

fn gnuplot_script(result: &ExperimentResult) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "set datafile separator ','");
    let _ = writeln!(s, "set key autotitle columnhead");
    let _ = writeln!(s, "set xlabel 'k'");
    let _ = writeln!(s, "set ylabel 'tr P'");
    let _ = writeln!(s, "set logscale y");
    let plots: Vec<String> = result
        .filters
        .iter()
        .map(|f| format!("'results.csv' using 'k':'trP_{f}' with lines title '{f}'"))
        .collect();
    let _ = writeln!(s, "plot {}", plots.join(", \\\n     "));
    s
}

/// What [`reproduce_example`] wrote.
#[derive(Debug)]
pub struct ReproduceOutput {
    pub result: ExperimentResult,
    pub csv: PathBuf,
    pub plot: PathBuf,
    pub summary: Option<PathBuf>,
}

pub fn reproduce_example(example: u8, out_dir: &Path, opts: &ReproduceOptions) -> Result<ReproduceOutput> {
    let cfg = example_config(example, opts)?;
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| FilterError::Io { path, source }
    };
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let result = run_experiment(&cfg)?;
    let csv = out_dir.join("results.csv");
    export_csv(&result.rows, &csv)?;
    let plot = out_dir.join("trace.gp");
    fs::write(&plot, gnuplot_script(&result)).map_err(io_err(&plot))?;

    let summary = if example == 1 {
        let (kf, ukf, true_ukf) = example1_traces()?;
        let path = out_dir.join("summary.txt");
        let text = format!(
            "tr P_kf        {kf:.4}\ntr P_ukf       {ukf:.4}\ntr P(K_ukf)    {true_ukf:.4}\n"
        );
        fs::write(&path, text).map_err(io_err(&path))?;
        Some(path)
    } else {
        None
    };
    Ok(ReproduceOutput { result, csv, plot, summary })
}
