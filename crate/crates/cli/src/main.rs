use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use eukf_core::harness::{
    export_csv, reproduce_example, run_experiment, verify_propositions, Divergence, ExperimentConfig,
    ExperimentResult, FilterKind, ModelId, ReproduceOptions,
};

/// Exit status when a filter diverged but the run otherwise completed.
const EXIT_DIVERGED: u8 = 2;

#[derive(Parser)]
#[command(name = "eukf", version, about = "Kalman, unscented and extended-unscented filter experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run filters on one simulated trajectory and write the per-step table.
    Run(RunArgs),
    /// Check the linear-system relations between KF, UKF and the extended variants.
    Verify {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Regenerate one of the four worked examples into a directory.
    Reproduce {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
        example: u8,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Override the ensemble size (default 100000).
        #[arg(long)]
        ensemble: Option<usize>,
        /// Override the number of steps.
        #[arg(long)]
        steps: Option<usize>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML file with the same keys as the flags; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// linear-ex1, linear-ex2, vdp, lorenz or custom.
    #[arg(long)]
    model: Option<ModelId>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    ensemble: Option<usize>,
    /// Comma-separated subset of enkf,ekf,kf,ukf,eukfa,eukfc.
    #[arg(long, value_parser = parse_filters)]
    filters: Option<FilterList>,
    #[arg(long)]
    ts: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    r: Option<f64>,
    #[arg(long, default_value = "results.csv")]
    out: PathBuf,
}

#[derive(Clone)]
struct FilterList(Vec<FilterKind>);

fn parse_filters(s: &str) -> Result<FilterList, String> {
    FilterKind::parse_list(s).map(FilterList).map_err(|e| e.to_string())
}

impl RunArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.model {
            cfg.model = v;
        }
        if let Some(v) = self.steps {
            cfg.steps = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.ensemble {
            cfg.ensemble = v;
        }
        if let Some(FilterList(v)) = &self.filters {
            cfg.filters = v.clone();
        }
        cfg.ts = self.ts.or(cfg.ts);
        cfg.mu = self.mu.or(cfg.mu);
        cfg.q = self.q.or(cfg.q);
        cfg.r = self.r.or(cfg.r);
        cfg.validate()?;
        Ok(cfg)
    }
}

fn summarize(result: &ExperimentResult) {
    let window = (result.rows.len() / 5).max(1);
    println!("{:<6} {:>14} {:>14} {:>12}", "filter", "final trP", "final enorm", "relerr");
    for &f in &result.filters {
        let last = result.rows.last().and_then(|r| r.get(f));
        let (tr, e) = last.map_or((f64::NAN, f64::NAN), |m| (m.trace, m.error_norm));
        let relerr = if result.filters.contains(&FilterKind::Enkf) {
            format!("{:.3e}", result.mean_relerr_tail(f, window))
        } else {
            "-".to_string()
        };
        println!("{f:<6} {tr:>14.6e} {e:>14.6e} {relerr:>12}");
    }
}

fn report_divergences(divergences: &[Divergence]) -> ExitCode {
    for d in divergences {
        let at = d.step.map_or("unknown step".to_string(), |k| format!("step {k}"));
        eprintln!("{} diverged at {at}: {}", d.filter, d.message);
    }
    if divergences.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_DIVERGED)
    }
}

fn run(args: &RunArgs) -> Result<ExitCode> {
    let cfg = args.config()?;
    let result = run_experiment(&cfg)?;
    export_csv(&result.rows, &args.out)?;
    summarize(&result);
    println!("wrote {}", args.out.display());
    Ok(report_divergences(&result.divergences))
}

fn reproduce(example: u8, out: &Path, opts: &ReproduceOptions) -> Result<ExitCode> {
    let output = reproduce_example(example, out, opts)
        .with_context(|| format!("reproducing example {example}"))?;
    summarize(&output.result);
    if let Some(summary) = &output.summary {
        print!("{}", std::fs::read_to_string(summary)?);
    }
    println!("wrote {} and {}", output.csv.display(), output.plot.display());
    Ok(report_divergences(&output.result.divergences))
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => run(&args),
        Command::Verify { trials, seed } => {
            let report = verify_propositions(seed, trials)?;
            print!("{report}");
            Ok(if report.all_passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Reproduce { example, out, seed, ensemble, steps } => {
            reproduce(example, &out, &ReproduceOptions { seed, steps, ensemble })
        }
    }
}
