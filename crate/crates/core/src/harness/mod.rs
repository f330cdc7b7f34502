//! Experiment driver: configuration, truth simulation, multi-filter runs,
//! CSV export, the linear-system checks and the canned examples.

pub mod config;
pub mod csv;
pub mod experiment;
pub mod reproduce;
pub mod truth;
pub mod verify;

pub use config::{ExperimentConfig, FilterKind, ModelId};
pub use csv::{export_csv, parse_csv, render_csv, CsvTable};
pub use experiment::{run_experiment, Divergence, ExperimentResult, FilterMetrics, StepRow};
pub use reproduce::{example1_traces, example_config, reproduce_example, ReproduceOptions, ReproduceOutput};
pub use truth::{simulate_truth, Truth};
pub use verify::{random_linear_system, verify_propositions, CheckSummary, PropositionReport};
