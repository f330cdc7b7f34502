use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = FilterError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("matrix is not positive definite{}", fmt_step(*.step))]
    NotPositiveDefinite { step: Option<usize> },

    #[error("dynamics Jacobian is singular (rcond {rcond:.3e}){}", fmt_step(*.step))]
    SingularDynamicsJacobian { step: Option<usize>, rcond: f64 },

    #[error("no Jacobian available for {0}: model has no analytic Jacobian and finite differences are disabled")]
    JacobianUnavailable(&'static str),

    #[error("non-finite value produced by {context}")]
    NonFinite { context: &'static str },

    #[error("filter diverged{}", fmt_step(*.step))]
    FilterDiverged { step: Option<usize> },

    #[error("truth simulation diverged at step {step}")]
    TruthDiverged { step: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn fmt_step(step: Option<usize>) -> String {
    match step {
        Some(k) => format!(" at step {k}"),
        None => String::new(),
    }
}

impl FilterError {
    pub(crate) fn dimension(
        context: &'static str,
        expected: impl ToString,
        actual: impl ToString,
    ) -> Self {
        FilterError::Dimension {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// Attaches a filter step index to errors that carry one and do not have it yet.
    pub fn at_step(self, k: usize) -> Self {
        match self {
            FilterError::NotPositiveDefinite { step: None } => {
                FilterError::NotPositiveDefinite { step: Some(k) }
            }
            FilterError::SingularDynamicsJacobian { step: None, rcond } => {
                FilterError::SingularDynamicsJacobian {
                    step: Some(k),
                    rcond,
                }
            }
            FilterError::FilterDiverged { step: None } => FilterError::FilterDiverged { step: Some(k) },
            FilterError::NonFinite { .. } => FilterError::FilterDiverged { step: Some(k) },
            other => other,
        }
    }

    /// Step index carried by the error, if any.
    pub fn step(&self) -> Option<usize> {
        match self {
            FilterError::NotPositiveDefinite { step }
            | FilterError::SingularDynamicsJacobian { step, .. }
            | FilterError::FilterDiverged { step } => *step,
            FilterError::TruthDiverged { step } => Some(*step),
            _ => None,
        }
    }
}
