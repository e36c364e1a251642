use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Physically or numerically invalid input (non-finite values, bad ranges).
    #[error("domain error: {0}")]
    Domain(String),

    /// Numerical integration produced a non-finite state.
    #[error("integration failed at t = {time}: {reason}")]
    Integration { time: f64, reason: String },

    /// Identified dynamics escaped the admissible state region.
    #[error("finite escape at step {step}: state norm {norm:.3e} exceeds {bound:.3e}")]
    FiniteEscape { step: usize, norm: f64, bound: f64 },

    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    Shape {
        context: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("graph state error: {0}")]
    GraphState(String),

    #[error("optimizer error: non-finite gradient for parameter `{param}`")]
    NonFiniteGradient { param: String },

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("drain simulation exceeded {budget} steps")]
    StepBudget { budget: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("schema error in {path}: row {row}, column `{column}`: {reason}")]
    Schema {
        path: PathBuf,
        row: usize,
        column: String,
        reason: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(context: impl Into<String>, expected: &[usize], actual: &[usize]) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
