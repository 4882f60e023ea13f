use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("control law mode error: {0}")]
    Mode(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("state diverged (non-finite value) at t = {t}")]
    Divergence { t: f64 },

    #[error("step budget exhausted: {steps} steps requested, budget is {budget}")]
    Horizon { steps: u64, budget: u64 },

    #[error("no settling-time guarantee: {0}")]
    GuaranteeViolated(String),

    #[error("assumption violated: {0}")]
    AssumptionViolated(String),

    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{source_name}: file is empty")]
    EmptyFile { source_name: String },

    #[error("{source_name}: missing column `{column}`")]
    MissingColumn { source_name: String, column: String },

    #[error("{source_name}: row {row}: blank cell in column `{column}`")]
    BlankCell {
        source_name: String,
        row: usize,
        column: String,
    },

    #[error("{source_name}: row {row}: cannot parse `{value}` in column `{column}` as a number")]
    ParseCell {
        source_name: String,
        row: usize,
        column: String,
        value: String,
    },

    #[error("{source_name}: row {row}: {message}")]
    Malformed {
        source_name: String,
        row: usize,
        message: String,
    },

    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },

    #[error("invalid configuration:\n{}", .0.iter().map(|e| format!("  - {e}")).collect::<Vec<_>>().join("\n"))]
    Config(Vec<String>),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// Whether the failure stems from configuration or input data rather
    /// than from the run itself.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Shape { .. }
                | Error::InvalidParameter { .. }
                | Error::Io { .. }
                | Error::EmptyFile { .. }
                | Error::MissingColumn { .. }
                | Error::BlankCell { .. }
                | Error::ParseCell { .. }
                | Error::Malformed { .. }
                | Error::Syntax { .. }
                | Error::Config(_)
        )
    }
}
