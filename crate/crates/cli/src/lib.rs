//! Command-line pipelines for Q-function mimic learning: teacher
//! training, data collection, mimic training, evaluation and
//! interpretation, each resumable from its artifacts.

pub mod artifacts;
pub mod commands;
pub mod config;

/// CLI failures map onto exit codes: configuration errors exit 2, stage
/// failures exit 3.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Stage { stage: String, message: String },
}

impl CliError {
    pub fn stage(stage: impl Into<String>, message: impl Into<String>) -> CliError {
        CliError::Stage {
            stage: stage.into(),
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Stage { .. } => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Stage { stage, message } => write!(f, "stage '{stage}' failed: {message}"),
        }
    }
}

impl std::error::Error for CliError {}
