use std::process::ExitCode;

use ssvae_core::autodiff::CheckpointError;
use ssvae_core::condgen::CondGenError;
use ssvae_core::corpus::CorpusError;
use ssvae_core::SsvaeError;

use crate::config::ConfigError;

/// Validation errors exit with 2, runtime failures with 1.
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Validation(_) => ExitCode::from(2),
            CliError::Runtime(_) => ExitCode::from(1),
        }
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        CliError::Runtime(anyhow::anyhow!(msg.into()))
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "invalid input: {m}"),
            CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => CliError::Runtime(e.into()),
            e => CliError::Validation(e.to_string()),
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io(_) => CliError::Runtime(e.into()),
            CorpusError::Csv(ref c) if c.is_io_error() => CliError::Runtime(e.into()),
            e => CliError::Validation(e.to_string()),
        }
    }
}

impl From<CondGenError> for CliError {
    fn from(e: CondGenError) -> Self {
        match e {
            CondGenError::Decode(_) => CliError::Runtime(e.into()),
            e => CliError::Validation(e.to_string()),
        }
    }
}

impl From<SsvaeError> for CliError {
    fn from(e: SsvaeError) -> Self {
        match e {
            SsvaeError::Config(_) | SsvaeError::NoLabels => CliError::Validation(e.to_string()),
            SsvaeError::Corpus(c) => c.into(),
            SsvaeError::CondGen(c) => c.into(),
            e => CliError::Runtime(e.into()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(e.into())
    }
}
