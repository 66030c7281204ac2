//! Crate-level error with process exit codes.

use thiserror::Error;

use crate::analyze::AnalyzeError;
use crate::eval::EvalError;
use crate::infer::InferError;
use crate::ingest::IngestError;
use crate::model::ModelError;
use crate::sim::SimError;
use crate::spde::SpdeError;

/// Exit code for invalid input, configuration or usage.
pub const EXIT_VALIDATION: i32 = 1;
/// Exit code for numerical failure.
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Infer(#[from] InferError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Analyze(#[from] AnalyzeError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Spde(#[from] SpdeError),
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error("{0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, Error>;

fn spde_numerical(e: &SpdeError) -> bool {
    matches!(e, SpdeError::Factorization(_))
}

fn model_numerical(e: &ModelError) -> bool {
    match e {
        ModelError::Factorization { .. } | ModelError::Linalg(_) => true,
        ModelError::Spde(s) => spde_numerical(s),
        _ => false,
    }
}

fn infer_numerical(e: &InferError) -> bool {
    match e {
        InferError::Model(m) => model_numerical(m),
        InferError::NonFiniteStart(_) => true,
        InferError::Config(_) | InferError::Mismatch(_) => false,
    }
}

impl Error {
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Model(m) => model_numerical(m),
            Error::Infer(e) => infer_numerical(e),
            Error::Eval(EvalError::NotConverged(_)) => true,
            Error::Analyze(AnalyzeError::Infer(e)) => infer_numerical(e),
            Error::Sim(SimError::Spde(s)) | Error::Spde(s) => spde_numerical(s),
            _ => false,
        }
    }

    pub fn exit_code(&self) -> i32 {
        if self.is_numerical() {
            EXIT_NUMERICAL
        } else {
            EXIT_VALIDATION
        }
    }
}
