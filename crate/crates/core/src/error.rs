use thiserror::Error;

use crate::dataset::DatasetError;
use crate::engine::EngineError;
use crate::estimands::EstimandError;
use crate::learners::LearnerError;
use crate::oracle::OracleError;
use crate::riesz::RieszError;

/// Top-level error for a full analysis run.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Dataset(#[from] DatasetError),
    #[error("estimand: {0}")]
    Estimand(#[from] EstimandError),
    #[error("learner: {0}")]
    Learner(#[from] LearnerError),
    #[error("riesz: {0}")]
    Riesz(#[from] RieszError),
    #[error("engine: {0}")]
    Engine(#[from] EngineError),
    #[error("oracle: {0}")]
    Oracle(#[from] OracleError),
    #[error("report: {0}")]
    Report(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Numerical failures during estimation, as opposed to invalid input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Engine(e) => e.is_numerical(),
            Error::Learner(e) => e.is_numerical(),
            Error::Riesz(e) => !matches!(e, RieszError::BadSettings(_)),
            Error::Oracle(OracleError::EquationEval { .. }) => true,
            _ => false,
        }
    }

    /// Process exit code: 3 for numerical failures, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        if self.is_numerical() {
            3
        } else {
            2
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
