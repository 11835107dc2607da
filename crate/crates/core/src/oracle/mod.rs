//! Simulation from structural causal models and Monte Carlo ground truths.

pub mod scm;
pub mod truth;

use thiserror::Error;

use crate::dataset::DatasetError;
use crate::estimands::EstimandError;

pub use scm::{simulate, CompiledScm, Equation, Expr, NoiseDist, Scm};
pub use truth::{
    counterfactual_table, sample_counterfactuals, statistical_table, truth_counterfactual, truth_statistical,
    Counterfactual, NestedCf, Source, TruthEntry, TruthKind, TruthTable, Twin, ZDraw, DEFAULT_DRAWS, MIN_DRAWS,
};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("equation `{equation}` refers to `{name}`, which is not defined before it")]
    UnknownVariable { equation: String, name: String },
    #[error("equation `{equation}` refers to unknown noise `{name}`")]
    UnknownNoise { equation: String, name: String },
    #[error("noise `{0}` feeds more than one variable block")]
    SharedNoise(String),
    #[error("bad noise distribution for `{0}`")]
    BadNoise(String),
    #[error("variable `{0}` is defined twice")]
    DuplicateName(String),
    #[error("equation `{equation}` evaluated to {value}")]
    EquationEval { equation: String, value: f64 },
    #[error("unknown counterfactual `{0}` (expected S0..S4, S1', S2', S2'', S3'', ri(a,b) or a functional)")]
    UnknownTwinName(String),
    #[error("{draws} Monte Carlo draws requested; at least {min} are required")]
    TooFewDraws { draws: usize, min: usize },
    #[error("{0} has no intermediate confounder, but the model has one")]
    ConfounderPresent(String),
    #[error("{0} needs an intermediate confounder, but the model has none")]
    ConfounderAbsent(String),
    #[error("noise `{0}` is not Bernoulli; the model cannot be enumerated")]
    NotEnumerable(String),
    #[error(transparent)]
    Estimand(#[from] EstimandError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(String),
}
