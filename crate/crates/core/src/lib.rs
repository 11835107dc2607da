//! Semiparametric causal mediation estimation.
//!
//! Natural, randomized interventional and recanting-twin effects are written
//! as contrasts of three families of functionals. Each functional is computed
//! by cross-fitted sequential regression, debiased with representer weights
//! learned by minimizing the Riesz loss, and reported as a one-step estimate
//! with an influence-function standard error. The [`oracle`] module simulates
//! from structural causal models and computes ground truths.
//!
//! All numerical code is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix it to `f64`.

pub mod analysis;
pub mod dataset;
pub mod engine;
pub mod error;
pub mod estimands;
pub mod learners;
pub mod linalg;
pub mod oracle;
pub mod riesz;
pub mod scalar;

pub use analysis::{parse_config, run, EffectReport, ReportFormat, RunConfig};
pub use error::{Error, Result};
pub use estimands::{EffectFamily, FunctionalSpec, Policy, PolicyPair};
pub use scalar::Scalar;

pub type Dataset = dataset::MediationDataset<f64>;
pub type Augmented = dataset::AugmentedDataset<f64>;
pub type Artifacts = engine::FitArtifacts<f64>;
pub type RieszFit = riesz::RieszFit<f64>;
pub type Regressor = learners::FittedRegressor<f64>;
