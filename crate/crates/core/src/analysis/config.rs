//! Run configuration: a TOML file whose keys mirror the command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{PermutationStrategy, VariableRoles};
use crate::error::{Error, Result};
use crate::estimands::{EffectFamily, EstimandError, Policy, PolicyPair};
use crate::learners::{EnsembleSpec, LearnerKind, Stacking};
use crate::riesz::RieszClass;

pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_EPOCHS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    #[default]
    Table,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "table" => Ok(ReportFormat::Table),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::Config(format!("unknown format `{other}` (expected json or table)"))),
        }
    }
}

fn default_d0() -> Policy {
    Policy::constant(0.0)
}
fn default_d1() -> Policy {
    Policy::constant(1.0)
}
fn default_effect() -> String {
    "RT".into()
}
fn default_learners() -> Vec<LearnerKind> {
    vec![LearnerKind::Mean, LearnerKind::Linear]
}
fn default_learner_folds() -> usize {
    5
}
fn default_folds() -> usize {
    DEFAULT_FOLDS
}
fn default_epochs() -> usize {
    DEFAULT_EPOCHS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// CSV path; relative paths are taken from the config file's directory.
    pub data: PathBuf,
    pub roles: VariableRoles,
    #[serde(default = "default_d0")]
    pub d0: Policy,
    #[serde(default = "default_d1")]
    pub d1: Policy,
    /// `N`, `RI` or `RT`.
    #[serde(default = "default_effect")]
    pub effect: String,
    /// Candidate regression learners for every sequential-regression step.
    #[serde(default = "default_learners")]
    pub learners: Vec<LearnerKind>,
    #[serde(default)]
    pub stacking: Stacking,
    /// Folds used inside the ensemble to score candidates.
    #[serde(default = "default_learner_folds")]
    pub learner_folds: usize,
    #[serde(default)]
    pub riesz: RieszClass,
    #[serde(default = "default_folds", alias = "folds")]
    pub crossfit_folds: usize,
    /// Training epochs for feedforward representers; overrides `riesz.epochs`.
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    /// Run family `N` even though intermediate confounders are configured,
    /// dropping them and accepting the cross-world assumption.
    #[serde(default)]
    pub allow_cross_world: bool,
    #[serde(default)]
    pub permutation: PermutationStrategy,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub format: ReportFormat,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    /// A config with defaults for everything but data and roles.
    pub fn new(data: impl Into<PathBuf>, roles: VariableRoles) -> Self {
        Self {
            data: data.into(),
            roles,
            d0: default_d0(),
            d1: default_d1(),
            effect: default_effect(),
            learners: default_learners(),
            stacking: Stacking::default(),
            learner_folds: default_learner_folds(),
            riesz: RieszClass::default(),
            crossfit_folds: DEFAULT_FOLDS,
            epochs: DEFAULT_EPOCHS,
            seed: 0,
            allow_cross_world: false,
            permutation: PermutationStrategy::default(),
            output: None,
            format: ReportFormat::default(),
            base_dir: PathBuf::new(),
        }
    }

    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let cfg = Self::from_toml_unchecked(text, base_dir)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses without validating, for callers that apply overrides first.
    pub fn from_toml_unchecked(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn data_path(&self) -> PathBuf {
        if self.data.is_absolute() {
            self.data.clone()
        } else {
            self.base_dir.join(&self.data)
        }
    }

    pub fn family(&self) -> Result<EffectFamily> {
        Ok(self.effect.parse::<EffectFamily>()?)
    }

    pub fn policies(&self) -> PolicyPair {
        PolicyPair {
            d0: self.d0.clone(),
            d1: self.d1.clone(),
        }
    }

    pub fn ensemble(&self) -> EnsembleSpec {
        EnsembleSpec {
            candidates: self.learners.clone(),
            cv_folds: self.learner_folds,
            stacking: self.stacking,
        }
    }

    /// Representer settings with the top-level epoch count applied.
    pub fn riesz_class(&self) -> RieszClass {
        RieszClass {
            epochs: self.epochs,
            ..self.riesz.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let family = self.family()?;
        self.roles.validate()?;
        self.policies().bind(&self.roles)?;
        if family == EffectFamily::N && self.roles.has_moc() && !self.allow_cross_world {
            return Err(EstimandError::FamilyRoleMismatch {
                family,
                reason: "natural effects are not identified with intermediate confounders (moc); \
                         use RI or RT, or set allow_cross_world"
                    .into(),
            }
            .into());
        }
        if self.crossfit_folds < 1 {
            return Err(Error::Config("crossfit_folds must be at least 1".into()));
        }
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        self.ensemble().validate()?;
        self.riesz_class().validate()?;
        Ok(())
    }

    /// SHA-256 of the resolved configuration (paths as written).
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Reads and validates a TOML config file.
pub fn parse_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let cfg = read_config(path)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads a TOML config file without validating it.
pub fn read_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    RunConfig::from_toml_unchecked(&text, &base)
}
