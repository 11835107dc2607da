//! End-to-end analysis: load data, augment, cross-fit, estimate every
//! functional of an effect family and assemble the report.

pub mod config;
pub mod report;

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use crate::dataset::{augment_zpi, load_csv, make_folds, MediationDataset};
use crate::engine::{contrast, falsification_test, Engine, EngineConfig, EngineError};
use crate::error::Result;
use crate::estimands::{effects_to_contrasts, EffectFamily};
use crate::learners::TargetType;
use crate::scalar::Scalar;
pub use config::{parse_config, read_config, ReportFormat, RunConfig};
pub use report::{fmt3, Decomposition, EffectReport, EffectRow, FunctionalRecord, Manifest, SCHEMA_VERSION};

/// Reads the configured CSV and runs the analysis on it.
pub fn run(config: &RunConfig) -> Result<EffectReport> {
    config.validate()?;
    let path = config.data_path();
    let bytes = std::fs::read(&path).map_err(|e| crate::error::Error::Config(format!("{}: {e}", path.display())))?;
    let data_hash = config::hex(&Sha256::digest(&bytes));
    let data = load_csv::<f64>(&path, &config.roles)?;
    run_on(config, data, data_hash)
}

/// Runs the analysis on an in-memory dataset whose roles match the config.
pub fn run_on<T: Scalar>(config: &RunConfig, data: MediationDataset<T>, data_hash: String) -> Result<EffectReport> {
    config.validate()?;
    let family = config.family()?;
    let mut warnings: Vec<String> = Vec::new();
    let mut data = data;
    if family == EffectFamily::N && data.roles().has_moc() {
        warnings.push(format!(
            "natural effects requested with intermediate confounders {:?}; they are dropped and the \
             estimates rely on the cross-world assumption",
            data.roles().moc
        ));
        data = data.with_roles(data.roles().without_moc())?;
    }
    let has_moc = data.roles().has_moc();
    let table = effects_to_contrasts(family, has_moc, config.allow_cross_world)?;
    let policies = config.policies().bind(data.roles())?;
    for (label, p) in [("d0", &policies.d0), ("d1", &policies.d1)] {
        if let crate::estimands::BoundRule::Constant(level) = p.rule {
            let levels = data.treatment_levels();
            if !levels.iter().any(|&l| l.as_f64() == level) {
                warnings.push(format!("{label} sets treatment to {level}, which never occurs in the data"));
            }
        }
    }

    let n = data.n();
    let aug = augment_zpi(data, config.seed, config.permutation);
    let aug = make_folds(aug, config.crossfit_folds, config.seed)?;
    warnings.extend(aug.warnings().iter().map(|w| w.to_string()));
    for w in &warnings {
        log::warn!("{w}");
    }

    let engine_config = EngineConfig {
        ensemble: config.ensemble(),
        riesz: config.riesz_class(),
        seed: config.seed,
    };
    let mut engine = Engine::new(&aug, policies, engine_config);
    let fits = engine.estimate_functionals(&table.functionals())?;
    warnings.extend(engine.warnings().iter().cloned());

    let estimates: BTreeMap<_, _> = fits.iter().map(|(k, f)| (*k, f.estimate.clone())).collect();
    let effects = contrast(&estimates, &table)?;
    for e in &effects {
        if e.se == 0.0 {
            let msg = format!("{}: standard error is 0 (degenerate influence function)", e.name);
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }

    let decomposition = table.decomposition.as_ref().map(|(parts, total)| {
        let get = |name: &str| effects.iter().find(|e| e.name == name).map_or(f64::NAN, |e| e.estimate);
        let component_sum: f64 = parts.iter().map(|p| get(p)).sum();
        let total_estimate = get(total);
        Decomposition {
            components: parts.clone(),
            component_sum,
            total: total.clone(),
            total_estimate,
            difference: component_sum - total_estimate,
        }
    });

    let falsification = match table.remainder.as_ref().and_then(|r| effects.iter().find(|e| &e.name == r)) {
        None => None,
        Some(r) => match falsification_test(r) {
            Ok(t) => Some(t),
            Err(EngineError::ZeroSe(name)) => {
                let msg = format!("falsification test skipped: standard error of {name} is 0");
                log::warn!("{msg}");
                warnings.push(msg);
                None
            }
            Err(e) => return Err(e.into()),
        },
    };

    let functionals = table
        .functionals()
        .iter()
        .map(|spec| {
            let f = &fits[spec];
            FunctionalRecord {
                name: spec.to_string(),
                plugin: f.estimate.plugin,
                estimate: f.estimate.estimate,
                se: f.estimate.se,
                steps: f.steps.clone(),
            }
        })
        .collect();

    let manifest = Manifest {
        config_hash: config.hash(),
        data_hash,
        seed: config.seed,
        n,
        crossfit_folds: config.crossfit_folds,
        fold_sizes: aug.fold_sizes(),
        outcome_type: match engine.target_type() {
            TargetType::Binary => "binary".into(),
            TargetType::Continuous => "continuous".into(),
        },
        learners: config.learners.iter().map(|l| l.to_string()).collect(),
        riesz: config.riesz_class(),
        functionals,
    };
    Ok(EffectReport {
        schema_version: SCHEMA_VERSION,
        family,
        d0: config.d0.describe(),
        d1: config.d1.describe(),
        n,
        effects: effects.iter().map(EffectRow::from).collect(),
        decomposition,
        falsification,
        warnings,
        manifest,
    })
}
