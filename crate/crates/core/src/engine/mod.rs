//! Cross-fitted sequential regressions and representer fits for mediation
//! functionals, with one-step inference on top.
//!
//! Regression steps are cached by program prefix and representers by
//! program suffix, so functionals that share structure (for example the
//! eight functionals of the recanting-twin table) reuse fitted nuisances.
//! Every fit draws its seed from a hash of its cache key, which makes the
//! results independent of evaluation order.

pub mod inference;

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{positivity_diagnostics, AugmentedDataset, PositivityDiagnostics};
use crate::estimands::{
    apply_policy, BoundPolicies, EstimandError, FunctionalSpec, RegressionProgram, ShiftMap, Step, VarSet,
};
use crate::learners::{self, EnsembleSpec, FittedRegressor, LearnerError, TargetType};
use crate::riesz::{fit_riesz, RieszClass, RieszError, RieszFit, RieszInputs};
use crate::scalar::Scalar;
pub use inference::{
    assemble_eif, contrast, falsification_test, onestep, EffectEstimate, FalsificationTest, FitArtifacts,
};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Estimand(#[from] EstimandError),
    #[error("regression step {step}, fold {fold}: {source}")]
    Learner {
        step: usize,
        fold: usize,
        #[source]
        source: LearnerError,
    },
    #[error("representer for step {step}, fold {fold}: {source}")]
    Riesz {
        step: usize,
        fold: usize,
        #[source]
        source: RieszError,
    },
    #[error("{functional}: {source}")]
    InFunctional {
        functional: String,
        #[source]
        source: Box<EngineError>,
    },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("non-finite estimate for {0}")]
    NonFiniteEstimate(String),
    #[error("functional {0} was not estimated")]
    MissingFunctional(String),
    #[error("standard error of {0} is zero")]
    ZeroSe(String),
    #[error("program needs {0} columns that the data does not have")]
    MissingColumns(&'static str),
}

impl EngineError {
    /// Numerical failures (as opposed to invalid input).
    pub fn is_numerical(&self) -> bool {
        match self {
            EngineError::Learner { source, .. } => source.is_numerical(),
            EngineError::Riesz { source, .. } => !matches!(source, RieszError::BadSettings(_)),
            EngineError::InFunctional { source, .. } => source.is_numerical(),
            EngineError::NonFiniteEstimate(_) | EngineError::ZeroSe(_) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub ensemble: EnsembleSpec,
    pub riesz: RieszClass,
    pub seed: u64,
}

/// Per-step bookkeeping written to the run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub vars: String,
    pub shift: String,
    /// Selected learner(s) per fold.
    pub learners: Vec<String>,
    /// Cross-validated candidate risks per fold (empty with one candidate).
    pub cv_risk: Vec<Vec<f64>>,
    /// Representer loss per fold and its trace.
    pub riesz_loss: Vec<f64>,
    pub riesz_trace: Vec<Vec<f64>>,
    /// Penalty of each fold's linear-basis representer.
    #[serde(default)]
    pub riesz_lambda: Vec<Option<f64>>,
    pub clipped: usize,
    pub positivity: PositivityDiagnostics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalFit<T> {
    pub spec: Option<FunctionalSpec>,
    pub artifacts: FitArtifacts<T>,
    pub plugin: T,
    pub estimate: EffectEstimate,
    pub steps: Vec<StepDiagnostics>,
}

struct RegStep<T> {
    models: Vec<FittedRegressor<T>>,
    nu_obs: Array1<T>,
}

struct RieszStep<T> {
    fits: Vec<RieszFit<T>>,
    alpha: Array1<T>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct RieszKey {
    vars: VarSet,
    suffix: Vec<Step>,
    terminal: ShiftMap,
}

/// FNV-1a over a key description, mixed with the run seed.
pub fn derive_seed(base: u64, key: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ base.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for b in key.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Stateful estimator for one dataset, policy pair and configuration.
pub struct Engine<'a, T: Scalar> {
    data: &'a AugmentedDataset<T>,
    policies: BoundPolicies,
    config: EngineConfig,
    target: TargetType,
    reg_cache: HashMap<Vec<Step>, Arc<RegStep<T>>>,
    outer_cache: HashMap<(Vec<Step>, ShiftMap), Arc<Array1<T>>>,
    riesz_cache: HashMap<RieszKey, Arc<RieszStep<T>>>,
    warnings: Vec<String>,
}

impl<'a, T: Scalar> Engine<'a, T> {
    pub fn new(data: &'a AugmentedDataset<T>, policies: BoundPolicies, config: EngineConfig) -> Self {
        let target = if data.base().outcome_is_binary() {
            TargetType::Binary
        } else {
            TargetType::Continuous
        };
        Self {
            data,
            policies,
            config,
            target,
            reg_cache: HashMap::new(),
            outer_cache: HashMap::new(),
            riesz_cache: HashMap::new(),
            warnings: Vec::new(),
        }
    }

    pub fn target_type(&self) -> TargetType {
        self.target
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    fn warn(&mut self, msg: String) {
        if !self.warnings.contains(&msg) {
            log::warn!("{msg}");
            self.warnings.push(msg);
        }
    }

    fn shifted_treatment(&self, shift: ShiftMap) -> Array1<T> {
        let base = self.data.base();
        let a = base.treatment();
        match shift.set_treatment {
            None => a.to_owned(),
            Some(arm) => {
                let p = self.policies.get(arm);
                let w = base.covariates();
                Array1::from_shape_fn(a.len(), |i| apply_policy(p, a[i], w.row(i)))
            }
        }
    }

    /// Conditioning variables other than A (Z, M, W in that order), with Z
    /// replaced by `Z^pi` when the shift asks for it.
    fn other_vars(&self, vars: VarSet, shift: ShiftMap) -> Array2<T> {
        let base = self.data.base();
        let mut blocks = Vec::new();
        if vars.z {
            blocks.push(if shift.swap_z { self.data.zpi() } else { base.moc() });
        }
        if vars.m {
            blocks.push(base.mediators());
        }
        blocks.push(base.covariates());
        let n = base.n();
        let p: usize = blocks.iter().map(|b| b.ncols()).sum();
        let mut out = Array2::<T>::zeros((n, p));
        let mut at = 0;
        for b in blocks {
            out.slice_mut(ndarray::s![.., at..at + b.ncols()]).assign(&b);
            at += b.ncols();
        }
        out
    }

    fn riesz_inputs(&self, vars: VarSet, shift: ShiftMap) -> RieszInputs<T> {
        RieszInputs::new(self.shifted_treatment(shift), self.other_vars(vars, shift))
    }

    /// Design matrix `[A, Z, M, W]` restricted to `vars` under `shift`.
    pub fn design(&self, vars: VarSet, shift: ShiftMap) -> Array2<T> {
        let inp = self.riesz_inputs(vars, shift);
        let mut out = Array2::<T>::zeros((inp.n(), inp.v.ncols() + 1));
        out.column_mut(0).assign(&inp.a);
        out.slice_mut(ndarray::s![.., 1..]).assign(&inp.v);
        out
    }

    fn check_program(&self, program: &RegressionProgram) -> Result<(), EngineError> {
        program.validate()?;
        let has_z = self.data.base().moc().ncols() > 0;
        if program.steps.iter().any(|s| s.vars.z) && !has_z {
            return Err(EngineError::MissingColumns("intermediate confounder"));
        }
        if program.uses_zpi() && !self.data.has_zpi() {
            return Err(EstimandError::MissingZpi("program".into()).into());
        }
        Ok(())
    }

    fn folds(&self) -> Vec<(Vec<usize>, Vec<usize>)> {
        (1..=self.data.num_folds())
            .map(|f| (self.data.training_rows(f), self.data.fold_rows(f)))
            .collect()
    }

    /// Fits (or reuses) step `k` (0-based) of `program`.
    fn regression(&mut self, program: &RegressionProgram, k: usize) -> Result<Arc<RegStep<T>>, EngineError> {
        let prefix: Vec<Step> = program.steps[..=k].to_vec();
        if let Some(hit) = self.reg_cache.get(&prefix) {
            return Ok(hit.clone());
        }
        let target: Array1<T> = if k == 0 {
            self.data.base().outcome().to_owned()
        } else {
            let inner = self.outer(program, k - 1, program.steps[k].shift)?;
            (*inner).clone()
        };
        let x = self.design(prefix[k].vars, ShiftMap::IDENTITY);
        let folds = self.folds();
        let seed = derive_seed(self.config.seed, &format!("reg|{prefix:?}"));
        let spec = &self.config.ensemble;
        let tt = self.target;
        let fitted: Vec<(FittedRegressor<T>, Vec<(usize, T)>)> = folds
            .par_iter()
            .enumerate()
            .map(|(f, (train, eval))| {
                let xt = x.select(Axis(0), train);
                let yt = target.select(Axis(0), train);
                let model = learners::fit(spec, tt, xt.view(), yt.view(), seed.wrapping_add(f as u64))
                    .map_err(|source| EngineError::Learner {
                        step: k + 1,
                        fold: f + 1,
                        source,
                    })?;
                let xe = x.select(Axis(0), eval);
                let pred = model.predict(xe.view()).map_err(|source| EngineError::Learner {
                    step: k + 1,
                    fold: f + 1,
                    source,
                })?;
                Ok((model, eval.iter().copied().zip(pred.iter().copied()).collect()))
            })
            .collect::<Result<_, EngineError>>()?;
        let mut nu_obs = Array1::<T>::zeros(x.nrows());
        let mut models = Vec::with_capacity(fitted.len());
        for (model, preds) in fitted {
            for (i, v) in preds {
                nu_obs[i] = v;
            }
            for w in &model.warnings {
                self.warn(format!("step {}: {w}", k + 1));
            }
            models.push(model);
        }
        let step = Arc::new(RegStep { models, nu_obs });
        self.reg_cache.insert(prefix, step.clone());
        Ok(step)
    }

    /// Held-out predictions of step `k`'s fitted function under `shift`.
    fn outer(&mut self, program: &RegressionProgram, k: usize, shift: ShiftMap) -> Result<Arc<Array1<T>>, EngineError> {
        let key = (program.steps[..=k].to_vec(), shift);
        if let Some(hit) = self.outer_cache.get(&key) {
            return Ok(hit.clone());
        }
        let reg = self.regression(program, k)?;
        let x = self.design(program.steps[k].vars, shift);
        let mut out = Array1::<T>::zeros(x.nrows());
        let folds = self.folds();
        for (f, (_, eval)) in folds.iter().enumerate() {
            let xe = x.select(Axis(0), eval);
            let pred = reg.models[f].predict(xe.view()).map_err(|source| EngineError::Learner {
                step: k + 1,
                fold: f + 1,
                source,
            })?;
            for (r, &i) in eval.iter().enumerate() {
                out[i] = pred[r];
            }
        }
        let out = Arc::new(out);
        self.outer_cache.insert(key, out.clone());
        Ok(out)
    }

    /// Fits (or reuses) the representer for step `k` (0-based).
    fn representer(&mut self, program: &RegressionProgram, k: usize) -> Result<Arc<RieszStep<T>>, EngineError> {
        let key = RieszKey {
            vars: program.steps[k].vars,
            suffix: program.steps[k + 1..].to_vec(),
            terminal: program.terminal,
        };
        if let Some(hit) = self.riesz_cache.get(&key) {
            return Ok(hit.clone());
        }
        let outer_shift = program.outer_shift(k);
        let vars = program.steps[k].vars;
        let obs = self.riesz_inputs(vars, ShiftMap::IDENTITY);
        let shifted = self.riesz_inputs(vars, outer_shift);
        let next: Option<(Arc<RieszStep<T>>, RieszInputs<T>)> = if k + 1 < program.len() {
            let nxt = self.representer(program, k + 1)?;
            Some((nxt, self.riesz_inputs(program.steps[k + 1].vars, ShiftMap::IDENTITY)))
        } else {
            None
        };
        let folds = self.folds();
        let seed = derive_seed(self.config.seed, &format!("riesz|{key:?}"));
        let class = &self.config.riesz;
        let fits: Vec<(RieszFit<T>, Vec<(usize, T)>)> = folds
            .par_iter()
            .enumerate()
            .map(|(f, (train, eval))| {
                let o = obs.select(train);
                let s = shifted.select(train);
                let weight: Vec<T> = match &next {
                    None => vec![T::one(); train.len()],
                    Some((nxt, inputs)) => nxt.fits[f].eval(&inputs.select(train)).to_vec(),
                };
                let fit = fit_riesz(&o, &s, &weight, class, seed.wrapping_add(f as u64)).map_err(|source| {
                    EngineError::Riesz {
                        step: k + 1,
                        fold: f + 1,
                        source,
                    }
                })?;
                let vals = fit.eval(&obs.select(eval));
                Ok((fit, eval.iter().copied().zip(vals.iter().copied()).collect()))
            })
            .collect::<Result<_, EngineError>>()?;
        let mut alpha = Array1::<T>::zeros(obs.n());
        let mut out = Vec::with_capacity(fits.len());
        for (f, (fit, vals)) in fits.into_iter().enumerate() {
            for (i, v) in vals {
                alpha[i] = v;
            }
            if fit.unmatched_shift > 0 {
                self.warn(format!(
                    "step {} fold {}: {} shifted treatment value(s) fall outside the observed levels; \
                     their representer basis is zero",
                    k + 1,
                    f + 1,
                    fit.unmatched_shift
                ));
            }
            out.push(fit);
        }
        let step = Arc::new(RieszStep { fits: out, alpha });
        self.riesz_cache.insert(key, step.clone());
        Ok(step)
    }

    /// Fits every nuisance of `program` and returns held-out evaluations.
    pub fn run_program(&mut self, program: &RegressionProgram) -> Result<(FitArtifacts<T>, Vec<StepDiagnostics>), EngineError> {
        self.check_program(program)?;
        let kk = program.len();
        let mut nu_obs = Vec::with_capacity(kk);
        let mut nu_outer = Vec::with_capacity(kk);
        let mut alpha = Vec::with_capacity(kk);
        let mut diags = Vec::with_capacity(kk);
        for k in 0..kk {
            let reg = self.regression(program, k)?;
            nu_obs.push(reg.nu_obs.clone());
            nu_outer.push((*self.outer(program, k, program.outer_shift(k))?).clone());
        }
        for k in 0..kk {
            let rz = self.representer(program, k)?;
            let reg = self.regression(program, k)?;
            alpha.push(rz.alpha.clone());
            let weights: Vec<T> = rz.alpha.to_vec();
            let positivity = positivity_diagnostics(self.data, &weights, self.config.riesz.clip);
            if positivity.flagged {
                self.warn(format!(
                    "step {}: {:.1}% of representer values at the clip bound {}; positivity may be violated",
                    k + 1,
                    100.0 * positivity.clipped_fraction,
                    self.config.riesz.clip
                ));
            }
            diags.push(StepDiagnostics {
                step: k + 1,
                vars: program.steps[k].vars.to_string(),
                shift: program.steps[k].shift.to_string(),
                learners: reg.models.iter().map(FittedRegressor::selection).collect(),
                cv_risk: reg.models.iter().map(|m| m.cv_risk.clone()).collect(),
                riesz_loss: rz.fits.iter().map(|f| f.loss).collect(),
                riesz_trace: rz.fits.iter().map(|f| f.trace.clone()).collect(),
                riesz_lambda: rz.fits.iter().map(|f| f.lambda).collect(),
                clipped: positivity.clipped,
                positivity,
            });
        }
        let artifacts = FitArtifacts {
            y: self.data.base().outcome().to_owned(),
            nu_obs,
            nu_outer,
            alpha,
        };
        Ok((artifacts, diags))
    }

    /// Plug-in and one-step estimates of one functional.
    pub fn estimate_program(
        &mut self,
        name: &str,
        spec: Option<FunctionalSpec>,
        program: &RegressionProgram,
    ) -> Result<FunctionalFit<T>, EngineError> {
        let wrap = |e: EngineError| EngineError::InFunctional {
            functional: name.to_string(),
            source: Box::new(e),
        };
        let (artifacts, steps) = self.run_program(program).map_err(wrap)?;
        let plugin = artifacts.plugin();
        let unc = assemble_eif(&artifacts, T::zero()).map_err(wrap)?;
        let estimate = onestep(name, plugin, &unc).map_err(wrap)?;
        if estimate.se == 0.0 {
            self.warn(format!("{name}: influence function is constant; standard error reported as 0"));
        }
        Ok(FunctionalFit {
            spec,
            artifacts,
            plugin,
            estimate,
            steps,
        })
    }

    pub fn estimate_functional(&mut self, spec: FunctionalSpec) -> Result<FunctionalFit<T>, EngineError> {
        let has_moc = self.data.base().moc().ncols() > 0;
        let program = spec.program(has_moc)?;
        self.estimate_program(&spec.to_string(), Some(spec), &program)
    }

    /// Estimates each functional once, in the given order.
    pub fn estimate_functionals(
        &mut self,
        specs: &[FunctionalSpec],
    ) -> Result<BTreeMap<FunctionalSpec, FunctionalFit<T>>, EngineError> {
        let mut out = BTreeMap::new();
        for &s in specs {
            if !out.contains_key(&s) {
                out.insert(s, self.estimate_functional(s)?);
            }
        }
        Ok(out)
    }
}

/// Runs one program on fresh caches and returns its artifacts and plug-in.
pub fn run_program<T: Scalar>(
    program: &RegressionProgram,
    data: &AugmentedDataset<T>,
    policies: BoundPolicies,
    config: EngineConfig,
) -> Result<(FitArtifacts<T>, T), EngineError> {
    let mut engine = Engine::new(data, policies, config);
    let (art, _) = engine.run_program(program)?;
    let plugin = art.plugin();
    Ok((art, plugin))
}
