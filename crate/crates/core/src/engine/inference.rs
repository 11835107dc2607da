//! Influence-function assembly, one-step estimates, linear contrasts and the
//! remainder test.

use std::collections::BTreeMap;

use ndarray::Array1;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::EngineError;
use crate::estimands::{ContrastTable, FunctionalSpec};
use crate::scalar::{mean, sample_sd, Scalar};

pub const Z_95: f64 = 1.96;
pub const TEST_LEVEL: f64 = 0.05;

/// Held-out nuisance evaluations for one program with steps `1..=K`
/// (stored at index `k - 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct FitArtifacts<T> {
    pub y: Array1<T>,
    /// `ν_k` at the observed inputs.
    pub nu_obs: Vec<Array1<T>>,
    /// `ν_k` under the shift its consumer applies (`S_{k+1}`, or the
    /// terminal shift for `k = K`).
    pub nu_outer: Vec<Array1<T>>,
    /// `α_k` at the observed inputs.
    pub alpha: Vec<Array1<T>>,
}

impl<T: Scalar> FitArtifacts<T> {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn steps(&self) -> usize {
        self.nu_obs.len()
    }

    /// Mean of `ν_K` under the terminal shift.
    pub fn plugin(&self) -> T {
        self.nu_outer
            .last()
            .map_or_else(T::zero, |v| v.sum() / T::of_usize(v.len().max(1)))
    }

    fn check(&self) -> Result<(), EngineError> {
        let n = self.n();
        let k = self.nu_obs.len();
        if k == 0 || self.nu_outer.len() != k || self.alpha.len() != k {
            return Err(EngineError::LengthMismatch(format!(
                "{} observed, {} shifted, {} representer arrays",
                k,
                self.nu_outer.len(),
                self.alpha.len()
            )));
        }
        for v in self.nu_obs.iter().chain(&self.nu_outer).chain(&self.alpha) {
            if v.len() != n {
                return Err(EngineError::LengthMismatch(format!(
                    "evaluation array of length {} for {} rows",
                    v.len(),
                    n
                )));
            }
        }
        Ok(())
    }
}

/// `φ_i = α_1 (Y − ν_1) + Σ_{k≥2} α_k (ν_{k−1}(S_k x) − ν_k(x)) + ν_K(S_θ x) − θ`.
pub fn assemble_eif<T: Scalar>(art: &FitArtifacts<T>, theta: T) -> Result<Array1<T>, EngineError> {
    art.check()?;
    let k = art.steps();
    let mut phi = &art.nu_outer[k - 1] - theta;
    phi += &(&art.alpha[0] * &(&art.y - &art.nu_obs[0]));
    for j in 1..k {
        phi += &(&art.alpha[j] * &(&art.nu_outer[j - 1] - &art.nu_obs[j]));
    }
    Ok(phi)
}

/// A point estimate with its influence function and Wald interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub name: String,
    pub plugin: f64,
    pub estimate: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Centered influence function values, one per row.
    #[serde(skip)]
    pub eif: Vec<f64>,
}

impl EffectEstimate {
    fn from_parts(name: &str, plugin: f64, estimate: f64, eif: Vec<f64>) -> Result<Self, EngineError> {
        if !estimate.is_finite() || eif.iter().any(|v| !v.is_finite()) {
            return Err(EngineError::NonFiniteEstimate(name.to_string()));
        }
        let n = eif.len().max(1) as f64;
        let se = sample_sd(&eif) / n.sqrt();
        Ok(Self {
            name: name.to_string(),
            plugin,
            estimate,
            se,
            ci_low: estimate - Z_95 * se,
            ci_high: estimate + Z_95 * se,
            eif,
        })
    }

    pub fn covers(&self, value: f64) -> bool {
        self.ci_low <= value && value <= self.ci_high
    }
}

/// One-step estimate from the plug-in value and the uncentered influence
/// function (`assemble_eif` with `θ = 0`).
pub fn onestep<T: Scalar>(name: &str, plugin: T, uncentered: &Array1<T>) -> Result<EffectEstimate, EngineError> {
    let raw: Vec<f64> = uncentered.iter().map(|v| v.as_f64()).collect();
    let est = mean(&raw);
    let eif: Vec<f64> = raw.iter().map(|v| v - est).collect();
    EffectEstimate::from_parts(name, plugin.as_f64(), est, eif)
}

/// Signed sums of functional estimates and their influence functions.
pub fn contrast(
    estimates: &BTreeMap<FunctionalSpec, EffectEstimate>,
    table: &ContrastTable,
) -> Result<Vec<EffectEstimate>, EngineError> {
    table
        .effects
        .iter()
        .map(|c| {
            let mut plugin = 0.0;
            let mut est = 0.0;
            let mut eif: Option<Vec<f64>> = None;
            for (sign, f) in &c.terms {
                let e = estimates
                    .get(f)
                    .ok_or_else(|| EngineError::MissingFunctional(f.to_string()))?;
                let s = *sign as f64;
                plugin += s * e.plugin;
                est += s * e.estimate;
                match eif.as_mut() {
                    None => eif = Some(e.eif.iter().map(|v| s * v).collect()),
                    Some(acc) => {
                        if acc.len() != e.eif.len() {
                            return Err(EngineError::LengthMismatch(format!(
                                "{f} has {} influence values, expected {}",
                                e.eif.len(),
                                acc.len()
                            )));
                        }
                        for (a, v) in acc.iter_mut().zip(&e.eif) {
                            *a += s * v;
                        }
                    }
                }
            }
            EffectEstimate::from_parts(&c.name, plugin, est, eif.unwrap_or_default())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FalsificationTest {
    pub statistic: f64,
    pub p_value: f64,
    pub level: f64,
    pub reject: bool,
    pub decision: String,
}

pub const DECISION_REJECT: &str =
    "reject R = 0: evidence of intermediate confounding";
pub const DECISION_KEEP: &str =
    "fail to reject R = 0: no conclusion can be made without other information";

/// Wald test of `R = 0` at level 0.05.
pub fn falsification_test(remainder: &EffectEstimate) -> Result<FalsificationTest, EngineError> {
    if !(remainder.se > 0.0) {
        return Err(EngineError::ZeroSe(remainder.name.clone()));
    }
    let z = remainder.estimate / remainder.se;
    let normal = Normal::standard();
    let p = (2.0 * (1.0 - normal.cdf(z.abs()))).clamp(0.0, 1.0);
    let reject = p < TEST_LEVEL;
    Ok(FalsificationTest {
        statistic: z,
        p_value: p,
        level: TEST_LEVEL,
        reject,
        decision: if reject { DECISION_REJECT } else { DECISION_KEEP }.to_string(),
    })
}
