//! Effect reports: schema-versioned JSON and a fixed-width table.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ReportFormat;
use crate::engine::{EffectEstimate, FalsificationTest, StepDiagnostics};
use crate::error::{Error, Result};
use crate::estimands::EffectFamily;
use crate::riesz::RieszClass;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectRow {
    pub name: String,
    pub estimate: f64,
    pub plugin: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl From<&EffectEstimate> for EffectRow {
    fn from(e: &EffectEstimate) -> Self {
        Self {
            name: e.name.clone(),
            estimate: e.estimate,
            plugin: e.plugin,
            se: e.se,
            ci_low: e.ci_low,
            ci_high: e.ci_high,
        }
    }
}

/// Components that add up to the total effect, with both sides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub components: Vec<String>,
    pub component_sum: f64,
    pub total: String,
    pub total_estimate: f64,
    pub difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalRecord {
    pub name: String,
    pub plugin: f64,
    pub estimate: f64,
    pub se: f64,
    pub steps: Vec<StepDiagnostics>,
}

/// Everything needed to reproduce or audit a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub data_hash: String,
    pub seed: u64,
    pub n: usize,
    pub crossfit_folds: usize,
    pub fold_sizes: Vec<usize>,
    pub outcome_type: String,
    pub learners: Vec<String>,
    pub riesz: RieszClass,
    pub functionals: Vec<FunctionalRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectReport {
    pub schema_version: u32,
    pub family: EffectFamily,
    pub d0: String,
    pub d1: String,
    pub n: usize,
    pub effects: Vec<EffectRow>,
    pub decomposition: Option<Decomposition>,
    pub falsification: Option<FalsificationTest>,
    pub warnings: Vec<String>,
    pub manifest: Manifest,
}

/// Three decimals, without a negative sign on values that round to zero.
pub fn fmt3(x: f64) -> String {
    let s = format!("{x:.3}");
    if s == "-0.000" {
        "0.000".into()
    } else {
        s
    }
}

impl EffectReport {
    pub fn effect(&self, name: &str) -> Option<&EffectRow> {
        self.effects.iter().find(|e| e.name == name)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: EffectReport = serde_json::from_str(text).map_err(|e| Error::Report(e.to_string()))?;
        if r.schema_version != SCHEMA_VERSION {
            return Err(Error::Report(format!(
                "unsupported schema version {} (expected {SCHEMA_VERSION})",
                r.schema_version
            )));
        }
        Ok(r)
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Effect family {}  (d1: {}; d0: {}; n = {})", self.family, self.d1, self.d0, self.n);
        let width = self.effects.iter().map(|e| e.name.len()).max().unwrap_or(6).max(6);
        let _ = writeln!(out, "{:<width$}  {:>9}  {:<20}", "Effect", "Estimate", "95% CI");
        for e in &self.effects {
            let ci = format!("({}, {})", fmt3(e.ci_low), fmt3(e.ci_high));
            let _ = writeln!(out, "{:<width$}  {:>9}  {:<20}", e.name, fmt3(e.estimate), ci);
        }
        if let Some(d) = &self.decomposition {
            let _ = writeln!(
                out,
                "Decomposition: {} = {}; {} = {}",
                d.components.join(" + "),
                fmt3(d.component_sum),
                d.total,
                fmt3(d.total_estimate)
            );
        }
        if let Some(t) = &self.falsification {
            let _ = writeln!(
                out,
                "Falsification test of R = 0: z = {:.3}, p = {:.3}; {}",
                t.statistic, t.p_value, t.decision
            );
        }
        out
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Json => self.to_json(),
            ReportFormat::Table => self.render_table(),
        }
    }

    pub fn write(&self, path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
        std::fs::write(path, self.render(format))?;
        Ok(())
    }
}
