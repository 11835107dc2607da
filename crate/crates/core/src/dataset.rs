//! Tabular mediation data: role assignment, CSV ingestion, permuted
//! intermediate-confounder columns, and cross-fitting folds.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::column_moments;
use crate::scalar::{quantile_sorted, Scalar};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("column `{0}` not found")]
    MissingColumn(String),
    #[error("row {row}, column `{col}`: not a number")]
    NonNumericCell { row: usize, col: String },
    #[error("row {row}, column `{col}`: missing value")]
    MissingValue { row: usize, col: String },
    #[error("role conflict: {0}")]
    RoleConflict(String),
    #[error("at least one mediator column is required")]
    NoMediators,
    #[error("dataset has no rows")]
    Empty,
    #[error("column `{col}` has {got} values, expected {expected}")]
    LengthMismatch { col: String, got: usize, expected: usize },
    #[error("invalid fold count {v} for {n} rows")]
    InvalidFoldCount { v: usize, n: usize },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Non-fatal conditions raised while preparing data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DataWarning {
    /// A treatment stratum held fewer than two rows, so its Z values were
    /// left unpermuted.
    StratumTooSmall { level: f64, rows: usize },
}

impl fmt::Display for DataWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataWarning::StratumTooSmall { level, rows } => write!(
                f,
                "treatment stratum {level} has {rows} row(s); Z^pi left unpermuted there"
            ),
        }
    }
}

/// Column names for each variable role: covariates W, treatment A,
/// intermediate confounders Z (`moc`), mediators M and outcome Y.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableRoles {
    #[serde(default)]
    pub covariates: Vec<String>,
    pub treatment: String,
    #[serde(default)]
    pub moc: Vec<String>,
    pub mediators: Vec<String>,
    pub outcome: String,
    #[serde(default)]
    pub id: Option<String>,
}

impl VariableRoles {
    pub fn new(
        covariates: &[&str],
        treatment: &str,
        moc: &[&str],
        mediators: &[&str],
        outcome: &str,
    ) -> Self {
        let own = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        Self {
            covariates: own(covariates),
            treatment: treatment.to_string(),
            moc: own(moc),
            mediators: own(mediators),
            outcome: outcome.to_string(),
            id: None,
        }
    }

    pub fn with_id(mut self, id: &str) -> Self {
        self.id = Some(id.to_string());
        self
    }

    pub fn has_moc(&self) -> bool {
        !self.moc.is_empty()
    }

    /// Same roles with the intermediate confounders dropped.
    pub fn without_moc(&self) -> Self {
        Self {
            moc: Vec::new(),
            ..self.clone()
        }
    }

    /// Every column referenced by a role, in W, A, Z, M, Y order.
    pub fn columns(&self) -> Vec<&str> {
        let mut out: Vec<&str> = self.covariates.iter().map(String::as_str).collect();
        out.push(&self.treatment);
        out.extend(self.moc.iter().map(String::as_str));
        out.extend(self.mediators.iter().map(String::as_str));
        out.push(&self.outcome);
        out
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.mediators.is_empty() {
            return Err(DatasetError::NoMediators);
        }
        let mut seen = HashSet::new();
        for c in self.columns().into_iter().chain(self.id.as_deref()) {
            if !seen.insert(c) {
                return Err(DatasetError::RoleConflict(format!(
                    "column `{c}` is assigned to more than one role"
                )));
            }
        }
        Ok(())
    }
}

/// Observed data `(W, A, Z, M, Y)` with one row per unit.
#[derive(Debug, Clone, PartialEq)]
pub struct MediationDataset<T> {
    roles: VariableRoles,
    w: Array2<T>,
    a: Array1<T>,
    z: Array2<T>,
    m: Array2<T>,
    y: Array1<T>,
    ids: Option<Vec<String>>,
}

fn is_missing_token(s: &str) -> bool {
    matches!(s, "" | "NA" | "na" | "NaN" | "nan" | "null" | "NULL" | ".")
}

impl<T: Scalar> MediationDataset<T> {
    /// Builds a dataset from named numeric columns. Extra columns are ignored.
    pub fn from_columns(
        roles: VariableRoles,
        columns: &BTreeMap<String, Vec<T>>,
        ids: Option<Vec<String>>,
    ) -> Result<Self, DatasetError> {
        roles.validate()?;
        let get = |name: &str| {
            columns
                .get(name)
                .ok_or_else(|| DatasetError::MissingColumn(name.to_string()))
        };
        let n = get(&roles.outcome)?.len();
        if n == 0 {
            return Err(DatasetError::Empty);
        }
        let block = |names: &[String]| -> Result<Array2<T>, DatasetError> {
            let mut out = Array2::<T>::zeros((n, names.len()));
            for (j, name) in names.iter().enumerate() {
                let col = get(name)?;
                if col.len() != n {
                    return Err(DatasetError::LengthMismatch {
                        col: name.clone(),
                        got: col.len(),
                        expected: n,
                    });
                }
                for (i, &v) in col.iter().enumerate() {
                    if !v.is_finite() {
                        return Err(DatasetError::MissingValue {
                            row: i + 1,
                            col: name.clone(),
                        });
                    }
                    out[[i, j]] = v;
                }
            }
            Ok(out)
        };
        let w = block(&roles.covariates)?;
        let a = block(std::slice::from_ref(&roles.treatment))?.column(0).to_owned();
        let z = block(&roles.moc)?;
        let m = block(&roles.mediators)?;
        let y = block(std::slice::from_ref(&roles.outcome))?.column(0).to_owned();
        if let Some(ids) = &ids {
            if ids.len() != n {
                return Err(DatasetError::LengthMismatch {
                    col: roles.id.clone().unwrap_or_else(|| "id".into()),
                    got: ids.len(),
                    expected: n,
                });
            }
        }
        Ok(Self { roles, w, a, z, m, y, ids })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }
    pub fn roles(&self) -> &VariableRoles {
        &self.roles
    }
    pub fn covariates(&self) -> ArrayView2<'_, T> {
        self.w.view()
    }
    pub fn treatment(&self) -> ArrayView1<'_, T> {
        self.a.view()
    }
    pub fn moc(&self) -> ArrayView2<'_, T> {
        self.z.view()
    }
    pub fn mediators(&self) -> ArrayView2<'_, T> {
        self.m.view()
    }
    pub fn outcome(&self) -> ArrayView1<'_, T> {
        self.y.view()
    }
    pub fn ids(&self) -> Option<&[String]> {
        self.ids.as_deref()
    }

    /// Distinct treatment values in ascending order.
    pub fn treatment_levels(&self) -> Vec<T> {
        distinct_sorted(self.a.iter().copied())
    }

    pub fn outcome_is_binary(&self) -> bool {
        self.y.iter().all(|&v| v == T::zero() || v == T::one())
            && self.y.iter().any(|&v| v == T::zero())
            && self.y.iter().any(|&v| v == T::one())
    }

    /// Restricts to the given roles (which must name a subset of the current
    /// columns), e.g. to drop the intermediate confounders.
    pub fn with_roles(&self, roles: VariableRoles) -> Result<Self, DatasetError> {
        let mut cols = BTreeMap::new();
        self.for_each_column(|name, col| {
            cols.insert(name.to_string(), col);
        });
        Self::from_columns(roles, &cols, self.ids.clone())
    }

    fn for_each_column(&self, mut f: impl FnMut(&str, Vec<T>)) {
        for (j, name) in self.roles.covariates.iter().enumerate() {
            f(name, self.w.column(j).to_vec());
        }
        f(&self.roles.treatment, self.a.to_vec());
        for (j, name) in self.roles.moc.iter().enumerate() {
            f(name, self.z.column(j).to_vec());
        }
        for (j, name) in self.roles.mediators.iter().enumerate() {
            f(name, self.m.column(j).to_vec());
        }
        f(&self.roles.outcome, self.y.to_vec());
    }

    /// Writes the role columns as CSV in W, A, Z, M, Y order.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        let mut wtr = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = Vec::new();
        let mut cols: Vec<Vec<T>> = Vec::new();
        if let (Some(name), Some(ids)) = (&self.roles.id, &self.ids) {
            header.push(name.clone());
            let _ = ids;
        }
        self.for_each_column(|name, col| {
            header.push(name.to_string());
            cols.push(col);
        });
        wtr.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec: Vec<String> = Vec::with_capacity(header.len());
            if let (Some(_), Some(ids)) = (&self.roles.id, &self.ids) {
                rec.push(ids[i].clone());
            }
            rec.extend(cols.iter().map(|c| format!("{}", c[i])));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

pub(crate) fn distinct_sorted<T: Scalar>(values: impl Iterator<Item = T>) -> Vec<T> {
    let mut v: Vec<T> = values.collect();
    v.sort_by(|x, y| x.partial_cmp(y).expect("finite values"));
    v.dedup();
    v
}

/// Reads a UTF-8, comma-separated file with a header row. Only columns named
/// in `roles` are parsed; row order is preserved.
pub fn load_csv<T: Scalar>(
    path: impl AsRef<Path>,
    roles: &VariableRoles,
) -> Result<MediationDataset<T>, DatasetError> {
    roles.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = rdr.headers()?.clone();
    let index_of = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DatasetError::MissingColumn(name.to_string()))
    };
    let wanted: Vec<(String, usize)> = roles
        .columns()
        .into_iter()
        .map(|c| index_of(c).map(|i| (c.to_string(), i)))
        .collect::<Result<_, _>>()?;
    let id_idx = roles.id.as_deref().map(index_of).transpose()?;

    let mut columns: BTreeMap<String, Vec<T>> =
        wanted.iter().map(|(c, _)| (c.clone(), Vec::new())).collect();
    let mut ids = id_idx.map(|_| Vec::new());
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let row = r + 1;
        for (name, idx) in &wanted {
            let cell = record.get(*idx).unwrap_or("");
            if is_missing_token(cell) {
                return Err(DatasetError::MissingValue { row, col: name.clone() });
            }
            let v: f64 = cell.parse().map_err(|_| DatasetError::NonNumericCell {
                row,
                col: name.clone(),
            })?;
            if !v.is_finite() {
                return Err(DatasetError::MissingValue { row, col: name.clone() });
            }
            columns.get_mut(name).expect("pre-seeded").push(T::of(v));
        }
        if let (Some(idx), Some(ids)) = (id_idx, ids.as_mut()) {
            let cell = record.get(idx).unwrap_or("");
            if is_missing_token(cell) {
                return Err(DatasetError::MissingValue {
                    row,
                    col: roles.id.clone().unwrap_or_default(),
                });
            }
            ids.push(cell.to_string());
        }
    }
    MediationDataset::from_columns(roles.clone(), &columns, ids)
}

/// How permuted intermediate-confounder columns are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PermutationStrategy {
    /// Uniform permutation of Z rows within each treatment level.
    #[default]
    #[serde(alias = "treatment")]
    TreatmentStratum,
    /// Within each treatment level, rows are paired with their nearest
    /// neighbour in standardized covariate space and their Z values swapped.
    #[serde(alias = "matched")]
    MatchedWithinCovariates,
}

/// Dataset plus the permuted copy `Z^pi` and fold labels.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedDataset<T> {
    base: MediationDataset<T>,
    zpi: Array2<T>,
    folds: Vec<usize>,
    num_folds: usize,
    seed: u64,
    fold_seed: u64,
    strategy: PermutationStrategy,
    warnings: Vec<DataWarning>,
}

impl<T: Scalar> AugmentedDataset<T> {
    pub fn base(&self) -> &MediationDataset<T> {
        &self.base
    }
    pub fn n(&self) -> usize {
        self.base.n()
    }
    pub fn zpi(&self) -> ArrayView2<'_, T> {
        self.zpi.view()
    }
    pub fn has_zpi(&self) -> bool {
        self.zpi.ncols() > 0 && self.zpi.ncols() == self.base.z.ncols()
    }
    /// Fold label of every row, in `1..=num_folds`.
    pub fn folds(&self) -> &[usize] {
        &self.folds
    }
    pub fn num_folds(&self) -> usize {
        self.num_folds
    }
    /// Seed used for the permutation.
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn fold_seed(&self) -> u64 {
        self.fold_seed
    }
    pub fn strategy(&self) -> PermutationStrategy {
        self.strategy
    }
    pub fn warnings(&self) -> &[DataWarning] {
        &self.warnings
    }

    /// Rows whose fold label is `fold`.
    pub fn fold_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.folds[i] == fold).collect()
    }

    /// Rows used to train the models evaluated on `fold`: all rows when
    /// there is a single fold, otherwise the complement of `fold`.
    pub fn training_rows(&self, fold: usize) -> Vec<usize> {
        if self.num_folds == 1 {
            (0..self.n()).collect()
        } else {
            (0..self.n()).filter(|&i| self.folds[i] != fold).collect()
        }
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_folds];
        for &f in &self.folds {
            sizes[f - 1] += 1;
        }
        sizes
    }
}

fn treatment_strata<T: Scalar>(a: ArrayView1<T>) -> Vec<(T, Vec<usize>)> {
    let mut idx: Vec<usize> = (0..a.len()).collect();
    idx.sort_by(|&i, &j| a[i].partial_cmp(&a[j]).expect("finite").then(i.cmp(&j)));
    let mut out: Vec<(T, Vec<usize>)> = Vec::new();
    for i in idx {
        match out.last_mut() {
            Some((lvl, rows)) if *lvl == a[i] => rows.push(i),
            _ => out.push((a[i], vec![i])),
        }
    }
    out
}

/// Adds the within-stratum permuted copy `Z^pi` of the intermediate
/// confounders. Every row starts in fold 1; see [`make_folds`].
pub fn augment_zpi<T: Scalar>(
    data: MediationDataset<T>,
    seed: u64,
    strategy: PermutationStrategy,
) -> AugmentedDataset<T> {
    let n = data.n();
    let q = data.z.ncols();
    let mut zpi = data.z.clone();
    let mut warnings = Vec::new();
    if q > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let wstd = standardized(data.w.view());
        for (level, rows) in treatment_strata(data.a.view()) {
            if rows.len() < 2 {
                warnings.push(DataWarning::StratumTooSmall {
                    level: level.as_f64(),
                    rows: rows.len(),
                });
                continue;
            }
            let donors: Vec<usize> = match strategy {
                PermutationStrategy::TreatmentStratum => {
                    let mut perm = rows.clone();
                    perm.shuffle(&mut rng);
                    perm
                }
                PermutationStrategy::MatchedWithinCovariates => {
                    matched_donors(&rows, wstd.view(), &mut rng)
                }
            };
            for (&r, &d) in rows.iter().zip(&donors) {
                for j in 0..q {
                    zpi[[r, j]] = data.z[[d, j]];
                }
            }
        }
    }
    for wmsg in &warnings {
        log::warn!("{wmsg}");
    }
    AugmentedDataset {
        base: data,
        zpi,
        folds: vec![1; n],
        num_folds: 1,
        seed,
        fold_seed: 0,
        strategy,
        warnings,
    }
}

fn standardized<T: Scalar>(w: ArrayView2<T>) -> Array2<T> {
    let (mu, sd) = column_moments(w);
    let mut out = w.to_owned();
    for j in 0..w.ncols() {
        let s = if sd[j] > T::zero() { sd[j] } else { T::one() };
        out.column_mut(j).mapv_inplace(|v| (v - mu[j]) / s);
    }
    out
}

/// Greedy nearest-neighbour pairing inside one stratum; returns, for each
/// row of `rows`, the row whose Z it receives.
fn matched_donors<T: Scalar>(rows: &[usize], w: ArrayView2<T>, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.shuffle(rng);
    let mut rank = vec![0usize; rows.len()];
    for (r, &k) in order.iter().enumerate() {
        rank[k] = r;
    }
    let mut donor: Vec<usize> = rows.to_vec();
    let mut paired = vec![false; rows.len()];
    for &k in &order {
        if paired[k] {
            continue;
        }
        let mut best: Option<(T, usize, usize)> = None;
        for c in 0..rows.len() {
            if c == k || paired[c] {
                continue;
            }
            let d: T = w
                .row(rows[k])
                .iter()
                .zip(w.row(rows[c]).iter())
                .map(|(&x, &y)| (x - y) * (x - y))
                .sum();
            let better = match best {
                None => true,
                Some((bd, br, _)) => d < bd || (d == bd && rank[c] < br),
            };
            if better {
                best = Some((d, rank[c], c));
            }
        }
        if let Some((_, _, c)) = best {
            paired[k] = true;
            paired[c] = true;
            donor[k] = rows[c];
            donor[c] = rows[k];
        }
    }
    donor
}

/// Assigns `v` near-equal folds. With a binary outcome (and no id column)
/// the assignment is stratified on the outcome; with an id column all rows
/// sharing an id land in the same fold.
pub fn make_folds<T: Scalar>(
    data: AugmentedDataset<T>,
    v: usize,
    seed: u64,
) -> Result<AugmentedDataset<T>, DatasetError> {
    let n = data.n();
    if v < 1 || v > n {
        return Err(DatasetError::InvalidFoldCount { v, n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![1usize; n];
    if v > 1 {
        if let Some(ids) = data.base.ids() {
            let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, id) in ids.iter().enumerate() {
                groups.entry(id.as_str()).or_default().push(i);
            }
            if groups.len() < v {
                return Err(DatasetError::InvalidFoldCount { v, n: groups.len() });
            }
            let mut keys: Vec<&str> = groups.keys().copied().collect();
            keys.shuffle(&mut rng);
            for (pos, key) in keys.iter().enumerate() {
                for &i in &groups[key] {
                    folds[i] = pos % v + 1;
                }
            }
        } else {
            let order: Vec<usize> = if data.base.outcome_is_binary() {
                let y = data.base.outcome();
                let mut pos: Vec<usize> = (0..n).filter(|&i| y[i] == T::one()).collect();
                let mut neg: Vec<usize> = (0..n).filter(|&i| y[i] != T::one()).collect();
                pos.shuffle(&mut rng);
                neg.shuffle(&mut rng);
                pos.into_iter().chain(neg).collect()
            } else {
                let mut all: Vec<usize> = (0..n).collect();
                all.shuffle(&mut rng);
                all
            };
            for (p, i) in order.into_iter().enumerate() {
                folds[i] = p % v + 1;
            }
        }
    }
    Ok(AugmentedDataset {
        folds,
        num_folds: v,
        fold_seed: seed,
        ..data
    })
}

/// Summary of estimated weights used to judge practical positivity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositivityDiagnostics {
    pub min: f64,
    pub q05: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub q95: f64,
    pub max: f64,
    pub bound: f64,
    pub clipped: usize,
    pub clipped_fraction: f64,
    /// Largest absolute weight within each treatment level.
    pub max_by_treatment: Vec<(f64, f64)>,
    /// Raised when more than 1% of weights sit at the clipping bound.
    pub flagged: bool,
}

/// Fraction of clipped weights above which positivity is flagged.
pub const POSITIVITY_FLAG_FRACTION: f64 = 0.01;

pub fn positivity_diagnostics<T: Scalar>(
    data: &AugmentedDataset<T>,
    weights: &[T],
    bound: f64,
) -> PositivityDiagnostics {
    let mut sorted: Vec<f64> = weights.iter().map(|w| w.as_f64()).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let clipped = sorted
        .iter()
        .filter(|w| w.abs() >= bound * (1.0 - 1e-12))
        .count();
    let frac = if sorted.is_empty() {
        0.0
    } else {
        clipped as f64 / sorted.len() as f64
    };
    let mut max_by_treatment = Vec::new();
    if weights.len() == data.n() {
        for (level, rows) in treatment_strata(data.base.treatment()) {
            let mx = rows
                .iter()
                .map(|&i| weights[i].as_f64().abs())
                .fold(0.0, f64::max);
            max_by_treatment.push((level.as_f64(), mx));
        }
    }
    PositivityDiagnostics {
        min: sorted.first().copied().unwrap_or(f64::NAN),
        q05: quantile_sorted(&sorted, 0.05),
        q25: quantile_sorted(&sorted, 0.25),
        median: quantile_sorted(&sorted, 0.5),
        q75: quantile_sorted(&sorted, 0.75),
        q95: quantile_sorted(&sorted, 0.95),
        max: sorted.last().copied().unwrap_or(f64::NAN),
        bound,
        clipped,
        clipped_fraction: frac,
        max_by_treatment,
        flagged: frac > POSITIVITY_FLAG_FRACTION,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn toy(z: &[f64], a: &[f64]) -> MediationDataset<f64> {
        let n = z.len();
        let mut cols = BTreeMap::new();
        cols.insert("z".to_string(), z.to_vec());
        cols.insert("a".to_string(), a.to_vec());
        cols.insert("w".to_string(), (0..n).map(|i| i as f64).collect());
        cols.insert("m".to_string(), vec![0.5; n]);
        cols.insert("y".to_string(), (0..n).map(|i| (i % 3) as f64).collect());
        MediationDataset::from_columns(VariableRoles::new(&["w"], "a", &["z"], &["m"], "y"), &cols, None)
            .unwrap()
    }

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn missing_outcome_is_rejected() {
        let f = write_tmp("a,m,y\n1,2,3\n0,1,NA\n1,1,1\n");
        let roles = VariableRoles::new(&[], "a", &[], &["m"], "y");
        let err = load_csv::<f64>(f.path(), &roles).unwrap_err();
        assert!(matches!(err, DatasetError::MissingValue { row: 2, ref col } if col == "y"));
    }

    #[test]
    fn empty_covariates_are_accepted() {
        let f = write_tmp("a,m,y,extra\n1,2,3,foo\n0,1,2,bar\n");
        let roles = VariableRoles::new(&[], "a", &[], &["m"], "y");
        let d = load_csv::<f64>(f.path(), &roles).unwrap();
        assert_eq!(d.n(), 2);
        assert_eq!(d.covariates().ncols(), 0);
        assert_eq!(d.outcome().to_vec(), vec![3.0, 2.0]);
    }

    #[test]
    fn missing_column_and_text_cells() {
        let f = write_tmp("a,m,y\n1,x,3\n");
        let roles = VariableRoles::new(&["w"], "a", &[], &["m"], "y");
        assert!(matches!(load_csv::<f64>(f.path(), &roles), Err(DatasetError::MissingColumn(c)) if c == "w"));
        let roles = VariableRoles::new(&[], "a", &[], &["m"], "y");
        assert!(matches!(
            load_csv::<f64>(f.path(), &roles),
            Err(DatasetError::NonNumericCell { row: 1, .. })
        ));
    }

    #[test]
    fn overlapping_roles_conflict() {
        let roles = VariableRoles::new(&["a"], "a", &[], &["m"], "y");
        assert!(matches!(roles.validate(), Err(DatasetError::RoleConflict(_))));
        let roles = VariableRoles::new(&[], "a", &[], &[], "y");
        assert!(matches!(roles.validate(), Err(DatasetError::NoMediators)));
    }

    #[test]
    fn zpi_permutes_within_treatment_strata() {
        let d = toy(&[1.0, 2.0, 3.0, 4.0], &[0.0, 0.0, 1.0, 1.0]);
        let aug = augment_zpi(d, 11, PermutationStrategy::TreatmentStratum);
        let zpi = aug.zpi();
        let mut s0 = vec![zpi[[0, 0]], zpi[[1, 0]]];
        let mut s1 = vec![zpi[[2, 0]], zpi[[3, 0]]];
        s0.sort_by(|a, b| a.partial_cmp(b).unwrap());
        s1.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(s0, vec![1.0, 2.0]);
        assert_eq!(s1, vec![3.0, 4.0]);
    }

    #[test]
    fn no_moc_passes_through() {
        let mut cols = BTreeMap::new();
        cols.insert("a".to_string(), vec![0.0, 1.0]);
        cols.insert("m".to_string(), vec![0.0, 1.0]);
        cols.insert("y".to_string(), vec![0.0, 1.0]);
        let d = MediationDataset::<f64>::from_columns(
            VariableRoles::new(&[], "a", &[], &["m"], "y"),
            &cols,
            None,
        )
        .unwrap();
        let aug = augment_zpi(d.clone(), 1, PermutationStrategy::TreatmentStratum);
        assert_eq!(aug.zpi().ncols(), 0);
        assert!(!aug.has_zpi());
        assert_eq!(aug.base(), &d);
    }

    #[test]
    fn singleton_stratum_warns_and_keeps_identity() {
        let d = toy(&[1.0, 2.0, 3.0], &[0.0, 0.0, 1.0]);
        let aug = augment_zpi(d, 3, PermutationStrategy::TreatmentStratum);
        assert_eq!(aug.warnings().len(), 1);
        assert_eq!(aug.zpi()[[2, 0]], 3.0);
    }

    #[test]
    fn matched_strategy_swaps_nearest_pairs() {
        // w = row index, so rows {0,1} and {2,3} inside stratum 0 are nearest pairs
        let d = toy(&[10.0, 20.0, 30.0, 40.0, 5.0], &[0.0, 0.0, 0.0, 0.0, 1.0]);
        let aug = augment_zpi(d, 5, PermutationStrategy::MatchedWithinCovariates);
        let z: Vec<f64> = aug.zpi().column(0).to_vec();
        assert_eq!(&z[..4], &[20.0, 10.0, 40.0, 30.0]);
    }

    #[test]
    fn folds_have_near_equal_sizes() {
        let d = toy(&[0.0; 10], &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let aug = make_folds(augment_zpi(d, 0, PermutationStrategy::TreatmentStratum), 5, 9).unwrap();
        assert_eq!(aug.fold_sizes(), vec![2; 5]);
        let train = aug.training_rows(3);
        assert_eq!(train.len(), 8);
        assert!(train.iter().all(|&i| aug.folds()[i] != 3));
    }

    #[test]
    fn single_fold_trains_on_everything() {
        let d = toy(&[0.0; 4], &[0.0, 1.0, 0.0, 1.0]);
        let aug = make_folds(augment_zpi(d, 0, PermutationStrategy::TreatmentStratum), 1, 0).unwrap();
        assert_eq!(aug.training_rows(1), aug.fold_rows(1));
    }

    #[test]
    fn invalid_fold_counts() {
        let d = toy(&[0.0; 4], &[0.0, 1.0, 0.0, 1.0]);
        let aug = augment_zpi(d, 0, PermutationStrategy::TreatmentStratum);
        assert!(matches!(make_folds(aug.clone(), 0, 0), Err(DatasetError::InvalidFoldCount { .. })));
        assert!(matches!(make_folds(aug, 5, 0), Err(DatasetError::InvalidFoldCount { .. })));
    }

    #[test]
    fn positivity_flags() {
        let d = toy(&[0.0; 4], &[0.0, 1.0, 0.0, 1.0]);
        let aug = augment_zpi(d, 0, PermutationStrategy::TreatmentStratum);
        let ok = positivity_diagnostics(&aug, &[0.5, 4.0, 2.0, 1.0], 50.0);
        assert!(!ok.flagged);
        assert_eq!(ok.clipped, 0);
        assert_eq!(ok.max, 4.0);
        // 5% of weights at the bound
        let mut w = vec![1.0; 100];
        for v in w.iter_mut().take(5) {
            *v = 50.0;
        }
        let mut cols = BTreeMap::new();
        cols.insert("a".to_string(), vec![0.0; 100]);
        cols.insert("m".to_string(), vec![0.0; 100]);
        cols.insert("y".to_string(), vec![0.0; 100]);
        let big = MediationDataset::<f64>::from_columns(
            VariableRoles::new(&[], "a", &[], &["m"], "y"),
            &cols,
            None,
        )
        .unwrap();
        let aug = augment_zpi(big, 0, PermutationStrategy::TreatmentStratum);
        let bad = positivity_diagnostics(&aug, &w, 50.0);
        assert!(bad.flagged);
        assert_eq!(bad.clipped, 5);
    }
}
