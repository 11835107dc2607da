//! Regression learners and a cross-validated stacking ensemble.

pub mod boost;
pub mod knn;
pub mod linear;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::symmetric_eigenvalues;
use crate::scalar::Scalar;
use boost::BoostModel;
use knn::KnnModel;
use linear::{LinearModel, LogisticModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnerError {
    #[error("unknown learner `{0}`")]
    UnknownLearner(String),
    #[error("invalid learner specification: {0}")]
    BadSpec(String),
    #[error("no candidate learner applies to a {0} target")]
    NoCandidates(TargetType),
    #[error("{rows} rows are too few for {folds}-fold cross-validation")]
    TooFewRows { rows: usize, folds: usize },
    #[error("feature arity mismatch: model expects {expected} columns, got {got}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("target and feature lengths differ ({y} vs {x})")]
    LengthMismatch { x: usize, y: usize },
    #[error("non-finite value in the regression target")]
    NonFiniteTarget,
    #[error("numerically singular system")]
    SingularSystem,
}

impl LearnerError {
    pub fn is_numerical(&self) -> bool {
        matches!(self, LearnerError::SingularSystem | LearnerError::NonFiniteTarget)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetType {
    Continuous,
    Binary,
}

impl fmt::Display for TargetType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TargetType::Continuous => "continuous",
            TargetType::Binary => "binary",
        })
    }
}

/// Lower clip for binary-target predictions; the upper clip is `1 - EPS`.
pub const BINARY_EPS: f64 = 1e-6;

pub const DEFAULT_RIDGE_LAMBDA: f64 = 0.01;
pub const DEFAULT_KNN_K: usize = 10;
pub const DEFAULT_BOOST_TREES: usize = 100;
pub const DEFAULT_BOOST_DEPTH: usize = 2;
pub const DEFAULT_BOOST_RATE: f64 = 0.1;

/// A single learner and its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LearnerKind {
    Mean,
    Linear,
    Ridge { lambda: f64 },
    Logistic,
    Knn { k: usize },
    Boost { trees: usize, depth: usize, rate: f64 },
}

impl LearnerKind {
    pub fn validate(&self) -> Result<(), LearnerError> {
        let ok = match *self {
            LearnerKind::Ridge { lambda } => lambda > 0.0 && lambda.is_finite(),
            LearnerKind::Knn { k } => k > 0,
            LearnerKind::Boost { trees, depth, rate } => {
                trees > 0 && (1..=2).contains(&depth) && rate > 0.0 && rate.is_finite()
            }
            _ => true,
        };
        if ok {
            Ok(())
        } else {
            Err(LearnerError::BadSpec(self.to_string()))
        }
    }

    pub fn supports(&self, target: TargetType) -> bool {
        !(matches!(self, LearnerKind::Logistic) && target == TargetType::Continuous)
    }
}

impl fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LearnerKind::Mean => write!(f, "mean"),
            LearnerKind::Linear => write!(f, "linear"),
            LearnerKind::Ridge { lambda } => write!(f, "ridge({lambda})"),
            LearnerKind::Logistic => write!(f, "logistic"),
            LearnerKind::Knn { k } => write!(f, "knn({k})"),
            LearnerKind::Boost { trees, depth, rate } => write!(f, "boost({trees},{depth},{rate})"),
        }
    }
}

impl FromStr for LearnerKind {
    type Err = LearnerError;

    /// Accepts `mean`, `linear`, `ridge`, `ridge(λ)`, `logistic`, `knn`,
    /// `knn(k)`, `boost` and `boost(trees,depth,rate)`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let unknown = || LearnerError::UnknownLearner(s.to_string());
        let (name, args) = match s.find('(') {
            Some(i) if s.ends_with(')') => {
                let args: Vec<&str> = s[i + 1..s.len() - 1].split(',').map(str::trim).collect();
                (&s[..i], args)
            }
            Some(_) => return Err(unknown()),
            None => (s, Vec::new()),
        };
        let num = |t: &str| t.parse::<f64>().map_err(|_| unknown());
        let int = |t: &str| t.parse::<usize>().map_err(|_| unknown());
        let kind = match (name, args.as_slice()) {
            ("mean", []) => LearnerKind::Mean,
            ("linear" | "glm", []) => LearnerKind::Linear,
            ("ridge", []) => LearnerKind::Ridge {
                lambda: DEFAULT_RIDGE_LAMBDA,
            },
            ("ridge", [l]) => LearnerKind::Ridge { lambda: num(l)? },
            ("logistic", []) => LearnerKind::Logistic,
            ("knn", []) => LearnerKind::Knn { k: DEFAULT_KNN_K },
            ("knn", [k]) => LearnerKind::Knn { k: int(k)? },
            ("boost", []) => LearnerKind::Boost {
                trees: DEFAULT_BOOST_TREES,
                depth: DEFAULT_BOOST_DEPTH,
                rate: DEFAULT_BOOST_RATE,
            },
            ("boost", [t, d, r]) => LearnerKind::Boost {
                trees: int(t)?,
                depth: int(d)?,
                rate: num(r)?,
            },
            _ => return Err(unknown()),
        };
        kind.validate()?;
        Ok(kind)
    }
}

impl Serialize for LearnerKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for LearnerKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A fitted single learner.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedModel<T> {
    Mean(T),
    Linear(LinearModel<T>),
    Logistic(LogisticModel<T>),
    Knn(KnnModel<T>),
    Boost(BoostModel<T>),
}

impl<T: Scalar> FittedModel<T> {
    pub fn predict(&self, x: ArrayView2<T>) -> Array1<T> {
        match self {
            FittedModel::Mean(m) => Array1::from_elem(x.nrows(), *m),
            FittedModel::Linear(m) => m.predict(x),
            FittedModel::Logistic(m) => m.predict(x),
            FittedModel::Knn(m) => m.predict(x),
            FittedModel::Boost(m) => m.predict(x),
        }
    }
}

/// Fits one learner; deterministic given its inputs.
pub fn fit_learner<T: Scalar>(
    kind: LearnerKind,
    target: TargetType,
    x: ArrayView2<T>,
    y: ArrayView1<T>,
) -> Result<FittedModel<T>, LearnerError> {
    let n = y.len();
    if n == 0 {
        return Err(LearnerError::TooFewRows { rows: 0, folds: 1 });
    }
    Ok(match kind {
        LearnerKind::Mean => FittedModel::Mean(y.sum() / T::of_usize(n)),
        LearnerKind::Linear => FittedModel::Linear(LinearModel::fit(x, y, T::zero())?),
        LearnerKind::Ridge { lambda } => FittedModel::Linear(LinearModel::fit(x, y, T::of(lambda))?),
        LearnerKind::Logistic => FittedModel::Logistic(LogisticModel::fit(x, y)?),
        LearnerKind::Knn { k } => FittedModel::Knn(KnnModel::fit(x, y, k)),
        LearnerKind::Boost { trees, depth, rate } => {
            FittedModel::Boost(BoostModel::fit(x, y, trees, depth, rate, target)?)
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stacking {
    /// Use the candidate with the lowest cross-validated risk.
    #[default]
    Discrete,
    /// Non-negative weights summing to one, fitted by least squares on the
    /// cross-validated predictions.
    Convex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub candidates: Vec<LearnerKind>,
    #[serde(default = "default_cv_folds")]
    pub cv_folds: usize,
    #[serde(default)]
    pub stacking: Stacking,
}

fn default_cv_folds() -> usize {
    5
}

impl EnsembleSpec {
    pub fn new(candidates: Vec<LearnerKind>) -> Self {
        Self {
            candidates,
            cv_folds: default_cv_folds(),
            stacking: Stacking::Discrete,
        }
    }

    pub fn with_stacking(mut self, stacking: Stacking) -> Self {
        self.stacking = stacking;
        self
    }

    pub fn validate(&self) -> Result<(), LearnerError> {
        if self.candidates.is_empty() {
            return Err(LearnerError::BadSpec("empty candidate list".into()));
        }
        if self.cv_folds < 2 {
            return Err(LearnerError::BadSpec(format!(
                "cv_folds must be at least 2, got {}",
                self.cv_folds
            )));
        }
        self.candidates.iter().try_for_each(LearnerKind::validate)
    }
}

/// A fitted ensemble: candidate models, their stacking weights and
/// cross-validated risks.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedRegressor<T> {
    pub target: TargetType,
    pub arity: usize,
    pub candidates: Vec<LearnerKind>,
    pub models: Vec<FittedModel<T>>,
    pub weights: Vec<f64>,
    /// Cross-validated risk per candidate (MSE or negative log-likelihood);
    /// empty when a single candidate made cross-validation unnecessary.
    pub cv_risk: Vec<f64>,
    /// Cross-validated risk of the stacked predictor on the meta-fit scale.
    pub stacked_risk: Option<f64>,
    pub warnings: Vec<String>,
}

impl<T: Scalar> FittedRegressor<T> {
    pub fn predict(&self, x: ArrayView2<T>) -> Result<Array1<T>, LearnerError> {
        if x.ncols() != self.arity {
            return Err(LearnerError::ArityMismatch {
                expected: self.arity,
                got: x.ncols(),
            });
        }
        let mut out = Array1::<T>::zeros(x.nrows());
        for (m, &w) in self.models.iter().zip(&self.weights) {
            if w == 0.0 {
                continue;
            }
            let p = m.predict(x);
            out.scaled_add(T::of(w), &p);
        }
        if self.target == TargetType::Binary {
            clip_probabilities(&mut out);
        }
        Ok(out)
    }

    /// Human-readable summary of the selected candidate(s).
    pub fn selection(&self) -> String {
        let picked: Vec<String> = self
            .candidates
            .iter()
            .zip(&self.weights)
            .filter(|(_, &w)| w > 0.0)
            .map(|(c, &w)| {
                if w == 1.0 {
                    c.to_string()
                } else {
                    format!("{c}:{w:.3}")
                }
            })
            .collect();
        picked.join("+")
    }
}

fn clip_probabilities<T: Scalar>(v: &mut Array1<T>) {
    let lo = T::of(BINARY_EPS);
    let hi = T::of(1.0 - BINARY_EPS);
    v.mapv_inplace(|p| p.max(lo).min(hi));
}

fn risk<T: Scalar>(target: TargetType, y: ArrayView1<T>, p: &Array1<T>) -> f64 {
    let n = y.len().max(1) as f64;
    match target {
        TargetType::Continuous => {
            y.iter().zip(p).map(|(&a, &b)| (a - b).as_f64().powi(2)).sum::<f64>() / n
        }
        TargetType::Binary => {
            y.iter()
                .zip(p)
                .map(|(&t, &q)| {
                    let t = t.as_f64();
                    let q = q.as_f64().clamp(BINARY_EPS, 1.0 - BINARY_EPS);
                    -(t * q.ln() + (1.0 - t) * (1.0 - q).ln())
                })
                .sum::<f64>()
                / n
        }
    }
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mut css = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        css += uj;
        let t = (css - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

pub const PGD_ITERATIONS: usize = 500;
pub const PGD_STEP: f64 = 0.1;
pub const PGD_TOL: f64 = 1e-8;

/// Simplex-constrained least squares `min_w (1/n)||y - Z w||²` by projected
/// gradient descent started from the best single column. The step is
/// `PGD_STEP / max(1, L)` with `L` the gradient's Lipschitz constant, so
/// every iteration is a descent step.
pub fn convex_weights(z: &Array2<f64>, y: &Array1<f64>, start: usize) -> Vec<f64> {
    let n = z.nrows().max(1) as f64;
    let k = z.ncols();
    let gram = z.t().dot(z) / n;
    let zy = z.t().dot(y) / n;
    let lmax = symmetric_eigenvalues(gram.view()).last().copied().unwrap_or(0.0);
    let step = PGD_STEP / (2.0 * lmax).max(1.0);
    let mut w = vec![0.0; k];
    w[start] = 1.0;
    for _ in 0..PGD_ITERATIONS {
        let wa = Array1::from(w.clone());
        let grad = (gram.dot(&wa) - &zy) * 2.0;
        let proposal: Vec<f64> = w.iter().zip(grad.iter()).map(|(a, g)| a - step * g).collect();
        let next = project_simplex(&proposal);
        let delta: f64 = next.iter().zip(&w).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        w = next;
        if delta < PGD_TOL {
            break;
        }
    }
    w
}

fn is_constant<T: Scalar>(y: ArrayView1<T>) -> bool {
    match y.first() {
        Some(&y0) => y.iter().all(|&v| v == y0),
        None => true,
    }
}

/// Fits the ensemble. Candidate risks are estimated by `cv_folds`-fold
/// cross-validation with folds drawn from `seed`; the final models are then
/// refitted on all rows.
pub fn fit<T: Scalar>(
    spec: &EnsembleSpec,
    target: TargetType,
    x: ArrayView2<T>,
    y: ArrayView1<T>,
    seed: u64,
) -> Result<FittedRegressor<T>, LearnerError> {
    spec.validate()?;
    let n = y.len();
    if x.nrows() != n {
        return Err(LearnerError::LengthMismatch { x: x.nrows(), y: n });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(LearnerError::NonFiniteTarget);
    }
    let arity = x.ncols();
    if is_constant(y) {
        let msg = format!("degenerate (constant) target over {n} rows; using the mean learner");
        log::debug!("{msg}");
        let value = y.first().copied().unwrap_or_else(T::zero);
        return Ok(FittedRegressor {
            target,
            arity,
            candidates: vec![LearnerKind::Mean],
            models: vec![FittedModel::Mean(value)],
            weights: vec![1.0],
            cv_risk: Vec::new(),
            stacked_risk: None,
            warnings: vec![msg],
        });
    }
    let candidates: Vec<LearnerKind> = spec
        .candidates
        .iter()
        .copied()
        .filter(|c| c.supports(target))
        .collect();
    if candidates.is_empty() {
        return Err(LearnerError::NoCandidates(target));
    }
    if candidates.len() == 1 {
        let model = fit_learner(candidates[0], target, x, y)?;
        return Ok(FittedRegressor {
            target,
            arity,
            candidates,
            models: vec![model],
            weights: vec![1.0],
            cv_risk: Vec::new(),
            stacked_risk: None,
            warnings: Vec::new(),
        });
    }
    if n < spec.cv_folds {
        return Err(LearnerError::TooFewRows {
            rows: n,
            folds: spec.cv_folds,
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0usize; n];
    for (p, &i) in order.iter().enumerate() {
        fold[i] = p % spec.cv_folds;
    }
    let k = candidates.len();
    let mut cv_pred = Array2::<f64>::zeros((n, k));
    for v in 0..spec.cv_folds {
        let train: Vec<usize> = (0..n).filter(|&i| fold[i] != v).collect();
        let test: Vec<usize> = (0..n).filter(|&i| fold[i] == v).collect();
        let xt = x.select(Axis(0), &train);
        let yt = y.select(Axis(0), &train);
        let xv = x.select(Axis(0), &test);
        for (c, &kind) in candidates.iter().enumerate() {
            let mut p = if is_constant(yt.view()) {
                Array1::from_elem(test.len(), yt[0])
            } else {
                fit_learner(kind, target, xt.view(), yt.view())?.predict(xv.view())
            };
            if target == TargetType::Binary {
                clip_probabilities(&mut p);
            }
            for (r, &i) in test.iter().enumerate() {
                cv_pred[[i, c]] = p[r].as_f64();
            }
        }
    }
    let yf = y.mapv(|v| v.as_f64());
    let cv_risk: Vec<f64> = (0..k)
        .map(|c| risk(target, yf.view(), &cv_pred.column(c).to_owned()))
        .collect();
    let mut best = 0;
    for c in 1..k {
        if cv_risk[c] < cv_risk[best] {
            best = c;
        }
    }
    let (weights, stacked_risk) = match spec.stacking {
        Stacking::Discrete => {
            let mut w = vec![0.0; k];
            w[best] = 1.0;
            (w, cv_risk[best])
        }
        Stacking::Convex => {
            let w = convex_weights(&cv_pred, &yf, best);
            let combined = cv_pred.dot(&Array1::from(w.clone()));
            (w, risk(target, yf.view(), &combined))
        }
    };
    let models = candidates
        .iter()
        .zip(&weights)
        .map(|(&kind, &w)| {
            if w > 0.0 {
                fit_learner(kind, target, x, y)
            } else {
                Ok(FittedModel::Mean(T::zero()))
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FittedRegressor {
        target,
        arity,
        candidates,
        models,
        weights,
        cv_risk,
        stacked_risk: Some(stacked_risk),
        warnings: Vec::new(),
    })
}

/// Predicts with a fitted ensemble.
pub fn predict<T: Scalar>(
    model: &FittedRegressor<T>,
    x: ArrayView2<T>,
) -> Result<Array1<T>, LearnerError> {
    model.predict(x)
}
