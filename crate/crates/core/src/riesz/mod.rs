//! Riesz representers: weight functions `α` with `E[w(X) h(S X)] = E[α(X) h(X)]`
//! for every `h`, learned by minimizing `E[α(X)² − 2 w(X) α(S X)]`.

pub mod basis;
pub mod ff;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{cholesky, cholesky_solve, spd_condition};
use crate::scalar::Scalar;
use basis::{BasisMap, BasisSpec};
use ff::{FfSettings, Network};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RieszError {
    #[error("non-finite representer loss")]
    NonFiniteLoss,
    #[error("singular Gram matrix (condition number {condition:.3e})")]
    SingularGram { condition: f64 },
    #[error("representer loss diverged at epoch {epoch} ({loss:.3e})")]
    DivergedLoss { epoch: usize, loss: f64 },
    #[error("invalid representer settings: {0}")]
    BadSettings(String),
    #[error("input length mismatch: {0}")]
    LengthMismatch(String),
    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<RieszError>,
    },
}

impl RieszError {
    pub fn at_step(self, step: usize) -> Self {
        RieszError::AtStep {
            step,
            source: Box::new(self),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RieszKind {
    #[default]
    #[serde(alias = "linear")]
    LinearBasis,
    Feedforward,
}

pub const DEFAULT_CLIP: f64 = 50.0;
pub const DEFAULT_LAMBDA: f64 = 1e-3;
pub const DEFAULT_LR: f64 = 1e-2;
pub const DEFAULT_HIDDEN: usize = 32;
pub const DEFAULT_EPOCHS: usize = 20;
pub const DEFAULT_BATCH: usize = 64;
pub const DEFAULT_LAMBDA_GRID: [f64; 6] = [1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0];
pub const DEFAULT_LAMBDA_FOLDS: usize = 5;

/// Function class and optimization settings for representer fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RieszClass {
    pub kind: RieszKind,
    pub basis: BasisSpec,
    /// Ridge penalty of the linear-basis solve when `lambda_grid` is empty.
    pub lambda: f64,
    /// Candidate penalties; when non-empty the one with the lowest held-out
    /// representer loss over `lambda_folds` folds is used.
    pub lambda_grid: Vec<f64>,
    pub lambda_folds: usize,
    pub clip: f64,
    pub epochs: usize,
    pub lr: f64,
    pub hidden: usize,
    pub batch: usize,
}

impl Default for RieszClass {
    fn default() -> Self {
        Self {
            kind: RieszKind::LinearBasis,
            basis: BasisSpec::default(),
            lambda: DEFAULT_LAMBDA,
            lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(),
            lambda_folds: DEFAULT_LAMBDA_FOLDS,
            clip: DEFAULT_CLIP,
            epochs: DEFAULT_EPOCHS,
            lr: DEFAULT_LR,
            hidden: DEFAULT_HIDDEN,
            batch: DEFAULT_BATCH,
        }
    }
}

impl RieszClass {
    /// Linear basis with a fixed penalty.
    pub fn linear(basis: BasisSpec, lambda: f64) -> Self {
        Self {
            basis,
            lambda,
            lambda_grid: Vec::new(),
            ..Self::default()
        }
    }

    pub fn feedforward(hidden: usize, epochs: usize) -> Self {
        Self {
            kind: RieszKind::Feedforward,
            hidden,
            epochs,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), RieszError> {
        let bad = |m: &str| Err(RieszError::BadSettings(m.to_string()));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be finite and non-negative");
        }
        if self.lambda_grid.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return bad("lambda_grid entries must be finite and non-negative");
        }
        if self.lambda_grid.len() > 1 && self.lambda_folds < 2 {
            return bad("lambda_folds must be at least 2 to choose from lambda_grid");
        }
        if !(self.clip > 0.0) {
            return bad("clip bound must be positive");
        }
        if self.epochs < 1 || self.hidden < 1 || self.batch < 1 {
            return bad("epochs, hidden width and batch size must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        Ok(())
    }
}

/// Representer inputs: the treatment column and the other conditioning
/// variables of one step, row-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct RieszInputs<T> {
    pub a: Array1<T>,
    pub v: Array2<T>,
}

impl<T: Scalar> RieszInputs<T> {
    pub fn new(a: Array1<T>, v: Array2<T>) -> Self {
        debug_assert_eq!(a.len(), v.nrows());
        Self { a, v }
    }

    pub fn n(&self) -> usize {
        self.a.len()
    }

    fn stacked(&self) -> Array2<T> {
        let mut out = Array2::<T>::zeros((self.n(), self.v.ncols() + 1));
        out.column_mut(0).assign(&self.a);
        out.slice_mut(ndarray::s![.., 1..]).assign(&self.v);
        out
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            a: self.a.select(ndarray::Axis(0), rows),
            v: self.v.select(ndarray::Axis(0), rows),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RieszModel<T> {
    Linear { map: BasisMap<T>, coef: Array1<T> },
    Feedforward(Network<T>),
}

/// An estimated representer with its training diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct RieszFit<T> {
    pub model: RieszModel<T>,
    pub clip: f64,
    /// Representer loss of the clipped fit on its training rows.
    pub loss: f64,
    /// Per-epoch loss (feedforward) or the single exact-solve loss.
    pub trace: Vec<f64>,
    /// Training rows whose raw value hit the clip bound.
    pub clipped: usize,
    /// Training rows whose shifted treatment matched no fitted level.
    pub unmatched_shift: usize,
    /// Penalty used by a linear-basis fit.
    pub lambda: Option<f64>,
}

impl<T: Scalar> RieszFit<T> {
    /// Unclipped values.
    pub fn raw(&self, x: &RieszInputs<T>) -> Array1<T> {
        match &self.model {
            RieszModel::Linear { map, coef } => map.features(x.a.view(), x.v.view()).0.dot(coef),
            RieszModel::Feedforward(net) => net.predict(x.stacked().view()),
        }
    }

    /// Values clipped to `[-clip, clip]`.
    pub fn eval(&self, x: &RieszInputs<T>) -> Array1<T> {
        let b = T::of(self.clip);
        self.raw(x).mapv(|v| v.max(-b).min(b))
    }
}

/// `(1/n) Σ_i [α(x_i)² − 2 w_i α(S x_i)]` from evaluated values.
pub fn riesz_loss<T: Scalar>(alpha_obs: &[T], alpha_shifted: &[T], weight: &[T]) -> Result<f64, RieszError> {
    if alpha_obs.len() != alpha_shifted.len() || alpha_obs.len() != weight.len() {
        return Err(RieszError::LengthMismatch(format!(
            "{} observed, {} shifted, {} weights",
            alpha_obs.len(),
            alpha_shifted.len(),
            weight.len()
        )));
    }
    let n = alpha_obs.len().max(1) as f64;
    let mut total = 0.0;
    for i in 0..alpha_obs.len() {
        let term = alpha_obs[i].as_f64().powi(2) - 2.0 * weight[i].as_f64() * alpha_shifted[i].as_f64();
        if !term.is_finite() {
            return Err(RieszError::NonFiniteLoss);
        }
        total += term;
    }
    Ok(total / n)
}

fn check_lengths<T: Scalar>(obs: &RieszInputs<T>, shifted: &RieszInputs<T>, weight: &[T]) -> Result<(), RieszError> {
    if obs.n() != shifted.n() || obs.n() != weight.len() || obs.v.ncols() != shifted.v.ncols() {
        return Err(RieszError::LengthMismatch(format!(
            "{}x{} observed, {}x{} shifted, {} weights",
            obs.n(),
            obs.v.ncols(),
            shifted.n(),
            shifted.v.ncols(),
            weight.len()
        )));
    }
    Ok(())
}

fn finish<T: Scalar>(
    model: RieszModel<T>,
    class: &RieszClass,
    obs: &RieszInputs<T>,
    shifted: &RieszInputs<T>,
    weight: &[T],
    trace: Option<Vec<f64>>,
    unmatched_shift: usize,
) -> Result<RieszFit<T>, RieszError> {
    let mut fit = RieszFit {
        model,
        clip: class.clip,
        loss: 0.0,
        trace: Vec::new(),
        clipped: 0,
        unmatched_shift,
        lambda: None,
    };
    let raw = fit.raw(obs);
    fit.clipped = raw.iter().filter(|v| v.abs().as_f64() >= class.clip).count();
    let a_obs = fit.eval(obs);
    let a_sh = fit.eval(shifted);
    fit.loss = riesz_loss(a_obs.as_slice().expect("contiguous"), a_sh.as_slice().expect("contiguous"), weight)?;
    fit.trace = trace.unwrap_or_else(|| vec![fit.loss]);
    Ok(fit)
}

/// Exact minimizer over a linear basis: `c = (G + λI)⁻¹ b` with
/// `G = E_n[φ φᵀ]` and `b = E_n[w φ(S x)]`. With a non-empty
/// `lambda_grid`, λ is chosen by held-out loss on strided folds.
pub fn fit_riesz_linear<T: Scalar>(
    obs: &RieszInputs<T>,
    shifted: &RieszInputs<T>,
    weight: &[T],
    class: &RieszClass,
) -> Result<RieszFit<T>, RieszError> {
    class.validate()?;
    check_lengths(obs, shifted, weight)?;
    let map = BasisMap::fit(&class.basis, obs.a.view(), obs.v.view());
    let (phi, _) = map.features(obs.a.view(), obs.v.view());
    let (phi_s, unmatched) = map.features(shifted.a.view(), shifted.v.view());
    let width = map.block_width();
    let lambda = match class.lambda_grid.as_slice() {
        [] => class.lambda,
        [only] => *only,
        grid => select_lambda(&phi, &phi_s, weight, width, grid, class.lambda_folds, class.clip)?,
    };
    let all: Vec<usize> = (0..obs.n()).collect();
    let coef = solve_blocks(normal_equations(&phi, &phi_s, weight, &all, width), lambda)?;
    let mut fit = finish(RieszModel::Linear { map, coef }, class, obs, shifted, weight, None, unmatched)?;
    fit.lambda = Some(lambda);
    Ok(fit)
}

/// Unpenalized `(G, b)` over the given rows, one pair per diagonal block of
/// `width` columns. Indicator bases never mix treatment levels within a row,
/// so `G` is block diagonal.
fn normal_equations<T: Scalar>(
    phi: &Array2<T>,
    phi_s: &Array2<T>,
    weight: &[T],
    rows: &[usize],
    width: usize,
) -> Vec<(Array2<T>, Array1<T>)> {
    let n = T::of_usize(rows.len().max(1));
    let w: Array1<T> = rows.iter().map(|&i| weight[i]).collect();
    let p = phi.select(ndarray::Axis(0), rows);
    let ps = phi_s.select(ndarray::Axis(0), rows);
    (0..phi.ncols() / width.max(1))
        .map(|k| {
            let cols = ndarray::s![.., k * width..(k + 1) * width];
            let on: Vec<usize> = (0..rows.len()).filter(|&r| p.slice(cols).row(r).iter().any(|x| *x != T::zero())).collect();
            let pk = p.slice(cols).select(ndarray::Axis(0), &on);
            let g = pk.t().dot(&pk) / n;
            let b = ps.slice(cols).t().dot(&w) / n;
            (g, b)
        })
        .collect()
}

/// Solves each penalized block and concatenates the coefficients.
fn solve_blocks<T: Scalar>(blocks: Vec<(Array2<T>, Array1<T>)>, lambda: f64) -> Result<Array1<T>, RieszError> {
    let mut coef = Vec::new();
    for (mut g, b) in blocks {
        for j in 0..g.nrows() {
            g[[j, j]] += T::of(lambda);
        }
        coef.extend(solve_spd(g, &b)?);
    }
    Ok(Array1::from(coef))
}

fn solve_spd<T: Scalar>(g: Array2<T>, b: &Array1<T>) -> Result<Array1<T>, RieszError> {
    let Some(l) = cholesky(g.view()) else {
        return Err(RieszError::SingularGram {
            condition: f64::INFINITY,
        });
    };
    let condition = spd_condition(g.view(), l.view());
    if !(condition <= T::CONDITION_LIMIT) {
        return Err(RieszError::SingularGram { condition });
    }
    let coef = cholesky_solve(l.view(), b.view());
    if coef.iter().any(|c| !c.is_finite()) {
        return Err(RieszError::NonFiniteLoss);
    }
    Ok(coef)
}

/// Penalty with the lowest pooled held-out representer loss. Row `i` is
/// held out in fold `i % folds`; ties go to the larger penalty.
fn select_lambda<T: Scalar>(
    phi: &Array2<T>,
    phi_s: &Array2<T>,
    weight: &[T],
    width: usize,
    grid: &[f64],
    folds: usize,
    clip: f64,
) -> Result<f64, RieszError> {
    let n = phi.nrows();
    let folds = folds.min(n).max(1);
    let mut totals = vec![0.0; grid.len()];
    let mut failed = vec![false; grid.len()];
    let clip = T::of(clip);
    let clipped = |v: T| v.max(-clip).min(clip);
    for f in 0..folds {
        let train: Vec<usize> = (0..n).filter(|i| i % folds != f).collect();
        let test: Vec<usize> = (0..n).filter(|i| i % folds == f).collect();
        if train.is_empty() || test.is_empty() {
            continue;
        }
        let blocks = normal_equations(phi, phi_s, weight, &train, width);
        for (k, &lambda) in grid.iter().enumerate() {
            let Ok(coef) = solve_blocks(blocks.clone(), lambda) else {
                failed[k] = true;
                continue;
            };
            for &i in &test {
                let a_obs = clipped(phi.row(i).dot(&coef)).as_f64();
                let a_sh = clipped(phi_s.row(i).dot(&coef)).as_f64();
                totals[k] += a_obs * a_obs - 2.0 * weight[i].as_f64() * a_sh;
            }
        }
    }
    let mut best: Option<(f64, f64)> = None;
    for k in (0..grid.len()).rev() {
        if failed[k] || !totals[k].is_finite() {
            continue;
        }
        if best.map_or(true, |(_, loss)| totals[k] < loss) {
            best = Some((grid[k], totals[k]));
        }
    }
    match best {
        Some((lambda, _)) => Ok(lambda),
        None if totals.iter().any(|t| !t.is_finite()) => Err(RieszError::NonFiniteLoss),
        None => Err(RieszError::SingularGram {
            condition: f64::INFINITY,
        }),
    }
}

/// The penalized normal-equation pieces `(G + λI, b)` at the fixed penalty
/// `lambda`, assembled as full matrices, and the fitted basis map.
pub fn linear_system<T: Scalar>(
    obs: &RieszInputs<T>,
    shifted: &RieszInputs<T>,
    weight: &[T],
    class: &RieszClass,
) -> (Array2<T>, Array1<T>, BasisMap<T>, usize) {
    let map = BasisMap::fit(&class.basis, obs.a.view(), obs.v.view());
    let (phi, _) = map.features(obs.a.view(), obs.v.view());
    let (phi_s, unmatched) = map.features(shifted.a.view(), shifted.v.view());
    let all: Vec<usize> = (0..obs.n()).collect();
    let width = map.block_width();
    let dim = phi.ncols();
    let mut g = Array2::<T>::zeros((dim, dim));
    let mut b = Array1::<T>::zeros(dim);
    for (k, (gk, bk)) in normal_equations(&phi, &phi_s, weight, &all, width).into_iter().enumerate() {
        let r = k * width..(k + 1) * width;
        g.slice_mut(ndarray::s![r.clone(), r.clone()]).assign(&gk);
        b.slice_mut(ndarray::s![r]).assign(&bk);
    }
    for j in 0..dim {
        g[[j, j]] += T::of(class.lambda);
    }
    (g, b, map, unmatched)
}

/// Mini-batch Adam on a single-hidden-layer network; keeps the epoch with
/// the lowest full-data loss.
pub fn fit_riesz_ff<T: Scalar>(
    obs: &RieszInputs<T>,
    shifted: &RieszInputs<T>,
    weight: &[T],
    class: &RieszClass,
    seed: u64,
) -> Result<RieszFit<T>, RieszError> {
    class.validate()?;
    check_lengths(obs, shifted, weight)?;
    let settings = FfSettings {
        hidden: class.hidden,
        epochs: class.epochs,
        lr: class.lr,
        batch: class.batch.min(obs.n()),
    };
    let (net, trace) = ff::train(obs.stacked().view(), shifted.stacked().view(), weight, &settings, seed)?;
    finish(RieszModel::Feedforward(net), class, obs, shifted, weight, Some(trace), 0)
}

pub fn fit_riesz<T: Scalar>(
    obs: &RieszInputs<T>,
    shifted: &RieszInputs<T>,
    weight: &[T],
    class: &RieszClass,
    seed: u64,
) -> Result<RieszFit<T>, RieszError> {
    match class.kind {
        RieszKind::LinearBasis => fit_riesz_linear(obs, shifted, weight, class),
        RieszKind::Feedforward => fit_riesz_ff(obs, shifted, weight, class, seed),
    }
}

/// Inputs for one program step's representer: the step's variables at the
/// observed rows and under the shift its consumer applies.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInputs<T> {
    pub obs: RieszInputs<T>,
    pub shifted: RieszInputs<T>,
}

/// Fits `α_K, …, α_1` for a program with steps `1..=K`: the outermost uses
/// weight one, each inner one uses the next representer's values as its
/// weight. Returned outermost first.
pub fn recursive_riesz<T: Scalar>(
    steps: &[StepInputs<T>],
    class: &RieszClass,
    seed: u64,
) -> Result<Vec<RieszFit<T>>, RieszError> {
    let mut out: Vec<RieszFit<T>> = Vec::with_capacity(steps.len());
    let mut weight: Vec<T> = steps.last().map_or_else(Vec::new, |s| vec![T::one(); s.obs.n()]);
    for (k, s) in steps.iter().enumerate().rev() {
        let fit = fit_riesz(&s.obs, &s.shifted, &weight, class, seed.wrapping_add(k as u64))
            .map_err(|e| e.at_step(k + 1))?;
        weight = fit.eval(&s.obs).to_vec();
        out.push(fit);
    }
    Ok(out)
}

/// Helper for views that may not be contiguous.
pub fn to_vec<T: Scalar>(v: ArrayView1<T>) -> Vec<T> {
    v.iter().copied().collect()
}

#[doc(hidden)]
pub fn gram_residual<T: Scalar>(g: ArrayView2<T>, c: &Array1<T>, b: &Array1<T>) -> f64 {
    let r = g.dot(c) - b;
    let rn = r.dot(&r).sqrt().as_f64();
    let bn = b.dot(b).sqrt().as_f64();
    if bn == 0.0 {
        rn
    } else {
        rn / bn
    }
}
