//! Structural causal models written as expression trees, and simulation
//! from them.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::OracleError;
use crate::dataset::{MediationDataset, VariableRoles};
use crate::estimands::PolicyPair;
use crate::scalar::Scalar;

/// An arithmetic expression over earlier variables and exogenous noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expr {
    Const(f64),
    Var(String),
    Noise(String),
    Add(Vec<Expr>),
    Mul(Vec<Expr>),
    Neg(Box<Expr>),
    Sigmoid(Box<Expr>),
    Exp(Box<Expr>),
    /// `1` when the argument is positive, else `0`.
    Step(Box<Expr>),
    /// `1` when `value >= cutoff`, else `0`.
    Threshold { value: Box<Expr>, cutoff: f64 },
}

impl Expr {
    pub fn c(v: f64) -> Self {
        Expr::Const(v)
    }
    pub fn var(name: &str) -> Self {
        Expr::Var(name.to_string())
    }
    pub fn noise(name: &str) -> Self {
        Expr::Noise(name.to_string())
    }
    /// `Σ coef · var` plus an optional noise term.
    pub fn linear(terms: &[(f64, &str)], noise: Option<&str>) -> Self {
        let mut parts: Vec<Expr> = terms
            .iter()
            .map(|&(c, v)| Expr::Mul(vec![Expr::c(c), Expr::var(v)]))
            .collect();
        if let Some(u) = noise {
            parts.push(Expr::noise(u));
        }
        Expr::Add(parts)
    }
    /// `1{U < sigmoid(inner)}` for a uniform noise `U`.
    pub fn bernoulli_of(inner: Expr, uniform: &str) -> Self {
        Expr::Step(Box::new(Expr::Add(vec![
            Expr::Sigmoid(Box::new(inner)),
            Expr::Neg(Box::new(Expr::noise(uniform))),
        ])))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum NoiseDist {
    Uniform { low: f64, high: f64 },
    Normal { mean: f64, sd: f64 },
    Bernoulli { p: f64 },
}

impl NoiseDist {
    pub fn standard_normal() -> Self {
        NoiseDist::Normal { mean: 0.0, sd: 1.0 }
    }
    pub fn unit_uniform() -> Self {
        NoiseDist::Uniform { low: 0.0, high: 1.0 }
    }

    fn validate(&self, name: &str) -> Result<(), OracleError> {
        let ok = match *self {
            NoiseDist::Uniform { low, high } => low.is_finite() && high.is_finite() && low < high,
            NoiseDist::Normal { mean, sd } => mean.is_finite() && sd.is_finite() && sd >= 0.0,
            NoiseDist::Bernoulli { p } => (0.0..=1.0).contains(&p),
        };
        if ok {
            Ok(())
        } else {
            Err(OracleError::BadNoise(name.to_string()))
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            NoiseDist::Uniform { low, high } => rng.random_range(low..high),
            NoiseDist::Normal { mean, sd } => {
                let z: f64 = Normal::new(0.0, 1.0).expect("unit normal").sample(rng);
                mean + sd * z
            }
            NoiseDist::Bernoulli { p } => {
                if rng.random::<f64>() < p {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Equation {
    pub name: String,
    pub expr: Expr,
}

impl Equation {
    pub fn new(name: &str, expr: Expr) -> Self {
        Self {
            name: name.to_string(),
            expr,
        }
    }
}

/// Structural equations in causal order `W, A(W), Z(A, W), M(A, W, Z),
/// Y(A, W, Z, M)`. The Z block may be empty. Each noise term feeds exactly
/// one variable block, so the model is Markovian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scm {
    #[serde(default)]
    pub seed: u64,
    pub noise: BTreeMap<String, NoiseDist>,
    #[serde(default)]
    pub covariates: Vec<Equation>,
    pub treatment: Equation,
    #[serde(default)]
    pub moc: Vec<Equation>,
    pub mediators: Vec<Equation>,
    pub outcome: Equation,
    /// Policies used for truths when none are given explicitly.
    #[serde(default)]
    pub policies: Option<PolicyPair>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub(crate) enum Block {
    W,
    A,
    Z,
    M,
    Y,
}

#[derive(Debug, Clone)]
enum CExpr {
    Const(f64),
    Var(usize),
    Noise(usize),
    Add(Vec<CExpr>),
    Mul(Vec<CExpr>),
    Neg(Box<CExpr>),
    Sigmoid(Box<CExpr>),
    Exp(Box<CExpr>),
    Step(Box<CExpr>),
    Threshold(Box<CExpr>, f64),
}

impl CExpr {
    fn eval(&self, v: &[f64], u: &[f64]) -> f64 {
        match self {
            CExpr::Const(c) => *c,
            CExpr::Var(i) => v[*i],
            CExpr::Noise(i) => u[*i],
            CExpr::Add(xs) => xs.iter().map(|x| x.eval(v, u)).sum(),
            CExpr::Mul(xs) => xs.iter().map(|x| x.eval(v, u)).product(),
            CExpr::Neg(x) => -x.eval(v, u),
            CExpr::Sigmoid(x) => 1.0 / (1.0 + (-x.eval(v, u)).exp()),
            CExpr::Exp(x) => x.eval(v, u).exp(),
            CExpr::Step(x) => {
                if x.eval(v, u) > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            CExpr::Threshold(x, c) => {
                if x.eval(v, u) >= *c {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// An SCM resolved to slot indices: values are laid out as
/// `[W.., A, Z.., M.., Y]`.
#[derive(Debug, Clone)]
pub struct CompiledScm {
    names: Vec<String>,
    exprs: Vec<CExpr>,
    noise: Vec<NoiseDist>,
    noise_names: Vec<String>,
    pub(crate) p_w: usize,
    pub(crate) p_z: usize,
    pub(crate) p_m: usize,
}

impl Scm {
    pub fn roles(&self) -> VariableRoles {
        fn names(eqs: &[Equation]) -> Vec<&str> {
            eqs.iter().map(|e| e.name.as_str()).collect()
        }
        VariableRoles::new(
            &names(&self.covariates),
            &self.treatment.name,
            &names(&self.moc),
            &names(&self.mediators),
            &self.outcome.name,
        )
    }

    pub fn has_moc(&self) -> bool {
        !self.moc.is_empty()
    }

    pub fn from_json(text: &str) -> Result<Self, OracleError> {
        let scm: Scm = serde_json::from_str(text).map_err(|e| OracleError::Parse(e.to_string()))?;
        scm.compile()?;
        Ok(scm)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, OracleError> {
        let text = std::fs::read_to_string(path).map_err(|e| OracleError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scm serializes")
    }

    /// Resolves names, checks causal order and noise ownership.
    pub fn compile(&self) -> Result<CompiledScm, OracleError> {
        if self.mediators.is_empty() {
            return Err(OracleError::Dataset(crate::dataset::DatasetError::NoMediators));
        }
        let mut order: Vec<(&Equation, Block)> = Vec::new();
        order.extend(self.covariates.iter().map(|e| (e, Block::W)));
        order.push((&self.treatment, Block::A));
        order.extend(self.moc.iter().map(|e| (e, Block::Z)));
        order.extend(self.mediators.iter().map(|e| (e, Block::M)));
        order.push((&self.outcome, Block::Y));

        let mut slot: HashMap<&str, usize> = HashMap::new();
        for (i, (e, _)) in order.iter().enumerate() {
            if slot.insert(e.name.as_str(), i).is_some() {
                return Err(OracleError::DuplicateName(e.name.clone()));
            }
        }
        let noise_names: Vec<String> = self.noise.keys().cloned().collect();
        let noise_ix: HashMap<&str, usize> = noise_names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        for (name, d) in &self.noise {
            d.validate(name)?;
        }
        let mut noise_block: Vec<Option<Block>> = vec![None; noise_names.len()];

        fn resolve(
            e: &Expr,
            me: usize,
            block: Block,
            eq: &str,
            slot: &HashMap<&str, usize>,
            noise_ix: &HashMap<&str, usize>,
            noise_block: &mut [Option<Block>],
            noise_names: &[String],
        ) -> Result<CExpr, OracleError> {
            let mut rec = |x: &Expr| resolve(x, me, block, eq, slot, noise_ix, noise_block, noise_names);
            Ok(match e {
                Expr::Const(c) => CExpr::Const(*c),
                Expr::Var(v) => match slot.get(v.as_str()) {
                    Some(&i) if i < me => CExpr::Var(i),
                    _ => {
                        return Err(OracleError::UnknownVariable {
                            equation: eq.to_string(),
                            name: v.clone(),
                        })
                    }
                },
                Expr::Noise(n) => {
                    let &i = noise_ix.get(n.as_str()).ok_or_else(|| OracleError::UnknownNoise {
                        equation: eq.to_string(),
                        name: n.clone(),
                    })?;
                    match noise_block[i] {
                        Some(b) if b != block => return Err(OracleError::SharedNoise(noise_names[i].clone())),
                        _ => noise_block[i] = Some(block),
                    }
                    CExpr::Noise(i)
                }
                Expr::Add(xs) => CExpr::Add(xs.iter().map(&mut rec).collect::<Result<_, _>>()?),
                Expr::Mul(xs) => CExpr::Mul(xs.iter().map(&mut rec).collect::<Result<_, _>>()?),
                Expr::Neg(x) => CExpr::Neg(Box::new(rec(x)?)),
                Expr::Sigmoid(x) => CExpr::Sigmoid(Box::new(rec(x)?)),
                Expr::Exp(x) => CExpr::Exp(Box::new(rec(x)?)),
                Expr::Step(x) => CExpr::Step(Box::new(rec(x)?)),
                Expr::Threshold { value, cutoff } => CExpr::Threshold(Box::new(rec(value)?), *cutoff),
            })
        }

        let mut exprs = Vec::with_capacity(order.len());
        for (i, (e, b)) in order.iter().enumerate() {
            exprs.push(resolve(
                &e.expr,
                i,
                *b,
                &e.name,
                &slot,
                &noise_ix,
                &mut noise_block,
                &noise_names,
            )?);
        }
        Ok(CompiledScm {
            names: order.iter().map(|(e, _)| e.name.clone()).collect(),
            exprs,
            noise: self.noise.values().cloned().collect(),
            noise_names,
            p_w: self.covariates.len(),
            p_z: self.moc.len(),
            p_m: self.mediators.len(),
        })
    }
}

impl CompiledScm {
    pub fn slots(&self) -> usize {
        self.exprs.len()
    }
    pub fn names(&self) -> &[String] {
        &self.names
    }
    pub(crate) fn a_slot(&self) -> usize {
        self.p_w
    }
    pub(crate) fn z_range(&self) -> std::ops::Range<usize> {
        self.p_w + 1..self.p_w + 1 + self.p_z
    }
    pub(crate) fn m_range(&self) -> std::ops::Range<usize> {
        let s = self.p_w + 1 + self.p_z;
        s..s + self.p_m
    }
    pub(crate) fn y_slot(&self) -> usize {
        self.exprs.len() - 1
    }
    pub fn noise_len(&self) -> usize {
        self.noise.len()
    }

    pub fn draw_noise<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.noise.iter().map(|d| d.sample(rng)));
    }

    fn eval_slot(&self, i: usize, v: &mut [f64], u: &[f64]) -> Result<(), OracleError> {
        let x = self.exprs[i].eval(v, u);
        if !x.is_finite() {
            return Err(OracleError::EquationEval {
                equation: self.names[i].clone(),
                value: x,
            });
        }
        v[i] = x;
        Ok(())
    }

    /// Evaluates every slot of one block in order.
    pub(crate) fn eval_block(&self, block: Block, v: &mut [f64], u: &[f64]) -> Result<(), OracleError> {
        let range = match block {
            Block::W => 0..self.p_w,
            Block::A => self.a_slot()..self.a_slot() + 1,
            Block::Z => self.z_range(),
            Block::M => self.m_range(),
            Block::Y => self.y_slot()..self.y_slot() + 1,
        };
        for i in range {
            self.eval_slot(i, v, u)?;
        }
        Ok(())
    }

    /// Evaluates all equations in causal order with noise `u`.
    pub fn eval_all(&self, v: &mut [f64], u: &[f64]) -> Result<(), OracleError> {
        for i in 0..self.exprs.len() {
            self.eval_slot(i, v, u)?;
        }
        Ok(())
    }

    /// Exact joint law of all variables when every noise term is Bernoulli:
    /// support points with their probabilities (duplicates merged).
    pub fn exact_distribution(&self) -> Result<Vec<(f64, Vec<f64>)>, OracleError> {
        let mut ps = Vec::with_capacity(self.noise.len());
        for (d, name) in self.noise.iter().zip(&self.noise_names) {
            match *d {
                NoiseDist::Bernoulli { p } => ps.push(p),
                _ => return Err(OracleError::NotEnumerable(name.clone())),
            }
        }
        if ps.len() > 24 {
            return Err(OracleError::NotEnumerable(format!("{} noise terms", ps.len())));
        }
        let mut merged: BTreeMap<Vec<u64>, (f64, Vec<f64>)> = BTreeMap::new();
        let mut v = vec![0.0; self.slots()];
        let mut u = vec![0.0; ps.len()];
        for mask in 0u32..(1u32 << ps.len()) {
            let mut prob = 1.0;
            for (j, &p) in ps.iter().enumerate() {
                let on = mask >> j & 1 == 1;
                u[j] = if on { 1.0 } else { 0.0 };
                prob *= if on { p } else { 1.0 - p };
            }
            if prob == 0.0 {
                continue;
            }
            self.eval_all(&mut v, &u)?;
            let key: Vec<u64> = v.iter().map(|x| x.to_bits()).collect();
            merged.entry(key).or_insert((0.0, v.clone())).0 += prob;
        }
        Ok(merged.into_values().collect())
    }
}

/// Draws `n` i.i.d. rows, evaluating the equations in causal order.
pub fn simulate<T: Scalar>(scm: &Scm, n: usize, seed: u64) -> Result<MediationDataset<T>, OracleError> {
    let c = scm.compile()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cols: Vec<Vec<T>> = vec![Vec::with_capacity(n); c.slots()];
    let mut v = vec![0.0; c.slots()];
    let mut u = Vec::with_capacity(c.noise_len());
    for _ in 0..n {
        c.draw_noise(&mut rng, &mut u);
        c.eval_all(&mut v, &u)?;
        for (col, &x) in cols.iter_mut().zip(&v) {
            col.push(T::of(x));
        }
    }
    let columns: BTreeMap<String, Vec<T>> = c.names().iter().cloned().zip(cols).collect();
    Ok(MediationDataset::from_columns(scm.roles(), &columns, None)?)
}
