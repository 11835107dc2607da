//! Monte Carlo ground truths: counterfactual means computed from the
//! structural equations, and statistical functionals computed from the
//! conditional laws they imply.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::ArrayView1;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scm::{Block, CompiledScm, Scm};
use super::OracleError;
use crate::engine::derive_seed;
use crate::estimands::{apply_policy, effects_to_contrasts, Arm, BoundPolicies, EffectFamily, FunctionalSpec, PolicyPair};

pub const MIN_DRAWS: usize = 10_000;
pub const DEFAULT_DRAWS: usize = 1_000_000;
const BATCH: usize = 8192;

/// Which exogenous noise a counterfactual branch uses: the unit's own, or an
/// independent redraw sharing only the unit's covariates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Base,
    Fresh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ZDraw {
    pub arm: Arm,
    pub source: Source,
}

/// `Y(y_arm, Z(y_z), M(m_arm, Z(m_z)))` where the mediator's own noise comes
/// from `m_source`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NestedCf {
    pub y_arm: Arm,
    pub y_z: ZDraw,
    pub m_arm: Arm,
    pub m_z: ZDraw,
    pub m_source: Source,
}

fn zd(arm: u8, source: Source) -> ZDraw {
    ZDraw {
        arm: Arm::from_index(arm),
        source,
    }
}

fn nested(y: u8, yz: ZDraw, m: u8, mz: ZDraw, ms: Source) -> NestedCf {
    NestedCf {
        y_arm: Arm::from_index(y),
        y_z: yz,
        m_arm: Arm::from_index(m),
        m_z: mz,
        m_source: ms,
    }
}

/// The nested counterfactuals behind the recanting-twin effects; the primed
/// versions replace one `Z` by an independent twin draw `T(a) ~ Z(a) | W`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Twin {
    S0,
    S1,
    S2,
    S3,
    S4,
    S1p,
    S2p,
    S2pp,
    S3pp,
}

impl Twin {
    pub const ALL: [Twin; 9] = [
        Twin::S0,
        Twin::S1,
        Twin::S2,
        Twin::S3,
        Twin::S4,
        Twin::S1p,
        Twin::S2p,
        Twin::S2pp,
        Twin::S3pp,
    ];

    pub fn nested(self) -> NestedCf {
        use Source::{Base as B, Fresh as F};
        match self {
            Twin::S0 => nested(1, zd(1, B), 1, zd(1, B), B),
            Twin::S1 => nested(0, zd(1, B), 1, zd(1, B), B),
            Twin::S2 => nested(0, zd(0, B), 1, zd(1, B), B),
            Twin::S3 => nested(0, zd(0, B), 1, zd(0, B), B),
            Twin::S4 => nested(0, zd(0, B), 0, zd(0, B), B),
            Twin::S1p => nested(0, zd(1, B), 1, zd(1, F), B),
            Twin::S2p => nested(0, zd(0, B), 1, zd(1, F), B),
            Twin::S2pp => nested(0, zd(0, F), 1, zd(1, B), B),
            Twin::S3pp => nested(0, zd(0, F), 1, zd(0, B), B),
        }
    }
}

impl fmt::Display for Twin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Twin::S0 => "S0",
            Twin::S1 => "S1",
            Twin::S2 => "S2",
            Twin::S3 => "S3",
            Twin::S4 => "S4",
            Twin::S1p => "S1'",
            Twin::S2p => "S2'",
            Twin::S2pp => "S2''",
            Twin::S3pp => "S3''",
        })
    }
}

impl FromStr for Twin {
    type Err = OracleError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Twin::ALL
            .into_iter()
            .find(|t| t.to_string() == s.trim())
            .ok_or_else(|| OracleError::UnknownTwinName(s.to_string()))
    }
}

/// A counterfactual mean the oracle can evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Counterfactual {
    Twin(Twin),
    /// The counterfactual a functional identifies: `natural2(a1, a2)` is
    /// `Y(a1, M(a2))`, `coupled3(a1, a2, a3)` is `Y(a1, Z(a2), M(a3, Z(a2)))`
    /// and `randomized4(a1, a2, a3, a4)` is `Y(a1, T(a2), M(a3, Z(a4)))`.
    Functional(FunctionalSpec),
    /// `Y(a1, G(a2))` with `G(a2) ~ M(a2) | W` drawn independently.
    Interventional([Arm; 2]),
    Nested(NestedCf),
}

impl Counterfactual {
    pub fn nested(&self) -> NestedCf {
        use Source::{Base as B, Fresh as F};
        match *self {
            Counterfactual::Twin(t) => t.nested(),
            Counterfactual::Functional(FunctionalSpec::Natural2([a1, a2])) => {
                nested(a1.index(), zd(a1.index(), B), a2.index(), zd(a2.index(), B), B)
            }
            Counterfactual::Functional(FunctionalSpec::Coupled3([a1, a2, a3])) => {
                nested(a1.index(), zd(a2.index(), B), a3.index(), zd(a2.index(), B), B)
            }
            Counterfactual::Functional(FunctionalSpec::Randomized4([a1, a2, a3, a4])) => {
                nested(a1.index(), zd(a2.index(), F), a3.index(), zd(a4.index(), B), B)
            }
            Counterfactual::Interventional([a1, a2]) => {
                nested(a1.index(), zd(a1.index(), B), a2.index(), zd(a2.index(), F), F)
            }
            Counterfactual::Nested(n) => n,
        }
    }
}

impl fmt::Display for Counterfactual {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Counterfactual::Twin(t) => write!(f, "{t}"),
            Counterfactual::Functional(s) => write!(f, "cf:{s}"),
            Counterfactual::Interventional([a1, a2]) => write!(f, "ri({},{})", a1.index(), a2.index()),
            Counterfactual::Nested(n) => write!(f, "{n:?}"),
        }
    }
}

impl FromStr for Counterfactual {
    type Err = OracleError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        if let Ok(twin) = t.parse::<Twin>() {
            return Ok(Counterfactual::Twin(twin));
        }
        if let Some(args) = t.strip_prefix("ri(").and_then(|r| r.strip_suffix(')')) {
            let ix: Vec<u8> = args
                .split(',')
                .map(|x| x.trim().parse::<u8>())
                .collect::<Result<_, _>>()
                .map_err(|_| OracleError::UnknownTwinName(s.to_string()))?;
            if ix.len() == 2 && ix.iter().all(|&i| i <= 1) {
                return Ok(Counterfactual::Interventional([Arm::from_index(ix[0]), Arm::from_index(ix[1])]));
            }
        }
        let body = t.strip_prefix("cf:").unwrap_or(t);
        body.parse::<FunctionalSpec>()
            .map(Counterfactual::Functional)
            .map_err(|_| OracleError::UnknownTwinName(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthEntry {
    pub value: f64,
    pub mc_se: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthKind {
    Counterfactual,
    Statistical,
}

/// Named true values with Monte Carlo standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthTable {
    pub kind: TruthKind,
    pub family: Option<EffectFamily>,
    pub draws: usize,
    pub seed: u64,
    pub policies: PolicyPair,
    pub entries: BTreeMap<String, TruthEntry>,
}

impl TruthTable {
    pub fn get(&self, name: &str) -> Option<TruthEntry> {
        self.entries.get(name).copied()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("truth table serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, OracleError> {
        serde_json::from_str(text).map_err(|e| OracleError::Parse(e.to_string()))
    }
}

struct Scratch {
    v: Vec<f64>,
    base: Vec<f64>,
    stage: [Vec<f64>; 4],
    z_y: Vec<f64>,
    z_m: Vec<f64>,
}

impl Scratch {
    fn new(c: &CompiledScm) -> Self {
        Self {
            v: vec![0.0; c.slots()],
            base: Vec::new(),
            stage: Default::default(),
            z_y: vec![0.0; c.p_z],
            z_m: vec![0.0; c.p_z],
        }
    }
}

/// Evaluates `k` per-draw quantities over `draws` draws and reports the mean
/// and Monte Carlo SE of each signed combination in `combos`. Batches run in
/// parallel and are merged in batch order.
fn monte_carlo<F>(
    c: &CompiledScm,
    draws: usize,
    seed: u64,
    k: usize,
    combos: &[Vec<(f64, usize)>],
    f: F,
) -> Result<Vec<TruthEntry>, OracleError>
where
    F: Fn(&mut ChaCha8Rng, &mut Scratch, &mut [f64]) -> Result<(), OracleError> + Sync,
{
    if draws < MIN_DRAWS {
        return Err(OracleError::TooFewDraws { draws, min: MIN_DRAWS });
    }
    let batches = draws.div_ceil(BATCH);
    let partial: Vec<Vec<(f64, f64)>> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("mc|{b}")));
            let mut scratch = Scratch::new(c);
            let mut vals = vec![0.0; k];
            let mut acc = vec![(0.0, 0.0); combos.len()];
            let len = BATCH.min(draws - b * BATCH);
            for _ in 0..len {
                f(&mut rng, &mut scratch, &mut vals)?;
                for (a, combo) in acc.iter_mut().zip(combos) {
                    let x: f64 = combo.iter().map(|&(s, i)| s * vals[i]).sum();
                    a.0 += x;
                    a.1 += x * x;
                }
            }
            Ok(acc)
        })
        .collect::<Result<_, OracleError>>()?;
    let n = draws as f64;
    let mut out = Vec::with_capacity(combos.len());
    for j in 0..combos.len() {
        let (s, ss) = partial.iter().fold((0.0, 0.0), |(s, ss), p| (s + p[j].0, ss + p[j].1));
        let mean = s / n;
        let var = ((ss - s * mean) / (n - 1.0)).max(0.0);
        out.push(TruthEntry {
            value: mean,
            mc_se: (var / n).sqrt(),
        });
    }
    Ok(out)
}

fn resolve_policies(scm: &Scm, policies: Option<&PolicyPair>) -> PolicyPair {
    policies
        .cloned()
        .or_else(|| scm.policies.clone())
        .unwrap_or_else(PolicyPair::binary)
}

/// Draws W and the natural treatment from the base noise; returns the two
/// policy-assigned treatment values `(d0, d1)`.
fn draw_unit(
    c: &CompiledScm,
    pol: &BoundPolicies,
    rng: &mut ChaCha8Rng,
    s: &mut Scratch,
) -> Result<[f64; 2], OracleError> {
    c.draw_noise(rng, &mut s.base);
    c.eval_block(Block::W, &mut s.v, &s.base)?;
    c.eval_block(Block::A, &mut s.v, &s.base)?;
    let a = s.v[c.a_slot()];
    let w = ArrayView1::from(&s.v[..c.p_w]);
    Ok([apply_policy(&pol.d0, a, w), apply_policy(&pol.d1, a, w)])
}

fn eval_z(c: &CompiledScm, v: &mut [f64], a: f64, u: &[f64], out: &mut [f64]) -> Result<(), OracleError> {
    v[c.a_slot()] = a;
    c.eval_block(Block::Z, v, u)?;
    out.copy_from_slice(&v[c.z_range()]);
    Ok(())
}

fn eval_m(c: &CompiledScm, v: &mut [f64], a: f64, z: &[f64], u: &[f64]) -> Result<(), OracleError> {
    v[c.a_slot()] = a;
    v[c.z_range()].copy_from_slice(z);
    c.eval_block(Block::M, v, u)
}

fn eval_y(c: &CompiledScm, v: &mut [f64], a: f64, z: &[f64], u: &[f64]) -> Result<f64, OracleError> {
    v[c.a_slot()] = a;
    v[c.z_range()].copy_from_slice(z);
    c.eval_block(Block::Y, v, u)?;
    Ok(v[c.y_slot()])
}

fn eval_nested(c: &CompiledScm, arms: [f64; 2], cf: &NestedCf, s: &mut Scratch) -> Result<f64, OracleError> {
    let at = |arm: Arm| arms[arm.index() as usize];
    let Scratch {
        v,
        base,
        stage,
        z_y,
        z_m,
    } = s;
    let fresh = &stage[0];
    let pick = |src: Source| if src == Source::Base { &base[..] } else { &fresh[..] };
    eval_z(c, v, at(cf.m_z.arm), pick(cf.m_z.source), z_m)?;
    eval_z(c, v, at(cf.y_z.arm), pick(cf.y_z.source), z_y)?;
    eval_m(c, v, at(cf.m_arm), z_m, pick(cf.m_source))?;
    eval_y(c, v, at(cf.y_arm), z_y, base)
}

fn counterfactual_sampler<'a>(
    c: &'a CompiledScm,
    pol: BoundPolicies,
    cfs: &'a [NestedCf],
) -> impl Fn(&mut ChaCha8Rng, &mut Scratch, &mut [f64]) -> Result<(), OracleError> + Sync + 'a {
    move |rng, s, out| {
        let arms = draw_unit(c, &pol, rng, s)?;
        let mut fresh = std::mem::take(&mut s.stage[0]);
        c.draw_noise(rng, &mut fresh);
        s.stage[0] = fresh;
        for (o, cf) in out.iter_mut().zip(cfs) {
            *o = eval_nested(c, arms, cf, s)?;
        }
        Ok(())
    }
}

/// Per-draw values of several counterfactuals under common random numbers,
/// one row per draw.
pub fn sample_counterfactuals(
    scm: &Scm,
    cfs: &[Counterfactual],
    policies: Option<&PolicyPair>,
    draws: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>, OracleError> {
    let c = scm.compile()?;
    let pol = resolve_policies(scm, policies).bind(&scm.roles())?;
    let nested: Vec<NestedCf> = cfs.iter().map(Counterfactual::nested).collect();
    let f = counterfactual_sampler(&c, pol, &nested);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = Scratch::new(&c);
    let mut out = Vec::with_capacity(draws);
    for _ in 0..draws {
        let mut row = vec![0.0; nested.len()];
        f(&mut rng, &mut s, &mut row)?;
        out.push(row);
    }
    Ok(out)
}

/// Mean of a counterfactual outcome. Coupled branches share the unit's
/// exogenous noise across treatment levels; twin and interventional draws
/// use an independent redraw given the same covariates. Policies act on the
/// natural treatment draw.
pub fn truth_counterfactual(
    scm: &Scm,
    target: &Counterfactual,
    policies: Option<&PolicyPair>,
    draws: usize,
    seed: u64,
) -> Result<TruthEntry, OracleError> {
    let c = scm.compile()?;
    let pol = resolve_policies(scm, policies).bind(&scm.roles())?;
    let cfs = [target.nested()];
    let f = counterfactual_sampler(&c, pol, &cfs);
    Ok(monte_carlo(&c, draws, seed, 1, &[vec![(1.0, 0)]], f)?[0])
}

fn statistical_sampler<'a>(
    c: &'a CompiledScm,
    pol: BoundPolicies,
    specs: &'a [FunctionalSpec],
) -> impl Fn(&mut ChaCha8Rng, &mut Scratch, &mut [f64]) -> Result<(), OracleError> + Sync + 'a {
    move |rng, s, out| {
        draw_unit(c, &pol, rng, s)?;
        let a_nat = s.v[c.a_slot()];
        for st in s.stage.iter_mut() {
            c.draw_noise(rng, st);
        }
        let w: Vec<f64> = s.v[..c.p_w].to_vec();
        let d = |arm: Arm, a: f64| apply_policy(pol.get(arm), a, ArrayView1::from(&w[..]));
        for (o, spec) in out.iter_mut().zip(specs) {
            let Scratch {
                v, stage, z_y, z_m, ..
            } = &mut *s;
            *o = match *spec {
                FunctionalSpec::Natural2([a1, a2]) => {
                    let a_m = d(a2, a_nat);
                    eval_m(c, v, a_m, &[], &stage[0])?;
                    eval_y(c, v, d(a1, a_m), &[], &stage[1])?
                }
                FunctionalSpec::Coupled3([a1, a2, a3]) => {
                    let a_z = d(a2, a_nat);
                    eval_z(c, v, a_z, &stage[0], z_m)?;
                    let a_m = d(a3, a_z);
                    eval_m(c, v, a_m, z_m, &stage[1])?;
                    eval_y(c, v, d(a1, a_m), z_m, &stage[2])?
                }
                FunctionalSpec::Randomized4([a1, a2, a3, a4]) => {
                    let a_z = d(a4, a_nat);
                    eval_z(c, v, a_z, &stage[0], z_m)?;
                    let a_m = d(a3, a_z);
                    eval_m(c, v, a_m, z_m, &stage[1])?;
                    let a_t = d(a2, a_m);
                    eval_z(c, v, a_t, &stage[2], z_y)?;
                    eval_y(c, v, d(a1, a_t), z_y, &stage[3])?
                }
            };
        }
        Ok(())
    }
}

fn check_statistical(scm: &Scm, spec: &FunctionalSpec) -> Result<(), OracleError> {
    match (spec.needs_moc(), scm.has_moc()) {
        (false, true) => Err(OracleError::ConfounderPresent(spec.to_string())),
        (true, false) => Err(OracleError::ConfounderAbsent(spec.to_string())),
        _ => Ok(()),
    }
}

/// Value of a statistical functional under the SCM's observed-data law, by
/// nested Monte Carlo: each integral is a fresh draw from the corresponding
/// conditional law, and policy shifts compose in the same order as the
/// regression program that estimates the functional.
pub fn truth_statistical(
    scm: &Scm,
    spec: &FunctionalSpec,
    policies: Option<&PolicyPair>,
    draws: usize,
    seed: u64,
) -> Result<TruthEntry, OracleError> {
    check_statistical(scm, spec)?;
    let c = scm.compile()?;
    let pol = resolve_policies(scm, policies).bind(&scm.roles())?;
    let specs = [*spec];
    let f = statistical_sampler(&c, pol, &specs);
    Ok(monte_carlo(&c, draws, seed, 1, &[vec![(1.0, 0)]], f)?[0])
}

type Definition = (&'static str, Vec<(f64, usize)>);

/// Counterfactuals and effect definitions for a family, straight from the
/// nested-counterfactual definitions (not from the identification map).
fn counterfactual_definitions(family: EffectFamily) -> (Vec<Counterfactual>, Vec<Definition>) {
    use Counterfactual as C;
    match family {
        EffectFamily::N => (
            vec![
                C::Functional(FunctionalSpec::natural2(1, 1)),
                C::Functional(FunctionalSpec::natural2(1, 0)),
                C::Functional(FunctionalSpec::natural2(0, 0)),
            ],
            vec![
                ("NDE", vec![(1.0, 1), (-1.0, 2)]),
                ("NIE", vec![(1.0, 0), (-1.0, 1)]),
                ("ATE", vec![(1.0, 0), (-1.0, 2)]),
            ],
        ),
        EffectFamily::RI => (
            vec![
                C::Interventional([Arm::D1, Arm::D1]),
                C::Interventional([Arm::D1, Arm::D0]),
                C::Interventional([Arm::D0, Arm::D0]),
                C::Twin(Twin::S0),
                C::Twin(Twin::S4),
            ],
            vec![
                ("RIDE", vec![(1.0, 1), (-1.0, 2)]),
                ("RIIE", vec![(1.0, 0), (-1.0, 1)]),
                ("ATE", vec![(1.0, 3), (-1.0, 4)]),
            ],
        ),
        EffectFamily::RT => {
            // S0 S1 S2 S3 S4 S1' S2' S2'' S3''
            let cfs = Twin::ALL.iter().map(|&t| C::Twin(t)).collect();
            (
                cfs,
                vec![
                    ("P1", vec![(1.0, 0), (-1.0, 1)]),
                    ("P2", vec![(1.0, 5), (-1.0, 6)]),
                    ("P3", vec![(1.0, 7), (-1.0, 8)]),
                    ("P4", vec![(1.0, 3), (-1.0, 4)]),
                    (
                        "R",
                        vec![(1.0, 1), (-1.0, 5), (1.0, 6), (-1.0, 7), (1.0, 8), (-1.0, 3)],
                    ),
                    ("ATE", vec![(1.0, 0), (-1.0, 4)]),
                ],
            )
        }
    }
}

/// Counterfactual truths for every effect of a family plus the means they
/// are built from, under common random numbers.
pub fn counterfactual_table(
    scm: &Scm,
    family: EffectFamily,
    policies: Option<&PolicyPair>,
    draws: usize,
    seed: u64,
) -> Result<TruthTable, OracleError> {
    let c = scm.compile()?;
    let pp = resolve_policies(scm, policies);
    let pol = pp.bind(&scm.roles())?;
    let (cfs, defs) = counterfactual_definitions(family);
    let nested: Vec<NestedCf> = cfs.iter().map(Counterfactual::nested).collect();
    let mut combos: Vec<Vec<(f64, usize)>> = (0..cfs.len()).map(|i| vec![(1.0, i)]).collect();
    combos.extend(defs.iter().map(|(_, d)| d.clone()));
    let f = counterfactual_sampler(&c, pol, &nested);
    let vals = monte_carlo(&c, draws, seed, nested.len(), &combos, f)?;
    let names = cfs.iter().map(|c| c.to_string()).chain(defs.iter().map(|(n, _)| n.to_string()));
    Ok(TruthTable {
        kind: TruthKind::Counterfactual,
        family: Some(family),
        draws,
        seed,
        policies: pp,
        entries: names.zip(vals).collect(),
    })
}

/// Statistical truths for the functionals of a family's contrast table and
/// the contrasts themselves.
pub fn statistical_table(
    scm: &Scm,
    family: EffectFamily,
    policies: Option<&PolicyPair>,
    draws: usize,
    seed: u64,
) -> Result<TruthTable, OracleError> {
    let table = effects_to_contrasts(family, scm.has_moc(), true)?;
    let specs = table.functionals();
    for s in &specs {
        check_statistical(scm, s)?;
    }
    let c = scm.compile()?;
    let pp = resolve_policies(scm, policies);
    let pol = pp.bind(&scm.roles())?;
    let mut combos: Vec<Vec<(f64, usize)>> = (0..specs.len()).map(|i| vec![(1.0, i)]).collect();
    for e in &table.effects {
        combos.push(
            e.terms
                .iter()
                .map(|(s, f)| (*s as f64, specs.iter().position(|x| x == f).expect("listed functional")))
                .collect(),
        );
    }
    let f = statistical_sampler(&c, pol, &specs);
    let vals = monte_carlo(&c, draws, seed, specs.len(), &combos, f)?;
    let names = specs
        .iter()
        .map(|s| s.to_string())
        .chain(table.effects.iter().map(|e| e.name.clone()));
    Ok(TruthTable {
        kind: TruthKind::Statistical,
        family: Some(family),
        draws,
        seed,
        policies: pp,
        entries: names.zip(vals).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::scm::{Equation, Expr, NoiseDist};

    fn linear_scm(a_to_z: f64, m_to_y: f64) -> Scm {
        let mut noise = BTreeMap::new();
        for u in ["u_w", "u_z", "u_m", "u_y"] {
            noise.insert(u.to_string(), NoiseDist::standard_normal());
        }
        noise.insert("u_a".into(), NoiseDist::unit_uniform());
        Scm {
            seed: 0,
            noise,
            covariates: vec![Equation::new("w", Expr::noise("u_w"))],
            treatment: Equation::new("a", Expr::bernoulli_of(Expr::linear(&[(0.5, "w")], None), "u_a")),
            moc: vec![Equation::new("z", Expr::linear(&[(a_to_z, "a")], Some("u_z")))],
            mediators: vec![Equation::new(
                "m",
                Expr::Add(vec![
                    Expr::linear(&[(0.5, "a"), (0.6, "z"), (0.4, "w")], Some("u_m")),
                    Expr::Mul(vec![Expr::c(0.5), Expr::var("a"), Expr::var("z")]),
                ]),
            )],
            outcome: Equation::new(
                "y",
                Expr::Add(vec![
                    Expr::linear(&[(0.3, "a"), (0.5, "z"), (m_to_y, "m"), (0.3, "w")], Some("u_y")),
                    Expr::Mul(vec![Expr::c(0.4 * m_to_y), Expr::var("z"), Expr::var("m")]),
                ]),
            ),
            policies: None,
        }
    }

    const D: usize = 40_000;

    #[test]
    fn twin_names_parse() {
        for t in Twin::ALL {
            assert_eq!(t.to_string().parse::<Twin>().unwrap(), t);
        }
        assert!(matches!("S5".parse::<Twin>(), Err(OracleError::UnknownTwinName(_))));
        assert_eq!(
            "ri(1,0)".parse::<Counterfactual>().unwrap(),
            Counterfactual::Interventional([Arm::D1, Arm::D0])
        );
        assert_eq!(
            "randomized4(0,0,1,1)".parse::<Counterfactual>().unwrap(),
            Counterfactual::Functional(FunctionalSpec::randomized4(0, 0, 1, 1))
        );
    }

    #[test]
    fn too_few_draws() {
        let scm = linear_scm(0.8, 0.7);
        let r = truth_counterfactual(&scm, &Counterfactual::Twin(Twin::S0), None, 100, 0);
        assert!(matches!(r, Err(OracleError::TooFewDraws { .. })));
    }

    #[test]
    fn rt_decomposition_at_truth() {
        let scm = linear_scm(0.8, 0.7);
        let t = counterfactual_table(&scm, EffectFamily::RT, None, D, 1).unwrap();
        let sum: f64 = ["P1", "P2", "P3", "P4", "R"].iter().map(|k| t.get(k).unwrap().value).sum();
        // exact per draw, so equal up to rounding
        assert!((sum - t.get("ATE").unwrap().value).abs() < 1e-10);
        let ate = t.get("S0").unwrap().value - t.get("S4").unwrap().value;
        assert!((ate - t.get("ATE").unwrap().value).abs() < 1e-10);
    }

    #[test]
    fn remainder_vanishes_without_a_to_z() {
        let scm = linear_scm(0.0, 0.7);
        let t = counterfactual_table(&scm, EffectFamily::RT, None, D, 2).unwrap();
        let r = t.get("R").unwrap();
        assert!(r.value.abs() <= 3.0 * r.mc_se + 1e-12, "{r:?}");
    }

    #[test]
    fn no_mediator_effect_on_outcome() {
        let scm = linear_scm(0.8, 0.0);
        let t = counterfactual_table(&scm, EffectFamily::RT, None, D, 3).unwrap();
        for k in ["P3", "P4"] {
            let e = t.get(k).unwrap();
            assert!(e.value.abs() <= 3.0 * e.mc_se + 1e-12, "{k}: {e:?}");
        }
        let mut no_z = scm.clone();
        no_z.moc.clear();
        no_z.noise.remove("u_z");
        no_z.mediators[0].expr = Expr::linear(&[(0.5, "a"), (0.4, "w")], Some("u_m"));
        no_z.outcome.expr = Expr::linear(&[(0.3, "a"), (0.3, "w")], Some("u_y"));
        let t = counterfactual_table(&no_z, EffectFamily::N, None, D, 3).unwrap();
        let nie = t.get("NIE").unwrap();
        assert!(nie.value.abs() <= 3.0 * nie.mc_se + 1e-12);
    }

    #[test]
    fn coupled_draws_share_noise_and_twins_do_not() {
        let mut scm = linear_scm(0.8, 0.7);
        // Y = Z so that Y(a, Z(a)) exposes the Z draw
        scm.outcome.expr = Expr::var("z");
        scm.noise.remove("u_y");
        let cfs = [
            Counterfactual::Nested(nested(1, zd(1, Source::Base), 1, zd(1, Source::Base), Source::Base)),
            Counterfactual::Nested(nested(0, zd(0, Source::Base), 0, zd(0, Source::Base), Source::Base)),
            Counterfactual::Nested(nested(0, zd(0, Source::Fresh), 0, zd(0, Source::Base), Source::Base)),
        ];
        let rows = sample_counterfactuals(&scm, &cfs, None, 5000, 4).unwrap();
        let corr = |i: usize, j: usize| {
            let n = rows.len() as f64;
            let mi = rows.iter().map(|r| r[i]).sum::<f64>() / n;
            let mj = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let cov: f64 = rows.iter().map(|r| (r[i] - mi) * (r[j] - mj)).sum::<f64>();
            let vi: f64 = rows.iter().map(|r| (r[i] - mi).powi(2)).sum::<f64>();
            let vj: f64 = rows.iter().map(|r| (r[j] - mj).powi(2)).sum::<f64>();
            cov / (vi * vj).sqrt()
        };
        assert!(corr(0, 1) > 0.99);
        assert!(corr(1, 2).abs() < 0.05);
    }

    #[test]
    fn interventional_draw_is_independent_of_own_mediator() {
        let mut scm = linear_scm(0.8, 0.7);
        // no W in M so that independence is unconditional
        scm.mediators[0].expr = Expr::linear(&[(0.5, "a"), (0.6, "z")], Some("u_m"));
        scm.outcome.expr = Expr::var("m");
        scm.noise.remove("u_y");
        let own = Counterfactual::Nested(nested(1, zd(1, Source::Base), 1, zd(1, Source::Base), Source::Base));
        let g = Counterfactual::Interventional([Arm::D1, Arm::D1]);
        let rows = sample_counterfactuals(&scm, &[own, g], None, 5000, 5).unwrap();
        let n = rows.len() as f64;
        let m0 = rows.iter().map(|r| r[0]).sum::<f64>() / n;
        let m1 = rows.iter().map(|r| r[1]).sum::<f64>() / n;
        let cov = rows.iter().map(|r| (r[0] - m0) * (r[1] - m1)).sum::<f64>() / n;
        assert!(cov.abs() < 0.08, "{cov}");
    }

    #[test]
    fn identification_matches_counterfactuals() {
        let scm = linear_scm(0.8, 0.7);
        let pairs = [
            (Counterfactual::Twin(Twin::S1), FunctionalSpec::coupled3(0, 1, 1)),
            (Counterfactual::Twin(Twin::S3), FunctionalSpec::coupled3(0, 0, 1)),
            (Counterfactual::Twin(Twin::S1p), FunctionalSpec::randomized4(0, 1, 1, 1)),
            (Counterfactual::Twin(Twin::S2p), FunctionalSpec::randomized4(0, 0, 1, 1)),
            (Counterfactual::Twin(Twin::S2pp), FunctionalSpec::randomized4(0, 0, 1, 1)),
            (Counterfactual::Twin(Twin::S3pp), FunctionalSpec::randomized4(0, 0, 1, 0)),
            (Counterfactual::Interventional([Arm::D1, Arm::D0]), FunctionalSpec::randomized4(1, 1, 0, 0)),
        ];
        for (i, (cf, spec)) in pairs.iter().enumerate() {
            let a = truth_counterfactual(&scm, cf, None, D, 10 + i as u64).unwrap();
            let b = truth_statistical(&scm, spec, None, D, 20 + i as u64).unwrap();
            let tol = 3.0 * (a.mc_se.powi(2) + b.mc_se.powi(2)).sqrt();
            assert!((a.value - b.value).abs() <= tol, "{cf} vs {spec}: {a:?} {b:?}");
        }
    }

    #[test]
    fn natural_identification_without_confounder() {
        let mut scm = linear_scm(0.0, 0.7);
        scm.moc.clear();
        scm.noise.remove("u_z");
        scm.mediators[0].expr = Expr::linear(&[(0.5, "a"), (0.4, "w")], Some("u_m"));
        scm.outcome.expr = Expr::Add(vec![
            Expr::linear(&[(0.3, "a"), (0.7, "m"), (0.3, "w")], Some("u_y")),
            Expr::Mul(vec![Expr::c(0.5), Expr::var("a"), Expr::var("m")]),
        ]);
        let cf = truth_counterfactual(&scm, &Counterfactual::Functional(FunctionalSpec::natural2(1, 0)), None, D, 7).unwrap();
        let st = truth_statistical(&scm, &FunctionalSpec::natural2(1, 0), None, D, 8).unwrap();
        assert!((cf.value - st.value).abs() <= 3.0 * (cf.mc_se.powi(2) + st.mc_se.powi(2)).sqrt());
        assert!(matches!(
            truth_statistical(&linear_scm(0.8, 0.7), &FunctionalSpec::natural2(1, 0), None, D, 8),
            Err(OracleError::ConfounderPresent(_))
        ));
    }

    #[test]
    fn constant_outcome() {
        let mut scm = linear_scm(0.8, 0.7);
        scm.outcome.expr = Expr::c(2.5);
        scm.noise.remove("u_y");
        for spec in [FunctionalSpec::coupled3(0, 1, 1), FunctionalSpec::randomized4(1, 0, 1, 0)] {
            let t = truth_statistical(&scm, &spec, None, MIN_DRAWS, 0).unwrap();
            assert_eq!(t.value, 2.5);
        }
    }

    #[test]
    fn tables_are_deterministic_and_round_trip() {
        let scm = linear_scm(0.8, 0.7);
        let a = statistical_table(&scm, EffectFamily::RI, None, MIN_DRAWS, 5).unwrap();
        let b = statistical_table(&scm, EffectFamily::RI, None, MIN_DRAWS, 5).unwrap();
        assert_eq!(a, b);
        let back = TruthTable::from_json(&a.to_json()).unwrap();
        assert_eq!(a.to_json(), back.to_json());
    }
}
