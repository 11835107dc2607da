//! Mediation functionals expressed as sequential-regression programs, the
//! treatment policies they shift by, and the effect contrasts built on them.

use std::fmt;
use std::str::FromStr;

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::VariableRoles;
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimandError {
    #[error("{0} requires no intermediate confounders, but moc is configured")]
    MocPresent(String),
    #[error("{0} requires intermediate confounders (moc), but none are configured")]
    MocAbsent(String),
    #[error("{0} needs the permuted Z^pi columns, which are missing")]
    MissingZpi(String),
    #[error("effect family {family} cannot be used here: {reason}")]
    FamilyRoleMismatch { family: EffectFamily, reason: String },
    #[error("unknown effect `{0}` (expected N, RI or RT)")]
    UnknownEffect(String),
    #[error("bad policy: {0}")]
    BadPolicy(String),
    #[error("malformed program: {0}")]
    MalformedProgram(String),
}

/// A modified treatment policy `d(a, w)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Policy {
    /// Sets every unit to `level`.
    Constant { level: f64 },
    /// Leaves the natural treatment value unchanged.
    Natural,
    /// `max(a + delta, floor)` for units whose `covariate` is at least
    /// `cutoff`, otherwise `a`. The covariate may be the treatment itself.
    ThresholdShift {
        covariate: String,
        cutoff: f64,
        delta: f64,
        #[serde(default)]
        floor: Option<f64>,
    },
}

impl Policy {
    pub fn constant(level: f64) -> Self {
        Policy::Constant { level }
    }

    pub fn threshold_shift(covariate: &str, cutoff: f64, delta: f64, floor: Option<f64>) -> Self {
        Policy::ThresholdShift {
            covariate: covariate.to_string(),
            cutoff,
            delta,
            floor,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Policy::Constant { level } => format!("set treatment to {level}"),
            Policy::Natural => "natural treatment value".to_string(),
            Policy::ThresholdShift {
                covariate,
                cutoff,
                delta,
                floor,
            } => match floor {
                Some(f) => format!("a -> max(a + {delta}, {f}) when {covariate} >= {cutoff}"),
                None => format!("a -> a + {delta} when {covariate} >= {cutoff}"),
            },
        }
    }

    /// Resolves column references against the dataset roles.
    pub fn bind(&self, roles: &VariableRoles) -> Result<BoundPolicy, EstimandError> {
        let rule = match self {
            Policy::Constant { level } => {
                if !level.is_finite() {
                    return Err(EstimandError::BadPolicy(format!("non-finite level {level}")));
                }
                BoundRule::Constant(*level)
            }
            Policy::Natural => BoundRule::Natural,
            Policy::ThresholdShift {
                covariate,
                cutoff,
                delta,
                floor,
            } => {
                let source = if *covariate == roles.treatment {
                    PolicySource::Treatment
                } else if let Some(j) = roles.covariates.iter().position(|c| c == covariate) {
                    PolicySource::Covariate(j)
                } else {
                    return Err(EstimandError::BadPolicy(format!(
                        "threshold_shift covariate `{covariate}` is neither the treatment nor a covariate"
                    )));
                };
                if !(cutoff.is_finite() && delta.is_finite() && floor.map_or(true, f64::is_finite)) {
                    return Err(EstimandError::BadPolicy(
                        "threshold_shift parameters must be finite".into(),
                    ));
                }
                BoundRule::ThresholdShift {
                    source,
                    cutoff: *cutoff,
                    delta: *delta,
                    floor: *floor,
                }
            }
        };
        Ok(BoundPolicy { rule })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicySource {
    Treatment,
    Covariate(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundRule {
    Constant(f64),
    Natural,
    ThresholdShift {
        source: PolicySource,
        cutoff: f64,
        delta: f64,
        floor: Option<f64>,
    },
}

/// A policy whose covariate reference has been resolved to a column index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundPolicy {
    pub rule: BoundRule,
}

impl BoundPolicy {
    pub fn is_constant(&self) -> bool {
        matches!(self.rule, BoundRule::Constant(_))
    }
}

/// Evaluates `d(a, w)`.
pub fn apply_policy<T: Scalar>(p: &BoundPolicy, a: T, w: ArrayView1<T>) -> T {
    match p.rule {
        BoundRule::Constant(level) => T::of(level),
        BoundRule::Natural => a,
        BoundRule::ThresholdShift {
            source,
            cutoff,
            delta,
            floor,
        } => {
            let v = match source {
                PolicySource::Treatment => a,
                PolicySource::Covariate(j) => w[j],
            };
            if v >= T::of(cutoff) {
                let shifted = a + T::of(delta);
                match floor {
                    Some(f) => shifted.max(T::of(f)),
                    None => shifted,
                }
            } else {
                a
            }
        }
    }
}

/// The two policies `(d0, d1)` indexed by functional arguments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyPair {
    pub d0: Policy,
    pub d1: Policy,
}

impl PolicyPair {
    pub fn binary() -> Self {
        Self {
            d0: Policy::constant(0.0),
            d1: Policy::constant(1.0),
        }
    }

    pub fn bind(&self, roles: &VariableRoles) -> Result<BoundPolicies, EstimandError> {
        Ok(BoundPolicies {
            d0: self.d0.bind(roles)?,
            d1: self.d1.bind(roles)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundPolicies {
    pub d0: BoundPolicy,
    pub d1: BoundPolicy,
}

impl BoundPolicies {
    pub fn get(&self, arm: Arm) -> &BoundPolicy {
        match arm {
            Arm::D0 => &self.d0,
            Arm::D1 => &self.d1,
        }
    }
}

/// Functional argument selecting `d0` or `d1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Arm {
    D0,
    D1,
}

impl Arm {
    pub fn from_index(i: u8) -> Self {
        if i == 0 {
            Arm::D0
        } else {
            Arm::D1
        }
    }
    pub fn index(self) -> u8 {
        match self {
            Arm::D0 => 0,
            Arm::D1 => 1,
        }
    }
}

/// Input transformation: optionally set `A` to a policy value and/or replace
/// `Z` by `Z^pi`. Never touches `W`, `M` or `Y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct ShiftMap {
    pub set_treatment: Option<Arm>,
    pub swap_z: bool,
}

impl ShiftMap {
    pub const IDENTITY: ShiftMap = ShiftMap {
        set_treatment: None,
        swap_z: false,
    };

    pub fn to(arm: Arm) -> Self {
        Self {
            set_treatment: Some(arm),
            swap_z: false,
        }
    }

    pub fn to_swapped(arm: Arm) -> Self {
        Self {
            set_treatment: Some(arm),
            swap_z: true,
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }
}

impl fmt::Display for ShiftMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.set_treatment, self.swap_z) {
            (None, false) => write!(f, "id"),
            (Some(a), false) => write!(f, "A<-d{}", a.index()),
            (None, true) => write!(f, "Z<-Zpi"),
            (Some(a), true) => write!(f, "A<-d{},Z<-Zpi", a.index()),
        }
    }
}

/// Conditioning variables of a regression step. `A` and `W` are always in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VarSet {
    pub z: bool,
    pub m: bool,
}

impl VarSet {
    pub const AW: VarSet = VarSet { z: false, m: false };
    pub const AZW: VarSet = VarSet { z: true, m: false };
    pub const AMW: VarSet = VarSet { z: false, m: true };
    pub const AZMW: VarSet = VarSet { z: true, m: true };

    /// Number of variable groups (counting A and W).
    pub fn size(&self) -> usize {
        2 + self.z as usize + self.m as usize
    }

    pub fn is_subset_of(&self, other: &VarSet) -> bool {
        (!self.z || other.z) && (!self.m || other.m)
    }
}

impl fmt::Display for VarSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "A")?;
        if self.z {
            write!(f, ",Z")?;
        }
        if self.m {
            write!(f, ",M")?;
        }
        write!(f, ",W")
    }
}

/// One sequential-regression step: regress the previous step's function,
/// evaluated under `shift` (or `Y` for the first step), on `vars`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Step {
    pub vars: VarSet,
    pub shift: ShiftMap,
}

/// Ordered regression steps plus the shift under which the last fitted
/// function is averaged.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RegressionProgram {
    pub steps: Vec<Step>,
    pub terminal: ShiftMap,
}

impl RegressionProgram {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Shift applied to step `k`'s fitted function by the consumer of its
    /// output: step `k + 1`'s pseudo-outcome shift, or the terminal shift.
    pub fn outer_shift(&self, k: usize) -> ShiftMap {
        if k + 1 < self.steps.len() {
            self.steps[k + 1].shift
        } else {
            self.terminal
        }
    }

    pub fn uses_zpi(&self) -> bool {
        self.terminal.swap_z || self.steps.iter().any(|s| s.shift.swap_z)
    }

    /// Checks the structural rules every program must obey: the first step
    /// has the identity shift, conditioning sets never grow in size (the
    /// randomized program trades Z for M between steps 2 and 3), the last step
    /// conditions on `(A, W)` only, and Z is swapped only where the target
    /// function sees Z.
    pub fn validate(&self) -> Result<(), EstimandError> {
        let bad = |m: String| Err(EstimandError::MalformedProgram(m));
        let Some(first) = self.steps.first() else {
            return bad("program has no steps".into());
        };
        if !first.shift.is_identity() {
            return bad("the first step must regress the outcome itself".into());
        }
        for (k, pair) in self.steps.windows(2).enumerate() {
            if pair[1].vars.size() > pair[0].vars.size() {
                return bad(format!(
                    "step {} conditions on ({}), more than step {} ({})",
                    k + 2,
                    pair[1].vars,
                    k + 1,
                    pair[0].vars
                ));
            }
            if pair[1].shift.swap_z && !pair[0].vars.z {
                return bad(format!("step {} swaps Z into a function without Z", k + 2));
            }
        }
        let last = self.steps.last().expect("non-empty");
        if last.vars != VarSet::AW {
            return bad("the last step must condition on (A, W) only".into());
        }
        if self.terminal.swap_z {
            return bad("the terminal shift cannot swap Z".into());
        }
        Ok(())
    }
}

/// A mediation functional with arguments selecting `d0`/`d1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FunctionalSpec {
    /// `∫ E(Y | a1, m, w) dP(m | a2, w) dP(w)`.
    Natural2([Arm; 2]),
    /// `∫ E(Y | a1, z, m, w) dP(m | a3, z, w) dP(z | a2, w) dP(w)`.
    Coupled3([Arm; 3]),
    /// `∫ E(Y | a1, z', m, w) dP(z' | a2, w) dP(m | a3, z, w) dP(z | a4, w) dP(w)`.
    Randomized4([Arm; 4]),
}

fn arms<const K: usize>(ix: [u8; K]) -> [Arm; K] {
    ix.map(Arm::from_index)
}

impl FunctionalSpec {
    pub fn natural2(a1: u8, a2: u8) -> Self {
        FunctionalSpec::Natural2(arms([a1, a2]))
    }
    pub fn coupled3(a1: u8, a2: u8, a3: u8) -> Self {
        FunctionalSpec::Coupled3(arms([a1, a2, a3]))
    }
    pub fn randomized4(a1: u8, a2: u8, a3: u8, a4: u8) -> Self {
        FunctionalSpec::Randomized4(arms([a1, a2, a3, a4]))
    }

    pub fn needs_moc(&self) -> bool {
        !matches!(self, FunctionalSpec::Natural2(_))
    }

    /// The equivalent functional once Z is absent: both Z-integrals become
    /// trivial and the argument pair (outcome arm, mediator arm) remains.
    pub fn without_moc(&self) -> Self {
        match *self {
            FunctionalSpec::Natural2(a) => FunctionalSpec::Natural2(a),
            FunctionalSpec::Coupled3([a1, _, a3]) => FunctionalSpec::Natural2([a1, a3]),
            FunctionalSpec::Randomized4([a1, _, a3, _]) => FunctionalSpec::Natural2([a1, a3]),
        }
    }

    /// Builds the regression program; `has_moc` says whether Z is present.
    pub fn program(&self, has_moc: bool) -> Result<RegressionProgram, EstimandError> {
        match *self {
            FunctionalSpec::Natural2([a1, a2]) => program_natural2(a1, a2, has_moc),
            FunctionalSpec::Coupled3([a1, a2, a3]) => program_coupled3(a1, a2, a3, has_moc),
            FunctionalSpec::Randomized4([a1, a2, a3, a4]) => {
                program_randomized4(a1, a2, a3, a4, has_moc)
            }
        }
    }

    pub fn arms(&self) -> Vec<Arm> {
        match self {
            FunctionalSpec::Natural2(a) => a.to_vec(),
            FunctionalSpec::Coupled3(a) => a.to_vec(),
            FunctionalSpec::Randomized4(a) => a.to_vec(),
        }
    }
}

impl fmt::Display for FunctionalSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (name, arms) = match self {
            FunctionalSpec::Natural2(_) => ("natural2", self.arms()),
            FunctionalSpec::Coupled3(_) => ("coupled3", self.arms()),
            FunctionalSpec::Randomized4(_) => ("randomized4", self.arms()),
        };
        let args: Vec<String> = arms.iter().map(|a| a.index().to_string()).collect();
        write!(f, "{name}({})", args.join(","))
    }
}

impl FromStr for FunctionalSpec {
    type Err = EstimandError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || EstimandError::UnknownEffect(s.to_string());
        let s_trim = s.trim();
        let open = s_trim.find('(').ok_or_else(bad)?;
        if !s_trim.ends_with(')') {
            return Err(bad());
        }
        let name = &s_trim[..open];
        let args: Vec<u8> = s_trim[open + 1..s_trim.len() - 1]
            .split(',')
            .map(|t| match t.trim() {
                "0" => Ok(0),
                "1" => Ok(1),
                _ => Err(bad()),
            })
            .collect::<Result<_, _>>()?;
        match (name, args.as_slice()) {
            ("natural2", &[a, b]) => Ok(Self::natural2(a, b)),
            ("coupled3", &[a, b, c]) => Ok(Self::coupled3(a, b, c)),
            ("randomized4", &[a, b, c, d]) => Ok(Self::randomized4(a, b, c, d)),
            _ => Err(bad()),
        }
    }
}

/// `E[E{E(Y | A=a1, M, W) | A=a2, W}]` with shifts by `d_{a1}` then `d_{a2}`.
pub fn program_natural2(a1: Arm, a2: Arm, has_moc: bool) -> Result<RegressionProgram, EstimandError> {
    if has_moc {
        return Err(EstimandError::MocPresent("natural2".into()));
    }
    Ok(RegressionProgram {
        steps: vec![
            Step {
                vars: VarSet::AMW,
                shift: ShiftMap::IDENTITY,
            },
            Step {
                vars: VarSet::AW,
                shift: ShiftMap::to(a1),
            },
        ],
        terminal: ShiftMap::to(a2),
    })
}

pub fn program_coupled3(
    a1: Arm,
    a2: Arm,
    a3: Arm,
    has_moc: bool,
) -> Result<RegressionProgram, EstimandError> {
    if !has_moc {
        return Err(EstimandError::MocAbsent("coupled3".into()));
    }
    Ok(RegressionProgram {
        steps: vec![
            Step {
                vars: VarSet::AZMW,
                shift: ShiftMap::IDENTITY,
            },
            Step {
                vars: VarSet::AZW,
                shift: ShiftMap::to(a1),
            },
            Step {
                vars: VarSet::AW,
                shift: ShiftMap::to(a3),
            },
        ],
        terminal: ShiftMap::to(a2),
    })
}

/// Step 2 integrates the outcome regression over `Z^pi`, which within a
/// treatment stratum has the law of Z given that treatment level.
pub fn program_randomized4(
    a1: Arm,
    a2: Arm,
    a3: Arm,
    a4: Arm,
    has_moc: bool,
) -> Result<RegressionProgram, EstimandError> {
    if !has_moc {
        return Err(EstimandError::MocAbsent("randomized4".into()));
    }
    Ok(RegressionProgram {
        steps: vec![
            Step {
                vars: VarSet::AZMW,
                shift: ShiftMap::IDENTITY,
            },
            Step {
                vars: VarSet::AMW,
                shift: ShiftMap::to_swapped(a1),
            },
            Step {
                vars: VarSet::AZW,
                shift: ShiftMap::to(a2),
            },
            Step {
                vars: VarSet::AW,
                shift: ShiftMap::to(a3),
            },
        ],
        terminal: ShiftMap::to(a4),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EffectFamily {
    /// Natural direct and indirect effects.
    N,
    /// Randomized interventional direct and indirect effects.
    RI,
    /// Recanting-twin path-specific effects with remainder.
    RT,
}

impl fmt::Display for EffectFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EffectFamily::N => "N",
            EffectFamily::RI => "RI",
            EffectFamily::RT => "RT",
        })
    }
}

impl FromStr for EffectFamily {
    type Err = EstimandError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "N" | "n" => Ok(EffectFamily::N),
            "RI" | "ri" => Ok(EffectFamily::RI),
            "RT" | "rt" => Ok(EffectFamily::RT),
            other => Err(EstimandError::UnknownEffect(other.to_string())),
        }
    }
}

/// A named signed combination of functionals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contrast {
    pub name: String,
    pub terms: Vec<(i8, FunctionalSpec)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastTable {
    pub family: EffectFamily,
    pub effects: Vec<Contrast>,
    /// Name of the remainder row, if the family has one.
    pub remainder: Option<String>,
    /// Rows that sum to the total effect, with the total's name.
    pub decomposition: Option<(Vec<String>, String)>,
}

impl ContrastTable {
    /// Distinct functionals referenced by the table, in first-use order.
    pub fn functionals(&self) -> Vec<FunctionalSpec> {
        let mut out: Vec<FunctionalSpec> = Vec::new();
        for c in &self.effects {
            for (_, f) in &c.terms {
                if !out.contains(f) {
                    out.push(*f);
                }
            }
        }
        out
    }

    pub fn get(&self, name: &str) -> Option<&Contrast> {
        self.effects.iter().find(|c| c.name == name)
    }
}

fn contrast(name: &str, terms: &[(i8, FunctionalSpec)]) -> Contrast {
    Contrast {
        name: name.to_string(),
        terms: terms.to_vec(),
    }
}

/// Maps an effect family to its contrast table.
///
/// Family `N` needs the absence of Z; `allow_cross_world` lets a caller who
/// accepts the cross-world assumption run it anyway (with Z ignored). The
/// families `RI`/`RT` without Z are expressed through `natural2`.
pub fn effects_to_contrasts(
    family: EffectFamily,
    has_moc: bool,
    allow_cross_world: bool,
) -> Result<ContrastTable, EstimandError> {
    use FunctionalSpec as F;
    if family == EffectFamily::N && has_moc && !allow_cross_world {
        return Err(EstimandError::FamilyRoleMismatch {
            family,
            reason: "natural effects are not identified with intermediate confounders (moc); \
                     use RI or RT, or pass the cross-world override"
                .into(),
        });
    }
    let n = F::natural2;
    let c = F::coupled3;
    let r = F::randomized4;
    let mut table = match family {
        EffectFamily::N => ContrastTable {
            family,
            effects: vec![
                contrast("NDE", &[(1, n(1, 0)), (-1, n(0, 0))]),
                contrast("NIE", &[(1, n(1, 1)), (-1, n(1, 0))]),
                contrast("ATE", &[(1, n(1, 1)), (-1, n(0, 0))]),
            ],
            remainder: None,
            decomposition: Some((vec!["NDE".into(), "NIE".into()], "ATE".into())),
        },
        EffectFamily::RI => ContrastTable {
            family,
            effects: vec![
                contrast("RIDE", &[(1, r(1, 1, 0, 0)), (-1, r(0, 0, 0, 0))]),
                contrast("RIIE", &[(1, r(1, 1, 1, 1)), (-1, r(1, 1, 0, 0))]),
            ],
            remainder: None,
            decomposition: None,
        },
        EffectFamily::RT => ContrastTable {
            family,
            effects: vec![
                contrast("P1", &[(1, c(1, 1, 1)), (-1, c(0, 1, 1))]),
                contrast("P2", &[(1, r(0, 1, 1, 1)), (-1, r(0, 0, 1, 1))]),
                contrast("P3", &[(1, r(0, 0, 1, 1)), (-1, r(0, 0, 1, 0))]),
                contrast("P4", &[(1, c(0, 0, 1)), (-1, c(0, 0, 0))]),
                contrast(
                    "R",
                    &[
                        (1, c(0, 1, 1)),
                        (-1, r(0, 1, 1, 1)),
                        (1, r(0, 0, 1, 0)),
                        (-1, c(0, 0, 1)),
                    ],
                ),
                contrast("ATE", &[(1, c(1, 1, 1)), (-1, c(0, 0, 0))]),
            ],
            remainder: Some("R".into()),
            decomposition: Some((
                vec!["P1".into(), "P2".into(), "P3".into(), "P4".into(), "R".into()],
                "ATE".into(),
            )),
        },
    };
    if !has_moc {
        for e in &mut table.effects {
            for (_, f) in &mut e.terms {
                *f = f.without_moc();
            }
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use std::collections::BTreeMap;

    fn roles() -> VariableRoles {
        VariableRoles::new(&["sex", "income"], "treat", &["comply"], &["job_seek"], "depress2")
    }

    #[test]
    fn threshold_shift_on_treatment() {
        let r = VariableRoles::new(&["sex"], "income", &[], &["m"], "y");
        let p = Policy::threshold_shift("income", 2.0, -1.0, Some(1.0)).bind(&r).unwrap();
        let w = array![0.0];
        assert_eq!(apply_policy(&p, 3.0, w.view()), 2.0);
        assert_eq!(apply_policy(&p, 1.0, w.view()), 1.0);
        assert_eq!(apply_policy(&p, 2.0, w.view()), 1.0);
    }

    #[test]
    fn natural_and_constant_policies() {
        let r = roles();
        let w = array![1.0, 4.0];
        let nat = Policy::Natural.bind(&r).unwrap();
        assert_eq!(apply_policy(&nat, 5.0, w.view()), 5.0);
        let c = Policy::constant(2.0).bind(&r).unwrap();
        assert_eq!(apply_policy(&c, 5.0, w.view()), 2.0);
        assert_eq!(apply_policy(&c, -1.0, w.view()), 2.0);
    }

    #[test]
    fn threshold_shift_on_covariate() {
        let p = Policy::threshold_shift("income", 3.0, -0.5, None).bind(&roles()).unwrap();
        assert_eq!(apply_policy(&p, 1.0, array![0.0, 3.0].view()), 0.5);
        assert_eq!(apply_policy(&p, 1.0, array![0.0, 2.9].view()), 1.0);
    }

    #[test]
    fn unknown_policy_covariate_is_rejected() {
        let err = Policy::threshold_shift("height", 1.0, 1.0, None).bind(&roles()).unwrap_err();
        assert!(matches!(err, EstimandError::BadPolicy(_)));
    }

    #[test]
    fn policy_config_syntax() {
        #[derive(Deserialize)]
        struct P {
            d1: Policy,
            d0: Policy,
        }
        let p: P = toml::from_str(
            r#"
            d1 = { type = "threshold_shift", covariate = "income", cutoff = 2, delta = -1, floor = 1 }
            d0 = { type = "natural" }
            "#,
        )
        .unwrap();
        assert_eq!(p.d1, Policy::threshold_shift("income", 2.0, -1.0, Some(1.0)));
        assert_eq!(p.d0, Policy::Natural);
        let c: Policy = toml::from_str(r#"type = "constant"
level = 2"#).unwrap();
        assert_eq!(c, Policy::constant(2.0));
    }

    #[test]
    fn program_shapes() {
        let p = program_natural2(Arm::D1, Arm::D1, false).unwrap();
        assert_eq!(p.len(), 2);
        p.validate().unwrap();
        let p = program_coupled3(Arm::D0, Arm::D1, Arm::D1, true).unwrap();
        assert_eq!(p.len(), 3);
        assert_eq!(p.terminal, ShiftMap::to(Arm::D1));
        p.validate().unwrap();
        let p = program_randomized4(Arm::D0, Arm::D0, Arm::D1, Arm::D0, true).unwrap();
        assert_eq!(p.len(), 4);
        assert!(p.steps[1].shift.swap_z);
        assert!(p.uses_zpi());
        p.validate().unwrap();
    }

    #[test]
    fn program_role_guards() {
        assert!(matches!(
            program_natural2(Arm::D1, Arm::D0, true),
            Err(EstimandError::MocPresent(_))
        ));
        assert!(matches!(
            program_coupled3(Arm::D1, Arm::D0, Arm::D0, false),
            Err(EstimandError::MocAbsent(_))
        ));
        assert!(matches!(
            program_randomized4(Arm::D1, Arm::D0, Arm::D0, Arm::D0, false),
            Err(EstimandError::MocAbsent(_))
        ));
    }

    #[test]
    fn malformed_programs_are_caught() {
        let mut p = program_coupled3(Arm::D1, Arm::D1, Arm::D1, true).unwrap();
        p.steps[2].vars = VarSet::AZMW;
        assert!(p.validate().is_err());
        let mut p = program_natural2(Arm::D1, Arm::D1, false).unwrap();
        p.steps.push(Step {
            vars: VarSet::AW,
            shift: ShiftMap::to_swapped(Arm::D0),
        });
        assert!(p.validate().is_err());
    }

    #[test]
    fn functional_names_round_trip() {
        for f in [
            FunctionalSpec::natural2(1, 0),
            FunctionalSpec::coupled3(0, 1, 1),
            FunctionalSpec::randomized4(0, 0, 1, 0),
        ] {
            assert_eq!(f.to_string().parse::<FunctionalSpec>().unwrap(), f);
        }
        assert!("natural2(2,0)".parse::<FunctionalSpec>().is_err());
        assert!("coupled3(1,1)".parse::<FunctionalSpec>().is_err());
    }

    #[test]
    fn n_with_moc_is_refused() {
        assert!(matches!(
            effects_to_contrasts(EffectFamily::N, true, false),
            Err(EstimandError::FamilyRoleMismatch { .. })
        ));
        assert!(effects_to_contrasts(EffectFamily::N, true, true).is_ok());
    }

    #[test]
    fn unknown_family() {
        assert!(matches!("O".parse::<EffectFamily>(), Err(EstimandError::UnknownEffect(_))));
    }

    #[test]
    fn ri_table_has_two_effects_and_no_remainder() {
        let t = effects_to_contrasts(EffectFamily::RI, true, false).unwrap();
        assert_eq!(t.effects.len(), 2);
        assert!(t.remainder.is_none());
        assert!(t.decomposition.is_none());
    }

    fn symbolic_sum(t: &ContrastTable, names: &[&str]) -> BTreeMap<FunctionalSpec, i32> {
        let mut acc = BTreeMap::new();
        for name in names {
            for (s, f) in &t.get(name).unwrap().terms {
                *acc.entry(*f).or_insert(0) += *s as i32;
            }
        }
        acc.retain(|_, v| *v != 0);
        acc
    }

    #[test]
    fn rt_table_telescopes_symbolically() {
        for has_moc in [true, false] {
            let t = effects_to_contrasts(EffectFamily::RT, has_moc, false).unwrap();
            let parts = symbolic_sum(&t, &["P1", "P2", "P3", "P4", "R"]);
            let ate = symbolic_sum(&t, &["ATE"]);
            assert_eq!(parts, ate);
        }
        let t = effects_to_contrasts(EffectFamily::N, false, false).unwrap();
        assert_eq!(symbolic_sum(&t, &["NDE", "NIE"]), symbolic_sum(&t, &["ATE"]));
    }

    #[test]
    fn contrast_coefficients_are_unit() {
        for fam in [EffectFamily::N, EffectFamily::RI, EffectFamily::RT] {
            let t = effects_to_contrasts(fam, fam != EffectFamily::N, false).unwrap();
            assert!(t.effects.iter().flat_map(|e| &e.terms).all(|(s, _)| s.abs() == 1));
        }
    }

    #[test]
    fn without_moc_everything_is_natural() {
        let t = effects_to_contrasts(EffectFamily::RT, false, false).unwrap();
        assert!(t.functionals().iter().all(|f| !f.needs_moc()));
        let r = symbolic_sum(&t, &["R"]);
        assert!(r.is_empty());
    }
}
