//! Branching and immigration mechanisms as Lévy triplets.

mod kernel;
mod measure;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub(crate) use kernel::{Growth, Kernel};
pub use measure::{LevyMeasure, RangeSampler, ScaledComponent, TabulatedTail, TailIndex};

use crate::moments::MomentFunction;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MechanismError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("measure is not admissible: {0} diverges")]
    NotAdmissible(&'static str),
    #[error("the first moment of jumps above 1 is infinite")]
    FirstMomentInfinite,
    #[error("the measure has no mass in ({lo}, {hi}]")]
    EmptyTail { lo: f64, hi: f64 },
    #[error("the measure has infinite mass in ({lo}, {hi}]")]
    InfiniteMass { lo: f64, hi: f64 },
    #[error("undetermined: {0}")]
    Undetermined(String),
    #[error("lambda must be finite and >= 0 (got {0})")]
    NegativeLambda(f64),
    #[error("internal inconsistency: {0}")]
    Internal(String),
}

/// A value that is finite, certifiably infinite, or not decidable from the
/// representation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "status", content = "value", rename_all = "snake_case")]
pub enum Finiteness {
    Finite(f64),
    Infinite,
    Undetermined,
}

impl Finiteness {
    pub fn is_finite(&self) -> bool {
        matches!(self, Self::Finite(_))
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            Self::Finite(v) => Some(*v),
            _ => None,
        }
    }

    pub fn finite_or(self, default: f64) -> f64 {
        self.value().unwrap_or(default)
    }

    pub(crate) fn scale(self, s: f64) -> Self {
        match self {
            Self::Finite(v) => Self::Finite(v * s),
            other => other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureRole {
    /// Requires `∫ (1 ∧ z²) dμ < ∞`.
    Branching,
    /// Requires `∫ (1 ∧ z) dμ < ∞`.
    Immigration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Admissibility {
    Ok,
    Fails(&'static str),
    Undetermined,
}

pub fn check_admissibility(mu: &LevyMeasure, role: MeasureRole) -> Admissibility {
    let (value, name) = match role {
        MeasureRole::Branching => (mu.one_wedge_z2(), "∫(1∧z²)dμ"),
        MeasureRole::Immigration => (mu.one_wedge_z(), "∫(1∧z)dμ"),
    };
    match value {
        Finiteness::Finite(_) => Admissibility::Ok,
        Finiteness::Infinite => Admissibility::Fails(name),
        Finiteness::Undetermined => Admissibility::Undetermined,
    }
}

/// Classification of the non-explosion integral `∫_{0+} dλ / |φ(λ)|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GreyStatus {
    Holds,
    Fails,
    Undetermined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BranchingSpec {
    #[serde(default)]
    beta: f64,
    #[serde(default)]
    sigma: f64,
    #[serde(default)]
    measure: LevyMeasure,
}

/// `φ(λ) = βλ + σ²λ²/2 + ∫ (e^{-λz} - 1 + λz 1{z≤1}) m(dz)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BranchingSpec", into = "BranchingSpec")]
pub struct BranchingMechanism {
    beta: f64,
    sigma: f64,
    m: LevyMeasure,
    big_first_moment: Finiteness,
    grey: GreyStatus,
}

impl TryFrom<BranchingSpec> for BranchingMechanism {
    type Error = MechanismError;

    fn try_from(spec: BranchingSpec) -> Result<Self, Self::Error> {
        Self::new(spec.beta, spec.sigma, spec.measure)
    }
}

impl From<BranchingMechanism> for BranchingSpec {
    fn from(m: BranchingMechanism) -> Self {
        Self { beta: m.beta, sigma: m.sigma, measure: m.m }
    }
}

impl BranchingMechanism {
    pub fn new(beta: f64, sigma: f64, m: LevyMeasure) -> Result<Self, MechanismError> {
        if !beta.is_finite() {
            return Err(MechanismError::InvalidParameter(format!("beta must be finite (got {beta})")));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(MechanismError::InvalidParameter(format!("sigma must be >= 0 (got {sigma})")));
        }
        m.validate()?;
        if let Admissibility::Fails(which) = check_admissibility(&m, MeasureRole::Branching) {
            return Err(MechanismError::NotAdmissible(which));
        }
        let big_first_moment = if m.decidable() {
            m.moment(1.0, 1.0, f64::INFINITY)
        } else {
            Finiteness::Undetermined
        };
        let mut mech = Self { beta, sigma, m, big_first_moment, grey: GreyStatus::Undetermined };
        mech.grey = mech.classify_grey();
        Ok(mech)
    }

    /// `φ(λ) = βλ`.
    pub fn linear(beta: f64) -> Self {
        Self::new(beta, 0.0, LevyMeasure::zero()).expect("finite beta")
    }

    /// `φ(λ) = βλ + σ²λ²/2`.
    pub fn feller(sigma: f64, beta: f64) -> Self {
        Self::new(beta, sigma, LevyMeasure::zero()).expect("valid Feller parameters")
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn measure(&self) -> &LevyMeasure {
        &self.m
    }

    pub fn grey(&self) -> GreyStatus {
        self.grey
    }

    pub fn phi(&self, lambda: f64) -> Result<f64, MechanismError> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(MechanismError::NegativeLambda(lambda));
        }
        let jumps = match self.m.phi_integral(lambda) {
            Finiteness::Finite(v) => v,
            other => {
                return Err(MechanismError::Internal(format!("jump integral at λ={lambda} is {other:?}")))
            }
        };
        let value = self.beta * lambda + 0.5 * self.sigma * self.sigma * lambda * lambda + jumps;
        if value.is_finite() {
            Ok(value)
        } else {
            Err(MechanismError::Internal(format!("φ({lambda}) is not finite")))
        }
    }

    /// `∫_1^∞ z m(dz)`.
    pub fn big_jump_first_moment(&self) -> Finiteness {
        self.big_first_moment
    }

    /// `b = β - ∫_1^∞ z m(dz)`.
    pub fn effective_drift_b(&self) -> Result<f64, MechanismError> {
        match self.big_first_moment {
            Finiteness::Finite(v) => Ok(self.beta - v),
            Finiteness::Infinite => Err(MechanismError::FirstMomentInfinite),
            Finiteness::Undetermined => {
                Err(MechanismError::Undetermined("first moment beyond a tabulated grid".into()))
            }
        }
    }

    pub fn is_trivial(&self) -> bool {
        self.beta == 0.0 && self.sigma == 0.0 && self.m.is_zero()
    }

    fn classify_grey(&self) -> GreyStatus {
        if self.is_trivial() {
            return GreyStatus::Holds;
        }
        match self.big_first_moment {
            // φ'(0+) = b is finite, so 1/|φ| is not integrable at 0
            Finiteness::Finite(_) => GreyStatus::Holds,
            Finiteness::Infinite => match self.m.tail_index() {
                // φ(λ) ~ -C λ^α with α < 1 near 0
                TailIndex::Power(a) if a < 1.0 => GreyStatus::Fails,
                // φ(λ) ~ -C λ ln(1/λ)
                TailIndex::Power(1.0) => GreyStatus::Holds,
                _ => GreyStatus::Undetermined,
            },
            Finiteness::Undetermined => GreyStatus::Undetermined,
        }
    }

    /// The mechanism `φ_k` whose Lévy measure is the image of `m` under
    /// `z ↦ z ∧ k`.
    pub fn truncate(&self, k: f64) -> Result<Self, MechanismError> {
        if !(k >= 1.0 && k.is_finite()) {
            return Err(MechanismError::InvalidParameter(format!("truncation level must be >= 1 (got {k})")));
        }
        if self.m.is_zero() {
            return Ok(self.clone());
        }
        // at k = 1 the jumps clipped onto 1 would otherwise enter the compensator
        let beta = if k == 1.0 { self.beta - self.m.tail_mass(1.0) } else { self.beta };
        Self::new(beta, self.sigma, self.m.truncated(k))
    }

    pub fn tail_mass(&self, a: f64) -> f64 {
        self.m.tail_mass(a)
    }

    pub fn sample_tail<R: Rng + ?Sized>(&self, a: f64, rng: &mut R) -> Result<f64, MechanismError> {
        self.m.sample_tail(a, rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImmigrationSpec {
    #[serde(default)]
    h: f64,
    #[serde(default)]
    measure: LevyMeasure,
}

/// `ψ(λ) = hλ + ∫ (1 - e^{-λz}) n(dz)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ImmigrationSpec", into = "ImmigrationSpec")]
pub struct ImmigrationMechanism {
    h: f64,
    n: LevyMeasure,
}

impl TryFrom<ImmigrationSpec> for ImmigrationMechanism {
    type Error = MechanismError;

    fn try_from(spec: ImmigrationSpec) -> Result<Self, Self::Error> {
        Self::new(spec.h, spec.measure)
    }
}

impl From<ImmigrationMechanism> for ImmigrationSpec {
    fn from(m: ImmigrationMechanism) -> Self {
        Self { h: m.h, measure: m.n }
    }
}

impl Default for ImmigrationMechanism {
    fn default() -> Self {
        Self { h: 0.0, n: LevyMeasure::zero() }
    }
}

impl ImmigrationMechanism {
    pub fn new(h: f64, n: LevyMeasure) -> Result<Self, MechanismError> {
        if !(h >= 0.0 && h.is_finite()) {
            return Err(MechanismError::InvalidParameter(format!("h must be >= 0 (got {h})")));
        }
        n.validate()?;
        if let Admissibility::Fails(which) = check_admissibility(&n, MeasureRole::Immigration) {
            return Err(MechanismError::NotAdmissible(which));
        }
        Ok(Self { h, n })
    }

    /// `ψ(λ) = hλ`.
    pub fn linear(h: f64) -> Self {
        Self::new(h, LevyMeasure::zero()).expect("h >= 0")
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn measure(&self) -> &LevyMeasure {
        &self.n
    }

    pub fn is_trivial(&self) -> bool {
        self.h == 0.0 && self.n.is_zero()
    }

    pub fn psi(&self, lambda: f64) -> Result<f64, MechanismError> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(MechanismError::NegativeLambda(lambda));
        }
        match self.n.psi_integral(lambda) {
            Finiteness::Finite(v) => Ok(self.h * lambda + v),
            other => Err(MechanismError::Internal(format!("immigration integral at λ={lambda} is {other:?}"))),
        }
    }
}

/// `∫_(a, ∞) f dμ`, decided by tail exponents and evaluated when finite.
pub fn levy_integral(mu: &LevyMeasure, f: &MomentFunction, a: f64) -> Finiteness {
    if !mu.decidable() {
        return Finiteness::Undetermined;
    }
    let (p, q) = f.growth();
    let eval = |z: f64| f.apply(z);
    let kernel = Kernel::Growth(Growth { f: &eval, p, q, exact_from: f.exact_tail_from() });
    mu.integrate(&kernel, a, f64::INFINITY)
}
