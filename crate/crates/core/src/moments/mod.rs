//! Moment functions, integer moments and f-moment finiteness criteria.

mod bell;
mod condition_b;

use serde::{Deserialize, Serialize};

pub use bell::{complete_bell, partial_bell};
pub use condition_b::{shift_to_condition_b, verify_condition_b, ConditionBReport};

use crate::mechanism::{levy_integral, BranchingMechanism, Finiteness, ImmigrationMechanism, MechanismError};
use crate::ode::{self, Tolerance};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MomentError {
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error("invalid moment function: {0}")]
    InvalidFunction(String),
    #[error("no shift a <= 1000 satisfies condition B for {0}")]
    CannotShift(String),
    #[error("integer moments are implemented for 1 <= n <= 6 (got {0})")]
    OrderOutOfRange(usize),
    #[error("sensitivity solver failed: {0}")]
    Solver(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    /// `x^p`.
    Power { p: f64 },
    /// `x^p (1 + ln(1 ∨ x))^q`.
    PowerLog { p: f64, q: f64 },
    /// `x ln x`.
    #[serde(rename = "xlogx")]
    XLogX,
}

/// A moment function `f` with its condition A/B constants.
///
/// With `shift_a > 0` the function evaluates as `f(a ∨ x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentFunction {
    #[serde(flatten)]
    pub family: Family,
    #[serde(default)]
    pub cond_a_c: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cond_b_k: Option<f64>,
    #[serde(default)]
    pub shift_a: f64,
}

impl MomentFunction {
    pub fn new(family: Family) -> Self {
        Self { family, cond_a_c: 0.0, cond_b_k: None, shift_a: 0.0 }
    }

    pub fn power(p: f64) -> Self {
        Self::new(Family::Power { p })
    }

    pub fn with_condition_a(mut self, c: f64) -> Self {
        self.cond_a_c = c;
        self
    }

    pub fn with_shift(mut self, a: f64) -> Self {
        self.shift_a = a;
        self
    }

    pub fn validate(&self) -> Result<(), MomentError> {
        let bad = |m: String| Err(MomentError::InvalidFunction(m));
        match self.family {
            Family::Power { p } if !(p > 0.0 && p.is_finite()) => return bad(format!("power needs p > 0 (got {p})")),
            Family::PowerLog { p, q } if !(p > 0.0 && p.is_finite() && q.is_finite()) => {
                return bad(format!("power_log needs p > 0 and finite q (got {p}, {q})"))
            }
            _ => {}
        }
        if !(self.shift_a >= 0.0 && self.shift_a.is_finite()) {
            return bad(format!("shift_a must be >= 0 (got {})", self.shift_a));
        }
        if !(self.cond_a_c >= 0.0 && self.cond_a_c.is_finite()) {
            return bad(format!("cond_a_c must be >= 0 (got {})", self.cond_a_c));
        }
        if let Some(k) = self.cond_b_k {
            if !(k > 0.0 && k.is_finite()) {
                return bad(format!("cond_b_k must be > 0 (got {k})"));
            }
        }
        Ok(())
    }

    /// The unshifted family function.
    pub fn base(&self, x: f64) -> f64 {
        match self.family {
            Family::Power { p } => x.powf(p),
            Family::PowerLog { p, q } => x.powf(p) * (1.0 + x.max(1.0).ln()).powf(q),
            Family::XLogX => {
                if x == 0.0 {
                    0.0
                } else {
                    x * x.ln()
                }
            }
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        self.base(x.max(self.shift_a))
    }

    /// Tail growth `(p, q)`: `f(z) ≍ z^p (ln z)^q` as `z → ∞`.
    pub fn growth(&self) -> (f64, f64) {
        match self.family {
            Family::Power { p } => (p, 0.0),
            Family::PowerLog { p, q } => (p, q),
            Family::XLogX => (1.0, 1.0),
        }
    }

    /// Point beyond which `f(z) = z^p (1 + ln z)^q` holds exactly.
    pub(crate) fn exact_tail_from(&self) -> Option<f64> {
        match self.family {
            Family::Power { .. } | Family::PowerLog { .. } => Some(self.shift_a.max(1.0)),
            Family::XLogX => None,
        }
    }

    pub fn label(&self) -> String {
        let base = match self.family {
            Family::Power { p } => format!("power(p={p})"),
            Family::PowerLog { p, q } => format!("power_log(p={p}, q={q})"),
            Family::XLogX => "xlogx".to_string(),
        };
        if self.shift_a > 0.0 {
            format!("{base} shifted to a={}", self.shift_a)
        } else {
            base
        }
    }
}

/// `E_x X_t = x e^{-bt}`.
pub fn mean_cb(mech: &BranchingMechanism, x: f64, t: f64) -> Result<f64, MomentError> {
    let b = mech.effective_drift_b()?;
    Ok(x * (-b * t).exp())
}

/// Derivatives of `φ` at `0+`: `[φ'(0), φ''(0), ...]` up to order `n`.
///
/// The error carries the verdict when a required jump moment is not finite.
pub fn phi_derivatives_at_zero(mech: &BranchingMechanism, n: usize) -> Result<Vec<f64>, Finiteness> {
    let m = mech.measure();
    let mut out = Vec::with_capacity(n);
    for k in 1..=n {
        let d = if k == 1 {
            match mech.effective_drift_b() {
                Ok(b) => b,
                Err(MechanismError::FirstMomentInfinite) => return Err(Finiteness::Infinite),
                Err(_) => return Err(Finiteness::Undetermined),
            }
        } else {
            let full = match (m.moment(k as f64, 0.0, 1.0), moment_above_one(mech, k)) {
                (Finiteness::Finite(a), Finiteness::Finite(b)) => a + b,
                (_, Finiteness::Undetermined) => return Err(Finiteness::Undetermined),
                _ => return Err(Finiteness::Infinite),
            };
            if k == 2 {
                mech.sigma() * mech.sigma() + full
            } else if k % 2 == 0 {
                full
            } else {
                -full
            }
        };
        out.push(d);
    }
    Ok(out)
}

fn moment_above_one(mech: &BranchingMechanism, k: usize) -> Finiteness {
    let m = mech.measure();
    if !m.decidable() {
        return Finiteness::Undetermined;
    }
    m.moment(k as f64, 1.0, f64::INFINITY)
}

/// `E_x X_t^n` from the λ-derivatives of the cumulant at `0`.
pub fn integer_moment(mech: &BranchingMechanism, x: f64, n: usize, t: f64) -> Result<Finiteness, MomentError> {
    if !(1..=6).contains(&n) {
        return Err(MomentError::OrderOutOfRange(n));
    }
    let phis = match phi_derivatives_at_zero(mech, n) {
        Ok(d) => d,
        Err(verdict) => return Ok(verdict),
    };
    let a = cumulant_derivatives(&phis, t)?;
    let scaled: Vec<f64> = a.iter().map(|aj| -x * aj).collect();
    let sign = if n.is_multiple_of(2) { 1.0 } else { -1.0 };
    Ok(Finiteness::Finite(sign * complete_bell(&scaled)))
}

/// `a_j(t) = ∂^j v_t / ∂λ^j` at `λ = 0` for `j = 1..=phis.len()`.
pub fn cumulant_derivatives(phis: &[f64], t: f64) -> Result<Vec<f64>, MomentError> {
    let n = phis.len();
    let mut y0 = vec![0.0; n];
    y0[0] = 1.0;
    if t == 0.0 {
        return Ok(y0);
    }
    let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| {
        for j in 1..=n {
            let mut acc = 0.0;
            for (k, phi) in phis.iter().enumerate().take(j) {
                acc += phi * partial_bell(j, k + 1, y);
            }
            dy[j - 1] = -acc;
        }
    };
    let tol = Tolerance { abs: 1e-14, rel: 1e-12 };
    let sol = ode::solve(rhs, 0.0, &y0, t, tol, |_| true).map_err(|s| MomentError::Solver(s.error.to_string()))?;
    Ok(sol.states.last().expect("nonempty solution").clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Finite,
    Infinite,
    Undetermined,
}

/// Outcome of an f-moment finiteness criterion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionResult {
    pub verdict: Verdict,
    pub reason: String,
    pub integral_value: Option<f64>,
}

impl CriterionResult {
    /// `{finite: bool | null, reason, integral_value?}`.
    pub fn to_json(&self) -> serde_json::Value {
        let finite = match self.verdict {
            Verdict::Finite => serde_json::Value::Bool(true),
            Verdict::Infinite => serde_json::Value::Bool(false),
            Verdict::Undetermined => serde_json::Value::Null,
        };
        let mut obj = serde_json::json!({ "finite": finite, "reason": self.reason });
        if let Some(v) = self.integral_value {
            obj["integral_value"] = serde_json::json!(v);
        }
        obj
    }
}

fn measure_verdict(mu: &crate::mechanism::LevyMeasure, f: &MomentFunction, name: &str) -> (Verdict, String, Option<f64>) {
    match levy_integral(mu, f, 1.0) {
        Finiteness::Finite(v) => (Verdict::Finite, format!("∫_1^∞ f d{name} = {v:.6e} is finite"), Some(v)),
        Finiteness::Infinite => {
            let (p, q) = f.growth();
            (Verdict::Infinite, format!("∫_1^∞ f d{name} diverges (f grows like z^{p} log^{q} z)"), None)
        }
        Finiteness::Undetermined => {
            (Verdict::Undetermined, format!("the tail of {name} beyond its grid is undeclared"), None)
        }
    }
}

/// `E f(X_t) < ∞` iff `E f(X_0) < ∞` and `∫_1^∞ f dm < ∞`.
pub fn cb_f_moment_finite(mech: &BranchingMechanism, f: &MomentFunction, x0_f_finite: bool) -> CriterionResult {
    if !x0_f_finite {
        return CriterionResult {
            verdict: Verdict::Infinite,
            reason: "f(X_0) has infinite expectation".into(),
            integral_value: None,
        };
    }
    let (verdict, reason, integral_value) = measure_verdict(mech.measure(), f, "m");
    CriterionResult { verdict, reason, integral_value }
}

/// `E f(Y_t) < ∞` iff `E f(Y_0) < ∞` and `∫_1^∞ f d(m + n) < ∞`.
pub fn cbi_f_moment_finite(
    mech: &BranchingMechanism,
    imm: &ImmigrationMechanism,
    f: &MomentFunction,
    y0_f_finite: bool,
) -> CriterionResult {
    let cb = cb_f_moment_finite(mech, f, y0_f_finite);
    if cb.verdict == Verdict::Infinite {
        return cb;
    }
    let (verdict, reason, value) = measure_verdict(imm.measure(), f, "n");
    match (cb.verdict, verdict) {
        (_, Verdict::Infinite) => CriterionResult { verdict, reason, integral_value: None },
        (Verdict::Undetermined, _) => cb,
        (Verdict::Finite, Verdict::Undetermined) => CriterionResult { verdict, reason, integral_value: None },
        (Verdict::Finite, Verdict::Finite) => {
            let total = cb.integral_value.unwrap_or(0.0) + value.unwrap_or(0.0);
            CriterionResult {
                verdict: Verdict::Finite,
                reason: format!("∫_1^∞ f d(m+n) = {total:.6e} is finite"),
                integral_value: Some(total),
            }
        }
        (Verdict::Infinite, _) => unreachable!("handled above"),
    }
}
