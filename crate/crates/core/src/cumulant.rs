//! The cumulant flow `dv/dt = -φ(v)`, `v_0 = λ`, and the CB/CBI Laplace
//! transforms built on it.

use crate::mechanism::{BranchingMechanism, ImmigrationMechanism, MechanismError};
use crate::ode::{self, DenseSolution, OdeError, Tolerance};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CumulantError {
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("solver stalled: {error}")]
    SolverStall { error: OdeError, partial: Box<CumulantSolution> },
}

/// A solved cumulant path `t ↦ v_t(λ)` on `[0, t_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulantSolution {
    pub lambda: f64,
    pub t_grid: Vec<f64>,
    pub v_values: Vec<f64>,
    /// Local error estimate of the step ending at each node.
    pub est_error: Vec<f64>,
    pub mech_label: String,
    dense: DenseSolution,
}

impl CumulantSolution {
    fn from_dense(lambda: f64, mech_label: String, dense: DenseSolution) -> Self {
        Self {
            lambda,
            t_grid: dense.times.clone(),
            v_values: dense.states.iter().map(|s| s[0]).collect(),
            est_error: dense.local_errors.clone(),
            mech_label,
            dense,
        }
    }

    pub fn t_max(&self) -> f64 {
        self.dense.t_end()
    }

    /// `v_t(λ)` by dense output; `t` is clamped to `[0, t_max]`.
    pub fn v_at(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return self.lambda;
        }
        self.dense.eval(t)[0]
    }

    pub fn error_at(&self, t: f64) -> f64 {
        self.dense.error_at(t)
    }

    /// `∫_0^t g(v_s) ds` along the dense output.
    pub fn integrate<G: Fn(f64) -> f64>(&self, t: f64, g: G) -> f64 {
        self.dense.integrate_along(t, |y| g(y[0]))
    }
}

/// `Tolerance` for a scalar request: `rel = tol`, `abs = tol / 100`.
pub fn scalar_tolerance(tol: f64) -> Tolerance {
    Tolerance::new(tol * 1e-2, tol)
}

pub fn mech_label(mech: &BranchingMechanism) -> String {
    format!("beta={} sigma={} m={:?}", mech.beta(), mech.sigma(), mech.measure())
}

/// Solve `dv/dt = -φ(v)` from `v_0 = λ` up to `t_max`.
pub fn solve_v(
    mech: &BranchingMechanism,
    lambda: f64,
    t_max: f64,
    tol: Tolerance,
) -> Result<CumulantSolution, CumulantError> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(CumulantError::InvalidArgument(format!("lambda must be >= 0 (got {lambda})")));
    }
    if !(t_max > 0.0 && t_max.is_finite()) {
        return Err(CumulantError::InvalidArgument(format!("t_max must be > 0 (got {t_max})")));
    }
    if !(tol.abs > 0.0 && tol.rel > 0.0) {
        return Err(CumulantError::InvalidArgument("tolerances must be > 0".into()));
    }
    // surface an inconsistent mechanism before entering the solver
    mech.phi(lambda)?;
    let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| {
        dy[0] = match mech.phi(y[0]) {
            Ok(p) => -p,
            Err(_) => f64::NAN,
        };
    };
    let label = mech_label(mech);
    match ode::solve(rhs, 0.0, &[lambda], t_max, tol, |y| y[0] >= 0.0) {
        Ok(dense) => Ok(CumulantSolution::from_dense(lambda, label, dense)),
        Err(stalled) => {
            let stalled = *stalled;
            Err(CumulantError::SolverStall {
                error: stalled.error,
                partial: Box::new(CumulantSolution::from_dense(lambda, label, stalled.partial)),
            })
        }
    }
}

/// `E_x e^{-λ X_t} = exp(-x v_t(λ))` at the default tolerance.
pub fn laplace_cb(mech: &BranchingMechanism, x: f64, lambda: f64, t: f64) -> Result<f64, CumulantError> {
    laplace_cb_with(mech, x, lambda, t, Tolerance::default())
}

pub fn laplace_cb_with(
    mech: &BranchingMechanism,
    x: f64,
    lambda: f64,
    t: f64,
    tol: Tolerance,
) -> Result<f64, CumulantError> {
    check_xt(x, t)?;
    if x == 0.0 || lambda == 0.0 {
        return Ok(1.0);
    }
    if t == 0.0 {
        return Ok((-x * lambda).exp());
    }
    let sol = solve_v(mech, lambda, t, tol)?;
    Ok((-x * sol.v_at(t)).exp())
}

/// `E_x e^{-λ Y_t} = exp(-x v_t(λ) - ∫_0^t ψ(v_s(λ)) ds)`.
pub fn laplace_cbi(
    mech: &BranchingMechanism,
    imm: &ImmigrationMechanism,
    x: f64,
    lambda: f64,
    t: f64,
) -> Result<f64, CumulantError> {
    laplace_cbi_with(mech, imm, x, lambda, t, Tolerance::default())
}

pub fn laplace_cbi_with(
    mech: &BranchingMechanism,
    imm: &ImmigrationMechanism,
    x: f64,
    lambda: f64,
    t: f64,
    tol: Tolerance,
) -> Result<f64, CumulantError> {
    check_xt(x, t)?;
    if lambda == 0.0 {
        return Ok(1.0);
    }
    if t == 0.0 {
        return Ok((-x * lambda).exp());
    }
    let sol = solve_v(mech, lambda, t, tol)?;
    let immigration = if imm.is_trivial() {
        0.0
    } else {
        sol.integrate(t, |v| imm.psi(v.max(0.0)).unwrap_or(f64::NAN))
    };
    if !immigration.is_finite() {
        return Err(CumulantError::Mechanism(MechanismError::Internal("ψ along the cumulant is not finite".into())));
    }
    Ok((-x * sol.v_at(t) - immigration).exp())
}

fn check_xt(x: f64, t: f64) -> Result<(), CumulantError> {
    if !(x >= 0.0 && x.is_finite()) {
        return Err(CumulantError::InvalidArgument(format!("x must be >= 0 (got {x})")));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(CumulantError::InvalidArgument(format!("t must be >= 0 (got {t})")));
    }
    Ok(())
}

/// Semigroup residual `|v_{t+s}(λ) - v_t(v_s(λ))|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComposeCheck {
    pub passed: bool,
    pub residual: f64,
    pub direct: f64,
    pub composed: f64,
}

pub fn v_compose_check(
    mech: &BranchingMechanism,
    lambda: f64,
    s: f64,
    t: f64,
    tol: f64,
) -> Result<ComposeCheck, CumulantError> {
    if !(s >= 0.0 && t >= 0.0) {
        return Err(CumulantError::InvalidArgument("s and t must be >= 0".into()));
    }
    let solver_tol = scalar_tolerance(tol * 1e-2);
    let flow = |l: f64, h: f64| -> Result<f64, CumulantError> {
        if h == 0.0 || l == 0.0 {
            Ok(l)
        } else {
            Ok(solve_v(mech, l, h, solver_tol)?.v_at(h))
        }
    };
    let direct = flow(lambda, s + t)?;
    let composed = flow(flow(lambda, s)?, t)?;
    let residual = (direct - composed).abs();
    Ok(ComposeCheck { passed: residual <= tol * (1.0 + direct.abs()), residual, direct, composed })
}
