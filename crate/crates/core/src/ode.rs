//! Dormand–Prince 5(4) integrator with the fourth-order continuous extension
//! of Hairer, Nørsett & Wanner.
//!
//! Small dense systems only: the state is a `Vec<f64>` and every accepted step
//! keeps its interpolation coefficients.

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Tolerance {
    pub const fn new(abs: f64, rel: f64) -> Self {
        Self { abs, rel }
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { abs: 1e-10, rel: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum OdeError {
    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },
    #[error("step budget exhausted at t = {t}")]
    TooManySteps { t: f64 },
    #[error("non-finite derivative at t = {t}")]
    NonFinite { t: f64 },
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const MAX_STEPS: usize = 2_000_000;

/// Interpolation data of one accepted step.
#[derive(Debug, Clone, PartialEq)]
struct DenseStep {
    t0: f64,
    h: f64,
    r: [Vec<f64>; 5],
}

impl DenseStep {
    fn eval(&self, t: f64, out: &mut [f64]) {
        let s = ((t - self.t0) / self.h).clamp(0.0, 1.0);
        let s1 = 1.0 - s;
        let [r1, r2, r3, r4, r5] = &self.r;
        for i in 0..out.len() {
            out[i] = r1[i] + s * (r2[i] + s1 * (r3[i] + s * (r4[i] + s1 * r5[i])));
        }
    }
}

/// Accepted nodes plus dense output of an integration.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSolution {
    dim: usize,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Max-norm of the embedded error estimate of the step ending at each node
    /// (zero at the initial node).
    pub local_errors: Vec<f64>,
    steps: Vec<DenseStep>,
}

impl DenseSolution {
    fn new(t0: f64, y0: &[f64]) -> Self {
        Self {
            dim: y0.len(),
            times: vec![t0],
            states: vec![y0.to_vec()],
            local_errors: vec![0.0],
            steps: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn t_start(&self) -> f64 {
        self.times[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().expect("solution has an initial node")
    }

    /// Index of the step whose closed interval contains `t` (clamped).
    fn step_index(&self, t: f64) -> Option<usize> {
        if self.steps.is_empty() {
            return None;
        }
        let idx = self.times.partition_point(|&s| s < t);
        Some(idx.saturating_sub(1).min(self.steps.len() - 1))
    }

    /// Dense-output value at `t`, clamped to the solved range.
    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        match self.step_index(t) {
            None => out.copy_from_slice(&self.states[0]),
            Some(i) => self.steps[i].eval(t, out),
        }
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(t, &mut out);
        out
    }

    /// Local error estimate of the step containing `t`.
    pub fn error_at(&self, t: f64) -> f64 {
        match self.step_index(t) {
            None => 0.0,
            Some(i) => self.local_errors[i + 1],
        }
    }

    /// Integrate `g(y(s))` over `[t_start, t]` with five-point Gauss–Legendre
    /// on every step of the dense output.
    pub fn integrate_along<G: Fn(&[f64]) -> f64>(&self, t: f64, g: G) -> f64 {
        let mut buf = vec![0.0; self.dim];
        let mut total = 0.0;
        for step in &self.steps {
            if step.t0 >= t {
                break;
            }
            let a = step.t0;
            let b = (step.t0 + step.h).min(t);
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            let mut acc = 0.0;
            for &(x, w) in &crate::quadrature::GAUSS_LEGENDRE_5 {
                step.eval(mid + half * x, &mut buf);
                acc += w * g(&buf);
            }
            total += acc * half;
        }
        total
    }
}

/// Failed integration: the error and everything solved before it.
#[derive(Debug, Clone, PartialEq)]
pub struct Stalled {
    pub error: OdeError,
    pub partial: DenseSolution,
}

fn error_norm(y: &[f64], y_new: &[f64], err: &[f64], tol: Tolerance) -> f64 {
    let n = y.len() as f64;
    let sum: f64 = y
        .iter()
        .zip(y_new)
        .zip(err)
        .map(|((a, b), e)| {
            let sc = tol.abs + tol.rel * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (sum / n).sqrt()
}

/// Integrate `y' = f(t, y)` from `t0` to `t_end`.
///
/// `admissible` screens each proposed state; a rejected proposal halves the
/// step instead of being projected back.
pub fn solve<F, A>(
    f: F,
    t0: f64,
    y0: &[f64],
    t_end: f64,
    tol: Tolerance,
    admissible: A,
) -> Result<DenseSolution, Box<Stalled>>
where
    F: Fn(f64, &[f64], &mut [f64]),
    A: Fn(&[f64]) -> bool,
{
    let n = y0.len();
    let mut sol = DenseSolution::new(t0, y0);
    if t_end <= t0 {
        return Ok(sol);
    }
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut k = vec![vec![0.0; n]; 7];
    let mut ytmp = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    let mut err = vec![0.0; n];

    f(t, &y, &mut k[0]);
    if k[0].iter().any(|v| !v.is_finite()) {
        return Err(Box::new(Stalled { error: OdeError::NonFinite { t }, partial: sol }));
    }

    // starting step from the derivative scale (Hairer's hinit, first stage only)
    let span = t_end - t0;
    let d0 = error_norm(&y, &y, &y, tol).max(1e-5);
    let d1 = error_norm(&y, &y, &k[0], tol);
    let mut h = if d1 <= 1e-10 { 1e-2 * span } else { 0.01 * d0 / d1 };
    h = h.clamp(1e-12 * span.max(1.0), span);

    let mut reject_streak = false;
    for _ in 0..MAX_STEPS {
        if t >= t_end {
            return Ok(sol);
        }
        if t + h > t_end || t_end - (t + h) < 1e-12 * span {
            h = t_end - t;
        }
        if h < 1e-14 * t.abs().max(span) {
            return Err(Box::new(Stalled { error: OdeError::StepUnderflow { t, h }, partial: sol }));
        }

        let stage = |coef: &[(usize, f64)], k: &[Vec<f64>], out: &mut [f64]| {
            for i in 0..n {
                let mut acc = y[i];
                for &(j, a) in coef {
                    acc += h * a * k[j][i];
                }
                out[i] = acc;
            }
        };

        stage(&[(0, A21)], &k, &mut ytmp);
        f(t + C2 * h, &ytmp, &mut k[1]);
        stage(&[(0, A31), (1, A32)], &k, &mut ytmp);
        f(t + C3 * h, &ytmp, &mut k[2]);
        stage(&[(0, A41), (1, A42), (2, A43)], &k, &mut ytmp);
        f(t + C4 * h, &ytmp, &mut k[3]);
        stage(&[(0, A51), (1, A52), (2, A53), (3, A54)], &k, &mut ytmp);
        f(t + C5 * h, &ytmp, &mut k[4]);
        stage(&[(0, A61), (1, A62), (2, A63), (3, A64), (4, A65)], &k, &mut ytmp);
        f(t + h, &ytmp, &mut k[5]);
        stage(&[(0, A71), (2, A73), (3, A74), (4, A75), (5, A76)], &k, &mut y_new);
        f(t + h, &y_new, &mut k[6]);

        let finite = y_new.iter().all(|v| v.is_finite()) && k[6].iter().all(|v| v.is_finite());
        if !finite || !admissible(&y_new) {
            h *= 0.5;
            reject_streak = true;
            continue;
        }

        for i in 0..n {
            err[i] = h
                * (E1 * k[0][i] + E3 * k[2][i] + E4 * k[3][i] + E5 * k[4][i] + E6 * k[5][i]
                    + E7 * k[6][i]);
        }
        let en = error_norm(&y, &y_new, &err, tol);
        if en <= 1.0 {
            let mut r: [Vec<f64>; 5] = Default::default();
            r[0] = y.clone();
            r[1] = y_new.iter().zip(&y).map(|(a, b)| a - b).collect();
            r[2] = (0..n).map(|i| h * k[0][i] - r[1][i]).collect();
            r[3] = (0..n).map(|i| r[1][i] - h * k[6][i] - r[2][i]).collect();
            r[4] = (0..n)
                .map(|i| {
                    h * (D1 * k[0][i] + D3 * k[2][i] + D4 * k[3][i] + D5 * k[4][i]
                        + D6 * k[5][i]
                        + D7 * k[6][i])
                })
                .collect();
            sol.steps.push(DenseStep { t0: t, h, r });
            t += h;
            if t_end - t < 1e-12 * span {
                t = t_end;
            }
            y.copy_from_slice(&y_new);
            sol.times.push(t);
            sol.states.push(y.clone());
            sol.local_errors.push(err.iter().fold(0.0f64, |m, e| m.max(e.abs())));
            // FSAL
            let last = k[6].clone();
            k[0].copy_from_slice(&last);

            let mut factor = if en == 0.0 { 5.0 } else { 0.9 * en.powf(-0.2) };
            factor = factor.clamp(0.2, 5.0);
            if reject_streak {
                factor = factor.min(1.0);
            }
            reject_streak = false;
            h *= factor;
        } else {
            h *= (0.9 * en.powf(-0.2)).clamp(0.1, 0.9);
            reject_streak = true;
        }
    }
    Err(Box::new(Stalled { error: OdeError::TooManySteps { t }, partial: sol }))
}
