//! Path simulation for CB and CBI processes and the monotone coupling.
//!
//! The Euler scheme freezes every intensity at the pre-step state and
//! integrates the linear drift exactly over each step. Jumps in
//! `(eps, 1]` are compensated explicitly, jumps below `eps` are replaced by a
//! Gaussian of matching variance (or dropped), and jumps above 1 are logged.

pub mod sampling;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::mechanism::{BranchingMechanism, ImmigrationMechanism, LevyMeasure, MechanismError, RangeSampler};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("no big jump is possible: total rate is zero")]
    NoJumpPossible,
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    EulerThinning,
    /// Exact Poisson-Gamma transitions; requires a jump-free mechanism.
    ExactFeller,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub eps: f64,
    pub gaussian_correction: bool,
    pub t_max: f64,
    pub seed: u64,
    pub record_jumps: bool,
    pub scheme: Scheme,
    /// Record every `record_stride`-th grid state in a [`PathRecord`].
    pub record_stride: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            eps: 1e-2,
            gaussian_correction: true,
            t_max: 1.0,
            seed: 0,
            record_jumps: false,
            scheme: Scheme::EulerThinning,
            record_stride: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self, mech: &BranchingMechanism, imm: Option<&ImmigrationMechanism>) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be > 0 (got {})", self.dt));
        }
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return bad(format!("eps must lie in (0, 1] (got {})", self.eps));
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return bad(format!("t_max must be > 0 (got {})", self.t_max));
        }
        if self.record_stride == 0 {
            return bad("record_stride must be >= 1".into());
        }
        if self.scheme == Scheme::ExactFeller {
            if !mech.measure().is_zero() {
                return bad("exact_feller requires a mechanism without jumps".into());
            }
            if imm.is_some_and(|i| !i.measure().is_zero()) {
                return bad("exact_feller requires immigration without jumps".into());
            }
        }
        Ok(())
    }

    /// Number of steps and their common length; `t_max` is hit exactly.
    pub fn grid(&self) -> (usize, f64) {
        let n = (self.t_max / self.dt - 1e-9).ceil().max(1.0) as usize;
        (n, self.t_max / n as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JumpSource {
    Branching,
    Immigration,
}

/// A jump of size above 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BigJump {
    pub time: f64,
    pub size: f64,
    pub source: JumpSource,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathRecord {
    pub times: Vec<f64>,
    pub states: Vec<f64>,
    pub big_jumps: Vec<BigJump>,
    /// First time the CB path hits 0.
    pub absorbed_at: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingRecord {
    pub times: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub increment: Vec<f64>,
}

/// Path `index` of an ensemble seeded with `seed`.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Per-mechanism constants of the Euler scheme.
#[derive(Debug, Clone)]
struct Stepper<'a> {
    beta: f64,
    sigma: f64,
    mid: Option<RangeSampler<'a>>,
    big: Option<RangeSampler<'a>>,
    gaussian: bool,
    mid_rate: f64,
    mid_compensator: f64,
    small_var: f64,
    big_rate: f64,
    h: f64,
    imm_mid: Option<RangeSampler<'a>>,
    imm_big: Option<RangeSampler<'a>>,
    imm_mid_rate: f64,
    imm_small_drift: f64,
    imm_big_rate: f64,
    immigration: bool,
}

/// Sampler for `(lo, hi]`, or `None` when the region carries no mass.
fn region(mu: &LevyMeasure, lo: f64, hi: f64) -> Result<Option<RangeSampler<'_>>, SimError> {
    match RangeSampler::new(mu, lo, hi) {
        Ok(s) => Ok(Some(s)),
        Err(MechanismError::EmptyTail { .. }) => Ok(None),
        Err(e) => Err(SimError::InvalidConfig(format!("jump region ({lo}, {hi}] cannot be sampled: {e}"))),
    }
}

fn finite_or_err(f: crate::Finiteness, what: &str) -> Result<f64, SimError> {
    f.value()
        .ok_or_else(|| SimError::InvalidConfig(format!("{what} is not finite; the scheme cannot be built")))
}

impl<'a> Stepper<'a> {
    fn new(mech: &'a BranchingMechanism, imm: Option<&'a ImmigrationMechanism>, cfg: &SimConfig) -> Result<Self, SimError> {
        let m = mech.measure();
        let eps = cfg.eps;
        let mid = region(m, eps, 1.0)?;
        let big = region(m, 1.0, f64::INFINITY)?;
        let mut s = Self {
            beta: mech.beta(),
            sigma: mech.sigma(),
            mid_rate: mid.as_ref().map_or(0.0, RangeSampler::mass),
            big_rate: big.as_ref().map_or(0.0, RangeSampler::mass),
            mid,
            big,
            gaussian: cfg.gaussian_correction,
            mid_compensator: finite_or_err(m.moment(1.0, eps, 1.0), "∫_(eps,1] z m(dz)")?,
            small_var: finite_or_err(m.moment(2.0, 0.0, eps), "∫_(0,eps] z² m(dz)")?,
            h: 0.0,
            imm_mid: None,
            imm_big: None,
            imm_mid_rate: 0.0,
            imm_small_drift: 0.0,
            imm_big_rate: 0.0,
            immigration: imm.is_some(),
        };
        if let Some(imm) = imm {
            let n = imm.measure();
            s.h = imm.h();
            s.imm_mid = region(n, eps, 1.0)?;
            s.imm_big = region(n, 1.0, f64::INFINITY)?;
            s.imm_mid_rate = s.imm_mid.as_ref().map_or(0.0, RangeSampler::mass);
            s.imm_big_rate = s.imm_big.as_ref().map_or(0.0, RangeSampler::mass);
            s.imm_small_drift = finite_or_err(n.moment(1.0, 0.0, eps), "∫_(0,eps] z n(dz)")?;
        }
        Ok(s)
    }

    /// One Euler step from `x` over `[t, t + dt]`.
    fn step<R: Rng + ?Sized>(&self, x: f64, t: f64, dt: f64, rng: &mut R, log: Option<&mut Vec<BigJump>>) -> f64 {
        let mut dx = 0.0;
        let (q, decay) = linear_flow(self.beta, dt);
        if x > 0.0 {
            dx += x * (q - 1.0);
            if self.sigma > 0.0 {
                dx += self.sigma * (x * dt).sqrt() * sampling::normal(rng);
            }
            if self.mid_rate > 0.0 {
                let k = sampling::poisson(x * dt * self.mid_rate, rng);
                let mid = self.mid.as_ref().expect("positive rate");
                for _ in 0..k {
                    dx += mid.sample(rng);
                }
                dx -= x * dt * self.mid_compensator;
            }
            if self.gaussian && self.small_var > 0.0 {
                dx += (x * dt * self.small_var).sqrt() * sampling::normal(rng);
            }
        }
        if self.immigration {
            dx += self.h * decay + self.imm_small_drift * dt;
            if let Some(mid) = &self.imm_mid {
                let k = sampling::poisson(dt * self.imm_mid_rate, rng);
                for _ in 0..k {
                    dx += mid.sample(rng);
                }
            }
        }
        let branch = x.max(0.0) * self.big_rate;
        let total = branch + self.imm_big_rate;
        if total > 0.0 {
            let k = sampling::poisson(dt * total, rng);
            if k > 0 {
                let mut jumps: Vec<BigJump> = Vec::with_capacity(k as usize);
                for _ in 0..k {
                    let source = pick_source(branch, self.imm_big_rate, rng);
                    let sampler = match source {
                        JumpSource::Branching => &self.big,
                        JumpSource::Immigration => &self.imm_big,
                    };
                    let size = sampler.as_ref().expect("positive rate").sample(rng);
                    dx += size;
                    jumps.push(BigJump { time: t + dt * rng.random::<f64>(), size, source });
                }
                if let Some(log) = log {
                    jumps.sort_by(|a, b| a.time.total_cmp(&b.time));
                    log.extend(jumps);
                }
            }
        }
        (x + dx).max(0.0)
    }
}

fn pick_source<R: Rng + ?Sized>(branch_rate: f64, imm_rate: f64, rng: &mut R) -> JumpSource {
    if rng.random::<f64>() * (branch_rate + imm_rate) < branch_rate {
        JumpSource::Branching
    } else {
        JumpSource::Immigration
    }
}

/// Source of a jump above 1 at pre-jump state `y_pre`: branching with
/// probability `y m(1,∞) / (y m(1,∞) + n(1,∞))`.
pub fn select_cbi_jump_source<R: Rng + ?Sized>(
    y_pre: f64,
    mech: &BranchingMechanism,
    imm: &ImmigrationMechanism,
    rng: &mut R,
) -> Result<JumpSource, SimError> {
    let branch = y_pre.max(0.0) * mech.tail_mass(1.0);
    let immigration = imm.measure().tail_mass(1.0);
    if !(branch + immigration > 0.0) {
        return Err(SimError::NoJumpPossible);
    }
    Ok(pick_source(branch, immigration, rng))
}

/// `e^{-β dt}` and `∫_0^dt e^{-βs} ds`.
fn linear_flow(beta: f64, dt: f64) -> (f64, f64) {
    let q = (-beta * dt).exp();
    let decay = if beta == 0.0 { dt } else { -(-beta * dt).exp_m1() / beta };
    (q, decay)
}

/// Exact Feller transition over `dt` with immigration drift `h`:
/// `N ~ Poisson(x q / c)`, `X ~ Gamma(N + 2h/σ², c)`.
pub fn exact_cir_step<R: Rng + ?Sized>(sigma: f64, beta: f64, h: f64, x: f64, dt: f64, rng: &mut R) -> f64 {
    let (q, decay) = linear_flow(beta, dt);
    if sigma == 0.0 {
        return x * q + h * decay;
    }
    let c = 0.5 * sigma * sigma * decay;
    let n = sampling::poisson(x.max(0.0) * q / c, rng);
    let shape = n as f64 + 2.0 * h / (sigma * sigma);
    sampling::gamma(shape, c, rng)
}

/// Exact Feller diffusion transition over `dt`.
pub fn exact_feller_step<R: Rng + ?Sized>(sigma: f64, beta: f64, x: f64, dt: f64, rng: &mut R) -> f64 {
    exact_cir_step(sigma, beta, 0.0, x, dt, rng)
}

struct Driver<'a> {
    stepper: Stepper<'a>,
    cfg: &'a SimConfig,
    absorbing: bool,
}

impl<'a> Driver<'a> {
    fn new(mech: &'a BranchingMechanism, imm: Option<&'a ImmigrationMechanism>, cfg: &'a SimConfig) -> Result<Self, SimError> {
        cfg.validate(mech, imm)?;
        Ok(Self { stepper: Stepper::new(mech, imm, cfg)?, cfg, absorbing: imm.is_none() })
    }

    fn advance<R: Rng + ?Sized>(&self, x: f64, t: f64, dt: f64, rng: &mut R, log: Option<&mut Vec<BigJump>>) -> f64 {
        if self.absorbing && x == 0.0 {
            return 0.0;
        }
        match self.cfg.scheme {
            Scheme::EulerThinning => self.stepper.step(x, t, dt, rng, log),
            Scheme::ExactFeller => exact_cir_step(self.stepper.sigma, self.stepper.beta, self.stepper.h, x, dt, rng),
        }
    }

    fn path<R: Rng + ?Sized>(&self, x0: f64, rng: &mut R) -> PathRecord {
        let (n, dt) = self.cfg.grid();
        let stride = self.cfg.record_stride;
        let mut rec = PathRecord {
            times: vec![0.0],
            states: vec![x0],
            big_jumps: Vec::new(),
            absorbed_at: (self.absorbing && x0 == 0.0).then_some(0.0),
        };
        let mut x = x0;
        for i in 0..n {
            let t = i as f64 * dt;
            let log = self.cfg.record_jumps.then_some(&mut rec.big_jumps);
            x = self.advance(x, t, dt, rng, log);
            let t_next = (i + 1) as f64 * dt;
            if self.absorbing && x == 0.0 && rec.absorbed_at.is_none() {
                rec.absorbed_at = Some(t_next);
            }
            if (i + 1) % stride == 0 || i + 1 == n {
                rec.times.push(t_next);
                rec.states.push(x);
            }
        }
        rec
    }

    /// States at the grid indices `obs` (sorted).
    fn observe<R: Rng + ?Sized>(&self, x0: f64, obs: &[usize], rng: &mut R) -> Vec<f64> {
        let (_, dt) = self.cfg.grid();
        let mut out = Vec::with_capacity(obs.len());
        let mut x = x0;
        let mut i = 0;
        for &target in obs {
            while i < target {
                x = self.advance(x, i as f64 * dt, dt, rng, None);
                i += 1;
            }
            out.push(x);
        }
        out
    }
}

pub fn simulate_cb<R: Rng + ?Sized>(
    mech: &BranchingMechanism,
    x0: f64,
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<PathRecord, SimError> {
    check_start(x0)?;
    Ok(Driver::new(mech, None, cfg)?.path(x0, rng))
}

pub fn simulate_cbi<R: Rng + ?Sized>(
    mech: &BranchingMechanism,
    imm: &ImmigrationMechanism,
    y0: f64,
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<PathRecord, SimError> {
    check_start(y0)?;
    Ok(Driver::new(mech, Some(imm), cfg)?.path(y0, rng))
}

fn check_start(x0: f64) -> Result<(), SimError> {
    if x0 >= 0.0 && x0.is_finite() {
        Ok(())
    } else {
        Err(SimError::InvalidConfig(format!("initial state must be >= 0 (got {x0})")))
    }
}

/// Paths from `x` and `y ≥ x` driven by shared noise: the upper path is the
/// lower one plus an independent CB path from `y - x`.
pub fn simulate_coupled<R: Rng + ?Sized>(
    mech: &BranchingMechanism,
    x: f64,
    y: f64,
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<CouplingRecord, SimError> {
    check_start(x)?;
    if !(y >= x && y.is_finite()) {
        return Err(SimError::InvalidConfig(format!("coupling needs y >= x (got x={x}, y={y})")));
    }
    let driver = Driver::new(mech, None, cfg)?;
    let (n, dt) = cfg.grid();
    let mut rec = CouplingRecord { times: vec![0.0], lower: vec![x], upper: vec![y], increment: vec![y - x] };
    let (mut lo, mut d) = (x, y - x);
    for i in 0..n {
        let t = i as f64 * dt;
        lo = driver.advance(lo, t, dt, rng, None);
        d = driver.advance(d, t, dt, rng, None);
        if (i + 1) % cfg.record_stride == 0 || i + 1 == n {
            rec.times.push((i + 1) as f64 * dt);
            rec.lower.push(lo);
            rec.upper.push(lo + d);
            rec.increment.push(d);
        }
    }
    Ok(rec)
}

pub fn first_big_jump_time(path: &PathRecord) -> Option<f64> {
    path.big_jumps.first().map(|j| j.time)
}

/// Grid indices of the observation times, or an error for times off the
/// horizon.
pub fn observation_indices(cfg: &SimConfig, times: &[f64]) -> Result<Vec<usize>, SimError> {
    let (n, dt) = cfg.grid();
    let mut idx = Vec::with_capacity(times.len());
    for &t in times {
        if !(t >= 0.0 && t <= cfg.t_max * (1.0 + 1e-12)) {
            return Err(SimError::InvalidConfig(format!("observation time {t} outside [0, {}]", cfg.t_max)));
        }
        idx.push(((t / dt).round() as usize).min(n));
    }
    if idx.windows(2).any(|w| w[1] < w[0]) {
        return Err(SimError::InvalidConfig("observation times must be nondecreasing".into()));
    }
    Ok(idx)
}

/// States of `n_paths` independent paths at `times`: `result[path][k]`.
///
/// Path `i` uses [`path_rng`]`(cfg.seed, first_index + i)`.
pub fn ensemble(
    mech: &BranchingMechanism,
    imm: Option<&ImmigrationMechanism>,
    x0: f64,
    cfg: &SimConfig,
    n_paths: usize,
    first_index: u64,
    times: &[f64],
) -> Result<Vec<Vec<f64>>, SimError> {
    ensemble_from(mech, imm, &[x0], cfg, n_paths, first_index, times)
}

/// As [`ensemble`], with path `i` started from `starts[i % starts.len()]`.
pub fn ensemble_from(
    mech: &BranchingMechanism,
    imm: Option<&ImmigrationMechanism>,
    starts: &[f64],
    cfg: &SimConfig,
    n_paths: usize,
    first_index: u64,
    times: &[f64],
) -> Result<Vec<Vec<f64>>, SimError> {
    if starts.is_empty() {
        return Err(SimError::InvalidConfig("no initial states given".into()));
    }
    for &x in starts {
        check_start(x)?;
    }
    let driver = Driver::new(mech, imm, cfg)?;
    let obs = observation_indices(cfg, times)?;
    Ok((0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(cfg.seed, first_index + i as u64);
            driver.observe(starts[i % starts.len()], &obs, &mut rng)
        })
        .collect())
}

/// Terminal state of a coupled pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoupledTerminal {
    pub lower: f64,
    pub increment: f64,
    /// `X_t(x) <= X_t(y)` held at every grid time.
    pub ordered: bool,
}

/// Terminal states of coupled pairs from `x <= y`, as in [`simulate_coupled`].
pub fn coupled_ensemble(
    mech: &BranchingMechanism,
    x: f64,
    y: f64,
    cfg: &SimConfig,
    n_paths: usize,
    first_index: u64,
) -> Result<Vec<CoupledTerminal>, SimError> {
    check_start(x)?;
    if !(y >= x && y.is_finite()) {
        return Err(SimError::InvalidConfig(format!("coupling needs y >= x (got x={x}, y={y})")));
    }
    let driver = Driver::new(mech, None, cfg)?;
    let (n, dt) = cfg.grid();
    Ok((0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(cfg.seed, first_index + i as u64);
            let (mut lo, mut d) = (x, y - x);
            let mut ordered = true;
            for k in 0..n {
                let t = k as f64 * dt;
                lo = driver.advance(lo, t, dt, &mut rng, None);
                d = driver.advance(d, t, dt, &mut rng, None);
                ordered &= lo <= lo + d;
            }
            CoupledTerminal { lower: lo, increment: d, ordered }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(dt: f64, t_max: f64) -> SimConfig {
        SimConfig { dt, t_max, seed: 42, record_jumps: true, ..SimConfig::default() }
    }

    #[test]
    fn zero_start_stays_zero() {
        let mech = BranchingMechanism::new(0.3, 1.0, LevyMeasure::power_tail(1.0, 1.5)).unwrap();
        let mut rng = path_rng(1, 0);
        let rec = simulate_cb(&mech, 0.0, &cfg(0.01, 1.0), &mut rng).unwrap();
        assert!(rec.states.iter().all(|&s| s == 0.0));
        assert!(rec.big_jumps.is_empty());
        assert_eq!(rec.absorbed_at, Some(0.0));
    }

    #[test]
    fn pure_drift_is_deterministic() {
        let mech = BranchingMechanism::linear(0.7);
        let mut rng = path_rng(1, 0);
        let rec = simulate_cb(&mech, 3.0, &cfg(0.01, 2.0), &mut rng).unwrap();
        for (t, x) in rec.times.iter().zip(&rec.states) {
            let exact = 3.0 * (-0.7 * t).exp();
            assert!((x - exact).abs() < 1e-12 * exact, "{t}");
        }
        let imm = ImmigrationMechanism::linear(1.0);
        let trivial = BranchingMechanism::linear(0.0);
        let rec = simulate_cbi(&trivial, &imm, 0.5, &cfg(0.01, 2.0), &mut rng).unwrap();
        assert!((rec.states.last().unwrap() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn records_are_consistent() {
        let mech = BranchingMechanism::new(0.0, 1.2, LevyMeasure::power_tail(1.0, 1.5)).unwrap();
        for seed in 0..20 {
            let mut rng = path_rng(seed, 3);
            let rec = simulate_cb(&mech, 1.0, &cfg(0.01, 3.0), &mut rng).unwrap();
            assert_eq!(rec.times.len(), rec.states.len());
            assert!(rec.states.iter().all(|&s| s >= 0.0));
            if let Some(t0) = rec.absorbed_at {
                for (t, s) in rec.times.iter().zip(&rec.states) {
                    if *t >= t0 {
                        assert_eq!(*s, 0.0);
                    }
                }
            }
            assert!(rec.big_jumps.windows(2).all(|w| w[0].time < w[1].time));
            assert!(rec.big_jumps.iter().all(|j| j.size > 1.0 && j.source == JumpSource::Branching));
        }
    }

    #[test]
    fn identical_seed_gives_identical_path() {
        let mech = BranchingMechanism::new(0.2, 0.5, LevyMeasure::TemperedPowerTail { c: 1.0, alpha: 1.2, theta: 0.3 }).unwrap();
        let imm = ImmigrationMechanism::new(0.5, LevyMeasure::atoms(&[(2.0, 0.4)])).unwrap();
        let a = simulate_cbi(&mech, &imm, 1.0, &cfg(0.01, 1.0), &mut path_rng(9, 4)).unwrap();
        let b = simulate_cbi(&mech, &imm, 1.0, &cfg(0.01, 1.0), &mut path_rng(9, 4)).unwrap();
        assert_eq!(a, b);
        let c = simulate_cbi(&mech, &imm, 1.0, &cfg(0.01, 1.0), &mut path_rng(9, 5)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn source_selection() {
        let mech = BranchingMechanism::new(0.0, 0.0, LevyMeasure::atoms(&[(2.0, 1.0)])).unwrap();
        let imm = ImmigrationMechanism::new(0.0, LevyMeasure::atoms(&[(3.0, 2.0)])).unwrap();
        let mut rng = path_rng(0, 0);
        assert_eq!(select_cbi_jump_source(0.0, &mech, &imm, &mut rng).unwrap(), JumpSource::Immigration);
        let none = ImmigrationMechanism::default();
        assert_eq!(select_cbi_jump_source(1.5, &mech, &none, &mut rng).unwrap(), JumpSource::Branching);
        assert_eq!(select_cbi_jump_source(0.0, &mech, &none, &mut rng), Err(SimError::NoJumpPossible));
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| select_cbi_jump_source(2.0, &mech, &imm, &mut rng).unwrap() == JumpSource::Branching)
            .count() as f64;
        let se = (0.25 / n as f64).sqrt();
        assert!((hits / n as f64 - 0.5).abs() < 3.0 * se);
    }

    #[test]
    fn exact_feller_one_step_laplace() {
        let (sigma, beta) = (2f64.sqrt(), 0.0);
        let mut rng = path_rng(3, 0);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| exact_feller_step(sigma, beta, 1.0, 1.0, &mut rng)).collect();
        for &l in &[0.5, 1.0, 2.0] {
            let vals: Vec<f64> = draws.iter().map(|x| (-l * x).exp()).collect();
            let m = vals.iter().sum::<f64>() / n as f64;
            let sd = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
            let exact = (-l / (1.0 + l)).exp();
            assert!((m - exact).abs() < 3.0 * sd / (n as f64).sqrt(), "λ={l}: {m} vs {exact}");
        }
        assert_eq!(exact_feller_step(sigma, beta, 0.0, 1.0, &mut rng), 0.0);
    }

    #[test]
    fn exact_feller_mean() {
        let (sigma, beta, x, dt) = (0.8, 0.6, 2.0, 0.5);
        let mut rng = path_rng(4, 0);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| exact_feller_step(sigma, beta, x, dt, &mut rng)).collect();
        let m = draws.iter().sum::<f64>() / n as f64;
        let sd = (draws.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((m - x * (-beta * dt).exp()).abs() < 3.0 * sd / (n as f64).sqrt());
    }

    #[test]
    fn coupling_is_ordered_and_degenerate_cases() {
        let mech = BranchingMechanism::new(0.1, 1.0, LevyMeasure::power_tail(0.5, 1.3)).unwrap();
        for seed in 0..10 {
            let rec = simulate_coupled(&mech, 1.0, 2.0, &cfg(0.01, 1.0), &mut path_rng(seed, 0)).unwrap();
            assert!(rec.lower.iter().zip(&rec.upper).all(|(a, b)| a <= b));
            assert!(rec.increment.iter().all(|&d| d >= 0.0));
            let same = simulate_coupled(&mech, 1.0, 1.0, &cfg(0.01, 1.0), &mut path_rng(seed, 0)).unwrap();
            assert!(same.increment.iter().all(|&d| d == 0.0));
            let from_zero = simulate_coupled(&mech, 0.0, 1.5, &cfg(0.01, 1.0), &mut path_rng(seed, 0)).unwrap();
            assert!(from_zero.lower.iter().all(|&l| l == 0.0));
            assert_eq!(from_zero.upper, from_zero.increment);
        }
        assert!(simulate_coupled(&mech, 2.0, 1.0, &cfg(0.01, 1.0), &mut path_rng(0, 0)).is_err());
    }

    #[test]
    fn first_jump_of_pure_immigration_is_exponential() {
        let mech = BranchingMechanism::linear(0.5);
        let rate = 2.0;
        let imm = ImmigrationMechanism::new(0.0, LevyMeasure::atoms(&[(3.0, rate)])).unwrap();
        let c = SimConfig { dt: 1e-2, t_max: 10.0, record_jumps: true, ..SimConfig::default() };
        let n = 20_000;
        let times: Vec<f64> = (0..n)
            .filter_map(|i| first_big_jump_time(&simulate_cbi(&mech, &imm, 0.0, &c, &mut path_rng(8, i)).unwrap()))
            .collect();
        // P(no jump before 10) = e^{-20}
        assert_eq!(times.len(), n as usize);
        let mean = times.iter().sum::<f64>() / n as f64;
        let se = (1.0 / rate) / (n as f64).sqrt();
        assert!((mean - 1.0 / rate).abs() < 3.0 * se, "{mean}");
        let none = simulate_cb(&BranchingMechanism::feller(1.0, 0.0), 1.0, &c, &mut path_rng(8, 0)).unwrap();
        assert_eq!(first_big_jump_time(&none), None);
    }

    #[test]
    fn ensemble_is_order_independent() {
        let mech = BranchingMechanism::new(0.2, 0.7, LevyMeasure::atoms(&[(0.3, 1.0), (2.0, 0.5)])).unwrap();
        let c = cfg(0.01, 1.0);
        let all = ensemble(&mech, None, 1.0, &c, 64, 0, &[0.5, 1.0]).unwrap();
        let tail = ensemble(&mech, None, 1.0, &c, 32, 32, &[0.5, 1.0]).unwrap();
        assert_eq!(&all[32..], &tail[..]);
        let pair = coupled_ensemble(&mech, 1.0, 2.0, &c, 8, 5).unwrap();
        let direct = simulate_coupled(&mech, 1.0, 2.0, &c, &mut path_rng(42, 7)).unwrap();
        assert_eq!(pair[2].increment, *direct.increment.last().unwrap());
        assert!(pair.iter().all(|p| p.ordered));
        let mixed = ensemble_from(&mech, None, &[1.0, 0.0], &c, 4, 0, &[1.0]).unwrap();
        assert_eq!(mixed[0], all[0][1..]);
        assert_eq!(mixed[1], vec![0.0]);
        let single = simulate_cb(&mech, 1.0, &SimConfig { record_jumps: false, ..c.clone() }, &mut path_rng(42, 40)).unwrap();
        assert_eq!(all[40][1], *single.states.last().unwrap());
        assert_eq!(all[40][0], single.states[50]);
    }

    #[test]
    fn trivial_immigration_matches_cb() {
        let mech = BranchingMechanism::new(0.2, 0.8, LevyMeasure::power_tail(1.0, 1.4)).unwrap();
        let none = ImmigrationMechanism::default();
        let c = cfg(0.01, 1.0);
        for i in 0..10 {
            let cb = simulate_cb(&mech, 1.0, &c, &mut path_rng(21, i)).unwrap();
            let cbi = simulate_cbi(&mech, &none, 1.0, &c, &mut path_rng(21, i)).unwrap();
            assert_eq!(cb.states, cbi.states);
            assert_eq!(cb.big_jumps, cbi.big_jumps);
        }
    }

    #[test]
    fn cbi_mean_solves_the_mean_ode() {
        let mech = BranchingMechanism::feller(1.0, 1.0);
        let imm = ImmigrationMechanism::linear(1.0);
        let y0 = 2.0;
        let n = 40_000;
        let states = ensemble(&mech, Some(&imm), y0, &cfg(1e-2, 1.0), n, 0, &[1.0]).unwrap();
        let vals: Vec<f64> = states.iter().map(|s| s[0]).collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        let e = (-1f64).exp();
        let exact = y0 * e + (1.0 - e);
        assert!((mean - exact).abs() < 3.0 * sd / (n as f64).sqrt(), "{mean} vs {exact}");
        // -∂λ of the CBI transform at 0
        let h = 1e-5;
        let slope = (1.0 - crate::cumulant::laplace_cbi(&mech, &imm, y0, h, 1.0).unwrap()) / h;
        assert!((slope - exact).abs() < 1e-4 * exact);
    }

    #[test]
    fn first_jump_survival_follows_the_pre_jump_mean() {
        let (beta, rate, x0, t) = (0.5, 0.4, 1.5, 1.0);
        let mech = BranchingMechanism::new(beta, 0.0, LevyMeasure::atoms(&[(3.0, rate)])).unwrap();
        let c = SimConfig { dt: 1e-3, t_max: t, record_jumps: true, ..SimConfig::default() };
        let n = 20_000;
        let survived = (0..n)
            .filter(|&i| {
                let rec = simulate_cb(&mech, x0, &c, &mut path_rng(30, i)).unwrap();
                first_big_jump_time(&rec).is_none()
            })
            .count() as f64
            / n as f64;
        // before the first jump the path is x0 e^{-βs}
        let drift_only = BranchingMechanism::linear(beta);
        let steps = 1000;
        let integral = (0..steps)
            .map(|k| crate::moments::mean_cb(&drift_only, x0, (k as f64 + 0.5) * t / steps as f64).unwrap())
            .sum::<f64>()
            * t
            / steps as f64;
        let exact = (-rate * integral).exp();
        let se = (exact * (1.0 - exact) / n as f64).sqrt();
        assert!((survived - exact).abs() < 3.0 * se, "{survived} vs {exact}");
    }

    #[test]
    fn euler_laplace_bias_is_first_order() {
        let mech = BranchingMechanism::feller(2f64.sqrt(), 0.0);
        let exact = crate::cumulant::laplace_cb(&mech, 1.0, 1.0, 1.0).unwrap();
        let bias = |dt: f64| {
            let c = SimConfig { dt, t_max: 1.0, seed: 77, ..SimConfig::default() };
            let states = ensemble(&mech, None, 1.0, &c, 200_000, 0, &[1.0]).unwrap();
            states.iter().map(|s| (-s[0]).exp()).sum::<f64>() / states.len() as f64 - exact
        };
        let ratio = bias(0.1) / bias(0.2);
        assert!((0.3..=0.8).contains(&ratio), "{ratio}");
    }

    #[test]
    fn config_validation() {
        let jumpy = BranchingMechanism::new(0.0, 1.0, LevyMeasure::atoms(&[(2.0, 1.0)])).unwrap();
        let exact = SimConfig { scheme: Scheme::ExactFeller, ..SimConfig::default() };
        assert!(exact.validate(&jumpy, None).is_err());
        assert!(SimConfig { eps: 0.0, ..SimConfig::default() }.validate(&jumpy, None).is_err());
        assert!(SimConfig { eps: 1.5, ..SimConfig::default() }.validate(&jumpy, None).is_err());
        assert!(SimConfig { dt: -1.0, ..SimConfig::default() }.validate(&jumpy, None).is_err());
        let c: SimConfig = toml::from_str("dt = 0.01\nscheme = \"exact_feller\"\n").unwrap();
        assert_eq!(c.scheme, Scheme::ExactFeller);
        assert_eq!(c.eps, 1e-2);
    }
}
