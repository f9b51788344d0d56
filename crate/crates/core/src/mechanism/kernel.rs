//! Integrands against power-law densities.

use rand::Rng;

use super::Finiteness;
use crate::quadrature::integrate_with;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const SERIES_TERMS: usize = 12;
const BODY_REL: f64 = 1e-12;

/// Something to integrate against a measure.
pub(crate) enum Kernel<'a> {
    /// `z^k`.
    Power(f64),
    /// `e^{-λz} - 1 + λz 1{z ≤ 1}`.
    Phi(f64),
    /// `1 - e^{-λz}`.
    Psi(f64),
    Growth(Growth<'a>),
}

/// A function bounded by a multiple of `z^p (1 + ln z)^q` as `z → ∞`.
pub(crate) struct Growth<'a> {
    pub f: &'a dyn Fn(f64) -> f64,
    pub p: f64,
    pub q: f64,
    /// `f(z) = z^p (1 + ln z)^q` exactly beyond this point.
    pub exact_from: Option<f64>,
}

impl Kernel<'_> {
    pub(crate) fn eval(&self, z: f64) -> f64 {
        match self {
            Kernel::Power(k) => {
                if *k == 0.0 {
                    1.0
                } else {
                    z.powf(*k)
                }
            }
            Kernel::Phi(l) => {
                let x = l * z;
                if z <= 1.0 {
                    if x < 1e-2 {
                        small_phi(x)
                    } else {
                        (-x).exp_m1() + x
                    }
                } else {
                    (-x).exp_m1()
                }
            }
            Kernel::Psi(l) => -(-l * z).exp_m1(),
            Kernel::Growth(g) => (g.f)(z),
        }
    }

    pub(crate) fn has_break_at_one(&self) -> bool {
        matches!(self, Kernel::Phi(_))
    }

    /// Leading power of the kernel at `0+`.
    fn near_exponent(&self) -> f64 {
        match self {
            Kernel::Power(k) => *k,
            Kernel::Phi(_) => 2.0,
            Kernel::Psi(_) => 1.0,
            Kernel::Growth(_) => f64::INFINITY,
        }
    }

    /// `(p, q)` with `|kernel(z)| ≲ z^p (1 + ln z)^q` as `z → ∞`.
    fn far_exponents(&self) -> (f64, f64) {
        match self {
            Kernel::Power(k) => (*k, 0.0),
            Kernel::Phi(_) | Kernel::Psi(_) => (0.0, 0.0),
            Kernel::Growth(g) => (g.p, g.q),
        }
    }

    /// Taylor coefficients `(exponent, coefficient)` at `0+`.
    fn taylor(&self) -> Vec<(f64, f64)> {
        match self {
            Kernel::Power(k) => vec![(*k, 1.0)],
            Kernel::Phi(l) => {
                let mut out = Vec::with_capacity(SERIES_TERMS);
                let mut term = -l;
                for j in 2..SERIES_TERMS + 2 {
                    term *= -l / j as f64;
                    out.push((j as f64, term));
                }
                out
            }
            Kernel::Psi(l) => {
                let mut out = Vec::with_capacity(SERIES_TERMS);
                let mut term = -1.0;
                for j in 1..SERIES_TERMS + 1 {
                    term *= -l / j as f64;
                    out.push((j as f64, term));
                }
                out
            }
            Kernel::Growth(_) => Vec::new(),
        }
    }

    fn rate(&self) -> f64 {
        match self {
            Kernel::Phi(l) | Kernel::Psi(l) => *l,
            _ => 0.0,
        }
    }
}

/// `e^{-x} - 1 + x` for small `x`.
fn small_phi(x: f64) -> f64 {
    let mut term = x * x / 2.0;
    let mut sum = term;
    for j in 3..10 {
        term *= -x / j as f64;
        sum += term;
    }
    sum
}

/// `(1 + x)^a - Σ_{j < from} C(a, j) x^j`, stable for small `x`.
fn binomial_remainder(a: f64, x: f64, from: usize) -> f64 {
    if x < 0.1 {
        let mut coeff = 1.0f64;
        let mut pow = 1.0f64;
        let mut sum = 0.0f64;
        for j in 0..60 {
            if j >= from {
                let t = coeff * pow;
                sum += t;
                if t.abs() < 1e-18 * sum.abs() {
                    break;
                }
            }
            coeff *= (a - j as f64) / (j + 1) as f64;
            pow *= x;
        }
        sum
    } else {
        let mut out = (1.0 + x).powf(a);
        let mut coeff = 1.0;
        let mut pow = 1.0;
        for j in 0..from {
            out -= coeff * pow;
            coeff *= (a - j as f64) / (j + 1) as f64;
            pow *= x;
        }
        out
    }
}

/// Density `c z^{-1-α} e^{-θz}` on `(floor, ∞)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PowerDensity {
    c: f64,
    alpha: f64,
    theta: f64,
    floor: f64,
}

impl PowerDensity {
    pub(crate) fn new(c: f64, alpha: f64, theta: f64, floor: f64) -> Self {
        Self { c, alpha, theta, floor }
    }

    fn density(&self, z: f64) -> f64 {
        let mut d = self.c * z.powf(-1.0 - self.alpha);
        if self.theta > 0.0 {
            d *= (-self.theta * z).exp();
        }
        d
    }

    pub(crate) fn integrate(&self, kernel: &Kernel<'_>, lo: f64, hi: f64) -> Finiteness {
        let lo = lo.max(self.floor);
        if hi <= lo {
            return Finiteness::Finite(0.0);
        }
        if lo == 0.0 && kernel.near_exponent() <= self.alpha {
            return Finiteness::Infinite;
        }
        if hi.is_infinite() && self.theta == 0.0 {
            let (p, q) = kernel.far_exponents();
            if p > self.alpha || (p == self.alpha && q >= -1.0) {
                return Finiteness::Infinite;
            }
        }
        let value = match self.closed_form(kernel, lo, hi) {
            Some(v) => v,
            None => self.numeric(kernel, lo, hi),
        };
        Finiteness::Finite(value)
    }

    fn closed_form(&self, kernel: &Kernel<'_>, lo: f64, hi: f64) -> Option<f64> {
        let (c, a, th) = (self.c, self.alpha, self.theta);
        match *kernel {
            Kernel::Power(k) if th == 0.0 => {
                let e = k - a;
                if e == 0.0 {
                    return Some(c * (hi / lo).ln());
                }
                let upper = if hi.is_infinite() { 0.0 } else { hi.powf(e) };
                let lower = if lo == 0.0 { 0.0 } else { lo.powf(e) };
                Some(c * (upper - lower) / e)
            }
            Kernel::Phi(l) if lo == 0.0 && hi.is_infinite() => {
                if th == 0.0 {
                    if a == 1.0 {
                        Some(c * (l * l.ln() + (EULER_GAMMA - 1.0) * l))
                    } else {
                        Some(c * libm::tgamma(-a) * l.powf(a) + c * l / (1.0 - a))
                    }
                } else {
                    let full = if a == 1.0 {
                        let x = l / th;
                        // (θ+λ) ln(1 + x) - λ
                        c * th * ((1.0 + x) * x.ln_1p() - x)
                    } else {
                        c * libm::tgamma(-a) * th.powf(a) * binomial_remainder(a, l / th, 2)
                    };
                    let over_one = self.numeric(&Kernel::Power(1.0), 1.0, f64::INFINITY);
                    Some(full - l * over_one)
                }
            }
            Kernel::Psi(l) if lo == 0.0 && hi.is_infinite() => {
                if th == 0.0 {
                    Some(-c * libm::tgamma(-a) * l.powf(a))
                } else {
                    Some(-c * libm::tgamma(-a) * th.powf(a) * binomial_remainder(a, l / th, 1))
                }
            }
            _ => None,
        }
    }

    /// Quadrature path, also used to cross-check the closed forms.
    pub(crate) fn numeric(&self, kernel: &Kernel<'_>, lo: f64, hi: f64) -> f64 {
        let lo = lo.max(self.floor);
        let mut total = 0.0;
        let mut start = lo;
        if lo == 0.0 {
            let rate = kernel.rate() + self.theta;
            let mut eps = hi.min(1.0);
            if rate > 0.0 {
                eps = eps.min(1e-3 / rate);
            }
            total += self.head(kernel, eps);
            start = eps;
        }
        if start >= hi {
            return total;
        }
        if hi.is_finite() {
            return total + self.body(kernel, start, hi);
        }
        match kernel {
            Kernel::Phi(l) | Kernel::Psi(l) if self.theta == 0.0 => {
                let cut = start.max(1.0).max(40.0 / l);
                let sign = if matches!(kernel, Kernel::Phi(_)) { -1.0 } else { 1.0 };
                let remainder = sign * self.c * cut.powf(-self.alpha) / self.alpha;
                total + self.body(kernel, start, cut) + remainder
            }
            _ => total + self.extend_to_infinity(kernel, start),
        }
    }

    /// `∫_0^eps` by term-wise integration of the Taylor series.
    fn head(&self, kernel: &Kernel<'_>, eps: f64) -> f64 {
        let mut damp = Vec::with_capacity(SERIES_TERMS);
        let mut t = 1.0;
        for i in 0..SERIES_TERMS {
            damp.push(t);
            t *= -self.theta / (i + 1) as f64;
            if self.theta == 0.0 {
                break;
            }
        }
        let mut sum = 0.0;
        for (e, coef) in kernel.taylor() {
            for (i, d) in damp.iter().enumerate() {
                let power = e + i as f64 - self.alpha;
                sum += coef * d * eps.powf(power) / power;
            }
        }
        self.c * sum
    }

    fn body(&self, kernel: &Kernel<'_>, a: f64, b: f64) -> f64 {
        let mut cuts = vec![a];
        if kernel.has_break_at_one() && a < 1.0 && b > 1.0 {
            cuts.push(1.0);
        }
        cuts.push(b);
        cuts.windows(2)
            .map(|w| {
                integrate_with(
                    |u: f64| {
                        let z = u.exp();
                        kernel.eval(z) * self.density(z) * z
                    },
                    w[0].ln(),
                    w[1].ln(),
                    1e-300,
                    BODY_REL,
                )
                .value
            })
            .sum()
    }

    /// Integrate outward until the remaining tail is provably negligible.
    fn extend_to_infinity(&self, kernel: &Kernel<'_>, start: f64) -> f64 {
        let (p, q) = kernel.far_exponents();
        let s = self.alpha - p;
        let exact_log_tail = match kernel {
            Kernel::Growth(g) => self.theta == 0.0 && s == 0.0 && g.exact_from.is_some(),
            _ => false,
        };
        let mut lower = start;
        let mut upper = start.max(1.0) * std::f64::consts::E;
        if let Kernel::Growth(Growth { exact_from: Some(x), .. }) = kernel {
            upper = upper.max(*x);
        }
        let mut total = 0.0;
        for _ in 0..400 {
            total += self.body(kernel, lower, upper);
            let u = upper.ln().max(0.0);
            if exact_log_tail {
                if u >= 60.0 {
                    // ∫_U^∞ c (1 + u)^q du
                    return total + self.c * (1.0 + u).powf(q + 1.0) / (-q - 1.0);
                }
            } else {
                let g = (kernel.eval(upper) * self.density(upper) * upper).abs();
                let decay = s + self.theta * upper - q.max(0.0) / (1.0 + u);
                if decay > 0.0 && g / decay <= 1e-12 * total.abs() + 1e-300 {
                    return total;
                }
                if !g.is_finite() || upper > 1e300 {
                    return total;
                }
            }
            lower = upper;
            upper *= 4.0;
        }
        total
    }

    /// Draw from the normalized density on `(lo, hi]`.
    pub(crate) fn sample<R: Rng + ?Sized>(&self, lo: f64, hi: f64, rng: &mut R) -> f64 {
        let lo = lo.max(self.floor);
        let a = self.alpha;
        let pareto = |rng: &mut R| {
            let span = if hi.is_infinite() { 1.0 } else { 1.0 - (lo / hi).powf(a) };
            let u: f64 = rng.random();
            lo * (1.0 - u * span).powf(-1.0 / a)
        };
        if self.theta == 0.0 {
            return pareto(rng).min(hi);
        }
        if self.theta * lo <= 1.0 {
            loop {
                let z = pareto(rng).min(hi);
                if rng.random::<f64>() < (-self.theta * (z - lo)).exp() {
                    return z;
                }
            }
        }
        // shifted exponential proposal, accepted by the power factor
        let span = if hi.is_infinite() { 1.0 } else { -(-self.theta * (hi - lo)).exp_m1() };
        loop {
            let u: f64 = rng.random();
            let z = (lo - (-u * span).ln_1p() / self.theta).min(hi);
            if rng.random::<f64>() < (z / lo).powf(-1.0 - a) {
                return z;
            }
        }
    }
}
