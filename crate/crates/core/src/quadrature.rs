//! Adaptive Gauss–Kronrod quadrature.
//!
//! Global subdivision driven by the 7/15-point Gauss–Kronrod pair: the
//! interval with the largest error estimate is bisected until the summed
//! estimate meets `max(abs_tol, rel_tol * |I|)`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Default absolute tolerance of [`integrate`].
pub const ABS_TOL: f64 = 1e-12;
/// Default relative tolerance of [`integrate`].
pub const REL_TOL: f64 = 1e-9;

const MAX_INTERVALS: usize = 2000;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.000_000_000_000_000_000_000_000_000_000_000,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
    pub intervals: usize,
}

impl Quadrature {
    pub fn converged(&self, abs_tol: f64, rel_tol: f64) -> bool {
        self.error <= abs_tol.max(rel_tol * self.value.abs())
    }
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Segment {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    let value = kronrod * half;
    let error = ((kronrod - gauss) * half).abs();
    Segment { a, b, value, error }
}

/// Integrate `f` over `[a, b]` with the default tolerances.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> Quadrature {
    integrate_with(f, a, b, ABS_TOL, REL_TOL)
}

/// Integrate `f` over the finite interval `[a, b]`.
///
/// Reversed bounds flip the sign; an empty interval returns zero.
pub fn integrate_with<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Quadrature {
    if a == b {
        return Quadrature { value: 0.0, error: 0.0, intervals: 0 };
    }
    if b < a {
        let q = integrate_with(f, b, a, abs_tol, rel_tol);
        return Quadrature { value: -q.value, ..q };
    }
    let first = kronrod(&f, a, b);
    let mut value = first.value;
    let mut error = first.error;
    let mut heap = BinaryHeap::new();
    heap.push(first);
    while error > abs_tol.max(rel_tol * value.abs()) && heap.len() < MAX_INTERVALS {
        let worst = match heap.pop() {
            Some(s) => s,
            None => break,
        };
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // interval exhausted at machine resolution
            heap.push(worst);
            break;
        }
        let left = kronrod(&f, worst.a, mid);
        let right = kronrod(&f, mid, worst.b);
        value += left.value + right.value - worst.value;
        error += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
    }
    // re-sum to shed the drift of the running updates
    let (value, error) = heap
        .iter()
        .fold((0.0, 0.0), |(v, e), s| (v + s.value, e + s.error));
    Quadrature { value, error, intervals: heap.len() }
}

/// Integrate `h(z)` over `[lo, hi]` (with `0 < lo < hi < ∞`) in the
/// logarithmic variable `u = ln z`, which flattens power-law integrands.
pub fn integrate_log<F: Fn(f64) -> f64>(h: F, lo: f64, hi: f64) -> Quadrature {
    debug_assert!(lo > 0.0 && hi.is_finite());
    integrate(
        |u| {
            let z = u.exp();
            h(z) * z
        },
        lo.ln(),
        hi.ln(),
    )
}

/// Five-point Gauss–Legendre nodes and weights on `[-1, 1]`.
pub const GAUSS_LEGENDRE_5: [(f64, f64); 5] = [
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.0, 0.568_888_888_888_888_9),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let q = integrate(|x| 3.0 * x * x - 2.0 * x + 1.0, -1.0, 2.0);
        // x^3 - x^2 + x on [-1, 2] = 6 - (-3)
        assert!((q.value - 9.0).abs() < 1e-13);
    }

    #[test]
    fn endpoint_singularity_converges() {
        let q = integrate(|x: f64| x.sqrt().recip(), 0.0, 1.0);
        assert!((q.value - 2.0).abs() < 1e-7, "{q:?}");
    }

    #[test]
    fn reversed_bounds_flip_sign() {
        let a = integrate(f64::exp, 0.0, 1.0).value;
        let b = integrate(f64::exp, 1.0, 0.0).value;
        assert!((a + b).abs() < 1e-15);
        assert!((a - (1f64.exp() - 1.0)).abs() < 1e-13);
    }

    #[test]
    fn log_substitution_handles_power_laws() {
        // ∫_1^1e6 z^{-2.5} dz
        let q = integrate_log(|z: f64| z.powf(-2.5), 1.0, 1e6);
        let exact = (1.0 - 1e6f64.powf(-1.5)) / 1.5;
        assert!((q.value - exact).abs() < 1e-12);
    }

    #[test]
    fn gauss_legendre_weights_sum_to_two() {
        let s: f64 = GAUSS_LEGENDRE_5.iter().map(|(_, w)| w).sum();
        assert!((s - 2.0).abs() < 1e-14);
    }
}
