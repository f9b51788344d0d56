//! Scalar variates used by the path schemes.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};

/// Poisson count; inversion below mean 12, `rand_distr` above.
pub fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if !(mean > 0.0) {
        return 0;
    }
    if mean < 12.0 {
        let mut p = (-mean).exp();
        let mut cdf = p;
        let u: f64 = rng.random();
        let mut k = 0u64;
        while u > cdf && k < 200 {
            k += 1;
            p *= mean / k as f64;
            cdf += p;
        }
        k
    } else {
        Poisson::new(mean).expect("positive finite mean").sample(rng) as u64
    }
}

pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Gamma variate with the given shape and scale; zero shape gives 0.
pub fn gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> f64 {
    if !(shape > 0.0) {
        return 0.0;
    }
    Gamma::new(shape, scale).expect("positive shape and scale").sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn poisson_mean_and_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for &mean in &[0.01, 0.7, 5.0, 11.9, 12.0, 40.0] {
            let n = 200_000;
            let draws: Vec<f64> = (0..n).map(|_| poisson(mean, &mut rng) as f64).collect();
            let m = draws.iter().sum::<f64>() / n as f64;
            let v = draws.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (mean / n as f64).sqrt();
            assert!((m - mean).abs() < 4.0 * se, "mean {mean}: {m}");
            assert!((v - mean).abs() < 0.05 * mean + 5.0 * se, "var {mean}: {v}");
        }
        assert_eq!(poisson(0.0, &mut rng), 0);
    }

    #[test]
    fn gamma_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let m = (0..n).map(|_| gamma(2.5, 0.4, &mut rng)).sum::<f64>() / n as f64;
        assert!((m - 1.0).abs() < 4.0 * (2.5f64).sqrt() * 0.4 / (n as f64).sqrt());
        assert_eq!(gamma(0.0, 1.0, &mut rng), 0.0);
    }
}
