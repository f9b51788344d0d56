//! Sample statistics: Laplace estimates, Hill tail index, two-sample KS and
//! Monte Carlo f-moments with their doubling diagnostics.

use serde::Serialize;

use super::LabError;
use crate::moments::MomentFunction;

/// Sample mean and standard error of the mean.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LaplaceEstimate {
    pub lambda: f64,
    pub estimate: f64,
    pub se: f64,
}

/// Sample mean of `e^{-λX}` with its standard error, per `λ`.
pub fn empirical_laplace(sample: &[f64], lambdas: &[f64]) -> Result<Vec<LaplaceEstimate>, LabError> {
    if sample.is_empty() {
        return Err(LabError::InvalidArgument("empirical_laplace needs a nonempty sample".into()));
    }
    lambdas
        .iter()
        .map(|&lambda| {
            if !(lambda >= 0.0) {
                return Err(LabError::InvalidArgument(format!("lambda must be >= 0 (got {lambda})")));
            }
            if lambda == 0.0 {
                return Ok(LaplaceEstimate { lambda, estimate: 1.0, se: 0.0 });
            }
            let vals: Vec<f64> = sample.iter().map(|x| (-lambda * x).exp()).collect();
            let (estimate, se) = mean_se(&vals);
            Ok(LaplaceEstimate { lambda, estimate, se })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HillEstimate {
    pub alpha: f64,
    /// `α̂ (1 ± 1.96/√k)`.
    pub ci: (f64, f64),
    pub k: usize,
    pub k_frac: f64,
}

pub const MIN_EXCEEDANCES: usize = 50;

/// Hill estimator over the top `⌈k_frac N⌉` order statistics.
pub fn hill_tail_index(sample: &[f64], k_frac: f64) -> Result<HillEstimate, LabError> {
    if !(k_frac > 0.0 && k_frac <= 0.1) {
        return Err(LabError::InvalidArgument(format!("k_frac must lie in (0, 0.1] (got {k_frac})")));
    }
    let n = sample.len();
    let k = (k_frac * n as f64).ceil() as usize;
    if k < MIN_EXCEEDANCES || k >= n {
        return Err(LabError::InsufficientTail { k, needed: MIN_EXCEEDANCES });
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let threshold = sorted[k];
    if !(threshold > 0.0) {
        return Err(LabError::InsufficientTail { k: sorted[..k].iter().filter(|&&x| x > 0.0).count(), needed: MIN_EXCEEDANCES });
    }
    let mean_log = sorted[..k].iter().map(|x| (x / threshold).ln()).sum::<f64>() / k as f64;
    let alpha = 1.0 / mean_log;
    let half = 1.96 / (k as f64).sqrt();
    Ok(HillEstimate { alpha, ci: (alpha * (1.0 - half), alpha * (1.0 + half)), k, k_frac })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TailDiagnosis {
    PowerTail,
    NoPowerTail,
    Inconclusive,
}

pub const HILL_SWEEP: [f64; 4] = [0.1, 0.05, 0.02, 0.01];

/// Hill estimates along [`HILL_SWEEP`]. A steady upward drift as `k_frac`
/// shrinks is the light-tail signature.
pub fn hill_sweep(sample: &[f64]) -> (Vec<HillEstimate>, TailDiagnosis) {
    let est: Vec<HillEstimate> = HILL_SWEEP.iter().filter_map(|&k| hill_tail_index(sample, k).ok()).collect();
    if est.len() < 3 {
        return (est, TailDiagnosis::Inconclusive);
    }
    let alphas: Vec<f64> = est.iter().map(|e| e.alpha).collect();
    let (first, last) = (alphas[0], alphas[alphas.len() - 1]);
    let max = alphas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = alphas.iter().cloned().fold(f64::INFINITY, f64::min);
    let diagnosis = if alphas.windows(2).all(|w| w[1] > w[0]) && last >= 1.5 * first {
        TailDiagnosis::NoPowerTail
    } else if max <= 1.25 * min {
        TailDiagnosis::PowerTail
    } else {
        TailDiagnosis::Inconclusive
    };
    (est, diagnosis)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub critical_95: f64,
}

impl KsResult {
    pub fn passed(&self) -> bool {
        self.statistic < self.critical_95
    }
}

pub const KS_MIN_SAMPLE: usize = 1000;

/// Two-sample Kolmogorov-Smirnov statistic with the asymptotic 95% critical
/// value `1.358 √((n + m) / (n m))`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult, LabError> {
    if a.len() < KS_MIN_SAMPLE || b.len() < KS_MIN_SAMPLE {
        return Err(LabError::InvalidArgument(format!(
            "KS needs at least {KS_MIN_SAMPLE} points per sample (got {} and {})",
            a.len(),
            b.len()
        )));
    }
    let sort = |s: &[f64]| {
        let mut v = s.to_vec();
        v.sort_by(f64::total_cmp);
        v
    };
    let (a, b) = (sort(a), sort(b));
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    Ok(KsResult { statistic: d, critical_95: 1.358 * ((n + m) / (n * m)).sqrt() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stability {
    Stable,
    Diverging,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryPoint {
    pub n_paths: usize,
    pub estimate: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    pub function: String,
    pub estimate: f64,
    pub se: f64,
    pub n_paths: usize,
    /// Estimates on the first N/8, N/4, N/2 and N paths.
    pub trajectory: Vec<TrajectoryPoint>,
    pub last_relative_change: f64,
    /// Hill index of the sample `f(X)`; `E f(X) < ∞` needs an index above 1.
    pub f_tail: Option<HillEstimate>,
    pub verdict: Stability,
    pub tags: Vec<String>,
    pub note: &'static str,
}

/// `E f(X)` over `sample` with the doubling and tail diagnostics.
///
/// Diverging: the Hill interval of `f(X)` lies below 1, or the trajectory is
/// nondecreasing and grows at least 2x. Stable: the Hill interval lies above
/// 1 and the last doubling moves the estimate by under 5% or under 2 SE.
pub fn mc_f_moment(sample: &[f64], f: &MomentFunction) -> Result<EstimateReport, LabError> {
    f.validate().map_err(|e| LabError::InvalidArgument(e.to_string()))?;
    let n = sample.len();
    if n < 8 {
        return Err(LabError::InvalidArgument(format!("mc_f_moment needs at least 8 paths (got {n})")));
    }
    let values: Vec<f64> = sample.iter().map(|&x| f.apply(x)).collect();
    let trajectory: Vec<TrajectoryPoint> = [n / 8, n / 4, n / 2, n]
        .iter()
        .map(|&k| {
            let (estimate, se) = mean_se(&values[..k]);
            TrajectoryPoint { n_paths: k, estimate, se }
        })
        .collect();
    let last = trajectory[trajectory.len() - 1];
    let prev = trajectory[trajectory.len() - 2];
    let delta = last.estimate - prev.estimate;
    let last_relative_change = if last.estimate != 0.0 { (delta / last.estimate).abs() } else { delta.abs() };
    let f_tail = hill_tail_index(&values, 0.01).ok();

    let mut tags = Vec::new();
    let monotone = trajectory.windows(2).all(|w| w[1].estimate >= w[0].estimate);
    let doubled = monotone && last.estimate >= 2.0 * trajectory[0].estimate && trajectory[0].estimate > 0.0;
    if doubled {
        tags.push("trajectory_doubled".to_string());
    }
    let hill_below = f_tail.is_some_and(|h| h.ci.1 < 1.0);
    let hill_above = f_tail.is_none_or(|h| h.ci.0 > 1.0);
    if hill_below {
        tags.push("f_tail_index_below_one".to_string());
    }
    if hill_above {
        tags.push("f_tail_index_above_one".to_string());
    }
    let settled = last_relative_change < 0.05 || delta.abs() <= 2.0 * last.se;
    if settled {
        tags.push("last_doubling_settled".to_string());
    }
    let verdict = if hill_below || doubled {
        Stability::Diverging
    } else if hill_above && settled {
        Stability::Stable
    } else {
        Stability::Inconclusive
    };
    Ok(EstimateReport {
        function: f.label(),
        estimate: last.estimate,
        se: last.se,
        n_paths: n,
        trajectory,
        last_relative_change,
        f_tail,
        verdict,
        tags,
        note: "finite-sample evidence, not a proof of finiteness",
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::path_rng;
    use rand::Rng;
    use rand_distr::{Distribution, Exp};

    fn pareto(alpha: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = path_rng(seed, 0);
        (0..n).map(|_| (1.0 - rng.random::<f64>()).powf(-1.0 / alpha)).collect()
    }

    #[test]
    fn laplace_trivial_cases() {
        let est = empirical_laplace(&[0.0; 10], &[0.0, 0.5, 2.0]).unwrap();
        assert!(est.iter().all(|e| e.estimate == 1.0 && e.se == 0.0));
        let est = empirical_laplace(&[1.0, 2.0, 3.0], &[0.0]).unwrap();
        assert_eq!((est[0].estimate, est[0].se), (1.0, 0.0));
        assert!(empirical_laplace(&[], &[1.0]).is_err());
    }

    #[test]
    fn laplace_of_exponential_sample() {
        let mut rng = path_rng(5, 0);
        let exp = Exp::new(1.0).unwrap();
        let sample: Vec<f64> = (0..100_000).map(|_| exp.sample(&mut rng)).collect();
        for e in empirical_laplace(&sample, &[0.5, 1.0, 2.0]).unwrap() {
            let exact = 1.0 / (1.0 + e.lambda);
            assert!((e.estimate - exact).abs() < 3.0 * e.se, "{e:?}");
        }
    }

    #[test]
    fn hill_on_pareto() {
        let est = hill_tail_index(&pareto(1.5, 100_000, 1), 0.01).unwrap();
        assert!((1.35..=1.65).contains(&est.alpha), "{est:?}");
        assert_eq!(est.k, 1000);
        let covered = (0..50)
            .filter(|&s| {
                let e = hill_tail_index(&pareto(1.5, 100_000, 100 + s), 0.01).unwrap();
                e.ci.0 <= 1.5 && 1.5 <= e.ci.1
            })
            .count();
        assert!(covered >= 45, "{covered}/50");
    }

    #[test]
    fn hill_light_tail_signature() {
        let mut rng = path_rng(6, 0);
        let exp = Exp::new(1.0).unwrap();
        let sample: Vec<f64> = (0..100_000).map(|_| exp.sample(&mut rng)).collect();
        let (est, diagnosis) = hill_sweep(&sample);
        assert!(est.windows(2).all(|w| w[1].alpha > w[0].alpha), "{est:?}");
        assert_eq!(diagnosis, TailDiagnosis::NoPowerTail);
        assert_eq!(hill_sweep(&pareto(1.5, 100_000, 2)).1, TailDiagnosis::PowerTail);
    }

    #[test]
    fn hill_errors() {
        assert!(matches!(hill_tail_index(&pareto(1.5, 4000, 1), 0.01), Err(LabError::InsufficientTail { .. })));
        assert!(matches!(hill_tail_index(&[0.0; 100_000], 0.01), Err(LabError::InsufficientTail { .. })));
        assert!(hill_tail_index(&pareto(1.5, 100_000, 1), 0.2).is_err());
    }

    #[test]
    fn ks_identical_and_iid() {
        let a = pareto(2.0, 2000, 3);
        let same = ks_two_sample(&a, &a).unwrap();
        assert_eq!(same.statistic, 0.0);
        let passed = (0..50).filter(|&s| ks_two_sample(&pareto(2.0, 2000, 10 + s), &pareto(2.0, 2000, 500 + s)).unwrap().passed()).count();
        assert!(passed >= 45, "{passed}/50");
        let shifted: Vec<f64> = a.iter().map(|x| x + 0.5).collect();
        assert!(!ks_two_sample(&a, &shifted).unwrap().passed());
        assert!(ks_two_sample(&a[..10], &a).is_err());
    }

    #[test]
    fn ks_statistic_by_hand() {
        let a: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..1000).map(|i| i as f64 + 100.0).collect();
        assert!((ks_two_sample(&a, &b).unwrap().statistic - 0.1).abs() < 1e-12);
    }

    #[test]
    fn moment_verdicts_on_synthetic_tails() {
        let sample = pareto(1.5, 200_000, 4);
        let stable = mc_f_moment(&sample, &MomentFunction::power(1.2)).unwrap();
        assert_eq!(stable.verdict, Stability::Stable, "{stable:?}");
        assert_eq!(stable.trajectory.len(), 4);
        let diverging = mc_f_moment(&sample, &MomentFunction::power(1.8)).unwrap();
        assert_eq!(diverging.verdict, Stability::Diverging, "{diverging:?}");
        let light: Vec<f64> = (0..10_000).map(|i| 1.0 + (i % 7) as f64).collect();
        let report = mc_f_moment(&light, &MomentFunction::power(1.0)).unwrap();
        assert_eq!(report.verdict, Stability::Stable);
        assert!((report.estimate - report.trajectory[3].estimate).abs() == 0.0);
    }
}
