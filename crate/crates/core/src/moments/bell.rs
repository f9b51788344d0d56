//! Bell polynomials for Faà di Bruno expansions.

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Incomplete Bell polynomial `B_{n,k}(x_1, x_2, ...)`; `x[i]` holds `x_{i+1}`.
pub fn partial_bell(n: usize, k: usize, x: &[f64]) -> f64 {
    if n == 0 && k == 0 {
        return 1.0;
    }
    if n == 0 || k == 0 || k > n {
        return 0.0;
    }
    (1..=n - k + 1)
        .map(|i| binomial(n - 1, i - 1) * x[i - 1] * partial_bell(n - i, k - 1, x))
        .sum()
}

/// Complete Bell polynomial `Y_n(x_1, ..., x_n)` with `n = x.len()`.
pub fn complete_bell(x: &[f64]) -> f64 {
    let n = x.len();
    (1..=n).map(|k| partial_bell(n, k, x)).sum::<f64>() + if n == 0 { 1.0 } else { 0.0 }
}
