//! Small statistical toolkit: moments, normal CDF, two-sample
//! Kolmogorov–Smirnov, Clopper–Pearson intervals and weighted least squares.

use nalgebra::{DMatrix, DVector};
use statrs::function::beta::beta_reg;
use statrs::function::erf::erfc;

use crate::error::{GmcError, Result};

/// Sample mean and standard error of the mean.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Standard error of the difference of two paired-per-sample series,
/// `sqrt(Var(x − y)/n)`, for estimators driven by common random numbers.
pub fn paired_diff_se(xs: &[f64], ys: &[f64]) -> f64 {
    let d: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| x - y).collect();
    mean_se(&d).1
}

/// Standard normal CDF, accurate in the far left tail.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// ln Φ(x) without underflow; Mills-ratio series below x = −30.
pub fn ln_normal_cdf(x: f64) -> f64 {
    if x > -30.0 {
        return normal_cdf(x).ln();
    }
    let y = 1.0 / (x * x);
    let series = 1.0 - y * (1.0 - 3.0 * y * (1.0 - 5.0 * y * (1.0 - 7.0 * y)));
    -0.5 * x * x - 0.5 * (2.0 * std::f64::consts::PI).ln() - (-x).ln() + series.ln()
}

/// Two-sample Kolmogorov–Smirnov statistic sup |F₁ − F₂|.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// Asymptotic upper-α quantile of the two-sample KS statistic,
/// `c(α)·sqrt((n + m)/(n m))` with `c(α) = sqrt(−ln(α/2)/2)`.
pub fn ks_critical(n: usize, m: usize, alpha: f64) -> f64 {
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    c * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}

/// Exact (Clopper–Pearson) two-sided interval for a binomial proportion.
pub fn clopper_pearson(k: usize, n: usize, level: f64) -> (f64, f64) {
    let alpha = 1.0 - level;
    let lo = if k == 0 {
        0.0
    } else {
        // P(X ≥ k | p) = I_p(k, n − k + 1) = α/2
        bisect(|p| beta_reg(k as f64, (n - k + 1) as f64, p) - alpha / 2.0, true)
    };
    let hi = if k == n {
        1.0
    } else {
        // P(X ≤ k | p) = 1 − I_p(k + 1, n − k) = α/2
        bisect(|p| 1.0 - beta_reg((k + 1) as f64, (n - k) as f64, p) - alpha / 2.0, false)
    };
    (lo, hi)
}

/// Root of a monotone function on (0, 1) by bisection.
fn bisect<F: Fn(f64) -> f64>(f: F, increasing: bool) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let v = f(mid);
        if (v < 0.0) == increasing {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 * hi.max(1e-300) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Weighted least-squares solution.
#[derive(Debug, Clone)]
pub struct WlsFit {
    pub coefficients: Vec<f64>,
    /// Standard errors from the inverse normal matrix scaled by the
    /// reduced chi-square (or by 1 when the fit is exact).
    pub std_errors: Vec<f64>,
    pub r_squared: f64,
    pub reduced_chi2: f64,
}

/// Weighted least squares of `y` on the columns of `design` with weights
/// `w` (inverse variances).
pub fn weighted_least_squares(design: &[Vec<f64>], y: &[f64], w: &[f64]) -> Result<WlsFit> {
    let n = y.len();
    let p = design.first().map_or(0, |r| r.len());
    if n <= p || p == 0 {
        return Err(GmcError::InsufficientSamples(format!("{n} points for {p} coefficients")));
    }
    let x = DMatrix::from_fn(n, p, |i, j| design[i][j] * w[i].sqrt());
    let yy = DVector::from_fn(n, |i, _| y[i] * w[i].sqrt());
    let xtx = x.transpose() * &x;
    let chol = xtx
        .clone()
        .cholesky()
        .ok_or_else(|| GmcError::Factorization("singular normal equations".into()))?;
    let beta = chol.solve(&(x.transpose() * &yy));
    let resid = &yy - &x * &beta;
    let rss = resid.norm_squared();
    let wsum: f64 = w.iter().sum();
    let ybar = y.iter().zip(w).map(|(y, w)| y * w).sum::<f64>() / wsum;
    let tss: f64 = y.iter().zip(w).map(|(y, w)| w * (y - ybar).powi(2)).sum();
    let dof = (n - p) as f64;
    let reduced_chi2 = rss / dof;
    let inv = chol.inverse();
    let scale = reduced_chi2.max(1.0);
    let std_errors = (0..p).map(|j| (inv[(j, j)] * scale).sqrt()).collect();
    let r_squared = if tss > 0.0 { 1.0 - rss / tss } else { 1.0 };
    Ok(WlsFit { coefficients: beta.iter().copied().collect(), std_errors, r_squared, reduced_chi2 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn ln_normal_cdf_is_continuous_at_switch() {
        // Both branches at the same points just past the switch.
        for x in [-30.0 - 1e-9, -31.0, -35.0] {
            let series = ln_normal_cdf(x);
            let direct = normal_cdf(x).ln();
            assert!((series - direct).abs() < 1e-9 * direct.abs(), "{x}: {series} vs {direct}");
        }
        assert!(ln_normal_cdf(-1e3).is_finite());
        assert!((ln_normal_cdf(0.0) - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn normal_cdf_values() {
        assert_abs_diff_eq!(normal_cdf(0.0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(normal_cdf(1.959_963_984_540_054), 0.975, epsilon = 1e-11);
        // Far tail keeps relative accuracy.
        let v = normal_cdf(-10.0);
        assert!((v / 7.619_853_024_160_527e-24 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn clopper_pearson_known_values() {
        // Zero successes: upper = 1 − (α/2)^{1/n}.
        let (lo, hi) = clopper_pearson(0, 100, 0.95);
        assert_eq!(lo, 0.0);
        assert_abs_diff_eq!(hi, 1.0 - 0.025f64.powf(0.01), epsilon = 1e-10);
        // 5 of 20: R binom.test gives (0.08657147, 0.49104587).
        let (lo, hi) = clopper_pearson(5, 20, 0.95);
        assert_abs_diff_eq!(lo, 0.086_571_47, epsilon = 1e-7);
        assert_abs_diff_eq!(hi, 0.491_045_87, epsilon = 1e-7);
    }

    #[test]
    fn ks_identical_and_disjoint() {
        let a: Vec<f64> = (0..100).map(|i| i as f64).collect();
        assert_eq!(ks_two_sample(&a, &a), 0.0);
        let b: Vec<f64> = (0..100).map(|i| 1000.0 + i as f64).collect();
        assert_eq!(ks_two_sample(&a, &b), 1.0);
        assert_abs_diff_eq!(ks_critical(100_000, 100_000, 0.01), 1.6276 * (2e-5f64).sqrt(), epsilon = 1e-5);
    }

    #[test]
    fn wls_recovers_exact_quadratic() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64 * 0.3).collect();
        let design: Vec<Vec<f64>> = xs.iter().map(|x| vec![x * x, *x, 1.0]).collect();
        let y: Vec<f64> = xs.iter().map(|x| 0.5 * x * x - 2.0 * x + 3.0).collect();
        let fit = weighted_least_squares(&design, &y, &[1.0; 10]).unwrap();
        assert_abs_diff_eq!(fit.coefficients[0], 0.5, epsilon = 1e-10);
        assert_abs_diff_eq!(fit.coefficients[1], -2.0, epsilon = 1e-10);
        assert_abs_diff_eq!(fit.r_squared, 1.0, epsilon = 1e-12);
    }
}
