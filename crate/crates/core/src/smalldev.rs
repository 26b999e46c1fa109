//! Small-deviation probabilities P(M ≤ δ) and lognormal-type exponent fits on
//! both the distribution and the Laplace side.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, GmcError, Result};
use crate::gmc::SampleBank;
use crate::laplace::{estimate_q, LaplaceEstimate};
use crate::stats::{clopper_pearson, weighted_least_squares};

/// Minimum hit count for a point to enter a fit.
pub const MIN_HITS: usize = 30;
/// Largest probability (or Laplace value) entering a fit.
pub const MAX_PROB: f64 = 0.5;
/// Largest relative standard error of a Laplace point entering a fit.
pub const MAX_LAPLACE_REL_SE: f64 = 0.2;

/// One empirical small-deviation probability with its exact 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SmallDevPoint {
    pub delta: f64,
    pub hits: usize,
    pub p: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Half-width of the interval; for zero hits, the one-sided bound 1 − 0.05^{1/N}.
    pub ci_half: f64,
}

fn point(delta: f64, hits: usize, n: usize) -> SmallDevPoint {
    let p = hits as f64 / n as f64;
    if hits == 0 {
        let up = 1.0 - 0.05f64.powf(1.0 / n as f64);
        return SmallDevPoint { delta, hits, p, ci_low: 0.0, ci_high: up, ci_half: up };
    }
    let (lo, hi) = clopper_pearson(hits, n, 0.95);
    SmallDevPoint { delta, hits, p, ci_low: lo, ci_high: hi, ci_half: 0.5 * (hi - lo) }
}

/// Fraction of bank masses ≤ δ with a Clopper–Pearson interval.
pub fn smalldev_prob(bank: &SampleBank, delta: f64) -> Result<SmallDevPoint> {
    if !(delta > 0.0) {
        return Err(invalid(format!("delta = {delta} must be positive")));
    }
    let hits = bank.masses.iter().filter(|&&m| m <= delta).count();
    Ok(point(delta, hits, bank.n))
}

/// P(M ≤ δ) along a decreasing δ grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SmallDevCurve {
    pub deltas: Vec<f64>,
    pub probs: Vec<f64>,
    pub ci_half_widths: Vec<f64>,
    pub hits: Vec<usize>,
    /// Sample count; 0 marks exact (noise-free) probabilities.
    pub n: usize,
}

impl SmallDevCurve {
    /// Empirical curve; `deltas` are sorted into decreasing order.
    pub fn from_bank(bank: &SampleBank, deltas: &[f64]) -> Result<Self> {
        if deltas.iter().any(|d| !(*d > 0.0)) {
            return Err(invalid("deltas must be positive"));
        }
        let mut sorted = bank.masses.clone();
        sorted.sort_by(f64::total_cmp);
        let mut ds = deltas.to_vec();
        ds.sort_by(|a, b| b.total_cmp(a));
        let pts: Vec<SmallDevPoint> = ds.iter().map(|&d| point(d, sorted.partition_point(|&m| m <= d), bank.n)).collect();
        Ok(Self {
            deltas: ds,
            probs: pts.iter().map(|p| p.p).collect(),
            ci_half_widths: pts.iter().map(|p| p.ci_half).collect(),
            hits: pts.iter().map(|p| p.hits).collect(),
            n: bank.n,
        })
    }

    /// Noise-free curve from known probabilities.
    pub fn exact(deltas: Vec<f64>, probs: Vec<f64>) -> Self {
        let k = deltas.len();
        Self { deltas, probs, ci_half_widths: vec![0.0; k], hits: vec![0; k], n: 0 }
    }
}

/// Weighted fit y = c·u² + linear·u + intercept of a lognormal-type law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExponentFit {
    pub c: f64,
    pub c_std_error: f64,
    pub linear: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Range of the fitted abscissa (δ for small deviations, x for Laplace).
    pub window: (f64, f64),
    pub points: usize,
    pub weights: String,
    /// c is positive and more than three standard errors from zero.
    pub lognormal: bool,
}

fn fit(u: &[f64], y: &[f64], w: &[f64], window: (f64, f64), weights: &str) -> Result<ExponentFit> {
    if u.len() < 4 {
        return Err(GmcError::InsufficientSamples(format!("{} usable points, need at least 4", u.len())));
    }
    let design: Vec<Vec<f64>> = u.iter().map(|&v| vec![v * v, v, 1.0]).collect();
    let f = weighted_least_squares(&design, y, w)?;
    let (c, se) = (f.coefficients[0], f.std_errors[0]);
    Ok(ExponentFit {
        c,
        c_std_error: se,
        linear: f.coefficients[1],
        intercept: f.coefficients[2],
        r_squared: f.r_squared,
        window,
        points: u.len(),
        weights: weights.to_string(),
        lognormal: c > 0.0 && c > 3.0 * se,
    })
}

/// Fits −ln p = c(ln δ)² + linear·ln δ + intercept over the usable window
/// (at least 30 hits and p ≤ 0.5 for sampled curves; 0 < p ≤ 0.5 for exact
/// ones). Sampled points are weighted by Np/(1 − p), the inverse
/// delta-method variance of −ln p̂.
pub fn fit_lognormal_exponent(curve: &SmallDevCurve) -> Result<ExponentFit> {
    let (mut u, mut y, mut w, mut ds) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (i, (&d, &p)) in curve.deltas.iter().zip(&curve.probs).enumerate() {
        let usable = p > 0.0 && p <= MAX_PROB && (curve.n == 0 || curve.hits[i] >= MIN_HITS);
        if !usable {
            continue;
        }
        u.push(d.ln());
        y.push(-p.ln());
        w.push(if curve.n == 0 { 1.0 } else { curve.n as f64 * p / (1.0 - p).max(1e-300) });
        ds.push(d);
    }
    let window = ds.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let label = if curve.n == 0 { "uniform (exact curve)" } else { "Np/(1-p)" };
    fit(&u, &y, &w, window, label)
}

/// ln Q(x) along an x grid with optional standard errors of ln Q.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LaplaceCurve {
    pub xs: Vec<f64>,
    pub ln_q: Vec<f64>,
    /// Empty for exact curves.
    pub ln_std_errors: Vec<f64>,
}

impl LaplaceCurve {
    pub fn from_estimates(est: &[LaplaceEstimate]) -> Self {
        Self {
            xs: est.iter().map(|e| e.x).collect(),
            ln_q: est.iter().map(|e| e.ln_estimate).collect(),
            ln_std_errors: est.iter().map(|e| e.ln_std_error).collect(),
        }
    }
}

/// Fits −ln Q(x) = c x² + linear·x + intercept. Sampled points enter when
/// Q ≤ 0.5 and the relative error is at most 0.2, weighted by 1/se².
pub fn fit_laplace_exponent(curve: &LaplaceCurve) -> Result<ExponentFit> {
    let exact = curve.ln_std_errors.is_empty();
    let (mut u, mut y, mut w) = (Vec::new(), Vec::new(), Vec::new());
    for (i, (&x, &l)) in curve.xs.iter().zip(&curve.ln_q).enumerate() {
        if !l.is_finite() || l > MAX_PROB.ln() {
            continue;
        }
        if !exact {
            let se = curve.ln_std_errors[i];
            if !(se > 0.0 && se <= MAX_LAPLACE_REL_SE) {
                continue;
            }
            w.push(1.0 / (se * se));
        } else {
            w.push(1.0);
        }
        u.push(x);
        y.push(-l);
    }
    let window = u.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    fit(&u, &y, &w, window, if exact { "uniform (exact curve)" } else { "1/se^2" })
}

/// Laplace-side and distribution-side exponents of the same law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExponentComparison {
    pub laplace: ExponentFit,
    pub distribution: ExponentFit,
    /// laplace.c − distribution.c.
    pub gap: f64,
    pub gap_std_error: f64,
    /// Laplace exponent ≤ distribution exponent + 3σ.
    pub consistent: bool,
}

pub fn compare_exponents(laplace: ExponentFit, distribution: ExponentFit) -> ExponentComparison {
    let gap = laplace.c - distribution.c;
    let se = laplace.c_std_error.hypot(distribution.c_std_error);
    ExponentComparison { consistent: gap <= 3.0 * se, gap, gap_std_error: se, laplace, distribution }
}

/// Both exponents from one bank: the direct Laplace estimates on `x_grid`
/// and the empirical small-deviation curve on `deltas`.
pub fn laplace_vs_smalldev(bank: &SampleBank, x_grid: &[f64], deltas: &[f64]) -> Result<ExponentComparison> {
    if x_grid.len() < 4 {
        return Err(invalid(format!("x grid has {} points, need at least 4", x_grid.len())));
    }
    let r = bank.radius();
    let est: Vec<LaplaceEstimate> = x_grid.iter().map(|&x| estimate_q(bank, r, x, 0)).collect::<Result<_>>()?;
    let lap = fit_laplace_exponent(&LaplaceCurve::from_estimates(&est))?;
    let dist = fit_lognormal_exponent(&SmallDevCurve::from_bank(bank, deltas)?)?;
    Ok(compare_exponents(lap, dist))
}

/// Geometric grid of `k` values from `hi` down to `lo`.
pub fn geometric_grid(hi: f64, lo: f64, k: usize) -> Vec<f64> {
    let (a, b) = (hi.ln(), lo.ln());
    (0..k).map(|i| (a + (b - a) * i as f64 / (k - 1).max(1) as f64).exp()).collect()
}
