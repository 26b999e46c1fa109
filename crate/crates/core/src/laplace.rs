//! Laplace transforms of chaos masses: estimators of Q_r(x) = E e^{−eˣ M_r},
//! the exponential-pairing identity behind the κ and κ₂ representations,
//! degenerate-law quadrature for the backward heat equations, and the
//! lower-bound and band envelopes for ln Q_r.

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, GmcError, Result};
use crate::gmc::{constants, sample_mr_scaled, GmcConstants, SampleBank};
use crate::params::ModelParams;
use crate::quad::GaussLegendre;
use crate::rng::{stream, Domain};
use crate::stats::{ln_normal_cdf, mean_se, paired_diff_se};

/// How a Laplace estimate was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LaplaceMethod {
    /// Mean of e^{−eˣm} over a bank simulated on B(0, r).
    DirectBank,
    /// Mean of e^{−eˣm_r} with m_r from the scaling sampler.
    ScaledBank,
    /// Scaling sampler with the Gaussian factor integrated out exactly.
    ScaledConditional,
    /// Exponential-pairing right side.
    PairingRhs,
    /// Exponential-pairing right side with a Gaussian proposal for ln T₁.
    PairingImportance,
}

/// Estimate of Q_r(x), kept in both linear and log form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LaplaceEstimate {
    pub x: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub ln_estimate: f64,
    /// Standard error of `ln_estimate` (delta method).
    pub ln_std_error: f64,
    pub n: usize,
    pub method: LaplaceMethod,
}

impl LaplaceEstimate {
    fn from_samples(x: f64, values: &[f64], method: LaplaceMethod) -> Self {
        let (m, se) = mean_se(values);
        Self { x, estimate: m, std_error: se, ln_estimate: m.ln(), ln_std_error: se / m, n: values.len(), method }
    }

    fn from_log_samples(x: f64, ln_values: &[f64], method: LaplaceMethod) -> Self {
        let (ln_mean, rel_se) = log_mean_rel_se(ln_values);
        let est = ln_mean.exp();
        Self {
            x,
            estimate: est,
            std_error: est * rel_se,
            ln_estimate: ln_mean,
            ln_std_error: rel_se,
            n: ln_values.len(),
            method,
        }
    }
}

/// ln of the sample mean of e^{ℓᵢ} and the relative standard error.
pub fn log_mean_rel_se(ln_values: &[f64]) -> (f64, f64) {
    let top = ln_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return (top, 0.0);
    }
    let w: Vec<f64> = ln_values.iter().map(|l| (l - top).exp()).collect();
    let (m, se) = mean_se(&w);
    (top + m.ln(), se / m)
}

fn is_radius(bank: &SampleBank, r: f64) -> bool {
    (bank.radius() - r).abs() <= 1e-12 * r.max(1.0)
}

fn check_unit_bank(bank: &SampleBank) -> Result<()> {
    if is_radius(bank, 1.0) {
        Ok(())
    } else {
        Err(invalid(format!("bank on radius {} where the unit ball is required", bank.radius())))
    }
}

fn exponentials(key: u64, n: usize) -> Vec<f64> {
    (0..n as u64).into_par_iter().map(|i| stream(Domain::Exponential, key, i).sample(Exp1)).collect()
}

fn proposals(key: u64, n: usize) -> Vec<f64> {
    (0..n as u64).into_par_iter().map(|i| stream(Domain::Importance, key, i).sample(StandardNormal)).collect()
}

/// Per-sample e^{−eˣ m}.
pub fn laplace_samples(masses: &[f64], x: f64) -> Vec<f64> {
    let t = x.exp();
    masses.iter().map(|m| (-t * m).exp()).collect()
}

/// Q_r(x) from a bank: direct when the bank lives on B(0, r), otherwise
/// through the scaling sampler from a unit-ball bank.
pub fn estimate_q(bank: &SampleBank, r: f64, x: f64, stream_key: u64) -> Result<LaplaceEstimate> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(invalid(format!("r = {r} outside (0, 1]")));
    }
    if is_radius(bank, r) {
        return Ok(LaplaceEstimate::from_samples(x, &laplace_samples(&bank.masses, x), LaplaceMethod::DirectBank));
    }
    check_unit_bank(bank)?;
    let mr = sample_mr_scaled(bank, r, stream_key)?;
    Ok(LaplaceEstimate::from_samples(x, &laplace_samples(&mr, x), LaplaceMethod::ScaledBank))
}

/// ln Ψ_σ(y) and d/dy ln Ψ_σ(y) for Ψ_σ(y) = E exp(−e^{y+σZ}), Z ~ N(0, 1).
///
/// Laplace-centred composite Gauss–Legendre over the window where the log
/// integrand is within 60 of its maximum.
pub fn ln_psi(sigma: f64, y: f64) -> (f64, f64) {
    if sigma <= 0.0 {
        let e = y.exp();
        return (-e, -e);
    }
    let h = |z: f64| -0.5 * z * z - (y + sigma * z).exp();
    let hp = |z: f64| -z - sigma * (y + sigma * z).exp();
    let (mut lo, mut hi) = (-1.0f64, 0.0f64);
    while hp(lo) <= 0.0 {
        hi = lo;
        lo *= 2.0;
    }
    let mut z = 0.5 * (lo + hi);
    for _ in 0..200 {
        let g = hp(z);
        if g > 0.0 {
            lo = z;
        } else {
            hi = z;
        }
        let gp = -1.0 - sigma * sigma * (y + sigma * z).exp();
        let mut zn = z - g / gp;
        if !(zn > lo && zn < hi) {
            zn = 0.5 * (lo + hi);
        }
        let done = (zn - z).abs() <= 1e-14 * (1.0 + z.abs());
        z = zn;
        if done {
            break;
        }
    }
    let h_star = h(z);
    let scale = 1.0 / (1.0 + sigma * sigma * (y + sigma * z).exp()).sqrt();
    const DROP: f64 = 60.0;
    let reach = |dir: f64| {
        let mut k = 1.0;
        while h(z + dir * k * scale) - h_star > -DROP && k < 1e8 {
            k *= 2.0;
        }
        z + dir * k * scale
    };
    let (zl, zr) = (reach(-1.0), reach(1.0));
    let panels = (((zr - zl) / scale).ceil() as usize).clamp(4, 20_000);
    let width = (zr - zl) / panels as f64;
    let rule = gl20();
    let (mut s0, mut s1) = (0.0, 0.0);
    for p in 0..panels {
        let a = zl + p as f64 * width;
        for (u, w) in rule.mapped(a, a + width) {
            let e = (y + sigma * u).exp();
            let g = w * (-0.5 * u * u - e - h_star).exp();
            s0 += g;
            s1 += g * e;
        }
    }
    (h_star - 0.5 * (2.0 * std::f64::consts::PI).ln() + s0.ln(), -s1 / s0)
}

fn gl20() -> &'static GaussLegendre {
    static RULE: std::sync::OnceLock<GaussLegendre> = std::sync::OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(20))
}

/// Cubic Hermite table of ln Ψ_σ on a uniform y grid; exact evaluation
/// outside the tabulated range.
#[derive(Debug, Clone)]
pub struct LnPsiTable {
    sigma: f64,
    y0: f64,
    step: f64,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl LnPsiTable {
    pub fn new(sigma: f64, y_min: f64, y_max: f64, step: f64) -> Self {
        let knots = ((y_max - y_min) / step).ceil() as usize + 2;
        let pairs: Vec<(f64, f64)> = (0..knots).into_par_iter().map(|k| ln_psi(sigma, y_min + k as f64 * step)).collect();
        let (values, slopes) = pairs.into_iter().unzip();
        Self { sigma, y0: y_min, step, values, slopes }
    }

    pub fn eval(&self, y: f64) -> f64 {
        let u = (y - self.y0) / self.step;
        if !(u >= 0.0) || u >= (self.values.len() - 1) as f64 {
            return ln_psi(self.sigma, y).0;
        }
        let k = u.floor() as usize;
        let t = u - k as f64;
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.values[k] + h10 * self.step * self.slopes[k] + h01 * self.values[k + 1] + h11 * self.step * self.slopes[k + 1]
    }
}

/// Q_r(x) for every x in `xs` from a unit-ball bank, with the Gaussian factor
/// of the scaling law integrated out: Q_r(x) = E Ψ_σ(x + ln M₁ + d ln r −
/// γ²L/2), σ = γ√L, L = ln(1/r). Reaches far deeper tails than
/// [`estimate_q`] because each sample contributes its conditional mean.
pub fn estimate_q_conditional(bank: &SampleBank, r: f64, xs: &[f64]) -> Result<Vec<LaplaceEstimate>> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(invalid(format!("r = {r} outside (0, 1]")));
    }
    check_unit_bank(bank)?;
    if xs.is_empty() {
        return Ok(Vec::new());
    }
    let p = &bank.params;
    let l = (1.0 / r).ln();
    let sigma = p.gamma * l.sqrt();
    let shift = p.d as f64 * r.ln() - 0.5 * p.gamma * p.gamma * l;
    let ln_m: Vec<f64> = bank.masses.iter().map(|m| m.ln()).collect();
    let (lo, hi) = ln_m.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let (xl, xh) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let table = LnPsiTable::new(sigma, xl + lo + shift - 0.5, xh + hi + shift + 0.5, 0.01);
    Ok(xs
        .iter()
        .map(|&x| {
            let lv: Vec<f64> = ln_m.par_iter().map(|lm| table.eval(x + lm + shift)).collect();
            LaplaceEstimate::from_log_samples(x, &lv, LaplaceMethod::ScaledConditional)
        })
        .collect())
}

/// Per-sample right side of the exponential-pairing identity
/// E e^{−tM_r} = C(r)·t^b·E[T₁^{−1−b} M₁^b e^{−(ln T₁ − ln t − ln M₁)²/(2γ² ln(1/r))}].
pub fn lemma_l_rhs_samples(bank: &SampleBank, r: f64, t: f64, stream_key: u64) -> Result<Vec<f64>> {
    if !(t > 1.0) {
        return Err(invalid(format!("t = {t} must exceed 1")));
    }
    check_unit_bank(bank)?;
    let c = constants(&bank.params, r)?;
    let lt = t.ln();
    let ln_pre = c.cr.ln() + c.b * lt;
    let exps = exponentials(stream_key, bank.n);
    Ok(bank
        .masses
        .iter()
        .zip(&exps)
        .map(|(m, e)| {
            let (lm, le) = (m.ln(), e.ln());
            let dev = le - lt - lm;
            (ln_pre - (1.0 + c.b) * le + c.b * lm - c.a * dev * dev).exp()
        })
        .collect())
}

/// Monte Carlo right side of the exponential-pairing identity at t > 1.
pub fn lemma_l_rhs(bank: &SampleBank, r: f64, t: f64, stream_key: u64) -> Result<LaplaceEstimate> {
    let v = lemma_l_rhs_samples(bank, r, t, stream_key)?;
    Ok(LaplaceEstimate::from_samples(t.ln(), &v, LaplaceMethod::PairingRhs))
}

/// The same right side with ln T₁ drawn from N(ln(tM₁), γ² ln(1/r)) and
/// reweighted: r^e t^b E[M₁^b e^{−bu} e^{−e^u}].
pub fn lemma_l_rhs_importance(bank: &SampleBank, r: f64, t: f64, stream_key: u64) -> Result<LaplaceEstimate> {
    if !(t > 1.0) {
        return Err(invalid(format!("t = {t} must exceed 1")));
    }
    check_unit_bank(bank)?;
    let c = constants(&bank.params, r)?;
    let sd = bank.params.gamma * (1.0 / r).ln().sqrt();
    let lt = t.ln();
    let ln_pre = c.r_exponent * r.ln() + c.b * lt;
    let xi = proposals(stream_key, bank.n);
    let v: Vec<f64> = bank
        .masses
        .iter()
        .zip(&xi)
        .map(|(m, z)| {
            let lm = m.ln();
            let u = lt + lm + sd * z;
            (ln_pre + c.b * lm - c.b * u - u.exp()).exp()
        })
        .collect();
    Ok(LaplaceEstimate::from_samples(lt, &v, LaplaceMethod::PairingImportance))
}

/// Outcome of comparing two per-sample estimators of the same quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct IdentityCheck {
    pub label: String,
    pub point: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub lhs_se: f64,
    pub rhs_se: f64,
    /// Standard error of the per-sample difference.
    pub combined_se: f64,
    pub deviation_in_se: f64,
    pub gate: f64,
    pub pass: bool,
}

impl IdentityCheck {
    /// Compares sample means of `lhs` and `rhs` (same length, same bank).
    pub fn from_samples(label: impl Into<String>, point: f64, lhs: &[f64], rhs: &[f64], gate: f64) -> Self {
        let (l, lse) = mean_se(lhs);
        let (r, rse) = mean_se(rhs);
        let se = paired_diff_se(lhs, rhs);
        let dev = if se > 0.0 { (l - r).abs() / se } else if l == r { 0.0 } else { f64::INFINITY };
        Self {
            label: label.into(),
            point,
            lhs: l,
            rhs: r,
            lhs_se: lse,
            rhs_se: rse,
            combined_se: se,
            deviation_in_se: dev,
            gate,
            pass: dev <= gate,
        }
    }
}

/// E e^{−tM_r} via the scaling sampler against the pairing right side.
pub fn lemma_l_check(bank: &SampleBank, r: f64, t: f64, stream_key: u64, gate: f64) -> Result<IdentityCheck> {
    let mr = sample_mr_scaled(bank, r, stream_key)?;
    let lhs = laplace_samples(&mr, t.ln());
    let rhs = lemma_l_rhs_samples(bank, r, t, stream_key)?;
    Ok(IdentityCheck::from_samples("pairing", t, &lhs, &rhs, gate))
}

/// Which of the two heat-equation transforms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KappaKind {
    /// κ(s, z) = E (1/M₁) e^{(z/2 − b − 1)ℓ − sℓ²/4}, ℓ = ln(T₁/M₁).
    Kappa,
    /// κ₂(s, z) = E M₁ e^{(z/2 + b − 1)λ − sλ²/4}, λ = ln(M₁T₁).
    Kappa2,
}

impl KappaKind {
    fn alpha(self, z: f64, b: f64) -> f64 {
        match self {
            KappaKind::Kappa => 0.5 * z - b - 1.0,
            KappaKind::Kappa2 => 0.5 * z + b - 1.0,
        }
    }

    /// (ln prefactor, argument) for mass m and exponential e.
    fn split(self, ln_m: f64, ln_e: f64) -> (f64, f64) {
        match self {
            KappaKind::Kappa => (-ln_m, ln_e - ln_m),
            KappaKind::Kappa2 => (ln_m, ln_e + ln_m),
        }
    }

    /// Region where the transform's theory applies.
    pub fn in_region(self, s: f64, z: f64, params: &ModelParams) -> bool {
        let b = params.b();
        match self {
            KappaKind::Kappa => s > 0.0 && z > 2.0 * b + 2.0,
            KappaKind::Kappa2 => s > 0.0 && z > 0.0 && z < 2.0 * (params.q() - b),
        }
    }
}

/// How a κ value was computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KappaMode {
    MonteCarlo,
    DegenerateQuadrature,
}

/// One evaluation of κ or κ₂.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct KappaPoint {
    pub kind: KappaKind,
    pub s: f64,
    pub z: f64,
    pub value: f64,
    pub std_error: f64,
    pub mode: KappaMode,
    /// The top 0.1% of samples carry more than 20% of the mean.
    pub tail_flag: bool,
    pub in_region: bool,
}

/// Per-sample κ or κ₂ integrands with exponentials from `stream_key`.
pub fn kappa_samples(bank: &SampleBank, kind: KappaKind, s: f64, z: f64, stream_key: u64) -> Result<Vec<f64>> {
    check_unit_bank(bank)?;
    let alpha = kind.alpha(z, bank.params.b());
    let exps = exponentials(stream_key, bank.n);
    Ok(bank
        .masses
        .iter()
        .zip(&exps)
        .map(|(m, e)| {
            let (lp, w) = kind.split(m.ln(), e.ln());
            (lp + alpha * w - 0.25 * s * w * w).exp()
        })
        .collect())
}

fn tail_flag(values: &[f64]) -> bool {
    let mut v = values.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    let k = (values.len() as f64 * 1e-3).ceil() as usize;
    let total: f64 = v.iter().sum();
    v[..k].iter().sum::<f64>() > 0.2 * total
}

fn kappa_point(bank: &SampleBank, kind: KappaKind, s: f64, z: f64, stream_key: u64) -> Result<KappaPoint> {
    let v = kappa_samples(bank, kind, s, z, stream_key)?;
    let (m, se) = mean_se(&v);
    Ok(KappaPoint {
        kind,
        s,
        z,
        value: m,
        std_error: se,
        mode: KappaMode::MonteCarlo,
        tail_flag: tail_flag(&v),
        in_region: kind.in_region(s, z, &bank.params),
    })
}

/// Monte Carlo κ(s, z); requires s > 0 and z > 2b + 2.
pub fn kappa_estimate(bank: &SampleBank, s: f64, z: f64, stream_key: u64) -> Result<KappaPoint> {
    let b = bank.params.b();
    if !(s > 0.0) || !(z > 2.0 * b + 2.0) {
        return Err(invalid(format!("κ needs s > 0 and z > 2b + 2 = {}, got ({s}, {z})", 2.0 * b + 2.0)));
    }
    kappa_point(bank, KappaKind::Kappa, s, z, stream_key)
}

/// Monte Carlo κ₂(s, z); evaluated for any z > 0, with `in_region` marking
/// z < 2(q − b).
pub fn kappa2_estimate(bank: &SampleBank, s: f64, z: f64, stream_key: u64) -> Result<KappaPoint> {
    if !(s > 0.0) || !(z > 0.0) {
        return Err(invalid(format!("κ₂ needs s > 0 and z > 0, got ({s}, {z})")));
    }
    kappa_point(bank, KappaKind::Kappa2, s, z, stream_key)
}

/// Q_r(x) via the scaling sampler against C(r)e^{−ax² + bx}κ(4a, 4ax).
pub fn representation_check(bank: &SampleBank, r: f64, x: f64, stream_key: u64, gate: f64) -> Result<IdentityCheck> {
    let c = constants(&bank.params, r)?;
    let mr = sample_mr_scaled(bank, r, stream_key)?;
    let lhs = laplace_samples(&mr, x);
    let pre = c.cr * (-c.a * x * x + c.b * x).exp();
    let rhs: Vec<f64> =
        kappa_samples(bank, KappaKind::Kappa, 4.0 * c.a, 4.0 * c.a * x, stream_key)?.into_iter().map(|k| pre * k).collect();
    Ok(IdentityCheck::from_samples("kappa-representation", x, &lhs, &rhs, gate))
}

/// E e^{−eˣ/M_r} via the scaling sampler against C(r)e^{−ax² − bx}κ₂(4a, 4ax).
pub fn inverse_representation_check(bank: &SampleBank, r: f64, x: f64, stream_key: u64, gate: f64) -> Result<IdentityCheck> {
    if !(x > 0.0) {
        return Err(invalid("inverse transform identity needs x > 0"));
    }
    let c = constants(&bank.params, r)?;
    let mr = sample_mr_scaled(bank, r, stream_key)?;
    let t = x.exp();
    let lhs: Vec<f64> = mr.iter().map(|m| (-t / m).exp()).collect();
    let pre = c.cr * (-c.a * x * x - c.b * x).exp();
    let rhs: Vec<f64> =
        kappa_samples(bank, KappaKind::Kappa2, 4.0 * c.a, 4.0 * c.a * x, stream_key)?.into_iter().map(|k| pre * k).collect();
    Ok(IdentityCheck::from_samples("inverse-representation", x, &lhs, &rhs, gate))
}

/// Value and partial derivatives of κ or κ₂ at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct KappaDerivatives {
    pub s: f64,
    pub z: f64,
    pub value: f64,
    pub ds: f64,
    pub dz: f64,
    pub dss: f64,
    pub dzz: f64,
    /// ∂ₛκ + ∂_zκ − κ/4.
    pub drift: f64,
    /// Standard errors in the same order (zero for quadrature).
    pub std_errors: [f64; 6],
}

/// Per-integrand weights: with g the integrand and w its argument,
/// ∂ₛg = −w²g/4, ∂_zg = wg/2, ∂ₛ²g = w⁴g/16, ∂_z²g = w²g/4.
fn derivative_terms(g: f64, w: f64) -> [f64; 6] {
    let w2 = w * w;
    [g, -0.25 * w2 * g, 0.5 * w * g, w2 * w2 * g / 16.0, 0.25 * w2 * g, (0.5 * w - 0.25 * w2 - 0.25) * g]
}

fn assemble(s: f64, z: f64, v: [f64; 6], se: [f64; 6]) -> KappaDerivatives {
    KappaDerivatives { s, z, value: v[0], ds: v[1], dz: v[2], dss: v[3], dzz: v[4], drift: v[5], std_errors: se }
}

/// Monte Carlo derivatives from the differentiated integrand, sharing the
/// exponentials of [`kappa_samples`] for the same key.
pub fn kappa_derivatives(bank: &SampleBank, kind: KappaKind, s: f64, z: f64, stream_key: u64) -> Result<KappaDerivatives> {
    check_unit_bank(bank)?;
    let alpha = kind.alpha(z, bank.params.b());
    let exps = exponentials(stream_key, bank.n);
    let terms: Vec<[f64; 6]> = bank
        .masses
        .iter()
        .zip(&exps)
        .map(|(m, e)| {
            let (lp, w) = kind.split(m.ln(), e.ln());
            derivative_terms((lp + alpha * w - 0.25 * s * w * w).exp(), w)
        })
        .collect();
    let mut v = [0.0; 6];
    let mut se = [0.0; 6];
    for k in 0..6 {
        let col: Vec<f64> = terms.iter().map(|t| t[k]).collect();
        (v[k], se[k]) = mean_se(&col);
    }
    Ok(assemble(s, z, v, se))
}

/// κ or κ₂ for the degenerate law M₁ ≡ m, by composite Gauss–Legendre in
/// u = ln T₁. The nodes are fixed at construction, so nearby (s, z)
/// evaluations differ only through the integrand and finite differences
/// see no quadrature noise.
#[derive(Debug, Clone)]
pub struct DegenerateKappa {
    pub kind: KappaKind,
    pub b: f64,
    pub m: f64,
    nodes: Vec<(f64, f64)>,
    /// Log-scale reference subtracted inside the sum.
    reference: f64,
}

impl DegenerateKappa {
    /// Builds nodes accurate to relative `tol` around (s, z).
    pub fn new(kind: KappaKind, b: f64, m: f64, s: f64, z: f64, tol: f64) -> Result<Self> {
        if !(m > 0.0) || !(s >= 0.0) || !(tol > 0.0) {
            return Err(invalid(format!("degenerate κ needs m > 0, s ≥ 0, tol > 0; got m={m}, s={s}, tol={tol}")));
        }
        let alpha = kind.alpha(z, b);
        if s == 0.0 && alpha + 1.0 <= 0.0 {
            return Err(invalid("integrand not integrable at s = 0 for this z"));
        }
        let (lp, sh) = kind.split(m.ln(), 0.0);
        let expo = |u: f64| {
            let w = u + sh;
            lp + alpha * w - 0.25 * s * w * w + u - u.exp()
        };
        let slope = |u: f64| alpha - 0.5 * s * (u + sh) + 1.0 - u.exp();
        // Concave exponent: bracket and bisect the stationary point.
        let (mut lo, mut hi) = (-1.0f64, 1.0f64);
        while slope(lo) <= 0.0 {
            lo = 2.0 * lo - 1.0;
        }
        while slope(hi) >= 0.0 {
            hi = 2.0 * hi + 1.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if slope(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mode = 0.5 * (lo + hi);
        let top = expo(mode);
        const DROP: f64 = 80.0;
        let reach = |dir: f64| {
            let mut k = 1.0;
            while expo(mode + dir * k) - top > -DROP {
                k *= 1.5;
                if k > 1e7 {
                    break;
                }
            }
            mode + dir * k
        };
        let (a, c) = (reach(-1.0), reach(1.0));
        let curvature = 0.5 * s + mode.exp();
        let mut panels = (((c - a) * curvature.sqrt().max(1.0)).ceil() as usize).max(8);
        let rule = gl20();
        let build = |panels: usize| -> Vec<(f64, f64)> {
            let width = (c - a) / panels as f64;
            (0..panels).flat_map(|p| rule.mapped(a + p as f64 * width, a + (p + 1) as f64 * width).collect::<Vec<_>>()).collect()
        };
        let sum = |nodes: &[(f64, f64)]| nodes.iter().map(|(u, w)| w * (expo(*u) - top).exp()).sum::<f64>();
        let mut nodes = build(panels);
        let mut value = sum(&nodes);
        loop {
            let finer = build(2 * panels);
            let v2 = sum(&finer);
            let converged = (v2 - value).abs() <= tol * v2;
            nodes = finer;
            value = v2;
            panels *= 2;
            if converged {
                break;
            }
            if panels > 1 << 16 {
                return Err(GmcError::Quadrature { estimate: value, error: (v2 - value).abs(), tol });
            }
        }
        Ok(Self { kind, b, m, nodes, reference: top })
    }

    fn exponent(&self, u: f64, s: f64, z: f64) -> (f64, f64) {
        let (lp, sh) = self.kind.split(self.m.ln(), 0.0);
        let w = u + sh;
        (lp + self.kind.alpha(z, self.b) * w - 0.25 * s * w * w + u - u.exp(), w)
    }

    pub fn eval(&self, s: f64, z: f64) -> f64 {
        self.nodes.iter().map(|(u, w)| w * (self.exponent(*u, s, z).0 - self.reference).exp()).sum::<f64>() * self.reference.exp()
    }

    /// Derivatives by differentiating under the integral on the same nodes.
    pub fn derivatives(&self, s: f64, z: f64) -> KappaDerivatives {
        let mut v = [0.0; 6];
        for (u, wt) in &self.nodes {
            let (e, w) = self.exponent(*u, s, z);
            let t = derivative_terms(wt * (e - self.reference).exp(), w);
            for k in 0..6 {
                v[k] += t[k];
            }
        }
        let scale = self.reference.exp();
        assemble(s, z, v.map(|x| x * scale), [0.0; 6])
    }
}

fn degenerate_point(kind: KappaKind, s: f64, z: f64, b: f64, m: f64, tol: f64, region: bool) -> Result<KappaPoint> {
    let dk = DegenerateKappa::new(kind, b, m, s, z, tol)?;
    Ok(KappaPoint {
        kind,
        s,
        z,
        value: dk.eval(s, z),
        std_error: 0.0,
        mode: KappaMode::DegenerateQuadrature,
        tail_flag: false,
        in_region: region,
    })
}

/// κ(s, z) for M₁ ≡ m to relative accuracy `tol`; s ≥ 0, z > 2b + 2.
pub fn kappa_degenerate(s: f64, z: f64, b: f64, m: f64, tol: f64) -> Result<KappaPoint> {
    if !(z > 2.0 * b + 2.0 - 1e-12) {
        return Err(invalid(format!("κ needs z > 2b + 2 = {}, got {z}", 2.0 * b + 2.0)));
    }
    degenerate_point(KappaKind::Kappa, s, z, b, m, tol, true)
}

/// κ₂(s, z) for M₁ ≡ m to relative accuracy `tol`; s ≥ 0, z > 0.
pub fn kappa2_degenerate(s: f64, z: f64, b: f64, m: f64, tol: f64) -> Result<KappaPoint> {
    if !(z > 0.0) {
        return Err(invalid(format!("κ₂ needs z > 0, got {z}")));
    }
    degenerate_point(KappaKind::Kappa2, s, z, b, m, tol, true)
}

/// Central-difference heat residual ∂ₛκ + ∂_z²κ at steps h and h/2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct HeatResidual {
    pub s: f64,
    pub z: f64,
    pub h: f64,
    pub value: f64,
    pub residual: f64,
    pub residual_half_step: f64,
    /// |residual| / value.
    pub relative: f64,
}

/// ∂ₛκ + ∂_z²κ from the 5-point stencil with step `h` (and `h/2`).
pub fn heat_residual<F>(kappa: F, s: f64, z: f64, h: f64) -> Result<HeatResidual>
where
    F: Fn(f64, f64) -> Result<f64>,
{
    if !(h > 0.0) || s - h < 0.0 {
        return Err(invalid(format!("stencil at s = {s}, h = {h} leaves s ≥ 0")));
    }
    let value = kappa(s, z)?;
    let resid = |h: f64| -> Result<f64> {
        let ds = (kappa(s + h, z)? - kappa(s - h, z)?) / (2.0 * h);
        let dzz = (kappa(s, z + h)? - 2.0 * value + kappa(s, z - h)?) / (h * h);
        Ok(ds + dzz)
    };
    let residual = resid(h)?;
    Ok(HeatResidual { s, z, h, value, residual, residual_half_step: resid(0.5 * h)?, relative: residual.abs() / value.abs() })
}

/// ĉ(r) = P(|ln M₁| ≤ b/(4a))·(e^{−e^{−b/(4a)}} − e^{−e^{b/(4a)}}) from the
/// bank's empirical law, with the empirical probability.
pub fn lowar_c_hat(bank: &SampleBank, r: f64) -> Result<(f64, f64)> {
    check_unit_bank(bank)?;
    let c = constants(&bank.params, r)?;
    let half = c.b / (4.0 * c.a);
    let hits = bank.masses.iter().filter(|m| m.ln().abs() <= half).count();
    if hits == 0 {
        return Err(GmcError::InsufficientSamples(format!("no mass with |ln M₁| ≤ {half}; bank too small")));
    }
    let prob = hits as f64 / bank.n as f64;
    Ok((prob * ((-(-half).exp()).exp() - (-half.exp()).exp()), prob))
}

fn check_lowar_domain(c: &GmcConstants, x: f64) -> Result<()> {
    if x > c.b / (2.0 * c.a) {
        Ok(())
    } else {
        Err(invalid(format!("lower bound needs x > b/(2a) = {}", c.b / (2.0 * c.a))))
    }
}

/// ln of the stated lower bound C(r)ĉ(r)e^{−ax² + b²/a}.
pub fn ln_lowar_bound(bank: &SampleBank, r: f64, x: f64) -> Result<f64> {
    let c = constants(&bank.params, r)?;
    check_lowar_domain(&c, x)?;
    let (c_hat, _) = lowar_c_hat(bank, r)?;
    Ok(c.cr.ln() + c_hat.ln() - c.a * x * x + c.b * c.b / c.a)
}

/// The stated lower bound C(r)ĉ(r)e^{−ax² + b²/a}.
pub fn lowar_bound(bank: &SampleBank, r: f64, x: f64) -> Result<f64> {
    ln_lowar_bound(bank, r, x).map(f64::exp)
}

/// ln of the lower bound obtained by keeping every factor of its
/// derivation with δ = b/(2a): C ĉ e^{−ax² + bx − aδ² − (δ/2)|2ax − 1 − b|
/// − (δ/2)(2ax − b)}.
pub fn ln_lowar_bound_corrected(bank: &SampleBank, r: f64, x: f64) -> Result<f64> {
    let c = constants(&bank.params, r)?;
    check_lowar_domain(&c, x)?;
    let (c_hat, _) = lowar_c_hat(bank, r)?;
    let delta = c.b / (2.0 * c.a);
    let t_gap = (2.0 * c.a * x - 1.0 - c.b).abs();
    Ok(c.cr.ln() + c_hat.ln() - c.a * x * x + c.b * x
        - c.a * delta * delta
        - 0.5 * delta * t_gap
        - 0.5 * delta * (2.0 * c.a * x - c.b))
}

/// Quadratic coefficients of the band −ax² − C₁x ≤ ln Q_r(x) ≤
/// −(ac₀/(pa + c₀))x² + C₁x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Oda1Band {
    pub a: f64,
    pub c0: f64,
    pub p: f64,
    pub lower_coef: f64,
    pub upper_coef: f64,
}

impl Oda1Band {
    /// (lower, upper) band for ln Q_r(x) with linear slack `c1`.
    pub fn at(&self, x: f64, c1: f64) -> (f64, f64) {
        (self.lower_coef * x * x - c1 * x, self.upper_coef * x * x + c1 * x)
    }

    /// Smallest C₁ ≥ 0 placing every (x, ln Q) pair inside the band.
    pub fn required_c1(&self, xs: &[f64], ln_q: &[f64]) -> f64 {
        xs.iter()
            .zip(ln_q)
            .map(|(&x, &l)| ((self.lower_coef * x * x - l) / x).max((l - self.upper_coef * x * x) / x))
            .fold(0.0, f64::max)
    }
}

/// Band coefficients for radius r, Laplace exponent c₀ of Q₁ and p > 1.
pub fn oda1_band(params: &ModelParams, r: f64, c0: f64, p: f64) -> Result<Oda1Band> {
    if !(p > 1.0) {
        return Err(invalid(format!("p = {p} must exceed 1")));
    }
    if !(c0 > 0.0) {
        return Err(invalid(format!("c0 = {c0} must be positive")));
    }
    let a = constants(params, r)?.a;
    let upper = if c0.is_infinite() { -a } else { -a * c0 / (p * a + c0) };
    Ok(Oda1Band { a, c0, p, lower_coef: -a, upper_coef: upper })
}

/// Held-out band membership: C₁ is fitted on even-indexed points and the
/// odd-indexed points are tested with `slack` standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Oda1Check {
    pub band: Oda1Band,
    pub c1: f64,
    pub worst_excess_in_se: f64,
    pub pass: bool,
}

pub fn oda1_check(band: &Oda1Band, xs: &[f64], ln_q: &[f64], ln_se: &[f64], slack: f64) -> Oda1Check {
    let even = |v: &[f64]| v.iter().step_by(2).copied().collect::<Vec<_>>();
    let c1 = band.required_c1(&even(xs), &even(ln_q));
    let mut worst = f64::NEG_INFINITY;
    for i in (1..xs.len()).step_by(2) {
        let (lo, hi) = band.at(xs[i], c1);
        let excess = (lo - ln_q[i]).max(ln_q[i] - hi) / ln_se[i].max(1e-300);
        worst = worst.max(excess);
    }
    Oda1Check { band: *band, c1, worst_excess_in_se: worst, pass: worst <= slack }
}

/// A nonnegative law with computable distribution function and Laplace
/// transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum SyntheticLaw {
    /// e^{σξ}, ξ standard normal.
    Lognormal { sigma: f64 },
    /// Point mass at `value`.
    Degenerate { value: f64 },
}

impl SyntheticLaw {
    /// ln P(ξ ≤ ε) (−∞ when zero).
    pub fn ln_cdf(&self, eps: f64) -> f64 {
        match *self {
            SyntheticLaw::Lognormal { sigma } => ln_normal_cdf(eps.ln() / sigma),
            SyntheticLaw::Degenerate { value } => {
                if eps >= value {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    /// ln E e^{−tξ}.
    pub fn ln_laplace(&self, t: f64) -> f64 {
        match *self {
            SyntheticLaw::Lognormal { sigma } => ln_psi(sigma, t.ln()).0,
            SyntheticLaw::Degenerate { value } => -t * value,
        }
    }
}

/// Constants (c, C₁) of a one-sided distributional hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TailConstants {
    pub c: f64,
    pub c1: f64,
}

/// Grid of ln ε used to certify the hypotheses: ln ε₀ down to ln ε₀ − 60.
fn ln_eps_grid(eps0: f64) -> impl Iterator<Item = f64> {
    let top = eps0.ln();
    (0..=6000).map(move |k| top - 0.01 * k as f64)
}

/// Smallest C₁ with P(ξ ≤ ε) ≤ C₁e^{−c(ln ε)²} on the certification grid.
pub fn fit_upper_c1(law: &SyntheticLaw, c: f64, eps0: f64) -> f64 {
    ln_eps_grid(eps0).map(|le| law.ln_cdf(le.exp()) + c * le * le).fold(f64::NEG_INFINITY, f64::max).exp()
}

/// Largest C₁ with P(ξ ≤ ε) ≥ C₁e^{−c(ln ε)²} on the certification grid.
pub fn fit_lower_c1(law: &SyntheticLaw, c: f64, eps0: f64) -> f64 {
    ln_eps_grid(eps0).map(|le| law.ln_cdf(le.exp()) + c * le * le).fold(f64::INFINITY, f64::min).exp()
}

/// One t of the transfer report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TransferRow {
    pub t: f64,
    pub kappa: f64,
    pub ln_laplace: f64,
    /// (ln t)^{2+κ} ≤ ε₀t.
    pub upper_applicable: bool,
    pub ln_upper_bound: f64,
    pub upper_holds: bool,
    pub ln_lower_bound: f64,
    pub lower_holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TransferReport {
    pub law: SyntheticLaw,
    pub eps0: f64,
    pub upper: TailConstants,
    pub lower: Option<TailConstants>,
    pub upper_hypothesis_holds: bool,
    pub lower_hypothesis_holds: bool,
    pub rows: Vec<TransferRow>,
    /// Each term of the upper bound is monotone in κ where ln t ≥ (2+κ)ln ln t.
    pub kappa_monotone: bool,
    pub pass: bool,
}

fn ln_add(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        m
    } else {
        m + ((a - m).exp() + (b - m).exp()).ln()
    }
}

fn ln_upper_terms(t: f64, kappa: f64, k: &TailConstants) -> (f64, f64) {
    let lt = t.ln();
    let arg = lt - (2.0 + kappa) * lt.ln();
    (k.c1.ln() - k.c * arg * arg, -lt.powf(2.0 + kappa))
}

/// Checks both transfer directions between small-ball and Laplace behaviour
/// for an exactly known law at the given t values and κ parameters.
pub fn laplace_transfer_check(
    law: &SyntheticLaw,
    upper: TailConstants,
    lower: Option<TailConstants>,
    eps0: f64,
    kappas: &[f64],
    ts: &[f64],
) -> TransferReport {
    let tol = 1e-12;
    let hyp = |k: &TailConstants, sign: f64| {
        ln_eps_grid(eps0).all(|le| sign * (law.ln_cdf(le.exp()) - (k.c1.ln() - k.c * le * le)) <= tol)
    };
    let upper_ok = hyp(&upper, 1.0);
    let lower_ok = lower.as_ref().is_none_or(|k| hyp(k, -1.0));
    let mut rows = Vec::new();
    for &kappa in kappas {
        for &t in ts {
            let ll = law.ln_laplace(t);
            let lt = t.ln();
            let applicable = lt.powf(2.0 + kappa) <= eps0 * t && t > std::f64::consts::E;
            let (u1, u2) = ln_upper_terms(t, kappa, &upper);
            let ub = ln_add(u1, u2);
            let lb = match &lower {
                Some(k) if t >= 1.0f64.max(1.0 / eps0) => {
                    let arg = lt + std::f64::consts::LN_2;
                    (0.5 * k.c1).ln() - 1.0 - k.c * arg * arg
                }
                _ => f64::NEG_INFINITY,
            };
            rows.push(TransferRow {
                t,
                kappa,
                ln_laplace: ll,
                upper_applicable: applicable,
                ln_upper_bound: ub,
                upper_holds: !applicable || ll <= ub + tol,
                ln_lower_bound: lb,
                lower_holds: ll >= lb - tol,
            });
        }
    }
    let mut sorted = kappas.to_vec();
    sorted.sort_by(f64::total_cmp);
    let kappa_monotone = ts.iter().all(|&t| {
        let lt = t.ln();
        sorted.windows(2).all(|w| {
            if lt < (2.0 + w[1]) * lt.ln() {
                return true;
            }
            let (a1, a2) = ln_upper_terms(t, w[0], &upper);
            let (b1, b2) = ln_upper_terms(t, w[1], &upper);
            b1 >= a1 - tol && b2 <= a2 + tol
        })
    });
    let pass = upper_ok && lower_ok && kappa_monotone && rows.iter().all(|r| r.upper_holds && r.lower_holds);
    TransferReport {
        law: *law,
        eps0,
        upper,
        lower,
        upper_hypothesis_holds: upper_ok,
        lower_hypothesis_holds: lower_ok,
        rows,
        kappa_monotone,
        pass,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmc::create_bank;
    use crate::quad::integrate;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use statrs::function::gamma::{gamma, ln_gamma};

    fn lognormal_bank(sigma: f64, n: usize, d: usize, gamma: f64) -> SampleBank {
        let mut b = SampleBank::synthetic_lognormal(sigma, n, 11);
        b.params = ModelParams::new(d, gamma, 1.0).unwrap();
        b
    }

    /// Brute-force ln E exp(−e^{y+σZ}) on a wide fixed interval.
    fn psi_oracle(sigma: f64, y: f64) -> f64 {
        let f = |z: f64| (-0.5 * z * z - (y + sigma * z).exp()).exp() / (2.0 * std::f64::consts::PI).sqrt();
        integrate(f, -40.0, 40.0, 1e-300, 1e-13).unwrap().value.ln()
    }

    #[test]
    fn ln_psi_matches_oracle_and_limits() {
        for &(s, y) in &[(1.0, 0.0), (0.5, 2.0), (0.83, -3.0), (1.2, 5.0), (0.3, 1.0)] {
            assert_abs_diff_eq!(ln_psi(s, y).0, psi_oracle(s, y), epsilon = 1e-10);
        }
        // Deep tail against the brute-force rule on a shifted window.
        let (s, y) = (1.0, 20.0);
        let f = |z: f64| (-0.5 * z * z - (y + s * z).exp()).exp();
        let brute = integrate(f, -40.0, 0.0, 1e-300, 1e-13).unwrap().value.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert_abs_diff_eq!(ln_psi(s, y).0, brute, epsilon = 1e-8);
        // Derivative by central difference.
        let h = 1e-5;
        let fd = (ln_psi(0.7, 1.0 + h).0 - ln_psi(0.7, 1.0 - h).0) / (2.0 * h);
        assert_abs_diff_eq!(ln_psi(0.7, 1.0).1, fd, epsilon = 1e-7);
        // σ → 0 is exp(−e^y); y → −∞ is 1.
        assert_abs_diff_eq!(ln_psi(0.0, 0.3).0, -(0.3f64.exp()), epsilon = 1e-15);
        assert!(ln_psi(1.0, -50.0).0.abs() < 1e-14);
    }

    #[test]
    fn psi_table_interpolates() {
        let t = LnPsiTable::new(0.9, -10.0, 60.0, 0.01);
        for k in 0..200 {
            let y = -9.7 + 0.3487 * k as f64;
            assert_abs_diff_eq!(t.eval(y), ln_psi(0.9, y).0, epsilon = 1e-9 * (1.0 + y.abs()).powi(2));
        }
        assert_eq!(t.eval(100.0), ln_psi(0.9, 100.0).0);
    }

    #[test]
    fn q_estimate_bounds() {
        let bank = lognormal_bank(0.7, 2000, 1, 1.0);
        let e = estimate_q(&bank, 1.0, -40.0, 1).unwrap();
        assert_abs_diff_eq!(e.estimate, 1.0, epsilon = 1e-12);
        let max = bank.masses.iter().copied().fold(0.0, f64::max);
        for x in [-1.0, 0.0, 1.0, 3.0] {
            let e = estimate_q(&bank, 1.0, x, 1).unwrap();
            assert!(e.estimate <= 1.0 && e.estimate >= (-x.exp() * max).exp());
            assert_eq!(e.method, LaplaceMethod::DirectBank);
        }
        assert_eq!(estimate_q(&bank, 0.5, 1.0, 1).unwrap().method, LaplaceMethod::ScaledBank);
    }

    #[test]
    fn conditional_matches_scaled_and_exact() {
        // A lognormal M₁ keeps M_r lognormal, so Q_r is a single Ψ.
        let (s1, g, r) = (0.4, 1.0, 0.5);
        let bank = lognormal_bank(s1, 40_000, 1, g);
        let l = (1.0f64 / r).ln();
        let sig = (s1 * s1 + g * g * l).sqrt();
        let shift = r.ln() - 0.5 * g * g * l;
        let xs = [0.0, 1.0, 2.0, 4.0];
        let cond = estimate_q_conditional(&bank, r, &xs).unwrap();
        for c in &cond {
            let exact = ln_psi(sig, c.x + shift).0;
            assert!((c.ln_estimate - exact).abs() < 5.0 * c.ln_std_error, "{c:?} vs {exact}");
            let s = estimate_q(&bank, r, c.x, 3).unwrap();
            assert!((s.estimate - c.estimate).abs() < 5.0 * s.std_error);
        }
    }

    #[test]
    fn pairing_identity_on_lognormal_bank() {
        let bank = lognormal_bank(0.5, 50_000, 1, 1.0);
        for t in [3.0, 10.0, 30.0] {
            let chk = lemma_l_check(&bank, 0.5, t, 4, 3.0).unwrap();
            assert!(chk.pass, "{chk:?}");
            let is = lemma_l_rhs_importance(&bank, 0.5, t, 4).unwrap();
            assert!((is.estimate - chk.rhs).abs() < 3.0 * (is.std_error.powi(2) + chk.rhs_se.powi(2)).sqrt());
        }
        assert!(lemma_l_rhs(&bank, 0.5, 1.0, 1).is_err());
    }

    #[test]
    fn pairing_prefactor_exponent() {
        let p = ModelParams::new(1, 1.0, 0.5).unwrap();
        assert_abs_diff_eq!(constants(&p, (-1.0f64).exp()).unwrap().r_exponent, 1.125, epsilon = 1e-15);
    }

    #[test]
    fn representations_on_gmc_bank() {
        let p = ModelParams::new(1, 1.0, 0.5).unwrap();
        let bank = create_bank(&p, 1.0, 32, 20_000, 9).unwrap();
        let c = constants(&p, 0.5).unwrap();
        let x0 = (c.b + 1.0) / (2.0 * c.a);
        for x in [x0 + 0.1, x0 + 1.0] {
            assert!(representation_check(&bank, 0.5, x, 2, 3.0).unwrap().pass);
        }
        assert!(kappa_estimate(&bank, 1.0, 2.0 * c.b + 1.0, 1).is_err());
        let p12 = ModelParams::new(1, 1.2, 0.5).unwrap();
        let bank = create_bank(&p12, 1.0, 32, 20_000, 9).unwrap();
        for x in [1.0, 2.0] {
            assert!(inverse_representation_check(&bank, 0.5, x, 2, 3.0).unwrap().pass);
        }
    }

    /// Independent oracle: 10⁶-node composite Simpson rule in u = ln t.
    fn kappa_simpson(kind: KappaKind, s: f64, z: f64, b: f64, m: f64) -> f64 {
        let (a, c, n) = (-120.0, 8.0, 1_000_000usize);
        let h = (c - a) / n as f64;
        let alpha = kind.alpha(z, b);
        let f = |u: f64| {
            let (lp, w) = match kind {
                KappaKind::Kappa => (-m.ln(), u - m.ln()),
                KappaKind::Kappa2 => (m.ln(), u + m.ln()),
            };
            (lp + alpha * w - 0.25 * s * w * w + u - u.exp()).exp()
        };
        let mut acc = f(a) + f(c);
        for k in 1..n {
            acc += if k % 2 == 1 { 4.0 } else { 2.0 } * f(a + k as f64 * h);
        }
        acc * h / 3.0
    }

    #[test]
    fn degenerate_kappa_values() {
        let b = 2.5;
        let k = kappa_degenerate(0.0, 2.0 * b + 2.0, b, 1.0, 1e-12).unwrap();
        assert_abs_diff_eq!(k.value, 1.0, epsilon = 1e-11);
        let k = kappa_degenerate(0.0, 2.0 * b + 6.0, b, 1.0, 1e-12).unwrap();
        assert_abs_diff_eq!(k.value, 2.0, epsilon = 1e-11);
        let k = kappa_degenerate(1.0, 2.0 * b + 4.0, b, 1.0, 1e-12).unwrap();
        let oracle = kappa_simpson(KappaKind::Kappa, 1.0, 2.0 * b + 4.0, b, 1.0);
        assert_abs_diff_eq!(k.value, oracle, epsilon = 1e-10 * oracle);
        // s = 0 closed forms for m ≠ 1.
        let (m, z) = (0.6, 9.5);
        let k = kappa_degenerate(0.0, z, b, m, 1e-12).unwrap();
        let exact = (ln_gamma(0.5 * z - b) - (0.5 * z - b) * m.ln()).exp();
        assert_abs_diff_eq!(k.value, exact, epsilon = 1e-10 * exact);
        let k2 = kappa2_degenerate(0.0, 1.5, b, m, 1e-12).unwrap();
        let exact2 = gamma(0.75 + b) * m.powf(0.75 + b);
        assert_abs_diff_eq!(k2.value, exact2, epsilon = 1e-10 * exact2);
        let k2 = kappa2_degenerate(0.8, 1.5, b, m, 1e-12).unwrap();
        let o2 = kappa_simpson(KappaKind::Kappa2, 0.8, 1.5, b, m);
        assert_abs_diff_eq!(k2.value, o2, epsilon = 1e-10 * o2);
    }

    #[test]
    fn degenerate_heat_residual_and_properties() {
        let b = 2.5;
        let dk = DegenerateKappa::new(KappaKind::Kappa, b, 1.0, 1.0, 9.0, 1e-13).unwrap();
        let hr = heat_residual(|s, z| Ok(dk.eval(s, z)), 1.0, 9.0, 1e-3).unwrap();
        assert!(hr.relative <= 1e-5, "{hr:?}");
        let d = dk.derivatives(1.0, 9.0);
        assert!(d.ds < 0.0 && d.dss > 0.0 && d.dzz > 0.0 && d.drift <= 0.0);
        assert_abs_diff_eq!(d.ds + d.dzz, 0.0, epsilon = 1e-12 * d.value);
        assert_abs_diff_eq!(d.value, dk.eval(1.0, 9.0), epsilon = 1e-14 * d.value);
        let dk2 = DegenerateKappa::new(KappaKind::Kappa2, b, 1.3, 0.7, 1.0, 1e-13).unwrap();
        let hr = heat_residual(|s, z| Ok(dk2.eval(s, z)), 0.7, 1.0, 1e-3).unwrap();
        assert!(hr.relative <= 1e-5, "{hr:?}");
        assert!(heat_residual(|s, z| Ok(dk2.eval(s, z)), 0.0, 1.0, 1e-3).is_err());
    }

    #[test]
    fn mc_derivatives_satisfy_drift_inequality() {
        let bank = lognormal_bank(0.5, 5000, 1, 1.0);
        let b = bank.params.b();
        let d = kappa_derivatives(&bank, KappaKind::Kappa, 1.0, 2.0 * b + 4.0, 5).unwrap();
        assert!(d.drift <= 0.0 && d.ds <= 0.0 && d.dzz >= 0.0);
        let k = kappa_estimate(&bank, 1.0, 2.0 * b + 4.0, 5).unwrap();
        assert_eq!(k.value, d.value);
    }

    #[test]
    fn lowar_pieces() {
        let bank = lognormal_bank(0.5, 10_000, 1, 1.0);
        let (c_hat, prob) = lowar_c_hat(&bank, 0.5).unwrap();
        assert!(c_hat > 0.0 && c_hat < 1.0 && prob > 0.0);
        let c = constants(&bank.params, 0.5).unwrap();
        let x = c.b / (2.0 * c.a) + 1.0;
        let l = ln_lowar_bound(&bank, 0.5, x).unwrap();
        assert_abs_diff_eq!(l, c.cr.ln() + c_hat.ln() - c.a * x * x + c.b * c.b / c.a, epsilon = 1e-12);
        assert!(ln_lowar_bound(&bank, 0.5, 0.5 * c.b / (2.0 * c.a)).is_err());
        // The corrected bound has the larger-x form −ax² + (b² + b)/(4a).
        let x = (c.b + 1.0) / (2.0 * c.a) + 2.0;
        let lc = ln_lowar_bound_corrected(&bank, 0.5, x).unwrap();
        let expect = c.cr.ln() + c_hat.ln() - c.a * x * x + (c.b * c.b + c.b) / (4.0 * c.a);
        assert_abs_diff_eq!(lc, expect, epsilon = 1e-12);
        let mut tiny = lognormal_bank(0.5, 1, 1, 1.0);
        tiny.masses[0] = 1e9;
        assert!(matches!(lowar_c_hat(&tiny, 0.5), Err(GmcError::InsufficientSamples(_))));
    }

    #[test]
    fn oda1_coefficients() {
        let p = ModelParams::new(1, 1.0, 0.5).unwrap();
        let r = (-1.0f64).exp();
        let band = oda1_band(&p, r, 0.5, 2.0).unwrap();
        assert_abs_diff_eq!(band.upper_coef, -1.0 / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(band.lower_coef, -0.5, epsilon = 1e-15);
        let big = oda1_band(&p, r, 1e12, 2.0).unwrap();
        assert_abs_diff_eq!(big.upper_coef, -0.5, epsilon = 1e-9);
        let wide = oda1_band(&p, r, 0.5, 1e9).unwrap();
        assert!(wide.upper_coef.abs() < 1e-9);
        assert!(oda1_band(&p, r, 0.5, 1.0).is_err());
    }

    #[test]
    fn transfer_lognormal_and_degenerate() {
        let law = SyntheticLaw::Lognormal { sigma: 1.0 };
        let eps0 = 2.0;
        let up = TailConstants { c: 0.49, c1: fit_upper_c1(&law, 0.49, eps0) };
        let lo = TailConstants { c: 0.51, c1: fit_lower_c1(&law, 0.51, eps0) };
        let ts: Vec<f64> = (0..=30).map(|k| 10f64.powf(1.0 + 0.1 * k as f64)).collect();
        let rep = laplace_transfer_check(&law, up, Some(lo), eps0, &[0.1, 1.0], &ts);
        assert!(rep.pass, "{rep:?}");
        let deg = SyntheticLaw::Degenerate { value: 1.0 };
        let k = TailConstants { c: 5.0, c1: 1.0 };
        let rep = laplace_transfer_check(&deg, k, None, 0.9, &[0.1, 1.0], &ts);
        assert!(rep.upper_hypothesis_holds && rep.pass);
    }

    proptest! {
        #[test]
        fn degenerate_kappa_decreasing_in_s(s1 in 0.05f64..2.0, ds in 0.01f64..2.0, z in 7.5f64..14.0) {
            let b = 2.5;
            let k1 = kappa_degenerate(s1, z, b, 1.0, 1e-10).unwrap().value;
            let k2 = kappa_degenerate(s1 + ds, z, b, 1.0, 1e-10).unwrap().value;
            prop_assert!(k2 <= k1 * (1.0 + 1e-9));
        }
    }
}
