//! Closed-form exponent bounds for the Laplace transform and small deviations
//! of chaos masses on balls.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, GmcError, Result};
use crate::gmc::constants;
use crate::params::ModelParams;
use crate::potential::{spatial_mean_ratio, threshold_t};

/// a(ρ) = 1/(2γ² ln(1/ρ)) for ρ ∈ (0, 1).
fn a_of(gamma: f64, rho: f64) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(GmcError::Degenerate(format!("radius argument {rho} outside (0, 1)")));
    }
    Ok(1.0 / (2.0 * gamma * gamma * (1.0 / rho).ln()))
}

/// (a c̄₁/(a + c̄₁), a): the two-sided estimate of c̄_r.
pub fn cr_sandwich(a: f64, cbar1: f64) -> Result<(f64, f64)> {
    if !(a > 0.0) || !(cbar1 > 0.0) {
        return Err(invalid(format!("sandwich needs positive inputs, got a={a}, cbar1={cbar1}")));
    }
    if cbar1.is_infinite() {
        return Ok((a, a));
    }
    Ok((a * cbar1 / (a + cbar1), a))
}

/// Var(Ω)/(2γ²|B|²(ln T − ln T*)²), an upper bound on c̄₁ for d ≥ 3.
pub fn cbar1_upper(params: &ModelParams, tol: f64) -> Result<f64> {
    if params.d < 3 {
        return Err(invalid("upper bound on c̄₁ needs d ≥ 3"));
    }
    spatial_mean_ratio(params, tol)
}

/// Which lower-bound case produced a value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LowerCase {
    pub case: String,
    pub value: f64,
    /// Optimizing p for the cases with a free parameter.
    pub p_star: Option<f64>,
}

/// Every applicable lower bound on c̄₁ and the best of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Cbar1Lower {
    pub value: f64,
    pub best_case: String,
    pub cases: Vec<LowerCase>,
}

/// sup over p ∈ (0, p_max) of min(f(p), g(p)): 1024-point grid, then two
/// refinement sweeps around the best grid point.
fn sup_min<F: Fn(f64) -> f64, G: Fn(f64) -> f64>(f: F, g: G, p_max: f64) -> (f64, f64) {
    let obj = |p: f64| f(p).min(g(p));
    let (mut lo, mut hi) = (0.0, p_max);
    let mut best = (f64::NEG_INFINITY, 0.0);
    for _ in 0..3 {
        let n = 1024;
        let step = (hi - lo) / n as f64;
        for k in 1..n {
            let p = lo + k as f64 * step;
            let v = obj(p);
            if v > best.0 {
                best = (v, p);
            }
        }
        lo = (best.1 - step).max(0.0);
        hi = (best.1 + step).min(p_max);
    }
    best
}

/// Best lower bound on c̄₁ from the applicable cases:
/// (i) a(1/2 − T/4) for T < 2 and a(1/4) for T ≤ 1;
/// (ii) T > 1: sup_p min((2(1−p)² − 1)a(1/4), p²/(2γ² ln T)), p < 1 − 1/√2;
/// (iii) T ≤ 1: (2d − 1)a((3 − 2√2)/2);
/// (iv) T > 1: sup_p min((2d(1−p)² − 1)a((3 − 2√2)/2), p²/(2γ² ln T)),
/// p < 1 − 1/√(2d).
pub fn cbar1_lower(params: &ModelParams) -> Result<Cbar1Lower> {
    params.validate()?;
    let (g, t, d) = (params.gamma, params.t, params.d as f64);
    let rho3 = (3.0 - 2.0 * 2f64.sqrt()) / 2.0;
    let mut cases = Vec::new();
    if t < 2.0 {
        cases.push(LowerCase { case: "i: a(1/2 - T/4)".into(), value: a_of(g, 0.5 - 0.25 * t)?, p_star: None });
    } else if t == 2.0 {
        return Err(GmcError::Degenerate("T = 2 makes 1/2 − T/4 vanish".into()));
    }
    if t <= 1.0 {
        cases.push(LowerCase { case: "i: a(1/4)".into(), value: a_of(g, 0.25)?, p_star: None });
        cases.push(LowerCase { case: "iii: (2d-1) a((3-2sqrt2)/2)".into(), value: (2.0 * d - 1.0) * a_of(g, rho3)?, p_star: None });
    } else {
        let tail = |p: f64| p * p / (2.0 * g * g * t.ln());
        let a4 = a_of(g, 0.25)?;
        let (v, p) = sup_min(|p| (2.0 * (1.0 - p).powi(2) - 1.0) * a4, tail, 1.0 - 0.5f64.sqrt());
        cases.push(LowerCase { case: "ii: sup_p min((2(1-p)^2-1) a(1/4), p^2/(2g^2 lnT))".into(), value: v, p_star: Some(p) });
        let a3 = a_of(g, rho3)?;
        let (v, p) = sup_min(|p| (2.0 * d * (1.0 - p).powi(2) - 1.0) * a3, tail, 1.0 - 1.0 / (2.0 * d).sqrt());
        cases.push(LowerCase { case: "iv: sup_p min((2d(1-p)^2-1) a(rho), p^2/(2g^2 lnT))".into(), value: v, p_star: Some(p) });
    }
    let best = cases.iter().max_by(|a, b| a.value.total_cmp(&b.value)).cloned().ok_or_else(|| invalid("no applicable case"))?;
    Ok(Cbar1Lower { value: best.value, best_case: best.case, cases })
}

/// Lower bound (4c̄_r − 2a(q² + 1))/(1 − q)² on c̄₁ when c̄_r ≥ a(q² + 1)/2.
pub fn cnqr_transfer(cbar_r: f64, a_r: f64, q: f64) -> Option<f64> {
    if !(q > 0.0 && q < 1.0) {
        return None;
    }
    let slack = cbar_r - 0.5 * a_r * (q * q + 1.0);
    (slack >= 0.0).then(|| (4.0 * cbar_r - 2.0 * a_r * (q * q + 1.0)) / (1.0 - q).powi(2))
}

/// Best transferred bound over q ∈ {0.01, …, 0.99} and its q.
pub fn cnqr_best(cbar_r: f64, a_r: f64) -> Option<(f64, f64)> {
    (1..100)
        .filter_map(|k| {
            let q = k as f64 / 100.0;
            cnqr_transfer(cbar_r, a_r, q).map(|v| (v, q))
        })
        .max_by(|a, b| a.0.total_cmp(&b.0))
}

/// Every bound for one configuration, each with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BoundsReport {
    pub params: ModelParams,
    pub r: f64,
    pub a: f64,
    pub cbar1_lower: f64,
    pub cbar1_lower_detail: Cbar1Lower,
    pub cbar1_upper: Option<f64>,
    pub cbar1_sandwich_input: f64,
    pub cr_lower: f64,
    pub cr_upper: f64,
    pub cnqr_transferred: Option<f64>,
    pub cnqr_q: Option<f64>,
    pub mean0_c: Option<f64>,
    /// False when the lower bound on c̄₁ exceeds the upper one.
    pub consistent: bool,
    pub provenance: Vec<(String, String)>,
}

/// Assembles all bounds at radius r; the sandwich uses `cbar1_input` or,
/// when absent, the best lower bound on c̄₁.
pub fn bounds_report(params: &ModelParams, r: f64, cbar1_input: Option<f64>, tol: f64) -> Result<BoundsReport> {
    let c = constants(params, r)?;
    let lower = cbar1_lower(params)?;
    let upper = if params.d >= 3 { Some(cbar1_upper(params, tol)?) } else { None };
    let mean0_c = if params.d >= 3 && params.t >= threshold_t(params.d)? * (1.0 - 1e-12) { upper } else { None };
    let input = cbar1_input.unwrap_or(lower.value);
    let (cr_lower, cr_upper) = cr_sandwich(c.a, input)?;
    let best = cnqr_best(cr_lower, c.a);
    let consistent = upper.is_none_or(|u| lower.value <= u);
    let mut provenance = vec![
        ("a".to_string(), "1/(2 gamma^2 ln(1/r))".to_string()),
        ("cbar1Lower".to_string(), format!("best lower case: {}", lower.best_case)),
        ("crLower".to_string(), "a cbar1/(a + cbar1)".to_string()),
        ("crUpper".to_string(), "a(r)".to_string()),
    ];
    if upper.is_some() {
        provenance.push(("cbar1Upper".into(), "(ln T - ln T0)/(2 gamma^2 (ln T - ln T*)^2)".into()));
    }
    if best.is_some() {
        provenance.push(("cnqrTransferred".into(), "max over q grid of (4 crLower - 2a(q^2+1))/(1-q)^2".into()));
    }
    Ok(BoundsReport {
        params: *params,
        r,
        a: c.a,
        cbar1_lower: lower.value,
        cbar1_lower_detail: lower,
        cbar1_upper: upper,
        cbar1_sandwich_input: input,
        cr_lower,
        cr_upper,
        cnqr_transferred: best.map(|b| b.0),
        cnqr_q: best.map(|b| b.1),
        mean0_c,
        consistent,
        provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn sandwich_examples() {
        assert_eq!(cr_sandwich(1.0, 1.0).unwrap(), (0.5, 1.0));
        let (l, u) = cr_sandwich(0.36, 0.36).unwrap();
        assert_abs_diff_eq!(l, 0.18, epsilon = 1e-15);
        assert_eq!(u, 0.36);
        let (l, _) = cr_sandwich(0.7, 1e15).unwrap();
        assert_abs_diff_eq!(l, 0.7, epsilon = 1e-12);
        assert!(cr_sandwich(0.0, 1.0).is_err());
        assert!(cr_sandwich(1.0, -1.0).is_err());
    }

    #[test]
    fn lower_bound_examples() {
        let p = ModelParams::new(2, 1.0, 1.0).unwrap();
        let lb = cbar1_lower(&p).unwrap();
        let rho = (3.0 - 2.0 * 2f64.sqrt()) / 2.0;
        let expect = (1.0 / (2.0 * 4f64.ln())).max(3.0 / (2.0 * (1.0 / rho).ln()));
        assert_abs_diff_eq!(lb.value, expect, epsilon = 1e-14);
        let p = ModelParams::new(1, 1.0, 0.5).unwrap();
        let lb = cbar1_lower(&p).unwrap();
        assert!(lb.cases.iter().any(|c| (c.value - 1.0 / (2.0 * (8.0f64 / 3.0).ln())).abs() < 1e-14));
        assert!(cbar1_lower(&ModelParams::new(1, 1.0, 2.0).unwrap()).is_err());
    }

    #[test]
    fn case_ii_optimum_matches_crossing() {
        // For d = 2, T = e the two branches cross where the decreasing
        // branch meets p²/2; the supremum sits at that crossing.
        let p = ModelParams::new(2, 1.0, std::f64::consts::E).unwrap();
        let lb = cbar1_lower(&p).unwrap();
        let ii = lb.cases.iter().find(|c| c.case.starts_with("ii")).unwrap();
        let a4 = 1.0 / (2.0 * 4f64.ln());
        let f = |q: f64| (2.0 * (1.0 - q).powi(2) - 1.0) * a4 - q * q / 2.0;
        let (mut lo, mut hi) = (0.0, 1.0 - 0.5f64.sqrt());
        for _ in 0..100 {
            let m = 0.5 * (lo + hi);
            if f(m) > 0.0 {
                lo = m
            } else {
                hi = m
            }
        }
        assert_abs_diff_eq!(ii.p_star.unwrap(), lo, epsilon = 1e-6);
        assert_abs_diff_eq!(ii.value, lo * lo / 2.0, epsilon = 1e-9);
    }

    #[test]
    fn cnqr_examples() {
        let a = 0.4;
        assert_abs_diff_eq!(cnqr_transfer(a, a, 0.5).unwrap(), 6.0 * a, epsilon = 1e-14);
        assert!(cnqr_transfer(0.5 * a, a, 0.5).is_none());
        assert_abs_diff_eq!(cnqr_transfer(a, a, 1e-9).unwrap(), 2.0 * a, epsilon = 1e-7);
    }

    #[test]
    fn upper_bound_scaling() {
        let t3 = threshold_t(3).unwrap();
        let p = ModelParams::new(3, 1.0, t3).unwrap();
        let u1 = cbar1_upper(&p, 1e-10).unwrap();
        let u2 = cbar1_upper(&p.with_gamma(2.0), 1e-10).unwrap();
        assert_abs_diff_eq!(u2, u1 / 4.0, epsilon = 1e-12 * u1);
        let big = cbar1_upper(&p.with_t(1e6), 1e-10).unwrap();
        let bigger = cbar1_upper(&p.with_t(1e12), 1e-10).unwrap();
        assert!(bigger < big && (bigger * 1e12f64.ln()) / (big * 1e6f64.ln()) > 0.9);
        assert!(cbar1_upper(&ModelParams::new(2, 1.0, 1.0).unwrap(), 1e-10).is_err());
    }

    #[test]
    fn report_examples() {
        let t3 = threshold_t(3).unwrap();
        let rep = bounds_report(&ModelParams::new(3, 1.0, t3).unwrap(), 0.5, None, 1e-10).unwrap();
        assert!(rep.consistent && rep.cbar1_lower <= rep.cbar1_upper.unwrap());
        assert_abs_diff_eq!(rep.cr_upper, 1.0 / (2.0 * 2f64.ln()), epsilon = 1e-15);
        assert!(rep.cr_lower <= rep.cr_upper);
        let rep = bounds_report(&ModelParams::new(1, 1.0, 0.5).unwrap(), 0.5, None, 1e-10).unwrap();
        assert!(rep.cbar1_upper.is_none());
        let rep = bounds_report(&ModelParams::new(2, 1.0, 1.0).unwrap(), (-2.0f64).exp(), None, 1e-10).unwrap();
        assert_abs_diff_eq!(rep.cr_upper, 0.25, epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn lower_bound_decreases_in_gamma(g in 0.2f64..1.3, dg in 0.01f64..0.1, t in 0.1f64..1.9, d in 1usize..5) {
            let p = ModelParams::new(d, g, t).unwrap();
            let q = ModelParams::new(d, g + dg, t).unwrap();
            prop_assert!(cbar1_lower(&q).unwrap().value <= cbar1_lower(&p).unwrap().value + 1e-12);
        }

        #[test]
        fn sandwich_ordered(a in 1e-3f64..10.0, c in 1e-3f64..10.0) {
            let (l, u) = cr_sandwich(a, c).unwrap();
            prop_assert!(l < u);
        }
    }
}
