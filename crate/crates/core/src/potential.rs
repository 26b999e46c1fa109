//! The strictly logarithmic kernel ln(T/|x − y|) on the unit ball:
//! positive-definiteness thresholds, logarithmic potentials of the uniform
//! measure, the variance of the spatial mean, and a discretized
//! positive-definiteness test on cube-averaged densities.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{invalid, GmcError, Result};
use crate::grid::{build_grid_with_cap, DEFAULT_CELL_CAP};
use crate::params::ModelParams;
use crate::quad::{integrate, GaussLegendre};

/// Threshold T(d) above which ln(T/|x − y|) is positive definite on B(0,1).
pub fn threshold_t(d: usize) -> Result<f64> {
    match d {
        0 => Err(invalid("dimension must be at least 1")),
        1 => Ok(0.5),
        2 => Ok(1.0),
        _ if d.is_multiple_of(2) => Ok((1..d / 2).map(|k| 1.0 / (d - 2 * k) as f64).sum::<f64>().exp()),
        _ => Ok(0.5 * (1..=(d - 1) / 2).map(|k| 1.0 / (d - 2 * k) as f64).sum::<f64>().exp()),
    }
}

/// Volume |B_d| of the unit ball.
pub fn unit_ball_volume(d: usize) -> f64 {
    PI.powf(d as f64 / 2.0) / gamma(d as f64 / 2.0 + 1.0)
}

/// Surface area of the unit sphere S^{d−1} ⊂ R^d.
pub fn unit_sphere_area(d: usize) -> f64 {
    2.0 * PI.powf(d as f64 / 2.0) / gamma(d as f64 / 2.0)
}

/// ∫₀^ψ sin^n θ dθ by the standard reduction recurrence.
pub fn sin_power_integral(n: usize, psi: f64) -> f64 {
    let (s, c) = psi.sin_cos();
    let half = (0.5 * psi).sin();
    let mut prev = psi; // I_0
    let mut cur = 2.0 * half * half; // I_1 = 1 − cos ψ
    if n == 0 {
        return prev;
    }
    for k in 2..=n {
        let kf = k as f64;
        let next = -s.powi(k as i32 - 1) * c / kf + (kf - 1.0) / kf * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// Area of the part of the sphere of radius ρ about a point at distance
/// `s` from the origin that lies inside B(0,1), for d ≥ 2.
fn sphere_in_ball(d: usize, s: f64, rho: f64) -> f64 {
    let cos_max = if s == 0.0 {
        if rho < 1.0 { -1.0 } else { 1.0 }
    } else {
        ((rho * rho + s * s - 1.0) / (2.0 * s * rho)).clamp(-1.0, 1.0)
    };
    unit_sphere_area(d - 1) * rho.powi(d as i32 - 1) * sin_power_integral(d - 2, cos_max.acos())
}

/// Area A_d(φ(r)) of the hyperspherical cap cut from B(0,1) by the sphere of
/// radius r centered at a boundary point, φ(r) = arccos(r/2).
pub fn cap_area(d: usize, r: f64) -> Result<f64> {
    if d < 2 {
        return Err(invalid("cap_area needs d ≥ 2"));
    }
    if !(0.0..=2.0).contains(&r) {
        return Err(invalid(format!("radius {r} outside [0, 2]")));
    }
    let phi = (r / 2.0).acos();
    Ok(match d {
        3 => 2.0 * PI * (r * r - r.powi(3) / 2.0),
        4 => 2.0 * PI * r.powi(3) * (phi - (r / 2.0) * (1.0 - r * r / 4.0).sqrt()),
        5 => 2.0 * PI * PI * r.powi(4) * (2.0 / 3.0 - r / 2.0 + r.powi(3) / 24.0),
        _ => unit_sphere_area(d - 1) * r.powi(d as i32 - 1) * sin_power_integral(d - 2, phi),
    })
}

/// Logarithmic potential (1/|B|)∫_B ln|x − y| dy of the uniform measure on
/// the unit ball, as a function of s = |x| ≤ 1.
pub fn log_potential_radial(d: usize, s: f64, tol: f64) -> Result<f64> {
    if d < 1 {
        return Err(invalid("dimension must be at least 1"));
    }
    if !(0.0..=1.0).contains(&s) {
        return Err(invalid(format!("|x| = {s} outside [0, 1]")));
    }
    if !(tol > 0.0) {
        return Err(invalid("tol must be positive"));
    }
    if d == 1 {
        let f = |u: f64| if u > 0.0 { u * (u.ln() - 1.0) } else { 0.0 };
        return Ok(0.5 * (f(1.0 + s) + f(1.0 - s)));
    }
    let df = d as f64;
    // Full spheres for ρ ≤ 1 − s in closed form.
    let a = 1.0 - s;
    let inner = if a > 0.0 { unit_sphere_area(d) * a.powi(d as i32) * (a.ln() / df - 1.0 / (df * df)) } else { 0.0 };
    let outer = if s > 0.0 {
        integrate(|rho| rho.ln() * sphere_in_ball(d, s, rho), a, 1.0 + s, tol * unit_ball_volume(d), 0.0)?.value
    } else {
        0.0
    };
    Ok((inner + outer) / unit_ball_volume(d))
}

/// [`log_potential_radial`] at a point of the closed unit ball.
pub fn log_potential_ball(d: usize, x: &[f64], tol: f64) -> Result<f64> {
    if x.len() != d {
        return Err(invalid(format!("point has {} coordinates, expected {d}", x.len())));
    }
    let s = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if s > 1.0 + 1e-12 {
        return Err(invalid(format!("|x| = {s} > 1")));
    }
    log_potential_radial(d, s.min(1.0), tol)
}

/// ln T*(d): the potential at a boundary point, computed from cap areas for
/// d ≥ 2 and in closed form for d = 1.
pub fn ln_threshold_t_star(d: usize, tol: f64) -> Result<f64> {
    match d {
        0 => Err(invalid("dimension must be at least 1")),
        1 => log_potential_radial(1, 1.0, tol),
        _ => {
            let vol = unit_ball_volume(d);
            let f = |r: f64| r.ln() * cap_area(d, r).unwrap_or(0.0);
            let lo = integrate(f, 0.0, 1.0, 0.5 * tol * vol, 0.0)?.value;
            let hi = integrate(f, 1.0, 2.0, 0.5 * tol * vol, 0.0)?.value;
            Ok((lo + hi) / vol)
        }
    }
}

/// T*(d) = exp of the boundary potential.
pub fn threshold_t_star(d: usize, tol: f64) -> Result<f64> {
    ln_threshold_t_star(d, tol).map(f64::exp)
}

/// ln T₀(d), the mean of ln|x − y| over B × B.
pub fn ln_threshold_t_zero(d: usize, tol: f64) -> Result<f64> {
    if d < 1 {
        return Err(invalid("dimension must be at least 1"));
    }
    let df = d as f64;
    let inner_tol = (tol * 1e-3).max(1e-14);
    let err = std::cell::Cell::new(None);
    let f = |s: f64| match log_potential_radial(d, s, inner_tol) {
        Ok(u) => df * s.powi(d as i32 - 1) * u,
        Err(e) => {
            err.set(Some(e));
            0.0
        }
    };
    let v = integrate(f, 0.0, 1.0, tol, 0.0)?.value;
    match err.take() {
        Some(e) => Err(e),
        None => Ok(v),
    }
}

/// T₀(d).
pub fn threshold_t_zero(d: usize, tol: f64) -> Result<f64> {
    ln_threshold_t_zero(d, tol).map(f64::exp)
}

/// Var(Ω) for Ω = ∫_B Z: |B|²(ln T − ln T₀). Negative below T₀.
pub fn var_omega(params: &ModelParams, tol: f64) -> Result<f64> {
    let vol = unit_ball_volume(params.d);
    Ok(vol * vol * (params.t.ln() - ln_threshold_t_zero(params.d, tol)?))
}

/// α(x) = ∫_B ln(T/|x − v|) dv / Var(Ω).
pub fn alpha_profile(params: &ModelParams, x: &[f64], tol: f64) -> Result<f64> {
    let var = var_omega(params, tol)?;
    if var <= 0.0 {
        return Err(GmcError::Degenerate(format!("Var(Ω) = {var:.6e} ≤ 0")));
    }
    let u = log_potential_ball(params.d, x, tol)?;
    Ok(unit_ball_volume(params.d) * (params.t.ln() - u) / var)
}

/// Threshold (ln T − ln T₀)/(2γ²(ln T − ln T*)²) above which every c is an
/// admissible lognormal small-deviation exponent (d ≥ 3, T ≥ T(d)).
pub fn mean0_lower_c(params: &ModelParams, tol: f64) -> Result<f64> {
    if params.d < 3 {
        return Err(invalid("mean0_lower_c needs d ≥ 3"));
    }
    let td = threshold_t(params.d)?;
    if params.t < td * (1.0 - 1e-12) {
        return Err(invalid(format!("T = {} below T(d) = {td}", params.t)));
    }
    spatial_mean_ratio(params, tol)
}

/// (ln T − ln T₀)/(2γ²(ln T − ln T*)²), shared by the spatial-mean constant
/// and the upper bound on c̄₁.
pub(crate) fn spatial_mean_ratio(params: &ModelParams, tol: f64) -> Result<f64> {
    let ln_t = params.t.ln();
    let ln_star = ln_threshold_t_star(params.d, tol)?;
    if ln_t <= ln_star {
        return Err(GmcError::Degenerate(format!("T = {} ≤ T*(d) = {:.6}", params.t, ln_star.exp())));
    }
    let ln_zero = ln_threshold_t_zero(params.d, tol)?;
    let g2 = params.gamma * params.gamma;
    Ok((ln_t - ln_zero) / (2.0 * g2 * (ln_t - ln_star).powi(2)))
}

/// ∫_{−1}^{1} (1 − |w|)·½ ln((k + w)² + c²) dw in closed form.
fn tri_log_line(k: f64, c2: f64) -> f64 {
    let c = c2.sqrt();
    let p = |u: f64| {
        let q = u * u + c2;
        let ul = if q > 0.0 { u * q.ln() } else { 0.0 };
        let at = if c > 0.0 { c * (u / c).atan() } else { 0.0 };
        0.5 * (ul - 2.0 * u + 2.0 * at)
    };
    let r = |u: f64| {
        let q = u * u + c2;
        let ql = if q > 0.0 { q * q.ln() } else { 0.0 };
        0.25 * (ql - u * u)
    };
    let (pm, p0, pp) = (p(k - 1.0), p(k), p(k + 1.0));
    let (rm, r0, rp) = (r(k - 1.0), r(k), r(k + 1.0));
    (1.0 - k) * (p0 - pm) + (r0 - rm) + (1.0 + k) * (pp - p0) - (rp - r0)
}

/// ℓ(k) = E ln|k + U − V| for U, V independent uniform on [0,1]^d: the mean
/// of ln|x − y| between two unit cubes whose centers differ by `k`.
pub fn cell_log_mean(k: &[f64], tol: f64) -> Result<f64> {
    if k.is_empty() {
        return Err(invalid("empty offset"));
    }
    let d = k.len();
    if d == 1 {
        return Ok(tri_log_line(k[0], 0.0));
    }
    if k.iter().any(|v| v.abs() >= 2.0) {
        // The integrand is analytic on a neighborhood of the box.
        let gl = GaussLegendre::new(16);
        Ok(nested_fixed(&gl, k, 0, 0.0))
    } else {
        nested_adaptive(k, 0, 0.0, tol)
    }
}

fn nested_fixed(gl: &GaussLegendre, k: &[f64], level: usize, c2: f64) -> f64 {
    let d = k.len();
    if level == d - 1 {
        return tri_log_line(k[level], c2);
    }
    let mut acc = 0.0;
    for (a, b) in [(-1.0, 0.0), (0.0, 1.0)] {
        for (w, wt) in gl.mapped(a, b) {
            let y = k[level] + w;
            acc += wt * (1.0 - w.abs()) * nested_fixed(gl, k, level + 1, c2 + y * y);
        }
    }
    acc
}

fn nested_adaptive(k: &[f64], level: usize, c2: f64, tol: f64) -> Result<f64> {
    let d = k.len();
    if level == d - 1 {
        return Ok(tri_log_line(k[level], c2));
    }
    let err = std::cell::Cell::new(None);
    let inner_tol = tol * 0.1;
    let f = |w: f64| {
        let y = k[level] + w;
        match nested_adaptive(k, level + 1, c2 + y * y, inner_tol) {
            Ok(v) => (1.0 - w.abs()) * v,
            Err(e) => {
                err.set(Some(e));
                0.0
            }
        }
    };
    // Break at the weight's kink and at the point where this coordinate of
    // k + w vanishes.
    let mut breaks = vec![-1.0, 0.0, 1.0];
    let s = -k[level];
    if s.abs() < 1.0 && s != 0.0 {
        breaks.push(s);
    }
    breaks.sort_by(f64::total_cmp);
    let share = tol / (breaks.len() - 1) as f64;
    let mut v = 0.0;
    for w in breaks.windows(2) {
        v += integrate(f, w[0], w[1], share, 0.0)?.value;
    }
    match err.take() {
        Some(e) => Err(e),
        None => Ok(v),
    }
}

/// Table of cube-averaged log-distances for all lattice offsets with
/// |k_i| < `extent`. Cubes have side ε and centers on a lattice of spacing
/// h = `ratio`·ε, so the table holds ℓ(ratio·k). Symmetry of ℓ under
/// coordinate permutations and sign flips is exploited.
#[derive(Debug, Clone)]
pub struct CellKernel {
    d: usize,
    extent: usize,
    table: Vec<f64>,
}

impl CellKernel {
    pub fn new(d: usize, extent: usize, ratio: f64, tol: f64) -> Result<Self> {
        if d < 1 || extent < 1 {
            return Err(invalid("CellKernel needs d ≥ 1 and extent ≥ 1"));
        }
        if !(ratio > 0.0) {
            return Err(invalid("spacing ratio must be positive"));
        }
        // Nondecreasing offset tuples are the symmetry-class representatives.
        let mut keys: Vec<Vec<i64>> = vec![vec![]];
        for _ in 0..d {
            keys = keys
                .into_iter()
                .flat_map(|p| {
                    let start = p.last().copied().unwrap_or(0);
                    (start..extent as i64).map(move |v| {
                        let mut q = p.clone();
                        q.push(v);
                        q
                    })
                })
                .collect();
        }
        let values: Vec<Result<f64>> = keys
            .par_iter()
            .map(|key| {
                let kf: Vec<f64> = key.iter().map(|&v| v as f64 * ratio).collect();
                cell_log_mean(&kf, tol)
            })
            .collect();
        let mut map = HashMap::with_capacity(keys.len());
        for (key, v) in keys.into_iter().zip(values) {
            map.insert(key, v?);
        }
        let size = extent.pow(d as u32);
        let mut table = vec![0.0; size];
        let mut key = vec![0i64; d];
        for (flat, slot) in table.iter_mut().enumerate() {
            let mut rem = flat;
            for kk in key.iter_mut() {
                *kk = (rem % extent) as i64;
                rem /= extent;
            }
            let mut sorted = key.clone();
            sorted.sort_unstable();
            *slot = map[&sorted];
        }
        Ok(Self { d, extent, table })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Table value at lattice offset `k` (any signs; |k_i| < extent).
    pub fn ell(&self, k: &[i64]) -> f64 {
        let mut flat = 0usize;
        let mut stride = 1usize;
        for &v in k {
            let a = v.unsigned_abs() as usize;
            debug_assert!(a < self.extent);
            flat += a * stride;
            stride *= self.extent;
        }
        self.table[flat]
    }
}

/// Symmetric matrix of cube-averaged kernel values between the cells of a
/// grid, for cubes of side ε: ln T − ln ε − ℓ(h(k_i − k_j)/ε). Columns are
/// built in parallel.
pub(crate) fn cell_gram(grid: &crate::grid::Grid, kernel: &CellKernel, ln_t: f64, epsilon: f64) -> DMatrix<f64> {
    let n = grid.len();
    let d = grid.dim;
    let base = ln_t - epsilon.ln();
    let mut m = DMatrix::<f64>::zeros(n, n);
    // Column-major storage: column j is a contiguous slice.
    m.as_mut_slice().par_chunks_mut(n).enumerate().for_each(|(j, col)| {
        let kj = grid.lattice_index(j);
        let mut off = vec![0i64; d];
        for (i, slot) in col.iter_mut().enumerate() {
            let ki = grid.lattice_index(i);
            for t in 0..d {
                off[t] = ki[t] - kj[t];
            }
            *slot = base - kernel.ell(&off);
        }
    });
    m
}

/// Result of the discretized positive-definiteness test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PdReport {
    pub dim: usize,
    #[serde(rename = "T")]
    pub t: f64,
    /// Number of retained cells (cube centers inside the ball).
    pub cells: usize,
    pub cells_per_axis: usize,
    pub min_eigenvalue: f64,
    /// Unit-norm eigenvector of the minimal eigenvalue when it is negative
    /// beyond the tolerance.
    pub violating_density: Option<Vec<f64>>,
    /// Quadratic form of the witness; negative whenever a witness exists.
    pub witness_form: Option<f64>,
    /// Quadratic form of the uniform density, normalized by the cell count.
    pub uniform_form: f64,
    pub repair_magnitude: f64,
}

/// Minimal eigenvalue of the cube-averaged Gram matrix on a regular
/// partition with `cells` cubes in the bounding box (`cells` must be a
/// perfect d-th power).
pub fn pd_min_eigenvalue(params: &ModelParams, cells: usize, tol: f64) -> Result<PdReport> {
    pd_min_eigenvalue_with_cap(params, cells, tol, DEFAULT_CELL_CAP)
}

/// [`pd_min_eigenvalue`] with an explicit memory guard.
pub fn pd_min_eigenvalue_with_cap(params: &ModelParams, cells: usize, tol: f64, cap: usize) -> Result<PdReport> {
    if cells < 2 {
        return Err(invalid("cells must be at least 2"));
    }
    let d = params.d;
    let m = (cells as f64).powf(1.0 / d as f64).round() as usize;
    if m.pow(d as u32) != cells {
        return Err(invalid(format!("cells = {cells} is not a perfect power of order {d}")));
    }
    let grid = build_grid_with_cap(d, 1.0, m, cap)?;
    let kernel = CellKernel::new(d, m, 1.0, 1e-12)?;
    let gram = cell_gram(&grid, &kernel, params.t.ln(), grid.spacing);
    let n = grid.len();
    let uniform_form = gram.sum() / n as f64;
    let eig = SymmetricEigen::try_new(gram.clone(), 1e-14, 0)
        .ok_or_else(|| GmcError::Factorization("symmetric eigensolver did not converge".into()))?;
    let (imin, &min_eigenvalue) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .ok_or_else(|| GmcError::Factorization("empty spectrum".into()))?;
    let (violating_density, witness_form) = if min_eigenvalue < -tol {
        let mut v: Vec<f64> = eig.eigenvectors.column(imin).iter().copied().collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        // Fix the sign so the largest component is positive.
        let big = v.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        let sign = if big < 0.0 { -1.0 } else { 1.0 };
        v.iter_mut().for_each(|x| *x *= sign / norm);
        let vv = nalgebra::DVector::from_vec(v.clone());
        let form = vv.dot(&(&gram * &vv));
        (Some(v), Some(form))
    } else {
        (None, None)
    };
    Ok(PdReport {
        dim: d,
        t: params.t,
        cells: n,
        cells_per_axis: m,
        min_eigenvalue,
        violating_density,
        witness_form,
        uniform_form,
        repair_magnitude: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn threshold_values() {
        assert_eq!(threshold_t(1).unwrap(), 0.5);
        assert_eq!(threshold_t(2).unwrap(), 1.0);
        assert_abs_diff_eq!(threshold_t(3).unwrap(), std::f64::consts::E / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(threshold_t(4).unwrap(), 0.5f64.exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(threshold_t(5).unwrap().ln(), 4.0 / 3.0 - 2f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(threshold_t(6).unwrap().ln(), 0.25 + 0.5, epsilon = 1e-15);
        assert!(threshold_t(0).is_err());
    }

    #[test]
    fn ball_constants() {
        assert_abs_diff_eq!(unit_ball_volume(1), 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(unit_ball_volume(2), PI, epsilon = 1e-14);
        assert_abs_diff_eq!(unit_ball_volume(3), 4.0 * PI / 3.0, epsilon = 1e-13);
        for d in 1..9 {
            assert_abs_diff_eq!(unit_sphere_area(d) / unit_ball_volume(d), d as f64, epsilon = 1e-12);
        }
    }

    #[test]
    fn cap_area_closed_forms() {
        assert_abs_diff_eq!(cap_area(3, 2.0).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cap_area(3, 1.0).unwrap(), PI, epsilon = 1e-12);
        assert!(cap_area(3, 2.5).is_err());
        assert!(cap_area(1, 1.0).is_err());
        // Closed forms agree with the recurrence and with direct quadrature
        // of sin^{d−2}.
        for d in 3..=5 {
            for &r in &[0.1, 0.7, 1.3, 1.9] {
                let phi = (r / 2.0f64).acos();
                let rec = unit_sphere_area(d - 1) * r.powi(d as i32 - 1) * sin_power_integral(d - 2, phi);
                let q = integrate(|t: f64| t.sin().powi(d as i32 - 2), 0.0, phi, 1e-14, 0.0).unwrap().value;
                let quad = unit_sphere_area(d - 1) * r.powi(d as i32 - 1) * q;
                let closed = cap_area(d, r).unwrap();
                assert_abs_diff_eq!(closed, rec, epsilon = 1e-12);
                assert_abs_diff_eq!(closed, quad, epsilon = 1e-12);
            }
        }
        // Inner integral for d = 5.
        let r = 0.8f64;
        let inner = sin_power_integral(3, (r / 2.0).acos());
        assert_abs_diff_eq!(inner, 2.0 / 3.0 - r / 2.0 + r.powi(3) / 24.0, epsilon = 1e-14);
        // d = 2: 2rφ.
        assert_abs_diff_eq!(cap_area(2, 1.0).unwrap(), 2.0 * (0.5f64).acos(), epsilon = 1e-14);
    }

    #[test]
    fn sin_power_recurrence_matches_quadrature() {
        for n in 0..12 {
            for &psi in &[0.05, 0.9, 2.0, PI] {
                let q = integrate(|t: f64| t.sin().powi(n as i32), 0.0, psi, 1e-15, 0.0).unwrap().value;
                assert_abs_diff_eq!(sin_power_integral(n, psi), q, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn boundary_potentials() {
        assert_abs_diff_eq!(log_potential_ball(1, &[1.0], 1e-10).unwrap(), 2f64.ln() - 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(log_potential_ball(3, &[1.0, 0.0, 0.0], 1e-10).unwrap(), 2f64.ln() - 7.0 / 12.0, epsilon = 1e-9);
        for d in 1..6 {
            let u0 = log_potential_radial(d, 0.0, 1e-10).unwrap();
            assert_abs_diff_eq!(u0, -1.0 / d as f64, epsilon = 1e-12);
            assert!(u0 < log_potential_radial(d, 1.0, 1e-10).unwrap());
        }
    }

    #[test]
    fn t_star_closed_forms() {
        let ln2 = 2f64.ln();
        assert_abs_diff_eq!(ln_threshold_t_star(1, 1e-10).unwrap(), ln2 - 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ln_threshold_t_star(2, 1e-10).unwrap(), 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(ln_threshold_t_star(3, 1e-10).unwrap(), ln2 - 7.0 / 12.0, epsilon = 1e-9);
        assert_abs_diff_eq!(ln_threshold_t_star(4, 1e-10).unwrap(), 0.1666, epsilon = 5e-4);
        assert_abs_diff_eq!(ln_threshold_t_star(5, 1e-10).unwrap(), ln2 - 59.0 / 120.0, epsilon = 1e-9);
    }

    #[test]
    fn cap_form_matches_radial_potential() {
        for d in 2..8 {
            let a = ln_threshold_t_star(d, 1e-10).unwrap();
            let b = log_potential_radial(d, 1.0, 1e-10).unwrap();
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn t_zero_oracles() {
        // d = 1: |X − Y| has density (2 − t)/2 on [0, 2].
        let oracle1 = integrate(|t: f64| t.ln() * (2.0 - t) / 2.0, 0.0, 2.0, 1e-14, 0.0).unwrap().value;
        assert_abs_diff_eq!(oracle1, 2f64.ln() - 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(ln_threshold_t_zero(1, 1e-10).unwrap(), oracle1, epsilon = 1e-9);
        // d = 2: mean log-distance in the unit disc is −1/4.
        assert_abs_diff_eq!(ln_threshold_t_zero(2, 1e-10).unwrap(), -0.25, epsilon = 1e-8);
    }

    #[test]
    fn t_zero_d3_monte_carlo() {
        let mut rng = crate::rng::stream(crate::rng::Domain::Synthetic, 3, 0);
        let point = |rng: &mut rand_chacha::ChaCha8Rng| loop {
            let p: [f64; 3] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            if p.iter().map(|v| v * v).sum::<f64>() < 1.0 {
                return p;
            }
        };
        let n = 10_000_000;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..n {
            let x = point(&mut rng);
            let y = point(&mut rng);
            let l = 0.5 * ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2) + (x[2] - y[2]).powi(2)).ln();
            sum += l;
            sum2 += l * l;
        }
        let mean = sum / n as f64;
        let se = ((sum2 / n as f64 - mean * mean) / n as f64).sqrt();
        let q = ln_threshold_t_zero(3, 1e-10).unwrap();
        assert!((q - mean).abs() < 5.0 * se, "quadrature {q} vs MC {mean} ± {se}");
    }

    #[test]
    fn var_omega_d1() {
        let p = ModelParams::new(1, 1.0, 0.5).unwrap();
        assert_abs_diff_eq!(var_omega(&p, 1e-10).unwrap(), 6.0 - 8.0 * 2f64.ln(), epsilon = 1e-9);
        let t0 = threshold_t_zero(1, 1e-10).unwrap();
        assert_abs_diff_eq!(var_omega(&p.with_t(t0), 1e-10).unwrap(), 0.0, epsilon = 1e-9);
        let p3 = ModelParams::new(3, 1.0, threshold_t(3).unwrap()).unwrap();
        assert!(var_omega(&p3, 1e-10).unwrap() > 0.0);
    }

    #[test]
    fn alpha_profile_integrates_to_one() {
        for (d, t) in [(1usize, 0.5), (2, 1.0), (3, threshold_t(3).unwrap())] {
            let p = ModelParams::new(d, 1.0, t).unwrap();
            let df = d as f64;
            let mean = integrate(
                |s: f64| {
                    let mut x = vec![0.0; d];
                    x[0] = s;
                    df * s.powi(d as i32 - 1) * alpha_profile(&p, &x, 1e-11).unwrap()
                },
                0.0,
                1.0,
                1e-9,
                0.0,
            )
            .unwrap()
            .value;
            // ∫_B α = 1, i.e. the uniform average of α is 1/|B|.
            assert_abs_diff_eq!(mean * unit_ball_volume(d), 1.0, epsilon = 1e-7);
            let mut e = vec![0.0; d];
            e[0] = 1.0;
            let ae = alpha_profile(&p, &e, 1e-10).unwrap();
            let a0 = alpha_profile(&p, &vec![0.0; d], 1e-10).unwrap();
            assert!(a0 >= ae);
            let vol = unit_ball_volume(d);
            let closed = vol * (t.ln() - ln_threshold_t_star(d, 1e-10).unwrap()) / var_omega(&p, 1e-10).unwrap();
            assert_abs_diff_eq!(ae, closed, epsilon = 1e-8);
        }
        let below = ModelParams::new(1, 1.0, 0.2).unwrap();
        assert!(matches!(alpha_profile(&below, &[0.0], 1e-10), Err(GmcError::Degenerate(_))));
    }

    #[test]
    fn mean0_constant() {
        let ln2 = 2f64.ln();
        let p = ModelParams::new(3, 1.0, threshold_t(3).unwrap()).unwrap();
        let c = mean0_lower_c(&p, 1e-10).unwrap();
        let num = p.t.ln() - ln_threshold_t_zero(3, 1e-10).unwrap();
        let den = 2.0 * (1.0 - ln2 - (ln2 - 7.0 / 12.0)).powi(2);
        assert_abs_diff_eq!(den, 0.07762, epsilon = 1e-4);
        assert_abs_diff_eq!(c, num / den, epsilon = 1e-9);
        let p5 = ModelParams::new(5, 1.0, threshold_t(5).unwrap()).unwrap();
        assert!(mean0_lower_c(&p5, 1e-10).unwrap() > 0.0);
        // Decreasing for large T.
        let mut last = f64::INFINITY;
        for t in [10.0, 100.0, 1e4, 1e8] {
            let v = mean0_lower_c(&p.with_t(t), 1e-10).unwrap();
            assert!(v < last);
            last = v;
        }
        assert!(mean0_lower_c(&ModelParams::new(2, 1.0, 1.0).unwrap(), 1e-10).is_err());
    }

    #[test]
    fn cell_mean_d1_closed_form() {
        // G(u) = u² ln|u|/2 − 3u²/4 has G'' = ln|u|.
        let g = |u: f64| if u == 0.0 { 0.0 } else { u * u * u.abs().ln() / 2.0 - 0.75 * u * u };
        for k in 0..40i64 {
            let kf = k as f64;
            let oracle = g(kf + 1.0) - g(kf) - g(kf) + g(kf - 1.0);
            assert_abs_diff_eq!(cell_log_mean(&[kf], 1e-12).unwrap(), oracle, epsilon = 1e-11);
        }
        assert_abs_diff_eq!(cell_log_mean(&[0.0], 1e-12).unwrap(), -1.5, epsilon = 1e-14);
        // Far-field expansion ln k − 1/(12k²).
        let k = 200.0f64;
        assert_abs_diff_eq!(cell_log_mean(&[200.0], 1e-12).unwrap(), k.ln() - 1.0 / (12.0 * k * k), epsilon = 1e-9);
    }

    #[test]
    fn cell_mean_near_far_agree() {
        // Offsets just past the near/far split computed both ways.
        let gl = GaussLegendre::new(16);
        for k in [[2i64, 0], [2, 1], [3, 2]] {
            let kf = [k[0] as f64, k[1] as f64];
            let fixed = nested_fixed(&gl, &kf, 0, 0.0);
            let adaptive = nested_adaptive(&kf, 0, 0.0, 1e-13).unwrap();
            assert_abs_diff_eq!(fixed, adaptive, epsilon = 1e-11);
        }
        let kf = [2.0, 0.0, 1.0];
        assert_abs_diff_eq!(nested_fixed(&gl, &kf, 0, 0.0), nested_adaptive(&kf, 0, 0.0, 1e-12).unwrap(), epsilon = 1e-10);
    }

    #[test]
    fn cell_mean_monte_carlo() {
        let mut rng = crate::rng::stream(crate::rng::Domain::Synthetic, 11, 0);
        for k in [[0i64, 0], [1, 0], [1, 1]] {
            let n = 2_000_000;
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..n {
                let a = k[0] as f64 + rng.random::<f64>() - rng.random::<f64>();
                let b = k[1] as f64 + rng.random::<f64>() - rng.random::<f64>();
                let l = 0.5 * (a * a + b * b).ln();
                s += l;
                s2 += l * l;
            }
            let m = s / n as f64;
            let se = ((s2 / n as f64 - m * m) / n as f64).sqrt();
            let v = cell_log_mean(&[k[0] as f64, k[1] as f64], 1e-12).unwrap();
            assert!((v - m).abs() < 5.0 * se, "k={k:?}: {v} vs {m} ± {se}");
        }
    }

    #[test]
    fn pd_examples() {
        let tol = 1e-8;
        let r = pd_min_eigenvalue(&ModelParams::new(1, 1.0, 0.5).unwrap(), 64, tol).unwrap();
        assert!(r.min_eigenvalue >= -tol, "{}", r.min_eigenvalue);
        assert!(r.violating_density.is_none());
        let r = pd_min_eigenvalue(&ModelParams::new(1, 1.0, 0.2).unwrap(), 64, tol).unwrap();
        assert!(r.min_eigenvalue < 0.0);
        let w = r.violating_density.as_ref().unwrap();
        assert_abs_diff_eq!(w.iter().map(|x| x * x).sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!(r.witness_form.unwrap() < 0.0);
        assert!(r.uniform_form < 0.0);
        assert!(pd_min_eigenvalue(&ModelParams::new(2, 1.0, 1.0).unwrap(), 63, tol).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn pd_monotone_in_t(t1 in 0.05f64..2.0, dt in 0.0f64..2.0) {
            let p = ModelParams::new(1, 1.0, t1).unwrap();
            let a = pd_min_eigenvalue(&p, 32, 1e-8).unwrap().min_eigenvalue;
            let b = pd_min_eigenvalue(&p.with_t(t1 + dt), 32, 1e-8).unwrap().min_eigenvalue;
            prop_assert!(b >= a - 1e-10);
        }

        #[test]
        fn potential_increasing_in_radius(d in 1usize..6, s in 0.0f64..0.99, ds in 0.001f64..0.01) {
            let a = log_potential_radial(d, s, 1e-10).unwrap();
            let b = log_potential_radial(d, (s + ds).min(1.0), 1e-10).unwrap();
            prop_assert!(b > a);
        }
    }
}
