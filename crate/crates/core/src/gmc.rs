//! Gaussian multiplicative chaos masses, persisted sample banks, the
//! scaling sampler for M_r and the constants a(r), b, C(r).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, GmcError, Result};
use crate::field::{covariance_factor_with_gate, sample_field_batch, CovarianceFactor, FieldSample, DEFAULT_REPAIR_GATE};
use crate::grid::{build_grid_with_cap, Grid, DEFAULT_CELL_CAP};
use crate::params::ModelParams;
use crate::rng::{stream, Domain};
use crate::stats::mean_se;

/// Bank file format version.
pub const BANK_FORMAT_VERSION: u32 = 1;
const BANK_MAGIC: &str = "GMCLAB-BANK";
/// Samples per batch; fixed so results never depend on the worker count.
pub const BATCH: usize = 256;

/// a(r) = 1/(2γ² ln(1/r)), b = 1/2 + d/γ², C(r) = r^e/√(2πγ² ln(1/r)) with
/// e = γ²/8 + d/2 + d²/(2γ²).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmcConstants {
    pub r: f64,
    pub a: f64,
    pub b: f64,
    pub cr: f64,
    pub r_exponent: f64,
}

/// Closed-form constants for radius `r` ∈ (0, 1).
pub fn constants(params: &ModelParams, r: f64) -> Result<GmcConstants> {
    if !(r > 0.0 && r < 1.0) {
        return Err(invalid(format!("r = {r} outside (0, 1)")));
    }
    let g2 = params.gamma * params.gamma;
    let d = params.d as f64;
    let l = (1.0 / r).ln();
    let r_exponent = g2 / 8.0 + d / 2.0 + d * d / (2.0 * g2);
    Ok(GmcConstants {
        r,
        a: 1.0 / (2.0 * g2 * l),
        b: params.b(),
        cr: r.powf(r_exponent) / (2.0 * std::f64::consts::PI * g2 * l).sqrt(),
        r_exponent,
    })
}

/// Σ_i v_i·exp(γ Z_i − γ²/2·Var Z_i) using the post-repair variances.
pub fn gmc_mass(field: &FieldSample, factor: &CovarianceFactor, grid: &Grid, params: &ModelParams) -> f64 {
    let g = params.gamma;
    field
        .values
        .iter()
        .zip(&factor.diag)
        .zip(&grid.volumes)
        .map(|((z, var), v)| v * (g * z - 0.5 * g * g * var).exp())
        .sum()
}

/// Where the masses of a bank came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum BankSource {
    /// Simulated from the discretized field.
    #[serde(rename_all = "camelCase")]
    Simulated {
        radius: f64,
        cells_per_axis: usize,
        epsilon: f64,
        cells: usize,
        grid_volume: f64,
        repair_magnitude: f64,
    },
    /// Drawn from an exactly known law (used by oracles).
    Synthetic { description: String },
}

/// I.i.d. mass samples with full provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SampleBank {
    pub format_version: u32,
    pub params: ModelParams,
    pub bank_id: u64,
    pub n: usize,
    pub source: BankSource,
    /// Free-form provenance attached by callers (for example a run config).
    #[serde(default)]
    pub metadata: serde_json::Value,
    #[serde(skip)]
    pub masses: Vec<f64>,
}

/// Knobs for bank creation beyond the model itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BankOptions {
    pub repair_gate: f64,
    pub cell_cap: usize,
    /// Cube side as a multiple of the grid spacing.
    pub epsilon_factor: f64,
}

impl Default for BankOptions {
    fn default() -> Self {
        Self { repair_gate: DEFAULT_REPAIR_GATE, cell_cap: DEFAULT_CELL_CAP, epsilon_factor: 1.0 }
    }
}

impl SampleBank {
    /// Radius of the ball the masses live on (1 for synthetic banks).
    pub fn radius(&self) -> f64 {
        match &self.source {
            BankSource::Simulated { radius, .. } => *radius,
            BankSource::Synthetic { .. } => 1.0,
        }
    }

    /// Exact expectation of a mass: the grid volume for simulated banks.
    pub fn expected_mean(&self) -> Option<f64> {
        match &self.source {
            BankSource::Simulated { grid_volume, .. } => Some(*grid_volume),
            BankSource::Synthetic { .. } => None,
        }
    }

    pub fn mean_se(&self) -> (f64, f64) {
        mean_se(&self.masses)
    }

    /// Bank of e^{σξ} samples with ξ standard normal.
    pub fn synthetic_lognormal(sigma: f64, n: usize, key: u64) -> Self {
        let masses = (0..n as u64)
            .into_par_iter()
            .map(|i| {
                let z: f64 = stream(Domain::Synthetic, key, i).sample(StandardNormal);
                (sigma * z).exp()
            })
            .collect();
        Self::from_masses(masses, format!("lognormal sigma={sigma}"), key)
    }

    /// Wraps externally produced masses.
    pub fn from_masses(masses: Vec<f64>, description: String, key: u64) -> Self {
        Self {
            format_version: BANK_FORMAT_VERSION,
            params: ModelParams { d: 1, gamma: 1.0, t: 1.0 },
            bank_id: key,
            n: masses.len(),
            source: BankSource::Synthetic { description },
            metadata: serde_json::Value::Null,
            masses,
        }
    }

    /// Writes a magic line, a JSON header line and the masses as
    /// little-endian f64.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "{BANK_MAGIC} {BANK_FORMAT_VERSION}")?;
        writeln!(w, "{}", serde_json::to_string(self)?)?;
        for m in &self.masses {
            w.write_all(&m.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a bank written by [`SampleBank::save`].
    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut line = String::new();
        r.read_line(&mut line)?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(BANK_MAGIC) {
            return Err(GmcError::Format("not a bank file".into()));
        }
        let version: u32 = parts.next().and_then(|v| v.parse().ok()).ok_or_else(|| GmcError::Format("missing version".into()))?;
        if version != BANK_FORMAT_VERSION {
            return Err(GmcError::Format(format!("unsupported bank version {version}")));
        }
        line.clear();
        r.read_line(&mut line)?;
        let mut bank: SampleBank = serde_json::from_str(line.trim_end())?;
        let mut bytes = Vec::with_capacity(bank.n * 8);
        r.read_to_end(&mut bytes)?;
        if bytes.len() != bank.n * 8 {
            return Err(GmcError::Format(format!("expected {} payload bytes, found {}", bank.n * 8, bytes.len())));
        }
        bank.masses = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        Ok(bank)
    }
}

/// Masses for sample indices `start..start + n` from a factored field.
/// Batches of [`BATCH`] samples are aligned to multiples of `BATCH`, so a
/// given index always sees the same arithmetic.
pub fn masses_from_factor(factor: &CovarianceFactor, bank_id: u64, n: usize) -> Vec<f64> {
    let g = factor.params.gamma;
    let weights: Vec<f64> =
        factor.grid.volumes.iter().zip(&factor.diag).map(|(v, var)| v * (-0.5 * g * g * var).exp()).collect();
    let batches = n.div_ceil(BATCH);
    let parts: Vec<Vec<f64>> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let start = b * BATCH;
            let count = BATCH.min(n - start);
            let z = sample_field_batch(factor, bank_id, start as u64, count);
            z.column_iter().map(|col| col.iter().zip(&weights).map(|(zi, w)| w * (g * zi).exp()).sum()).collect()
        })
        .collect();
    parts.concat()
}

/// Simulates `n` masses of M_γ(B(0, radius)) on a grid with
/// `cells_per_axis` cells per axis and ε = h.
pub fn create_bank(params: &ModelParams, radius: f64, cells_per_axis: usize, n: usize, bank_id: u64) -> Result<SampleBank> {
    create_bank_with(params, radius, cells_per_axis, n, bank_id, &BankOptions::default())
}

/// [`create_bank`] with explicit options.
pub fn create_bank_with(
    params: &ModelParams,
    radius: f64,
    cells_per_axis: usize,
    n: usize,
    bank_id: u64,
    opts: &BankOptions,
) -> Result<SampleBank> {
    params.validate()?;
    if n < 1 {
        return Err(invalid("bank size must be at least 1"));
    }
    let grid = build_grid_with_cap(params.d, radius, cells_per_axis, opts.cell_cap)?;
    let epsilon = opts.epsilon_factor * grid.spacing;
    let factor = covariance_factor_with_gate(&grid, params, epsilon, opts.repair_gate)?;
    let masses = masses_from_factor(&factor, bank_id, n);
    Ok(SampleBank {
        format_version: BANK_FORMAT_VERSION,
        params: *params,
        bank_id,
        n,
        source: BankSource::Simulated {
            radius,
            cells_per_axis,
            epsilon,
            cells: grid.len(),
            grid_volume: grid.total_volume(),
            repair_magnitude: factor.repair_magnitude,
        },
        metadata: serde_json::Value::Null,
        masses,
    })
}

/// Samples of M_r = r^d·exp(γΩ − γ²/2·ln(1/r))·M₁ with Ω ~ N(0, ln(1/r))
/// drawn from the stream keyed by `stream_key`, one per bank sample.
pub fn sample_mr_scaled(bank: &SampleBank, r: f64, stream_key: u64) -> Result<Vec<f64>> {
    if !(r > 0.0 && r < 1.0) {
        return Err(invalid(format!("r = {r} outside (0, 1)")));
    }
    if (bank.radius() - 1.0).abs() > 1e-12 {
        return Err(invalid("scaled sampling needs a bank on the unit ball"));
    }
    let g = bank.params.gamma;
    let l = (1.0 / r).ln();
    let pre = r.powi(bank.params.d as i32);
    Ok(bank
        .masses
        .par_iter()
        .enumerate()
        .map(|(i, m)| {
            let xi: f64 = stream(Domain::Omega, stream_key, i as u64).sample(StandardNormal);
            pre * (g * l.sqrt() * xi - 0.5 * g * g * l).exp() * m
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{covariance_factor, sample_field};
    use crate::grid::build_grid;
    use approx::assert_abs_diff_eq;

    #[test]
    fn constants_examples() {
        let p = ModelParams::new(2, 1.0, 1.0).unwrap();
        let c = constants(&p, (-1.0f64).exp()).unwrap();
        assert_abs_diff_eq!(c.a, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(c.b, 2.5, epsilon = 1e-15);
        let c = constants(&p, 0.25).unwrap();
        assert_abs_diff_eq!(c.a, 1.0 / (2.0 * 4f64.ln()), epsilon = 1e-15);
        assert_abs_diff_eq!(c.a, 0.360674, epsilon = 1e-6);
        let p1 = ModelParams::new(1, 1.0, 0.5).unwrap();
        let c = constants(&p1, (-1.0f64).exp()).unwrap();
        assert_abs_diff_eq!(c.r_exponent, 9.0 / 8.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.cr, (-9.0f64 / 8.0).exp() / (2.0 * std::f64::consts::PI).sqrt(), epsilon = 1e-15);
        assert!(constants(&p, 1.0).is_err());
        assert!(constants(&p, 0.0).is_err());
        // a increases with r.
        assert!(constants(&p, 0.1).unwrap().a < constants(&p, 0.2).unwrap().a);
    }

    #[test]
    fn gamma_zero_mass_is_grid_volume() {
        let p = ModelParams { d: 2, gamma: 0.0, t: 1.0 };
        let g = build_grid(2, 1.0, 16).unwrap();
        let f = covariance_factor(&g, &p, g.spacing).unwrap();
        let s = sample_field(&f, 1, 0);
        assert_eq!(gmc_mass(&s, &f, &g, &p), g.volumes.iter().sum::<f64>());
    }

    #[test]
    fn bank_first_moment_and_determinism() {
        let p = ModelParams::new(1, 1.0, 0.5).unwrap();
        let a = create_bank(&p, 1.0, 32, 20_000, 5).unwrap();
        let (m, se) = a.mean_se();
        assert!((m - 2.0).abs() < 5.0 * se, "{m} ± {se}");
        assert!(a.masses.iter().all(|&x| x > 0.0));
        let b = create_bank(&p, 1.0, 32, 20_000, 5).unwrap();
        assert_eq!(a.masses, b.masses);
        let c = create_bank(&p, 1.0, 32, 20_000, 6).unwrap();
        assert_ne!(a.masses, c.masses);
        let (mc, sec) = c.mean_se();
        assert!((m - mc).abs() < 5.0 * (se * se + sec * sec).sqrt());
        // A prefix of a larger bank is the smaller bank.
        let one = create_bank(&p, 1.0, 32, 1, 5).unwrap();
        assert_abs_diff_eq!(one.masses[0], a.masses[0], epsilon = 1e-12 * a.masses[0]);
    }

    #[test]
    fn bank_masses_match_single_sample_path() {
        let p = ModelParams::new(2, 1.0, 1.0).unwrap();
        let g = build_grid(2, 1.0, 12).unwrap();
        let f = covariance_factor(&g, &p, g.spacing).unwrap();
        let masses = masses_from_factor(&f, 3, 10);
        for (i, m) in masses.iter().enumerate() {
            let s = sample_field(&f, 3, i as u64);
            assert_abs_diff_eq!(*m, gmc_mass(&s, &f, &g, &p), epsilon = 1e-12 * m);
        }
    }

    #[test]
    fn scaled_sampler_mean_and_limit() {
        let bank = SampleBank::synthetic_lognormal(0.5, 50_000, 1);
        let mut bank = bank;
        bank.params = ModelParams::new(2, 1.0, 1.0).unwrap();
        let out = sample_mr_scaled(&bank, 0.5, 7).unwrap();
        let (m0, _) = bank.mean_se();
        let ratio: Vec<f64> = out.iter().zip(&bank.masses).map(|(o, m)| o / m * m0).collect();
        let (m, se) = mean_se(&ratio);
        assert!((m - 0.25 * m0).abs() < 5.0 * se);
        let near_one = sample_mr_scaled(&bank, 1.0 - 1e-12, 7).unwrap();
        for (a, b) in near_one.iter().zip(&bank.masses).take(100) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-5 * b);
        }
    }

    #[test]
    fn save_load_roundtrip() {
        let p = ModelParams::new(1, 1.0, 0.5).unwrap();
        let mut bank = create_bank(&p, 1.0, 16, 100, 2).unwrap();
        bank.metadata = serde_json::json!({"note": "x"});
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.bank");
        bank.save(&path).unwrap();
        let back = SampleBank::load(&path).unwrap();
        assert_eq!(back, bank);
        std::fs::write(&path, b"junk\n").unwrap();
        assert!(SampleBank::load(&path).is_err());
    }
}
