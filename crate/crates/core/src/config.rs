//! Run configuration: model, grid, Monte Carlo sizes, tolerances and output.
//! Stored either as JSON or as flat `dotted.key = value` lines.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{invalid, GmcError, Result};
use crate::params::ModelParams;

pub const CONFIG_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct GridConfig {
    pub radius: f64,
    pub cells_per_axis: usize,
    /// ε as a multiple of the grid spacing.
    pub epsilon_factor: f64,
    pub cell_cap: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct McConfig {
    pub n: usize,
    pub bank_id: u64,
    pub stream_key: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Tolerances {
    pub quad_tol: f64,
    pub repair_gate: f64,
    /// Multiplier of standard errors in statistical gates.
    pub se_gate: f64,
    pub pd_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct LaplaceConfig {
    pub r: f64,
    pub x_grid: Vec<f64>,
    pub s_grid: Vec<f64>,
    pub z_grid: Vec<f64>,
    pub deltas: Vec<f64>,
}

/// Problem sizes of the acceptance suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    /// Sizes of the acceptance criteria.
    Full,
    /// Reduced sizes for smoke runs.
    Quick,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct VerifyConfig {
    pub scale: Scale,
    /// Criterion tags to run; empty runs all.
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: String,
    pub format: OutputFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct RunConfig {
    pub format_version: u32,
    pub model: ModelParams,
    pub grid: GridConfig,
    pub mc: McConfig,
    pub tolerances: Tolerances,
    pub laplace: LaplaceConfig,
    pub verify: VerifyConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            format_version: CONFIG_FORMAT_VERSION,
            model: ModelParams { d: 1, gamma: 1.0, t: 0.5 },
            grid: GridConfig { radius: 1.0, cells_per_axis: 64, epsilon_factor: 1.0, cell_cap: crate::grid::DEFAULT_CELL_CAP },
            mc: McConfig { n: 100_000, bank_id: 1, stream_key: 1 },
            tolerances: Tolerances { quad_tol: 1e-10, repair_gate: crate::field::DEFAULT_REPAIR_GATE, se_gate: 3.0, pd_tol: 1e-8 },
            laplace: LaplaceConfig {
                r: 0.5,
                x_grid: (0..=16).map(|k| -2.0 + 0.5 * k as f64).collect(),
                s_grid: vec![1.0, 2.0, 4.0],
                z_grid: vec![6.0, 8.0, 10.0],
                deltas: crate::smalldev::geometric_grid(1.0, 1e-3, 31),
            },
            verify: VerifyConfig { scale: Scale::Full, tags: Vec::new() },
            output: OutputConfig { directory: "out".into(), format: OutputFormat::Json },
        }
    }
}

impl RunConfig {
    /// Checks every gate and size.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let t = &self.tolerances;
        if !(t.quad_tol > 0.0 && t.se_gate > 0.0 && t.repair_gate >= 0.0 && t.pd_tol >= 0.0) {
            return Err(invalid("tolerances must be positive (repairGate and pdTol nonnegative)"));
        }
        if !(self.grid.radius > 0.0 && self.grid.radius <= 1.0) || self.grid.cells_per_axis < 2 || !(self.grid.epsilon_factor > 0.0) {
            return Err(invalid("grid needs radius in (0, 1], cellsPerAxis ≥ 2, epsilonFactor > 0"));
        }
        if self.mc.n < 1 {
            return Err(invalid("mc.n must be at least 1"));
        }
        if !(self.laplace.r > 0.0 && self.laplace.r <= 1.0) {
            return Err(invalid("laplace.r must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Flat `key = value` lines with dotted keys and JSON values.
    pub fn to_key_values(&self) -> Result<String> {
        let mut out = String::new();
        flatten("", &serde_json::to_value(self)?, &mut out);
        Ok(out)
    }

    /// Parses dotted key-value text. Keys not present override nothing;
    /// missing keys keep their defaults.
    pub fn from_key_values(text: &str) -> Result<Self> {
        Self::default().with_key_values(text)
    }

    /// Applies dotted key-value overrides on top of `self`.
    pub fn with_key_values(&self, text: &str) -> Result<Self> {
        let mut root = serde_json::to_value(self)?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, val) = line.split_once('=').ok_or_else(|| GmcError::Format(format!("line {}: expected key = value", lineno + 1)))?;
            let value: Value = serde_json::from_str(val.trim()).unwrap_or_else(|_| Value::String(val.trim().to_string()));
            set_path(&mut root, key.trim(), value).map_err(|e| GmcError::Format(format!("line {}: {e}", lineno + 1)))?;
        }
        let cfg: Self = serde_json::from_value(root)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads JSON (first non-space character `{`) or key-value text.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        if text.trim_start().starts_with('{') {
            let cfg: Self = serde_json::from_str(text)?;
            cfg.validate()?;
            Ok(cfg)
        } else {
            Self::from_key_values(text)
        }
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut String) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        leaf => {
            out.push_str(prefix);
            out.push_str(" = ");
            out.push_str(&leaf.to_string());
            out.push('\n');
        }
    }
}

fn set_path(root: &mut Value, key: &str, value: Value) -> std::result::Result<(), String> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let map: &mut Map<String, Value> = cur.as_object_mut().ok_or_else(|| format!("{key}: not a section"))?;
        if !map.contains_key(*part) {
            return Err(format!("unknown key {key}"));
        }
        if i + 1 == parts.len() {
            map.insert((*part).to_string(), value);
            return Ok(());
        }
        cur = map.get_mut(*part).expect("checked");
    }
    Err(format!("empty key {key}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn key_value_roundtrip() {
        let cfg = RunConfig::default();
        let text = cfg.to_key_values().unwrap();
        assert!(text.contains("model.d = 1"));
        assert_eq!(RunConfig::from_key_values(&text).unwrap(), cfg);
        let json = cfg.to_json().unwrap();
        assert_eq!(RunConfig::parse(&json).unwrap(), cfg);
    }

    #[test]
    fn overrides_and_errors() {
        let cfg = RunConfig::from_key_values("# comment\nmodel.T = 0.75\nverify.scale = quick\nlaplace.xGrid = [1, 2.5]\n").unwrap();
        assert_eq!(cfg.model.t, 0.75);
        assert_eq!(cfg.verify.scale, Scale::Quick);
        assert_eq!(cfg.laplace.x_grid, vec![1.0, 2.5]);
        assert!(RunConfig::from_key_values("model.nope = 1").is_err());
        assert!(RunConfig::from_key_values("model.d").is_err());
        assert!(RunConfig::from_key_values("tolerances.seGate = -1").is_err());
        assert!(RunConfig::from_key_values("model.gamma = 5").is_err());
    }

    proptest! {
        #[test]
        fn arbitrary_floats_roundtrip(t in 1e-3f64..1e3, g in 0.01f64..1.4, q in 1e-14f64..1e-2, n in 1usize..10_000_000) {
            let mut cfg = RunConfig::default();
            cfg.model.t = t;
            cfg.model.gamma = g;
            cfg.tolerances.quad_tol = q;
            cfg.mc.n = n;
            let back = RunConfig::from_key_values(&cfg.to_key_values().unwrap()).unwrap();
            prop_assert_eq!(back, cfg);
        }
    }
}
