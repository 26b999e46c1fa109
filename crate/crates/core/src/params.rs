//! Model parameters of the strictly logarithmic kernel ln(T/|x − y|).

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Dimension, intermittency and kernel scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Ambient dimension d ≥ 1.
    pub d: usize,
    /// Intermittency γ with 0 < γ < √(2d).
    pub gamma: f64,
    /// Kernel scale T > 0.
    #[serde(rename = "T")]
    pub t: f64,
}

impl ModelParams {
    /// Validated constructor.
    pub fn new(d: usize, gamma: f64, t: f64) -> Result<Self> {
        let p = Self { d, gamma, t };
        p.validate()?;
        Ok(p)
    }

    /// Checks the subcritical range and positivity of T.
    pub fn validate(&self) -> Result<()> {
        if self.d < 1 {
            return Err(invalid("dimension must be at least 1"));
        }
        let crit = (2.0 * self.d as f64).sqrt();
        if !(self.gamma > 0.0 && self.gamma < crit) {
            return Err(invalid(format!("gamma {} outside (0, {crit:.6})", self.gamma)));
        }
        if !(self.t > 0.0 && self.t.is_finite()) {
            return Err(invalid(format!("kernel scale T = {} must be positive", self.t)));
        }
        Ok(())
    }

    /// b = 1/2 + d/γ².
    pub fn b(&self) -> f64 {
        0.5 + self.d as f64 / (self.gamma * self.gamma)
    }

    /// q = 2d/γ², the moment blow-up exponent.
    pub fn q(&self) -> f64 {
        2.0 * self.d as f64 / (self.gamma * self.gamma)
    }

    /// Same model with a different kernel scale.
    pub fn with_t(&self, t: f64) -> Self {
        Self { t, ..*self }
    }

    /// Same model with a different intermittency.
    pub fn with_gamma(&self, gamma: f64) -> Self {
        Self { gamma, ..*self }
    }
}
