//! Time-annealed sigmoid scale.
//!
//! The scale `s_t` follows a Laplace or Logistic density over normalized
//! training progress `t / T ∈ [0, 1]`, rescaled so the peak at `mu` equals 1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Laplace,
    Logistic,
    Constant,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnnealSchedule {
    pub kind: ScheduleKind,
    /// Peak location as a fraction of training.
    pub mu: f64,
    pub b: f64,
    /// Value returned by `ScheduleKind::Constant`.
    pub const_s: f64,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::Laplace,
            mu: 0.75,
            b: 0.5,
            const_s: 1.0,
        }
    }
}

impl AnnealSchedule {
    pub fn off() -> Self {
        Self {
            kind: ScheduleKind::Off,
            ..Self::default()
        }
    }

    pub fn constant(s: f64) -> Self {
        Self {
            kind: ScheduleKind::Constant,
            const_s: s,
            ..Self::default()
        }
    }

    pub fn laplace(mu: f64, b: f64) -> Self {
        Self {
            kind: ScheduleKind::Laplace,
            mu,
            b,
            ..Self::default()
        }
    }

    pub fn logistic(mu: f64, b: f64) -> Self {
        Self {
            kind: ScheduleKind::Logistic,
            mu,
            b,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b > 0.0 && self.b.is_finite()) {
            return Err(Error::Config(format!(
                "schedule scale b must be positive, got {}",
                self.b
            )));
        }
        if !(0.0..=1.0).contains(&self.mu) {
            return Err(Error::Config(format!(
                "schedule mu must lie in [0, 1], got {}",
                self.mu
            )));
        }
        if !(0.0..=1.0).contains(&self.const_s) {
            return Err(Error::Config(format!(
                "constant scale must lie in [0, 1], got {}",
                self.const_s
            )));
        }
        Ok(())
    }

    /// `s_t` at training progress `progress ∈ [0, 1]`.
    pub fn scale_at(&self, progress: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&progress) {
            return Err(Error::Input(format!("progress must lie in [0, 1], got {progress}")));
        }
        self.validate()?;
        Ok(match self.kind {
            ScheduleKind::Off => 0.0,
            ScheduleKind::Constant => self.const_s,
            ScheduleKind::Laplace => laplace_pdf_scaled(progress, self.mu, self.b)?,
            ScheduleKind::Logistic => logistic_pdf_scaled(progress, self.mu, self.b)?,
        })
    }
}

/// Logistic density divided by its peak `1 / (4b)`: `sech²((t − μ) / 2b)`.
pub fn logistic_pdf_scaled(t: f64, mu: f64, b: f64) -> Result<f64> {
    check_b(b)?;
    let sech = 1.0 / ((t - mu) / (2.0 * b)).cosh();
    Ok(sech * sech)
}

/// Laplace density divided by its peak `1 / (2b)`: `exp(−|t − μ| / b)`.
pub fn laplace_pdf_scaled(t: f64, mu: f64, b: f64) -> Result<f64> {
    check_b(b)?;
    Ok((-(t - mu).abs() / b).exp())
}

fn check_b(b: f64) -> Result<()> {
    if b > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("scale b must be positive, got {b}")))
    }
}
