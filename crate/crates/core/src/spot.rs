//! Seasonal trend and the geometric and arithmetic spot models.
//!
//! Time is measured in business days: 261 per year, 5 per week.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::kernels::KernelSpec;
use crate::lss::{LssProcess, SimConfig, SimOutput};

/// log Λ(t) = β₀ + β₁ cos((τ₁ + 2πt)/P_y) + β₂ cos((τ₂ + 2πt)/P_w) + β₃ t.
///
/// The phase enters as printed, inside the numerator; 2π(t + τ)/P is a
/// different parametrisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Seasonality {
    #[serde(default)]
    pub beta0: f64,
    #[serde(default)]
    pub beta1: f64,
    #[serde(default)]
    pub beta2: f64,
    #[serde(default)]
    pub beta3: f64,
    #[serde(default)]
    pub tau1: f64,
    #[serde(default)]
    pub tau2: f64,
    #[serde(default = "year")]
    pub period_year: f64,
    #[serde(default = "week")]
    pub period_week: f64,
}

fn year() -> f64 {
    261.0
}

fn week() -> f64 {
    5.0
}

impl Default for Seasonality {
    fn default() -> Self {
        Seasonality {
            beta0: 0.0,
            beta1: 0.0,
            beta2: 0.0,
            beta3: 0.0,
            tau1: 0.0,
            tau2: 0.0,
            period_year: year(),
            period_week: week(),
        }
    }
}

impl Seasonality {
    pub fn log_value(&self, t: f64) -> f64 {
        use std::f64::consts::PI;
        self.beta0
            + self.beta1 * ((self.tau1 + 2.0 * PI * t) / self.period_year).cos()
            + self.beta2 * ((self.tau2 + 2.0 * PI * t) / self.period_week).cos()
            + self.beta3 * t
    }

    /// Λ(t).
    pub fn value(&self, t: f64) -> f64 {
        self.log_value(t).exp()
    }
}

pub fn log_seasonality(s: &Seasonality, t: f64) -> f64 {
    s.log_value(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpotKind {
    /// S = Λ exp(Y).
    Geometric,
    /// S = Λ + Y.
    Arithmetic,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpotModel {
    pub kind: SpotKind,
    #[serde(default)]
    pub seasonality: Seasonality,
    pub core: LssProcess,
}

impl SpotModel {
    pub fn validate(&self) -> Result<()> {
        self.core.validate()
    }

    /// Set for arithmetic models whose core is not guaranteed nonnegative:
    /// the driver must be a subordinator, the kernels nonnegative and the
    /// level and drift weight nonnegative.
    pub fn positivity_warning(&self) -> bool {
        if self.kind == SpotKind::Geometric {
            return false;
        }
        let c = &self.core;
        let drift_ok = c.skew == 0.0 || (c.skew > 0.0 && c.q.as_ref().is_none_or(nonnegative));
        !(c.driver.is_subordinator() && nonnegative(&c.g) && c.mu >= 0.0 && drift_ok)
    }

    /// Spot prices from a core path on the grid `times`.
    pub fn spot_path(&self, times: &[f64], core: &[f64]) -> Vec<f64> {
        times
            .iter()
            .zip(core)
            .map(|(&t, &y)| match self.kind {
                SpotKind::Geometric => self.seasonality.value(t) * y.exp(),
                SpotKind::Arithmetic => self.seasonality.value(t) + y,
            })
            .collect()
    }

    /// Simulates the core and maps every path to prices.
    pub fn simulate(&self, cfg: &SimConfig) -> Result<SimOutput> {
        let mut out = self.core.simulate(cfg)?;
        for p in &mut out.paths {
            *p = self.spot_path(&out.times, p);
        }
        Ok(out)
    }
}

fn nonnegative(k: &KernelSpec) -> bool {
    match k {
        KernelSpec::Ou { .. } | KernelSpec::Gamma { .. } | KernelSpec::Bjerksund { .. } => true,
        KernelSpec::GammaDensity { weight, .. } => *weight >= 0.0,
        _ => {
            let scale = k.memory_scale();
            (0..=400).all(|i| k.value(scale * 20.0 * i as f64 / 400.0) >= 0.0)
        }
    }
}
