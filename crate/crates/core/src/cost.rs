//! System power, TCO rate, CO2e and per-token ratio metrics.
//!
//! "Performance" is tokens per second across the whole system.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hardware::NodeSpec;
use crate::units::GB;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error("lifetime_hours must be > 0")]
    ZeroLifetime,
    #[error("invalid cost model: {0}")]
    Invalid(String),
}

/// Defaults are placeholders, not measured figures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostModel {
    pub electricity_usd_per_kwh: f64,
    pub pue: f64,
    pub grid_intensity_g_per_kwh: f64,
    pub lifetime_hours: f64,
    pub embodied_kg_per_chip: f64,
    pub embodied_kg_per_memory_gb: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            electricity_usd_per_kwh: 0.08,
            pue: 1.1,
            grid_intensity_g_per_kwh: 200.0,
            lifetime_hours: 4.0 * 8760.0,
            embodied_kg_per_chip: 150.0,
            embodied_kg_per_memory_gb: 0.3,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<(), CostError> {
        let fields = [
            self.electricity_usd_per_kwh,
            self.grid_intensity_g_per_kwh,
            self.lifetime_hours,
            self.embodied_kg_per_chip,
            self.embodied_kg_per_memory_gb,
        ];
        if fields.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(CostError::Invalid(
                "all fields must be finite and >= 0".into(),
            ));
        }
        if !(self.pue >= 1.0) {
            return Err(CostError::Invalid("pue must be >= 1".into()));
        }
        if self.lifetime_hours == 0.0 {
            return Err(CostError::ZeroLifetime);
        }
        Ok(())
    }
}

/// `chips` copies of one node.
#[derive(Debug, Clone, Copy)]
pub struct SystemSpec<'a> {
    pub node: &'a NodeSpec,
    pub chips: u64,
}

impl SystemSpec<'_> {
    /// Chips plus memory, before facility overhead.
    pub fn it_power_watts(&self) -> f64 {
        self.chips as f64 * self.node.total_power_watts()
    }

    pub fn capex_usd(&self) -> f64 {
        self.chips as f64 * self.node.capex_usd
    }

    pub fn embodied_kg(&self, cm: &CostModel) -> f64 {
        let memory_gb = self.node.memory_capacity_bytes() as f64 / GB;
        self.chips as f64 * (cm.embodied_kg_per_chip + memory_gb * cm.embodied_kg_per_memory_gb)
    }
}

/// Facility power: IT power times PUE.
pub fn system_power(system: &SystemSpec, cm: &CostModel) -> f64 {
    system.it_power_watts() * cm.pue
}

/// USD per hour: capex amortized over the lifetime plus facility energy.
pub fn tco_rate(system: &SystemSpec, cm: &CostModel) -> Result<f64, CostError> {
    if !(cm.lifetime_hours > 0.0) {
        return Err(CostError::ZeroLifetime);
    }
    let kw = system_power(system, cm) / 1000.0;
    Ok(system.capex_usd() / cm.lifetime_hours + kw * cm.electricity_usd_per_kwh)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub system_power_watts: f64,
    /// USD/hour
    pub tco_rate: f64,
    pub tokens_per_usd: Option<f64>,
    pub tokens_per_joule: Option<f64>,
    /// gCO2e per token, operational plus amortized embodied.
    pub co2e_per_token: Option<f64>,
}

impl CostReport {
    pub fn usd_per_token(&self) -> Option<f64> {
        self.tokens_per_usd.map(|t| 1.0 / t)
    }
}

/// Ratios are absent when `throughput` (tokens/s) is zero.
pub fn ratio_metrics(
    throughput: f64,
    system: &SystemSpec,
    cm: &CostModel,
) -> Result<CostReport, CostError> {
    let power = system_power(system, cm);
    let tco = tco_rate(system, cm)?;
    let present = throughput > 0.0;
    let ratio = |f: &dyn Fn() -> f64| if present { Some(f()) } else { None };
    Ok(CostReport {
        system_power_watts: power,
        tco_rate: tco,
        tokens_per_usd: ratio(&|| throughput * 3600.0 / tco),
        tokens_per_joule: ratio(&|| throughput / power),
        co2e_per_token: ratio(&|| {
            let operational_g_per_s = power / 1000.0 * cm.grid_intensity_g_per_kwh / 3600.0;
            let embodied_g = system.embodied_kg(cm) * 1000.0;
            operational_g_per_s / throughput
                + embodied_g / (cm.lifetime_hours * 3600.0 * throughput)
        }),
    })
}
