//! Memory devices, HBM generations and accelerator nodes.
//!
//! A [`MemoryDeviceSpec`] describes one stack or module of a memory
//! technology. A [`NodeSpec`] is one accelerator die with an ordered list of
//! memory tiers, each tier being `stacks` copies of a device. Derived
//! quantities (stack bandwidth, efficiency ratios) and the PNM / 3D-stacking /
//! flash variants live here as free functions.

mod catalog;

pub use catalog::{
    Catalog, CatalogDocument, CatalogError, HbmGenerationRecord, MemoryDeviceRecord, NodeRecord,
    TierRecord,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Flash page size used for page-granular reads.
pub const FLASH_PAGE_BYTES: u64 = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HardwareError {
    #[error("device `{0}` has zero power")]
    ZeroPower(String),
    #[error("{kind} factor {value} outside [{min}, {max}]")]
    VariantRange {
        kind: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("device `{name}`: {reason}")]
    InvalidDevice { name: String, reason: String },
    #[error("HBM generation `{name}`: {reason}")]
    InvalidGeneration { name: String, reason: String },
    #[error("node `{name}`: {reason}")]
    InvalidNode { name: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WriteEndurance {
    High,
    Low,
}

/// One memory technology tier: a single stack, module or card.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemoryDeviceSpec {
    pub name: String,
    pub capacity_bytes: u64,
    /// bytes/s
    pub read_bw: f64,
    /// bytes/s; may be zero for write-limited devices
    pub write_bw: f64,
    pub power_watts: f64,
    /// seconds
    pub read_latency: f64,
    /// Page size for flash-class devices, burst size otherwise.
    pub read_granularity_bytes: u64,
    pub write_endurance: WriteEndurance,
    /// USD per byte of capacity
    pub cost_per_byte: f64,
    /// USD per byte/s of read bandwidth
    pub cost_per_bw: f64,
}

impl MemoryDeviceSpec {
    pub fn validate(&self) -> Result<(), HardwareError> {
        let invalid = |reason: &str| HardwareError::InvalidDevice {
            name: self.name.clone(),
            reason: reason.to_string(),
        };
        let positive = [
            ("read_bw", self.read_bw),
            ("power_watts", self.power_watts),
            ("read_latency", self.read_latency),
            ("cost_per_byte", self.cost_per_byte),
            ("cost_per_bw", self.cost_per_bw),
        ];
        for (field, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(invalid(&format!("{field} must be > 0, got {value}")));
            }
        }
        if self.capacity_bytes == 0 {
            return Err(invalid("capacity_bytes must be > 0"));
        }
        if !(self.write_bw >= 0.0 && self.write_bw.is_finite()) {
            return Err(invalid("write_bw must be >= 0"));
        }
        if self.write_bw == 0.0 && self.write_endurance == WriteEndurance::High {
            return Err(invalid("write_bw may be 0 only for low-endurance devices"));
        }
        if !self.read_granularity_bytes.is_power_of_two() {
            return Err(invalid("read_granularity_bytes must be a power of two"));
        }
        Ok(())
    }
}

/// A JEDEC HBM generation at its maximum configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HbmGeneration {
    pub name: String,
    /// Gb/s per pin
    pub pin_rate_gbps: f64,
    pub pins: u32,
    pub dies_per_stack: u32,
    pub capacity_per_die_bytes: u64,
}

impl HbmGeneration {
    pub fn validate(&self) -> Result<(), HardwareError> {
        let invalid = |reason: &str| HardwareError::InvalidGeneration {
            name: self.name.clone(),
            reason: reason.to_string(),
        };
        if self.pins != 1024 && self.pins != 2048 {
            return Err(invalid("pins must be 1024 or 2048"));
        }
        if self.dies_per_stack == 0 {
            return Err(invalid("dies_per_stack must be >= 1"));
        }
        if !(self.pin_rate_gbps >= 0.0) {
            return Err(invalid("pin_rate_gbps must be >= 0"));
        }
        Ok(())
    }
}

/// Stack bandwidth in bytes/s: pins × per-pin rate / 8.
pub fn stack_bandwidth(gen: &HbmGeneration) -> f64 {
    gen.pins as f64 * gen.pin_rate_gbps * 1e9 / 8.0
}

pub fn stack_capacity(gen: &HbmGeneration) -> u64 {
    gen.dies_per_stack as u64 * gen.capacity_per_die_bytes
}

/// `stacks` copies of one device attached to a node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TierSlot {
    pub device: MemoryDeviceSpec,
    pub stacks: u32,
}

impl TierSlot {
    pub fn name(&self) -> &str {
        &self.device.name
    }

    pub fn capacity_bytes(&self) -> u64 {
        self.device.capacity_bytes * self.stacks as u64
    }

    pub fn read_bw(&self) -> f64 {
        self.device.read_bw * self.stacks as f64
    }

    pub fn write_bw(&self) -> f64 {
        self.device.write_bw * self.stacks as f64
    }

    pub fn power_watts(&self) -> f64 {
        self.device.power_watts * self.stacks as f64
    }
}

/// One accelerator chip and the memory stacks wired to it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeSpec {
    pub name: String,
    /// FLOP/s at the model's data type
    pub peak_flops: f64,
    pub sram_bytes: u64,
    pub tiers: Vec<TierSlot>,
    pub network_ports: u32,
    /// Compute die only; memory power is added per tier.
    pub chip_power_watts: f64,
    pub capex_usd: f64,
}

impl NodeSpec {
    pub fn validate(&self) -> Result<(), HardwareError> {
        let invalid = |reason: String| HardwareError::InvalidNode {
            name: self.name.clone(),
            reason,
        };
        if self.tiers.is_empty() {
            return Err(invalid("at least one memory tier is required".into()));
        }
        if !(self.peak_flops > 0.0) {
            return Err(invalid("peak_flops must be > 0".into()));
        }
        if !(self.chip_power_watts >= 0.0) || !(self.capex_usd >= 0.0) {
            return Err(invalid("chip power and capex must be >= 0".into()));
        }
        for (i, tier) in self.tiers.iter().enumerate() {
            if tier.stacks == 0 {
                return Err(invalid(format!("tier `{}` has zero stacks", tier.name())));
            }
            if self.tiers[..i].iter().any(|t| t.name() == tier.name()) {
                return Err(invalid(format!("tier `{}` listed twice", tier.name())));
            }
            tier.device.validate()?;
        }
        Ok(())
    }

    pub fn tier(&self, name: &str) -> Option<&TierSlot> {
        self.tiers.iter().find(|t| t.name() == name)
    }

    pub fn memory_power_watts(&self) -> f64 {
        self.tiers.iter().map(TierSlot::power_watts).sum()
    }

    /// Compute die plus every attached stack.
    pub fn total_power_watts(&self) -> f64 {
        self.chip_power_watts + self.memory_power_watts()
    }

    pub fn memory_capacity_bytes(&self) -> u64 {
        self.tiers.iter().map(TierSlot::capacity_bytes).sum()
    }

    /// Highest-bandwidth tier that tolerates frequent writes.
    pub fn fastest_writable_tier(&self) -> Option<&TierSlot> {
        self.tiers
            .iter()
            .filter(|t| t.device.write_endurance == WriteEndurance::High)
            .fold(None, |best: Option<&TierSlot>, t| match best {
                Some(b) if b.read_bw() >= t.read_bw() => Some(b),
                _ => Some(t),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VariantKind {
    /// Processing-near-memory: logic on a nearby die multiplies usable bandwidth.
    Pnm { bw_multiplier: f64 },
    /// Compute on the memory base die: same bandwidth, shorter data path.
    Stacked3D { power_divisor: f64 },
    /// Flash dies stacked like HBM.
    Hbf,
}

pub const PNM_RANGE: (f64, f64) = (2.0, 5.0);
pub const STACKED3D_RANGE: (f64, f64) = (2.0, 3.0);

pub fn apply_variant(
    base: &MemoryDeviceSpec,
    kind: VariantKind,
) -> Result<MemoryDeviceSpec, HardwareError> {
    let check = |kind: &'static str, value: f64, (min, max): (f64, f64)| {
        if (min..=max).contains(&value) {
            Ok(())
        } else {
            Err(HardwareError::VariantRange {
                kind,
                value,
                min,
                max,
            })
        }
    };
    let mut out = base.clone();
    match kind {
        VariantKind::Pnm { bw_multiplier } => {
            check("pnm bandwidth", bw_multiplier, PNM_RANGE)?;
            out.name = format!("{}+pnm", base.name);
            out.read_bw = base.read_bw * bw_multiplier;
            out.write_bw = base.write_bw * bw_multiplier;
        }
        VariantKind::Stacked3D { power_divisor } => {
            check("3d power", power_divisor, STACKED3D_RANGE)?;
            out.name = format!("{}+3d", base.name);
            out.power_watts = base.power_watts / power_divisor;
        }
        VariantKind::Hbf => {
            out.name = format!("{}+hbf", base.name);
            out.write_endurance = WriteEndurance::Low;
            out.read_granularity_bytes = FLASH_PAGE_BYTES;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Efficiency {
    /// (bytes/s) per watt
    pub bw_per_watt: f64,
    /// bytes per watt
    pub cap_per_watt: f64,
}

pub fn derive_efficiency(spec: &MemoryDeviceSpec) -> Result<Efficiency, HardwareError> {
    if !(spec.power_watts > 0.0) {
        return Err(HardwareError::ZeroPower(spec.name.clone()));
    }
    Ok(Efficiency {
        bw_per_watt: spec.read_bw / spec.power_watts,
        cap_per_watt: spec.capacity_bytes as f64 / spec.power_watts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::{GB, GIB};

    fn gen(name: &str, rate: f64, pins: u32, dies: u32, die_gib: u64) -> HbmGeneration {
        HbmGeneration {
            name: name.into(),
            pin_rate_gbps: rate,
            pins,
            dies_per_stack: dies,
            capacity_per_die_bytes: die_gib * GIB,
        }
    }

    fn device(bw_gb: f64, power: f64) -> MemoryDeviceSpec {
        MemoryDeviceSpec {
            name: "dev".into(),
            capacity_bytes: 48_000_000_000,
            read_bw: bw_gb * GB,
            write_bw: bw_gb * GB,
            power_watts: power,
            read_latency: 50e-9,
            read_granularity_bytes: 32,
            write_endurance: WriteEndurance::High,
            cost_per_byte: 1e-8,
            cost_per_bw: 1e-8,
        }
    }

    #[test]
    fn hbm3_and_hbm4_bandwidth() {
        let hbm3 = stack_bandwidth(&gen("HBM3", 6.4, 1024, 12, 2)) / GB;
        assert!((hbm3 - 819.2).abs() < 1e-9);
        assert_eq!(hbm3.round(), 819.0);
        assert_eq!(stack_bandwidth(&gen("HBM4", 8.0, 2048, 16, 4)) / GB, 2048.0);
        assert_eq!(stack_bandwidth(&gen("zero", 0.0, 1024, 1, 1)), 0.0);
    }

    #[test]
    fn stack_capacities() {
        assert_eq!(stack_capacity(&gen("HBM3E", 9.8, 1024, 16, 3)), 48 * GIB);
        assert_eq!(stack_capacity(&gen("HBM2", 2.4, 1024, 8, 1)), 8 * GIB);
        assert_eq!(stack_capacity(&gen("one", 1.0, 1024, 1, 1)), GIB);
    }

    #[test]
    fn generation_pins_are_checked() {
        assert!(gen("odd", 1.0, 512, 4, 1).validate().is_err());
        assert!(gen("nodies", 1.0, 1024, 0, 1).validate().is_err());
    }

    #[test]
    fn efficiency_of_hbm4_stack() {
        let e = derive_efficiency(&device(1638.0, 40.0)).unwrap();
        assert!((e.bw_per_watt / GB - 40.95).abs() < 1e-9);
        assert_eq!((e.bw_per_watt / GB).round(), 41.0);
    }

    #[test]
    fn zero_power_is_an_error() {
        let mut d = device(100.0, 1.0);
        d.power_watts = 0.0;
        assert_eq!(
            derive_efficiency(&d),
            Err(HardwareError::ZeroPower("dev".into()))
        );
    }

    #[test]
    fn stacked_3d_halves_power() {
        let out = apply_variant(
            &device(1638.0, 40.0),
            VariantKind::Stacked3D { power_divisor: 2.0 },
        )
        .unwrap();
        assert_eq!(out.read_bw, 1638.0 * GB);
        assert_eq!(out.power_watts, 20.0);
    }

    #[test]
    fn pnm_scales_bandwidth() {
        let out =
            apply_variant(&device(51.0, 12.0), VariantKind::Pnm { bw_multiplier: 2.0 }).unwrap();
        assert_eq!(out.read_bw, 102.0 * GB);
        assert_eq!(out.write_bw, 102.0 * GB);
        assert!(matches!(
            apply_variant(
                &device(1638.0, 40.0),
                VariantKind::Pnm { bw_multiplier: 6.0 }
            ),
            Err(HardwareError::VariantRange { .. })
        ));
        assert!(apply_variant(
            &device(1.0, 1.0),
            VariantKind::Stacked3D { power_divisor: 1.5 }
        )
        .is_err());
    }

    #[test]
    fn hbf_variant_is_page_granular_and_write_limited() {
        let out = apply_variant(&device(1638.0, 40.0), VariantKind::Hbf).unwrap();
        assert_eq!(out.write_endurance, WriteEndurance::Low);
        assert_eq!(out.read_granularity_bytes, FLASH_PAGE_BYTES);
        assert!(out.validate().is_ok());
    }

    #[test]
    fn device_invariants() {
        let mut d = device(10.0, 1.0);
        d.read_granularity_bytes = 48;
        assert!(d.validate().is_err());
        let mut d = device(10.0, 1.0);
        d.write_bw = 0.0;
        assert!(d.validate().is_err());
        d.write_endurance = WriteEndurance::Low;
        assert!(d.validate().is_ok());
    }

    #[test]
    fn node_power_is_chip_plus_stacks() {
        let node = NodeSpec {
            name: "n".into(),
            peak_flops: 1e15,
            sram_bytes: 0,
            tiers: vec![TierSlot {
                device: device(1638.0, 40.0),
                stacks: 8,
            }],
            network_ports: 4,
            chip_power_watts: 500.0,
            capex_usd: 1.0,
        };
        assert_eq!(node.total_power_watts(), 500.0 + 8.0 * 40.0);
        assert!(node.validate().is_ok());
    }
}
