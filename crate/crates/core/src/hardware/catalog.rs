use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{HardwareError, HbmGeneration, MemoryDeviceSpec, NodeSpec, TierSlot, WriteEndurance};
use crate::units::{gb_to_bytes, gib_to_bytes, GB, MIB, NS, TFLOPS};

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("catalog parse error: {0}")]
    Parse(String),
    #[error("duplicate {section} entry `{name}`")]
    Duplicate { section: &'static str, name: String },
    #[error("node `{node}` references unknown memory device `{device}`")]
    UnknownDevice { node: String, device: String },
    #[error("{section} `{name}`: {reason}")]
    Field {
        section: &'static str,
        name: String,
        reason: String,
    },
    #[error(transparent)]
    Invalid(#[from] HardwareError),
}

/// A `[[memory_devices]]` entry, in document units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryDeviceRecord {
    pub name: String,
    /// Decimal gigabytes. Exactly one of `capacity_gb` / `capacity_gib`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity_gb: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity_gib: Option<f64>,
    /// Gigabytes per second (decimal).
    pub read_bw_gbps: f64,
    /// Defaults to read/4 for low-endurance devices, read otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub write_bw_gbps: Option<f64>,
    pub power_w: f64,
    pub read_latency_ns: f64,
    pub read_granularity_bytes: u64,
    pub write_endurance: WriteEndurance,
    pub cost_per_gb_usd: f64,
    /// Defaults to the module price divided by its read bandwidth.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_per_gbps_usd: Option<f64>,
}

impl MemoryDeviceRecord {
    pub fn to_spec(&self) -> Result<MemoryDeviceSpec, CatalogError> {
        let field_err = |reason: &str| CatalogError::Field {
            section: "memory_devices",
            name: self.name.clone(),
            reason: reason.to_string(),
        };
        let capacity_bytes = match (self.capacity_gb, self.capacity_gib) {
            (Some(gb), None) => gb_to_bytes(gb),
            (None, Some(gib)) => gib_to_bytes(gib),
            _ => {
                return Err(field_err(
                    "exactly one of capacity_gb / capacity_gib is required",
                ))
            }
        };
        let write_gbps = self.write_bw_gbps.unwrap_or(match self.write_endurance {
            WriteEndurance::Low => self.read_bw_gbps / 4.0,
            WriteEndurance::High => self.read_bw_gbps,
        });
        let capacity_gb = capacity_bytes as f64 / GB;
        let cost_per_gbps = self
            .cost_per_gbps_usd
            .unwrap_or(self.cost_per_gb_usd * capacity_gb / self.read_bw_gbps);
        let spec = MemoryDeviceSpec {
            name: self.name.clone(),
            capacity_bytes,
            read_bw: self.read_bw_gbps * GB,
            write_bw: write_gbps * GB,
            power_watts: self.power_w,
            read_latency: self.read_latency_ns * NS,
            read_granularity_bytes: self.read_granularity_bytes,
            write_endurance: self.write_endurance,
            cost_per_byte: self.cost_per_gb_usd / GB,
            cost_per_bw: cost_per_gbps / GB,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// A `[[hbm_generations]]` entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HbmGenerationRecord {
    pub name: String,
    pub pin_rate_gbps: f64,
    pub pins: u32,
    pub dies_per_stack: u32,
    pub capacity_per_die_gib: f64,
}

impl HbmGenerationRecord {
    pub fn to_generation(&self) -> Result<HbmGeneration, CatalogError> {
        let gen = HbmGeneration {
            name: self.name.clone(),
            pin_rate_gbps: self.pin_rate_gbps,
            pins: self.pins,
            dies_per_stack: self.dies_per_stack,
            capacity_per_die_bytes: gib_to_bytes(self.capacity_per_die_gib),
        };
        gen.validate()?;
        Ok(gen)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TierRecord {
    pub device: String,
    pub stacks: u32,
}

/// A `[[nodes]]` entry. Tiers reference memory devices by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeRecord {
    pub name: String,
    pub peak_tflops: f64,
    #[serde(default)]
    pub sram_mib: f64,
    pub tiers: Vec<TierRecord>,
    #[serde(default = "default_ports")]
    pub network_ports: u32,
    pub chip_power_w: f64,
    pub capex_usd: f64,
}

fn default_ports() -> u32 {
    4
}

impl NodeRecord {
    pub fn resolve(
        &self,
        devices: &BTreeMap<String, MemoryDeviceSpec>,
    ) -> Result<NodeSpec, CatalogError> {
        let tiers = self
            .tiers
            .iter()
            .map(|t| {
                devices
                    .get(&t.device)
                    .map(|d| TierSlot {
                        device: d.clone(),
                        stacks: t.stacks,
                    })
                    .ok_or_else(|| CatalogError::UnknownDevice {
                        node: self.name.clone(),
                        device: t.device.clone(),
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let node = NodeSpec {
            name: self.name.clone(),
            peak_flops: self.peak_tflops * TFLOPS,
            sram_bytes: (self.sram_mib * MIB as f64).round() as u64,
            tiers,
            network_ports: self.network_ports,
            chip_power_watts: self.chip_power_w,
            capex_usd: self.capex_usd,
        };
        node.validate()?;
        Ok(node)
    }
}

/// On-disk catalog document.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogDocument {
    #[serde(default)]
    pub memory_devices: Vec<MemoryDeviceRecord>,
    #[serde(default)]
    pub hbm_generations: Vec<HbmGenerationRecord>,
    #[serde(default)]
    pub nodes: Vec<NodeRecord>,
}

/// Immutable set of devices, HBM generations and nodes.
///
/// Built-ins are always present; entries loaded from a document shadow
/// built-ins with the same name. Records are kept verbatim so that
/// serializing a catalog and loading it back yields an identical catalog.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    device_records: BTreeMap<String, MemoryDeviceRecord>,
    generation_records: BTreeMap<String, HbmGenerationRecord>,
    node_records: BTreeMap<String, NodeRecord>,
    devices: BTreeMap<String, MemoryDeviceSpec>,
    generations: BTreeMap<String, HbmGeneration>,
    nodes: BTreeMap<String, NodeSpec>,
}

impl Catalog {
    pub fn builtin() -> Self {
        Self::from_document(builtin_document()).expect("built-in catalog is valid")
    }

    /// Parses a TOML catalog document and merges it over the built-ins.
    pub fn load(document: &str) -> Result<Self, CatalogError> {
        let doc: CatalogDocument =
            toml::from_str(document).map_err(|e| CatalogError::Parse(e.to_string()))?;
        Self::from_document(doc)
    }

    pub fn from_document(doc: CatalogDocument) -> Result<Self, CatalogError> {
        check_unique("memory_devices", doc.memory_devices.iter().map(|r| &r.name))?;
        check_unique(
            "hbm_generations",
            doc.hbm_generations.iter().map(|r| &r.name),
        )?;
        check_unique("nodes", doc.nodes.iter().map(|r| &r.name))?;

        let base = builtin_document();
        let mut device_records: BTreeMap<_, _> = base
            .memory_devices
            .into_iter()
            .map(|r| (r.name.clone(), r))
            .collect();
        let mut generation_records: BTreeMap<_, _> = base
            .hbm_generations
            .into_iter()
            .map(|r| (r.name.clone(), r))
            .collect();
        let mut node_records: BTreeMap<_, _> = base
            .nodes
            .into_iter()
            .map(|r| (r.name.clone(), r))
            .collect();
        device_records.extend(doc.memory_devices.into_iter().map(|r| (r.name.clone(), r)));
        generation_records.extend(doc.hbm_generations.into_iter().map(|r| (r.name.clone(), r)));
        node_records.extend(doc.nodes.into_iter().map(|r| (r.name.clone(), r)));

        let devices = device_records
            .iter()
            .map(|(k, r)| Ok((k.clone(), r.to_spec()?)))
            .collect::<Result<BTreeMap<_, _>, CatalogError>>()?;
        let generations = generation_records
            .iter()
            .map(|(k, r)| Ok((k.clone(), r.to_generation()?)))
            .collect::<Result<BTreeMap<_, _>, CatalogError>>()?;
        let nodes = node_records
            .iter()
            .map(|(k, r)| Ok((k.clone(), r.resolve(&devices)?)))
            .collect::<Result<BTreeMap<_, _>, CatalogError>>()?;

        Ok(Self {
            device_records,
            generation_records,
            node_records,
            devices,
            generations,
            nodes,
        })
    }

    /// The full catalog (built-ins included) as a document.
    pub fn to_document(&self) -> CatalogDocument {
        CatalogDocument {
            memory_devices: self.device_records.values().cloned().collect(),
            hbm_generations: self.generation_records.values().cloned().collect(),
            nodes: self.node_records.values().cloned().collect(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_document()).expect("catalog document serializes")
    }

    pub fn device(&self, name: &str) -> Option<&MemoryDeviceSpec> {
        self.devices.get(name)
    }

    pub fn generation(&self, name: &str) -> Option<&HbmGeneration> {
        self.generations.get(name)
    }

    pub fn node(&self, name: &str) -> Option<&NodeSpec> {
        self.nodes.get(name)
    }

    pub fn devices(&self) -> impl Iterator<Item = &MemoryDeviceSpec> {
        self.devices.values()
    }

    pub fn generations(&self) -> impl Iterator<Item = &HbmGeneration> {
        self.generations.values()
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeSpec> {
        self.nodes.values()
    }

    pub fn device_specs(&self) -> &BTreeMap<String, MemoryDeviceSpec> {
        &self.devices
    }

    pub fn device_record(&self, name: &str) -> Option<&MemoryDeviceRecord> {
        self.device_records.get(name)
    }
}

impl Default for Catalog {
    fn default() -> Self {
        Self::builtin()
    }
}

fn check_unique<'a>(
    section: &'static str,
    names: impl Iterator<Item = &'a String>,
) -> Result<(), CatalogError> {
    let mut seen = BTreeSet::new();
    for name in names {
        if !seen.insert(name) {
            return Err(CatalogError::Duplicate {
                section,
                name: name.clone(),
            });
        }
    }
    Ok(())
}

fn generation(name: &str, rate: f64, pins: u32, dies: u32, die_gib: f64) -> HbmGenerationRecord {
    HbmGenerationRecord {
        name: name.into(),
        pin_rate_gbps: rate,
        pins,
        dies_per_stack: dies,
        capacity_per_die_gib: die_gib,
    }
}

#[allow(clippy::too_many_arguments)]
fn device(
    name: &str,
    capacity_gb: f64,
    read_bw_gbps: f64,
    power_w: f64,
    read_latency_ns: f64,
    read_granularity_bytes: u64,
    write_endurance: WriteEndurance,
    cost_per_gb_usd: f64,
) -> MemoryDeviceRecord {
    MemoryDeviceRecord {
        name: name.into(),
        capacity_gb: Some(capacity_gb),
        capacity_gib: None,
        read_bw_gbps,
        write_bw_gbps: None,
        power_w,
        read_latency_ns,
        read_granularity_bytes,
        write_endurance,
        cost_per_gb_usd,
        cost_per_gbps_usd: None,
    }
}

fn node(name: &str, tflops: f64, tiers: &[(&str, u32)], chip_w: f64, capex: f64) -> NodeRecord {
    NodeRecord {
        name: name.into(),
        peak_tflops: tflops,
        sram_mib: 128.0,
        tiers: tiers
            .iter()
            .map(|&(device, stacks)| TierRecord {
                device: device.into(),
                stacks,
            })
            .collect(),
        network_ports: 4,
        chip_power_w: chip_w,
        capex_usd: capex,
    }
}

/// Built-in entries.
///
/// HBM generations are the JEDEC maxima (pin rate, pins, dies, GiB per die).
/// Devices are single stacks/modules with decimal-GB capacity and bandwidth.
/// Latencies inside a published range use a representative point; HBF power
/// sits just under its 80 W ceiling. Write bandwidth of the flash-class
/// devices is not published and defaults to read/4. Prices and all node
/// parameters are placeholders for what-if studies, not measured values.
pub fn builtin_document() -> CatalogDocument {
    use WriteEndurance::{High, Low};
    CatalogDocument {
        hbm_generations: vec![
            generation("HBM", 1.0, 1024, 4, 1.0),
            generation("HBM2", 2.4, 1024, 8, 1.0),
            generation("HBM2E", 3.6, 1024, 12, 2.0),
            generation("HBM3", 6.4, 1024, 12, 2.0),
            generation("HBM3E", 9.8, 1024, 16, 3.0),
            generation("HBM4", 8.0, 2048, 16, 4.0),
        ],
        memory_devices: vec![
            device("HBF", 512.0, 1638.0, 79.0, 2_000.0, 4096, Low, 2.0),
            device("HBM4", 48.0, 1638.0, 40.0, 50.0, 32, High, 15.0),
            device("DDR5", 64.0, 51.0, 12.0, 50.0, 64, High, 3.0),
            device("LPDDR5", 16.0, 51.0, 3.0, 50.0, 64, High, 4.0),
            device("Flash", 4096.0, 4.0, 50.0, 20_000.0, 4096, Low, 0.08),
        ],
        nodes: vec![
            node("accel-hbm", 1000.0, &[("HBM4", 8)], 500.0, 30_000.0),
            node("accel-hbm-small", 500.0, &[("HBM4", 4)], 300.0, 16_000.0),
            node(
                "accel-hbm-hbf",
                1000.0,
                &[("HBM4", 4), ("HBF", 4)],
                500.0,
                28_000.0,
            ),
            node("accel-ddr", 1000.0, &[("DDR5", 12)], 500.0, 14_000.0),
        ],
    }
}
