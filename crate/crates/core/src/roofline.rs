//! Roofline phase estimates, scenario timing and bottleneck classification.
//!
//! All byte and FLOP counts are per chip on the critical path of one step.
//! A replica of `tp × pp × ep` chips serves `batch / dp` sequences. Attention
//! and always-on weights are split across `tp`; routed experts across
//! `tp × ep`; each expert-parallel rank runs attention for `1/ep` of the
//! replica's sequences. Pipeline stages run one after another, so `pp` adds
//! capacity but does not shorten a step.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hardware::{MemoryDeviceSpec, NodeSpec, TierSlot};
use crate::interconnect::{self, CollectiveKind, InterconnectError, Topology};
use crate::sharding::{resolve_placement, ResolvedPlacement, ShardingError, ShardingPlan};
use crate::units::round_up;
use crate::workload::{self, ModelSpec, Phase, RequestSpec, WorkloadError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RooflineError {
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Interconnect(#[from] InterconnectError),
    #[error(transparent)]
    Sharding(#[from] ShardingError),
    #[error("invalid knob: {0}")]
    InvalidKnob(String),
    #[error("tier `{0}` has zero write bandwidth but receives writes")]
    ZeroWriteBandwidth(String),
    #[error("no high-endurance tier available for activations")]
    NoWritableTier,
    #[error("plan uses {chips} chips but the {kind} fabric has {capacity}")]
    FabricTooSmall {
        chips: u64,
        capacity: u64,
        kind: &'static str,
    },
}

/// Utilization and overlap knobs. Defaults are placeholders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineKnobs {
    /// Fraction of peak FLOP/s achieved, both phases.
    pub compute_utilization: f64,
    /// Fraction of memory bandwidth achieved, both phases.
    pub memory_utilization: f64,
    /// Fraction of network time hidden behind compute or memory.
    pub overlap: f64,
    /// Activation bytes per in-flight token, in units of `d_model` elements.
    pub activation_multiplier: u64,
    /// Split the retrieval corpus across every chip instead of per replica.
    pub shared_context: bool,
}

impl Default for EngineKnobs {
    fn default() -> Self {
        Self {
            compute_utilization: 0.6,
            memory_utilization: 0.8,
            overlap: 0.0,
            activation_multiplier: workload::DEFAULT_ACTIVATION_MULTIPLIER,
            shared_context: false,
        }
    }
}

impl EngineKnobs {
    pub fn validate(&self) -> Result<(), RooflineError> {
        let unit = |name: &str, v: f64, allow_zero: bool| {
            let ok = if allow_zero { v >= 0.0 } else { v > 0.0 } && v <= 1.0;
            if ok {
                Ok(())
            } else {
                Err(RooflineError::InvalidKnob(format!("{name} = {v}")))
            }
        };
        unit("compute_utilization", self.compute_utilization, false)?;
        unit("memory_utilization", self.memory_utilization, false)?;
        unit("overlap", self.overlap, true)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bottleneck {
    Compute,
    MemoryBandwidth,
    Interconnect,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseEstimate {
    pub phase: Phase,
    pub context_len: u64,
    pub compute_time: f64,
    pub memory_time: f64,
    pub network_time: f64,
    pub step_time: f64,
    /// FLOP per byte of memory traffic.
    pub arithmetic_intensity: f64,
    pub bottleneck: Bottleneck,
    pub flops: f64,
    pub bytes: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioTiming {
    pub ttft: f64,
    pub time_to_completion: f64,
    /// Generated tokens per second of decode time, per replica.
    pub decode_tokens_per_second: f64,
    /// Generated tokens per second of end-to-end time, all replicas.
    pub system_tokens_per_second: f64,
    /// IT energy per generated token; absent when nothing is generated.
    pub energy_per_token: Option<f64>,
}

/// `min(peak, ai × bw)`.
pub fn attainable_flops(ai: f64, peak_flops: f64, bw: f64) -> f64 {
    peak_flops.min(ai * bw)
}

/// Read bandwidth after rounding each request up to the device's read size.
pub fn effective_read_bw(dev: &MemoryDeviceSpec, avg_request_bytes: f64) -> f64 {
    dev.read_bw * avg_request_bytes / round_up(avg_request_bytes, dev.read_granularity_bytes)
}

/// Memory always loses ties: decode is memory bound unless shown otherwise.
pub fn bottleneck_of(compute: f64, memory: f64, network: f64) -> Bottleneck {
    if network > compute.max(memory) {
        Bottleneck::Interconnect
    } else if compute > memory {
        Bottleneck::Compute
    } else {
        Bottleneck::MemoryBandwidth
    }
}

/// Expected number of distinct experts hit when `tokens` each pick `top_k`
/// of `n_experts` uniformly.
pub fn expected_touched_experts(n_experts: u64, top_k: u64, tokens: f64) -> f64 {
    let e = n_experts as f64;
    let miss = 1.0 - top_k as f64 / e;
    e * (1.0 - miss.powf(tokens))
}

#[derive(Debug, Clone, Copy)]
struct Traffic<'a> {
    tier: &'a TierSlot,
    bytes: f64,
    request_bytes: f64,
    write: bool,
}

/// Everything needed to evaluate steps of one scenario on one plan.
#[derive(Debug, Clone)]
pub struct Evaluator<'a> {
    pub model: &'a ModelSpec,
    pub request: &'a RequestSpec,
    pub node: &'a NodeSpec,
    pub plan: &'a ShardingPlan,
    pub topology: &'a Topology,
    pub knobs: &'a EngineKnobs,
    tiers: ResolvedPlacement<'a>,
}

impl<'a> Evaluator<'a> {
    pub fn new(
        model: &'a ModelSpec,
        request: &'a RequestSpec,
        node: &'a NodeSpec,
        plan: &'a ShardingPlan,
        topology: &'a Topology,
        knobs: &'a EngineKnobs,
    ) -> Result<Self, RooflineError> {
        model.validate()?;
        request.validate()?;
        knobs.validate()?;
        plan.validate()?;
        if let Some(capacity) = topology.capacity() {
            if plan.chips() > capacity {
                return Err(RooflineError::FabricTooSmall {
                    chips: plan.chips(),
                    capacity,
                    kind: topology.kind.label(),
                });
            }
        }
        let tiers = resolve_placement(&plan.placement, node)?;
        if tiers.activations.is_none() {
            return Err(RooflineError::NoWritableTier);
        }
        Ok(Self {
            model,
            request,
            node,
            plan,
            topology,
            knobs,
            tiers,
        })
    }

    fn replica_batch(&self) -> f64 {
        self.request.batch as f64 / self.plan.dp as f64
    }

    /// Sequences whose attention runs on one chip.
    fn rank_batch(&self) -> f64 {
        self.replica_batch() / self.plan.ep as f64
    }

    fn traffic(&self, phase: Phase, context_len: u64) -> Vec<Traffic<'a>> {
        let m = self.model;
        let (tp, ep) = (self.plan.tp as f64, self.plan.ep as f64);
        let dtype = m.dtype_bytes as f64;
        let tokens = match phase {
            Phase::Prefill => self.request.input_len,
            Phase::DecodeStep => 1,
        } as f64;
        let layers = m.layers as f64;

        let dense = layers
            * (m.attention_params_per_layer() + m.always_on_ffn_params_per_layer()) as f64
            * dtype
            / tp;
        let experts = match &m.moe {
            None => 0.0,
            Some(moe) => {
                let touched = expected_touched_experts(
                    moe.n_experts,
                    moe.top_k,
                    self.replica_batch() * tokens,
                );
                layers * touched * m.expert_params_per_layer() as f64 * dtype / (tp * ep)
            }
        };
        let weights = self.tiers.weights;
        let mut out = vec![Traffic {
            tier: weights,
            bytes: dense + experts,
            request_bytes: weights.device.read_granularity_bytes as f64,
            write: false,
        }];

        if !self.request.compute_only {
            let kv_token = workload::kv_bytes_per_token(m) as f64;
            let record = (2 * m.n_kv_heads * m.d_head * m.dtype_bytes) as f64;
            let kv = self.tiers.kv_cache;
            let (bytes, write) = match phase {
                Phase::Prefill => (self.rank_batch() * tokens * kv_token / tp, true),
                Phase::DecodeStep => (
                    self.rank_batch() * context_len as f64 * kv_token / tp,
                    false,
                ),
            };
            out.push(Traffic {
                tier: kv,
                bytes,
                request_bytes: record,
                write,
            });
        }

        let act = self.tiers.activations.expect("checked in new");
        out.push(Traffic {
            tier: act,
            bytes: self.rank_batch()
                * (m.d_model * m.dtype_bytes * self.knobs.activation_multiplier) as f64,
            request_bytes: act.device.read_granularity_bytes as f64,
            write: false,
        });
        out
    }

    fn memory_time(&self, traffic: &[Traffic]) -> Result<f64, RooflineError> {
        let util = self.knobs.memory_utilization;
        traffic.iter().try_fold(0.0, |acc, t| {
            if t.bytes == 0.0 {
                return Ok(acc);
            }
            let bw = if t.write {
                if t.tier.device.write_bw == 0.0 {
                    return Err(RooflineError::ZeroWriteBandwidth(t.tier.name().to_string()));
                }
                t.tier.write_bw()
            } else {
                effective_read_bw(&t.tier.device, t.request_bytes) * t.tier.stacks as f64
            };
            Ok(acc + t.bytes / (bw * util))
        })
    }

    /// Network seconds for one step in which each sequence advances `tokens`.
    pub fn network_time(&self, tokens: u64) -> Result<f64, RooflineError> {
        let m = self.model;
        let p = self.plan;
        let t = self.topology;
        let token_bytes = self.rank_batch() * tokens as f64 * (m.d_model * m.dtype_bytes) as f64;
        let layers = m.layers as f64;
        let mut total = 0.0;
        if p.tp > 1 {
            total += 2.0
                * layers
                * interconnect::collective_time(t, CollectiveKind::AllReduce, token_bytes, p.tp)?;
        }
        if p.ep > 1 && m.moe.is_some() {
            let routed = token_bytes * m.top_k() as f64;
            total += layers
                * (interconnect::collective_time(t, CollectiveKind::MoeDispatch, routed, p.ep)?
                    + interconnect::collective_time(t, CollectiveKind::MoeCollect, routed, p.ep)?);
        }
        if p.pp > 1 {
            total += (p.pp - 1) as f64 * interconnect::message_time(t, p.pp, token_bytes)?;
        }
        Ok(total * (1.0 - self.knobs.overlap))
    }

    fn estimate(&self, phase: Phase, context_len: u64) -> Result<PhaseEstimate, RooflineError> {
        let tokens = match phase {
            Phase::Prefill => self.request.input_len,
            Phase::DecodeStep => 1,
        };
        let flops = workload::flops(
            self.model,
            phase,
            context_len,
            tokens,
            self.replica_batch(),
            self.request.modality_flops_multiplier,
        ) / (self.plan.tp * self.plan.ep) as f64;
        let traffic = self.traffic(phase, context_len);
        let bytes: f64 = traffic.iter().map(|t| t.bytes).sum();
        let memory_time = self.memory_time(&traffic)?;
        let compute_time = flops / (self.node.peak_flops * self.knobs.compute_utilization);
        let network_time = self.network_time(tokens)?;
        Ok(PhaseEstimate {
            phase,
            context_len,
            compute_time,
            memory_time,
            network_time,
            step_time: compute_time.max(memory_time) + network_time,
            arithmetic_intensity: flops / bytes,
            bottleneck: bottleneck_of(compute_time, memory_time, network_time),
            flops,
            bytes,
        })
    }

    /// Processes the whole input and writes its KV cache.
    pub fn prefill(&self) -> Result<PhaseEstimate, RooflineError> {
        self.estimate(Phase::Prefill, self.request.input_len)
    }

    /// Generates one token per sequence attending over `context_len` tokens.
    pub fn decode_step(&self, context_len: u64) -> Result<PhaseEstimate, RooflineError> {
        self.estimate(Phase::DecodeStep, context_len)
    }

    /// Context seen by the `k`-th generated token (0-based).
    pub fn decode_context(&self, k: u64) -> u64 {
        self.request.input_len + k + 1
    }

    pub fn scenario_timing(&self) -> Result<ScenarioTiming, RooflineError> {
        let prefill = self.prefill()?.step_time;
        let mut ttft = prefill;
        for k in 0..self.request.thought_len {
            ttft += self.decode_step(self.decode_context(k))?.step_time;
        }
        let mut completion = ttft;
        for k in self.request.thought_len..self.request.generated_tokens() {
            completion += self.decode_step(self.decode_context(k))?.step_time;
        }
        let generated = self.request.generated_tokens() as f64;
        let decode_time = completion - prefill;
        let decode_tokens_per_second = if generated > 0.0 && decode_time > 0.0 {
            self.replica_batch() * generated / decode_time
        } else {
            0.0
        };
        let system_tokens = self.request.batch as f64 * generated;
        let system_tokens_per_second = if generated > 0.0 {
            system_tokens / completion
        } else {
            0.0
        };
        let energy = self.plan.chips() as f64 * self.node.total_power_watts() * completion;
        Ok(ScenarioTiming {
            ttft,
            time_to_completion: completion,
            decode_tokens_per_second,
            system_tokens_per_second,
            energy_per_token: (generated > 0.0).then(|| energy / system_tokens),
        })
    }
}

pub fn decode_step(
    model: &ModelSpec,
    request: &RequestSpec,
    node: &NodeSpec,
    plan: &ShardingPlan,
    topology: &Topology,
    knobs: &EngineKnobs,
    context_len: u64,
) -> Result<PhaseEstimate, RooflineError> {
    Evaluator::new(model, request, node, plan, topology, knobs)?.decode_step(context_len)
}

pub fn prefill(
    model: &ModelSpec,
    request: &RequestSpec,
    node: &NodeSpec,
    plan: &ShardingPlan,
    topology: &Topology,
    knobs: &EngineKnobs,
) -> Result<PhaseEstimate, RooflineError> {
    Evaluator::new(model, request, node, plan, topology, knobs)?.prefill()
}

pub fn scenario_timing(
    model: &ModelSpec,
    request: &RequestSpec,
    node: &NodeSpec,
    plan: &ShardingPlan,
    topology: &Topology,
    knobs: &EngineKnobs,
) -> Result<ScenarioTiming, RooflineError> {
    Evaluator::new(model, request, node, plan, topology, knobs)?.scenario_timing()
}

/// One cell of a bottleneck matrix row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Mark {
    #[serde(rename = "")]
    None,
    /// Primary bottleneck.
    #[serde(rename = "✓")]
    Primary,
    /// Derived (soft) bottleneck.
    #[serde(rename = "?")]
    Derived,
}

impl Mark {
    pub fn symbol(self) -> &'static str {
        match self {
            Mark::None => "",
            Mark::Primary => "✓",
            Mark::Derived => "?",
        }
    }

    pub fn is_set(self) -> bool {
        self != Mark::None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BottleneckRow {
    pub memory_capacity: Mark,
    pub memory_bandwidth: Mark,
    pub compute: Mark,
    pub interconnect: Mark,
}

/// Share of step time above which network time raises a soft flag.
pub const INTERCONNECT_FLAG_SHARE: f64 = 0.10;

/// Marks the estimate's bottleneck as primary. `capacity_pressure` means the
/// model does not fit on a single chip. Network time above
/// [`INTERCONNECT_FLAG_SHARE`] of the step raises a derived interconnect flag.
pub fn classify(estimate: &PhaseEstimate, capacity_pressure: bool) -> (Bottleneck, BottleneckRow) {
    let b = estimate.bottleneck;
    let primary = |hit: bool| if hit { Mark::Primary } else { Mark::None };
    let interconnect = if b == Bottleneck::Interconnect {
        Mark::Primary
    } else if estimate.network_time > INTERCONNECT_FLAG_SHARE * estimate.step_time {
        Mark::Derived
    } else {
        Mark::None
    };
    (
        b,
        BottleneckRow {
            memory_capacity: primary(capacity_pressure),
            memory_bandwidth: primary(b == Bottleneck::MemoryBandwidth),
            compute: primary(b == Bottleneck::Compute),
            interconnect,
        },
    )
}

/// Merges rows cell-wise, keeping the strongest mark.
pub fn merge_rows(a: BottleneckRow, b: BottleneckRow) -> BottleneckRow {
    let m = |x: Mark, y: Mark| match (x, y) {
        (Mark::Primary, _) | (_, Mark::Primary) => Mark::Primary,
        (Mark::Derived, _) | (_, Mark::Derived) => Mark::Derived,
        _ => Mark::None,
    };
    BottleneckRow {
        memory_capacity: m(a.memory_capacity, b.memory_capacity),
        memory_bandwidth: m(a.memory_bandwidth, b.memory_bandwidth),
        compute: m(a.compute, b.compute),
        interconnect: m(a.interconnect, b.interconnect),
    }
}
