//! Transformer architecture and serving-scenario descriptions, plus the byte
//! and FLOP counts the roofline engine consumes.
//!
//! Parameter counting convention: one embedding matrix (tied with the output
//! head), Q/K/V/O projections sized by `n_heads` and `n_kv_heads`, and an FFN
//! of three `d_model × ffn_dim` matrices when `gated` (two otherwise). MoE
//! layers hold `n_experts` such FFNs plus an optional shared FFN. Norms and
//! biases are ignored.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorkloadError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("weight bytes overflow 2^63")]
    Overflow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoeSpec {
    pub n_experts: u64,
    pub top_k: u64,
    /// Width of the always-active shared FFN; 0 for none.
    #[serde(default)]
    pub shared_ffn_dim: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub layers: u64,
    pub d_model: u64,
    pub n_heads: u64,
    pub n_kv_heads: u64,
    pub d_head: u64,
    /// Per-expert width for MoE models.
    pub ffn_dim: u64,
    pub vocab: u64,
    pub dtype_bytes: u64,
    #[serde(default = "yes")]
    pub gated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moe: Option<MoeSpec>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Prefill,
    DecodeStep,
}

/// What a byte of memory demand is used for. Placement and endurance rules
/// are keyed on this.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataClass {
    Weights,
    KvCache,
    SlowContext,
    Activations,
}

impl DataClass {
    pub const ALL: [DataClass; 4] = [
        DataClass::Weights,
        DataClass::KvCache,
        DataClass::SlowContext,
        DataClass::Activations,
    ];

    /// Rewritten on every query or token.
    pub fn is_write_heavy(self) -> bool {
        matches!(self, DataClass::KvCache | DataClass::Activations)
    }
}

/// Bytes of activation state per in-flight token, as a multiple of `d_model`
/// elements. A first-order placeholder.
pub const DEFAULT_ACTIVATION_MULTIPLIER: u64 = 8;

impl ModelSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        let counts = [
            ("layers", self.layers),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_kv_heads", self.n_kv_heads),
            ("d_head", self.d_head),
            ("ffn_dim", self.ffn_dim),
            ("vocab", self.vocab),
            ("dtype_bytes", self.dtype_bytes),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(WorkloadError::InvalidModel(format!("{name} must be >= 1")));
            }
        }
        if !self.n_heads.is_multiple_of(self.n_kv_heads) {
            return Err(WorkloadError::InvalidModel(
                "n_kv_heads must divide n_heads".into(),
            ));
        }
        if let Some(moe) = &self.moe {
            if moe.n_experts == 0 || moe.top_k == 0 {
                return Err(WorkloadError::InvalidModel(
                    "moe n_experts and top_k must be >= 1".into(),
                ));
            }
            if moe.top_k > moe.n_experts {
                return Err(WorkloadError::InvalidModel(
                    "moe top_k must not exceed n_experts".into(),
                ));
            }
        }
        Ok(())
    }

    fn ffn_matrices(&self) -> u64 {
        if self.gated {
            3
        } else {
            2
        }
    }

    pub fn embedding_params(&self) -> u64 {
        self.vocab * self.d_model
    }

    pub fn attention_params_per_layer(&self) -> u64 {
        let q_out = self.n_heads * self.d_head;
        let kv_out = self.n_kv_heads * self.d_head;
        // Q and O are d_model × q_out, K and V are d_model × kv_out.
        2 * self.d_model * q_out + 2 * self.d_model * kv_out
    }

    fn ffn_params(&self, width: u64) -> u64 {
        self.ffn_matrices() * self.d_model * width
    }

    /// Per-layer FFN parameters that every token uses (dense FFN or shared expert).
    pub fn always_on_ffn_params_per_layer(&self) -> u64 {
        match &self.moe {
            None => self.ffn_params(self.ffn_dim),
            Some(moe) => self.ffn_params(moe.shared_ffn_dim),
        }
    }

    pub fn expert_params_per_layer(&self) -> u64 {
        self.ffn_params(self.ffn_dim)
    }

    /// Routed-expert parameters across all layers; zero for dense models.
    pub fn routed_expert_params(&self) -> u64 {
        match &self.moe {
            None => 0,
            Some(moe) => self.layers * moe.n_experts * self.expert_params_per_layer(),
        }
    }

    /// Parameters replicated across expert-parallel shards.
    pub fn non_expert_params(&self) -> u64 {
        self.embedding_params()
            + self.layers
                * (self.attention_params_per_layer() + self.always_on_ffn_params_per_layer())
    }

    pub fn total_params(&self) -> u64 {
        self.non_expert_params() + self.routed_expert_params()
    }

    pub fn top_k(&self) -> u64 {
        self.moe.as_ref().map_or(0, |m| m.top_k)
    }

    pub fn n_experts(&self) -> u64 {
        self.moe.as_ref().map_or(1, |m| m.n_experts)
    }
}

pub fn weight_bytes(m: &ModelSpec) -> Result<u64, WorkloadError> {
    m.validate()?;
    let checked = || -> Option<u128> {
        let d = m.d_model as u128;
        let per_layer_attn = 2 * d * (m.n_heads as u128 * m.d_head as u128)
            + 2 * d * (m.n_kv_heads as u128 * m.d_head as u128);
        let mats = if m.gated { 3 } else { 2 };
        let ffn = |w: u64| mats * d * w as u128;
        let per_layer_ffn = match &m.moe {
            None => ffn(m.ffn_dim),
            Some(moe) => moe.n_experts as u128 * ffn(m.ffn_dim) + ffn(moe.shared_ffn_dim),
        };
        let params = m.vocab as u128 * d + m.layers as u128 * (per_layer_attn + per_layer_ffn);
        params.checked_mul(m.dtype_bytes as u128)
    };
    match checked() {
        Some(b) if b <= 1u128 << 63 => Ok(b as u64),
        _ => Err(WorkloadError::Overflow),
    }
}

/// Parameters touched by one token, excluding the embedding lookup.
pub fn active_params_per_token(m: &ModelSpec) -> u64 {
    let expert = m.top_k() * m.expert_params_per_layer();
    m.layers * (m.attention_params_per_layer() + m.always_on_ffn_params_per_layer() + expert)
}

/// K and V for one token across all layers.
pub fn kv_bytes_per_token(m: &ModelSpec) -> u64 {
    2 * m.layers * m.n_kv_heads * m.d_head * m.dtype_bytes
}

/// Attention score and value FLOPs for one query token against `context_len`
/// keys, all layers, grouped-query sizing.
pub fn attention_flops_per_token(m: &ModelSpec, context_len: u64) -> f64 {
    4.0 * m.layers as f64 * m.n_kv_heads as f64 * m.d_head as f64 * context_len as f64
}

/// FLOPs for `tokens_processed` tokens per sequence across `batch` sequences.
///
/// Prefill passes `context_len = tokens_processed = input_len`; a decode step
/// passes `tokens_processed = 1` and the current context.
pub fn flops(
    m: &ModelSpec,
    phase: Phase,
    context_len: u64,
    tokens_processed: u64,
    batch: f64,
    modality_multiplier: f64,
) -> f64 {
    let tokens = match phase {
        Phase::Prefill => tokens_processed,
        Phase::DecodeStep => tokens_processed.min(1),
    };
    let per_token =
        2.0 * active_params_per_token(m) as f64 + attention_flops_per_token(m, context_len);
    per_token * tokens as f64 * batch * modality_multiplier
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestSpec {
    pub input_len: u64,
    #[serde(default)]
    pub output_len: u64,
    /// Reasoning tokens generated before the first visible token.
    #[serde(default)]
    pub thought_len: u64,
    pub batch: u64,
    /// Slow-changing retrieval corpus resident in memory.
    #[serde(default)]
    pub rag_corpus_bytes: u64,
    #[serde(default = "one")]
    pub modality_flops_multiplier: f64,
    /// Diffusion-style workloads with no KV cache.
    #[serde(default)]
    pub compute_only: bool,
}

fn one() -> f64 {
    1.0
}

impl RequestSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        if self.input_len == 0 {
            return Err(WorkloadError::InvalidRequest(
                "input_len must be >= 1".into(),
            ));
        }
        if self.batch == 0 {
            return Err(WorkloadError::InvalidRequest("batch must be >= 1".into()));
        }
        if !(self.modality_flops_multiplier >= 1.0) {
            return Err(WorkloadError::InvalidRequest(
                "modality_flops_multiplier must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Tokens whose KV ends up resident: input, thoughts and output.
    pub fn total_tokens(&self) -> u64 {
        self.input_len + self.thought_len + self.output_len
    }

    pub fn generated_tokens(&self) -> u64 {
        self.thought_len + self.output_len
    }
}

/// Total bytes of each data class for the whole request (before sharding).
pub fn memory_demand(
    m: &ModelSpec,
    r: &RequestSpec,
    activation_multiplier: u64,
) -> Result<BTreeMap<DataClass, u64>, WorkloadError> {
    r.validate()?;
    let weights = weight_bytes(m)?;
    let kv = if r.compute_only {
        0
    } else {
        kv_bytes_per_token(m) * r.total_tokens() * r.batch
    };
    let activations = r.batch * m.d_model * m.dtype_bytes * activation_multiplier;
    Ok(BTreeMap::from([
        (DataClass::Weights, weights),
        (DataClass::KvCache, kv),
        (DataClass::SlowContext, r.rag_corpus_bytes),
        (DataClass::Activations, activations),
    ]))
}
