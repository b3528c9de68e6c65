//! Parallelism plans, memory placement, feasibility and plan search.
//!
//! Per-chip shares of each data class under a plan `(tp, pp, ep, dp)`:
//!
//! | class        | divided by                                   |
//! |--------------|----------------------------------------------|
//! | non-expert weights | `tp × pp`                              |
//! | routed experts     | `tp × pp × ep`                         |
//! | KV cache           | `dp × tp × pp × ep`                    |
//! | slow context       | `tp × pp × ep` (or all chips if shared)|
//! | activations        | `dp × ep`                              |

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{ratio_metrics, CostError, CostModel, CostReport, SystemSpec};
use crate::hardware::{NodeSpec, TierSlot, WriteEndurance};
use crate::interconnect::{CollectiveKind, Topology};
use crate::roofline::{EngineKnobs, Evaluator, RooflineError, ScenarioTiming};
use crate::workload::{self, DataClass, ModelSpec, RequestSpec, WorkloadError};

/// Largest chip count any search will consider.
pub const MAX_BUDGET: u64 = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShardingError {
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("placement does not assign a tier to {0:?}")]
    MissingPlacement(DataClass),
    #[error("unknown tier `{0}`")]
    UnknownTier(String),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExploreError {
    #[error("no feasible plan: {}", .0.summary())]
    Unsatisfiable(FeasibilityReport),
    #[error("budget must be in [1, {MAX_BUDGET}], got {0}")]
    InvalidBudget(u64),
    #[error(transparent)]
    Sharding(#[from] ShardingError),
    #[error(transparent)]
    Roofline(#[from] RooflineError),
    #[error(transparent)]
    Cost(#[from] CostError),
}

/// Tier names for the placeable data classes. Activations always go to the
/// fastest high-endurance tier; slow context follows weights when unset.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Placement {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kv_cache: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slow_context: Option<String>,
}

impl Placement {
    pub fn new(weights: &str, kv_cache: &str) -> Self {
        Self {
            weights: Some(weights.into()),
            kv_cache: Some(kv_cache.into()),
            slow_context: None,
        }
    }

    /// Weights and KV cache on the same tier.
    pub fn all(tier: &str) -> Self {
        Self::new(tier, tier)
    }
}

/// Placement resolved against a node's tiers.
#[derive(Debug, Clone, Copy)]
pub struct ResolvedPlacement<'a> {
    pub weights: &'a TierSlot,
    pub kv_cache: &'a TierSlot,
    pub slow_context: &'a TierSlot,
    pub activations: Option<&'a TierSlot>,
}

impl<'a> ResolvedPlacement<'a> {
    pub fn tier(&self, class: DataClass) -> Option<&'a TierSlot> {
        match class {
            DataClass::Weights => Some(self.weights),
            DataClass::KvCache => Some(self.kv_cache),
            DataClass::SlowContext => Some(self.slow_context),
            DataClass::Activations => self.activations,
        }
    }
}

pub fn resolve_placement<'a>(
    placement: &Placement,
    node: &'a NodeSpec,
) -> Result<ResolvedPlacement<'a>, ShardingError> {
    let lookup = |name: &Option<String>, class| -> Result<&'a TierSlot, ShardingError> {
        let name = name
            .as_deref()
            .ok_or(ShardingError::MissingPlacement(class))?;
        node.tier(name)
            .ok_or_else(|| ShardingError::UnknownTier(name.to_string()))
    };
    let weights = lookup(&placement.weights, DataClass::Weights)?;
    let kv_cache = lookup(&placement.kv_cache, DataClass::KvCache)?;
    let slow_context = match &placement.slow_context {
        None => weights,
        some => lookup(some, DataClass::SlowContext)?,
    };
    Ok(ResolvedPlacement {
        weights,
        kv_cache,
        slow_context,
        activations: node.fastest_writable_tier(),
    })
}

/// Parallelism degrees as written in a config file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Parallelism {
    pub tp: u64,
    pub pp: u64,
    pub ep: u64,
    pub dp: u64,
}

impl Default for Parallelism {
    fn default() -> Self {
        Self {
            tp: 1,
            pp: 1,
            ep: 1,
            dp: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct ShardingPlan {
    pub tp: u64,
    pub pp: u64,
    pub ep: u64,
    pub dp: u64,
    pub placement: Placement,
}

impl ShardingPlan {
    pub fn new(p: Parallelism, placement: Placement) -> Self {
        Self {
            tp: p.tp,
            pp: p.pp,
            ep: p.ep,
            dp: p.dp,
            placement,
        }
    }

    pub fn single(placement: Placement) -> Self {
        Self::new(Parallelism::default(), placement)
    }

    pub fn parallelism(&self) -> Parallelism {
        Parallelism {
            tp: self.tp,
            pp: self.pp,
            ep: self.ep,
            dp: self.dp,
        }
    }

    pub fn chips(&self) -> u64 {
        self.tp * self.pp * self.ep * self.dp
    }

    /// Deterministic ordering key: fewest chips, then lowest tp.
    pub fn key(&self) -> (u64, u64, u64, u64, u64) {
        (self.chips(), self.tp, self.pp, self.ep, self.dp)
    }

    pub fn validate(&self) -> Result<(), ShardingError> {
        if [self.tp, self.pp, self.ep, self.dp].contains(&0) {
            return Err(ShardingError::InvalidPlan(
                "parallel degrees must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ViolationKind {
    Capacity,
    Endurance,
    Divisibility,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub detail: String,
    pub tier: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub violations: Vec<Violation>,
}

impl FeasibilityReport {
    fn from_violations(violations: Vec<Violation>) -> Self {
        Self {
            feasible: violations.is_empty(),
            violations,
        }
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }

    pub fn summary(&self) -> String {
        self.violations
            .iter()
            .map(|v| format!("{:?}: {}", v.kind, v.detail))
            .collect::<Vec<_>>()
            .join("; ")
    }
}

/// Bytes of each data class held by one chip.
pub fn per_chip_demand(
    plan: &ShardingPlan,
    model: &ModelSpec,
    request: &RequestSpec,
    knobs: &EngineKnobs,
) -> Result<BTreeMap<DataClass, f64>, ShardingError> {
    plan.validate()?;
    let demand = workload::memory_demand(model, request, knobs.activation_multiplier)?;
    let (tp, pp, ep, dp) = (
        plan.tp as f64,
        plan.pp as f64,
        plan.ep as f64,
        plan.dp as f64,
    );
    let dtype = model.dtype_bytes as f64;
    let weights = model.non_expert_params() as f64 * dtype / (tp * pp)
        + model.routed_expert_params() as f64 * dtype / (tp * pp * ep);
    let context_split = if knobs.shared_context {
        tp * pp * ep * dp
    } else {
        tp * pp * ep
    };
    Ok(BTreeMap::from([
        (DataClass::Weights, weights),
        (
            DataClass::KvCache,
            demand[&DataClass::KvCache] as f64 / (dp * tp * pp * ep),
        ),
        (
            DataClass::SlowContext,
            demand[&DataClass::SlowContext] as f64 / context_split,
        ),
        (
            DataClass::Activations,
            demand[&DataClass::Activations] as f64 / (dp * ep),
        ),
    ]))
}

fn divisibility_violations(
    plan: &ShardingPlan,
    model: &ModelSpec,
    request: &RequestSpec,
) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut need = |ok: bool, detail: String| {
        if !ok {
            out.push(Violation {
                kind: ViolationKind::Divisibility,
                detail,
                tier: None,
            })
        }
    };
    need(
        model.n_heads.is_multiple_of(plan.tp),
        format!("tp={} does not divide n_heads={}", plan.tp, model.n_heads),
    );
    need(
        model.layers.is_multiple_of(plan.pp),
        format!("pp={} does not divide layers={}", plan.pp, model.layers),
    );
    need(
        model.n_experts().is_multiple_of(plan.ep),
        format!(
            "ep={} does not divide expert count {}",
            plan.ep,
            model.n_experts()
        ),
    );
    need(
        request.batch.is_multiple_of(plan.dp),
        format!("dp={} does not divide batch={}", plan.dp, request.batch),
    );
    out
}

/// Feasibility plus the worst demand/capacity ratio over tiers.
fn assess(
    plan: &ShardingPlan,
    model: &ModelSpec,
    request: &RequestSpec,
    node: &NodeSpec,
    knobs: &EngineKnobs,
) -> Result<(FeasibilityReport, f64), ShardingError> {
    let tiers = resolve_placement(&plan.placement, node)?;
    let demand = per_chip_demand(plan, model, request, knobs)?;
    let mut violations = divisibility_violations(plan, model, request);

    for class in DataClass::ALL {
        if !class.is_write_heavy() || demand[&class] == 0.0 {
            continue;
        }
        match tiers.tier(class) {
            Some(t) if t.device.write_endurance == WriteEndurance::Low => {
                violations.push(Violation {
                    kind: ViolationKind::Endurance,
                    detail: format!(
                        "{class:?} is rewritten constantly but `{}` has low write endurance",
                        t.name()
                    ),
                    tier: Some(t.name().to_string()),
                })
            }
            Some(_) => {}
            None => violations.push(Violation {
                kind: ViolationKind::Endurance,
                detail: format!("no high-endurance tier for {class:?}"),
                tier: None,
            }),
        }
    }

    let mut per_tier: BTreeMap<&str, (f64, &TierSlot)> = BTreeMap::new();
    for class in DataClass::ALL {
        if let Some(t) = tiers.tier(class) {
            per_tier.entry(t.name()).or_insert((0.0, t)).0 += demand[&class];
        }
    }
    let mut worst: f64 = 0.0;
    for (name, (bytes, tier)) in per_tier {
        let cap = tier.capacity_bytes() as f64;
        worst = worst.max(bytes / cap);
        if bytes > cap {
            violations.push(Violation {
                kind: ViolationKind::Capacity,
                detail: format!(
                    "needs {:.4e} bytes per chip on `{name}`, capacity {:.4e}",
                    bytes, cap
                ),
                tier: Some(name.to_string()),
            });
        }
    }
    Ok((FeasibilityReport::from_violations(violations), worst))
}

pub fn check_feasible(
    plan: &ShardingPlan,
    model: &ModelSpec,
    request: &RequestSpec,
    node: &NodeSpec,
    knobs: &EngineKnobs,
) -> Result<FeasibilityReport, ShardingError> {
    assess(plan, model, request, node, knobs).map(|(r, _)| r)
}

pub fn divisors(n: u64) -> Vec<u64> {
    let mut small = Vec::new();
    let mut large = Vec::new();
    let mut d = 1;
    while d * d <= n {
        if n.is_multiple_of(d) {
            small.push(d);
            if d * d != n {
                large.push(n / d);
            }
        }
        d += 1;
    }
    small.extend(large.into_iter().rev());
    small
}

/// Every plan on the divisor lattice with at most `budget` chips, ordered by
/// [`ShardingPlan::key`].
pub fn candidate_plans(
    model: &ModelSpec,
    request: &RequestSpec,
    budget: u64,
    placement: &Placement,
) -> Vec<ShardingPlan> {
    let mut out = Vec::new();
    let tps = divisors(model.n_heads);
    let pps = divisors(model.layers);
    let eps = divisors(model.n_experts());
    let dps = divisors(request.batch);
    for &tp in tps.iter().take_while(|&&x| x <= budget) {
        for &pp in pps.iter().take_while(|&&x| tp * x <= budget) {
            for &ep in eps.iter().take_while(|&&x| tp * pp * x <= budget) {
                for &dp in dps.iter().take_while(|&&x| tp * pp * ep * x <= budget) {
                    out.push(ShardingPlan {
                        tp,
                        pp,
                        ep,
                        dp,
                        placement: placement.clone(),
                    });
                }
            }
        }
    }
    out.sort_by_key(ShardingPlan::key);
    out
}

/// Report of the candidate closest to feasible: fewest non-capacity
/// violations, then smallest capacity overshoot.
fn tightest(reports: Vec<(FeasibilityReport, f64)>) -> FeasibilityReport {
    reports
        .into_iter()
        .min_by(|a, b| {
            let hard = |r: &FeasibilityReport| {
                r.violations
                    .iter()
                    .filter(|v| v.kind != ViolationKind::Capacity)
                    .count()
            };
            hard(&a.0).cmp(&hard(&b.0)).then(a.1.total_cmp(&b.1))
        })
        .map(|(r, _)| r)
        .unwrap_or_else(|| {
            FeasibilityReport::from_violations(vec![Violation {
                kind: ViolationKind::Capacity,
                detail: "no candidate plans within budget".into(),
                tier: None,
            }])
        })
}

/// Smallest feasible plan on the divisor lattice within `bound` chips.
pub fn smallest_feasible_plan(
    model: &ModelSpec,
    request: &RequestSpec,
    node: &NodeSpec,
    placement: &Placement,
    knobs: &EngineKnobs,
    bound: u64,
) -> Result<ShardingPlan, ExploreError> {
    let mut reports = Vec::new();
    for plan in candidate_plans(model, request, bound.min(MAX_BUDGET), placement) {
        let (report, worst) = assess(&plan, model, request, node, knobs)?;
        if report.feasible {
            return Ok(plan);
        }
        reports.push((report, worst));
    }
    Err(ExploreError::Unsatisfiable(tightest(reports)))
}

pub fn min_system_size(
    model: &ModelSpec,
    request: &RequestSpec,
    node: &NodeSpec,
    placement: &Placement,
    knobs: &EngineKnobs,
    bound: u64,
) -> Result<u64, ExploreError> {
    smallest_feasible_plan(model, request, node, placement, knobs, bound).map(|p| p.chips())
}

/// Every placement of weights, KV cache and (when present) slow context over
/// the node's tiers.
pub fn all_placements(node: &NodeSpec, request: &RequestSpec) -> Vec<Placement> {
    let names: Vec<&str> = node.tiers.iter().map(TierSlot::name).collect();
    let mut out = Vec::new();
    for w in &names {
        for k in &names {
            let mut context: Vec<Option<String>> = vec![None];
            if request.rag_corpus_bytes > 0 {
                context.extend(
                    names
                        .iter()
                        .filter(|c| c != &w)
                        .map(|c| Some(c.to_string())),
                );
            }
            for c in context {
                out.push(Placement {
                    weights: Some(w.to_string()),
                    kv_cache: Some(k.to_string()),
                    slow_context: c,
                });
            }
        }
    }
    out
}

/// Minimum system size over every placement; ties keep the first placement
/// in tier order.
pub fn best_min_system_size(
    model: &ModelSpec,
    request: &RequestSpec,
    node: &NodeSpec,
    knobs: &EngineKnobs,
    bound: u64,
) -> Result<(u64, Placement), ExploreError> {
    let mut best: Option<(u64, Placement)> = None;
    let mut reports = Vec::new();
    for placement in all_placements(node, request) {
        let limit = best.as_ref().map_or(bound, |b| b.0);
        match min_system_size(model, request, node, &placement, knobs, limit) {
            Ok(c) if best.as_ref().is_none_or(|b| c < b.0) => best = Some((c, placement)),
            Ok(_) => {}
            Err(ExploreError::Unsatisfiable(r)) => reports.push((r, f64::INFINITY)),
            Err(e) => return Err(e),
        }
    }
    best.ok_or_else(|| ExploreError::Unsatisfiable(tightest(reports)))
}

/// Bytes moved by collectives in one step of one replica.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommVolume {
    pub per_kind: BTreeMap<CollectiveKind, f64>,
    /// Activations handed between pipeline stages.
    pub pipeline_send: f64,
}

impl CommVolume {
    pub fn total(&self) -> f64 {
        self.per_kind.values().sum::<f64>() + self.pipeline_send
    }
}

/// Replica-level collective volume for a step in which every sequence
/// advances `tokens` tokens: two all-reduces per layer under tensor
/// parallelism, one dispatch and one collect per layer under expert
/// parallelism, one activation send per pipeline boundary.
pub fn comm_volume_per_step(
    plan: &ShardingPlan,
    model: &ModelSpec,
    request: &RequestSpec,
    tokens: u64,
) -> CommVolume {
    let seq_tokens = request.batch as f64 / plan.dp as f64 * tokens as f64;
    let hidden = seq_tokens * (model.d_model * model.dtype_bytes) as f64;
    let layers = model.layers as f64;
    let all_reduce = if plan.tp > 1 {
        2.0 * layers * hidden
    } else {
        0.0
    };
    let routed = if plan.ep > 1 && model.moe.is_some() {
        layers * hidden * model.top_k() as f64
    } else {
        0.0
    };
    CommVolume {
        per_kind: BTreeMap::from([
            (CollectiveKind::AllReduce, all_reduce),
            (CollectiveKind::Broadcast, 0.0),
            (CollectiveKind::MoeDispatch, routed),
            (CollectiveKind::MoeCollect, routed),
        ]),
        pipeline_send: (plan.pp - 1) as f64 * hidden,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    TimeToCompletion,
    Ttft,
    TcoPerToken,
    EnergyPerToken,
    Co2ePerToken,
    Chips,
}

pub const DEFAULT_OBJECTIVES: [Objective; 2] =
    [Objective::TimeToCompletion, Objective::TcoPerToken];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExplorePoint {
    pub plan: ShardingPlan,
    pub chips: u64,
    pub timing: ScenarioTiming,
    pub cost: CostReport,
}

impl ExplorePoint {
    /// Objective value to minimize; missing ratios count as infinitely bad.
    pub fn objective(&self, o: Objective) -> f64 {
        let or_inf = |v: Option<f64>| v.unwrap_or(f64::INFINITY);
        match o {
            Objective::TimeToCompletion => self.timing.time_to_completion,
            Objective::Ttft => self.timing.ttft,
            Objective::TcoPerToken => or_inf(self.cost.usd_per_token()),
            Objective::EnergyPerToken => or_inf(self.timing.energy_per_token),
            Objective::Co2ePerToken => or_inf(self.cost.co2e_per_token),
            Objective::Chips => self.chips as f64,
        }
    }
}

/// `a` is no worse than `b` everywhere and strictly better somewhere.
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x <= y) && a.iter().zip(b).any(|(x, y)| x < y)
}

/// Indices of the non-dominated rows. Equal rows do not dominate each other,
/// so duplicates all survive.
pub fn pareto_indices(values: &[Vec<f64>]) -> Vec<usize> {
    (0..values.len())
        .filter(|&i| !values.iter().any(|other| dominates(other, &values[i])))
        .collect()
}

#[derive(Debug, Clone)]
pub struct ExploreRequest<'a> {
    pub model: &'a ModelSpec,
    pub request: &'a RequestSpec,
    pub node: &'a NodeSpec,
    pub topology: &'a Topology,
    pub cost_model: &'a CostModel,
    pub knobs: &'a EngineKnobs,
    pub placement: &'a Placement,
    pub budget: u64,
    pub objectives: &'a [Objective],
}

pub fn evaluate_plan(
    plan: &ShardingPlan,
    r: &ExploreRequest,
) -> Result<ExplorePoint, ExploreError> {
    let eval = Evaluator::new(r.model, r.request, r.node, plan, r.topology, r.knobs)?;
    let timing = eval.scenario_timing()?;
    let system = SystemSpec {
        node: r.node,
        chips: plan.chips(),
    };
    let cost = ratio_metrics(timing.system_tokens_per_second, &system, r.cost_model)?;
    Ok(ExplorePoint {
        plan: plan.clone(),
        chips: plan.chips(),
        timing,
        cost,
    })
}

/// Every feasible plan within budget, evaluated, in [`ShardingPlan::key`] order.
pub fn evaluate_feasible(r: &ExploreRequest) -> Result<Vec<ExplorePoint>, ExploreError> {
    if r.budget == 0 || r.budget > MAX_BUDGET {
        return Err(ExploreError::InvalidBudget(r.budget));
    }
    let budget = r.topology.capacity().map_or(r.budget, |c| c.min(r.budget));
    let candidates = candidate_plans(r.model, r.request, budget, r.placement);
    let assessed = candidates
        .into_iter()
        .map(|p| assess(&p, r.model, r.request, r.node, r.knobs).map(|a| (p, a)))
        .collect::<Result<Vec<_>, _>>()?;
    let (feasible, infeasible): (Vec<_>, Vec<_>) =
        assessed.into_iter().partition(|(_, (rep, _))| rep.feasible);
    if feasible.is_empty() {
        return Err(ExploreError::Unsatisfiable(tightest(
            infeasible.into_iter().map(|(_, a)| a).collect(),
        )));
    }
    feasible
        .par_iter()
        .map(|(plan, _)| evaluate_plan(plan, r))
        .collect()
}

/// Pareto-optimal plans under `objectives`, sorted by objective values, then
/// chips, then tp.
pub fn explore(r: &ExploreRequest) -> Result<Vec<ExplorePoint>, ExploreError> {
    let objectives: &[Objective] = if r.objectives.is_empty() {
        &DEFAULT_OBJECTIVES
    } else {
        r.objectives
    };
    let points = evaluate_feasible(r)?;
    let values: Vec<Vec<f64>> = points
        .iter()
        .map(|p| objectives.iter().map(|&o| p.objective(o)).collect())
        .collect();
    let keep = pareto_indices(&values);
    let mut front: Vec<(Vec<f64>, ExplorePoint)> = keep
        .into_iter()
        .map(|i| (values[i].clone(), points[i].clone()))
        .collect();
    front.sort_by(|(va, a), (vb, b)| {
        va.iter()
            .zip(vb)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.plan.key().cmp(&b.plan.key()))
    });
    Ok(front.into_iter().map(|(_, p)| p).collect())
}
