//! Scenario configs, end-to-end evaluation and report rendering.
//!
//! The CLI (TOML) and the HTTP service (JSON) both parse into
//! [`ScenarioConfig`] and go through [`estimate`], so identical configs give
//! byte-identical reports. All floating-point report values are rounded to
//! six significant digits; counts and byte totals are emitted as integers.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cost::{ratio_metrics, CostError, CostModel, CostReport, SystemSpec};
use crate::hardware::{Catalog, CatalogDocument, CatalogError, NodeRecord, NodeSpec};
use crate::interconnect::{InterconnectError, Topology, TopologyRecord};
use crate::roofline::{
    self, Bottleneck, BottleneckRow, EngineKnobs, Evaluator, PhaseEstimate, RooflineError,
    ScenarioTiming,
};
use crate::sharding::{
    self, check_feasible, ExploreError, ExplorePoint, ExploreRequest, FeasibilityReport, Objective,
    Parallelism, Placement, ShardingError, ShardingPlan, MAX_BUDGET,
};
use crate::units::round_sig;
use crate::workload::{self, ModelSpec, RequestSpec, WorkloadError};

pub const TOOL_NAME: &str = "infersim";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const REPORT_DIGITS: i32 = 6;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("config must contain exactly one of `sharding` or `explore`")]
    PlanChoice,
    #[error("unknown sweep axis `{0}`")]
    UnknownAxis(String),
    #[error("no feasible plan: {}", .0.summary())]
    Unsatisfiable(FeasibilityReport),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Topology(#[from] InterconnectError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Sharding(#[from] ShardingError),
    #[error(transparent)]
    Roofline(#[from] RooflineError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("explore: {0}")]
    Explore(String),
}

impl From<ExploreError> for ScenarioError {
    fn from(e: ExploreError) -> Self {
        match e {
            ExploreError::Unsatisfiable(r) => ScenarioError::Unsatisfiable(r),
            ExploreError::Sharding(e) => e.into(),
            ExploreError::Roofline(e) => e.into(),
            ExploreError::Cost(e) => e.into(),
            other => ScenarioError::Explore(other.to_string()),
        }
    }
}

impl ScenarioError {
    /// Process exit code: 3 when no plan is feasible, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            ScenarioError::Unsatisfiable(_) => 3,
            _ => 2,
        }
    }

    /// Machine-readable error body.
    pub fn to_json(&self) -> Value {
        match self {
            ScenarioError::Config { path, message } => json!({
                "error": "config",
                "path": path,
                "message": message,
            }),
            ScenarioError::Unsatisfiable(report) => json!({
                "error": "unsatisfiable",
                "message": self.to_string(),
                "feasibility": report,
            }),
            other => json!({ "error": "config", "message": other.to_string() }),
        }
    }
}

/// A catalog node by name or an inline node definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NodeRef {
    Name(String),
    Inline(NodeRecord),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExploreSpec {
    pub budget: u64,
    #[serde(default = "default_objectives")]
    pub objectives: Vec<Objective>,
}

fn default_objectives() -> Vec<Objective> {
    sharding::DEFAULT_OBJECTIVES.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub model: ModelSpec,
    pub request: RequestSpec,
    pub node: NodeRef,
    pub topology: TopologyRecord,
    pub placement: Placement,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sharding: Option<Parallelism>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explore: Option<ExploreSpec>,
    #[serde(default)]
    pub cost_model: CostModel,
    #[serde(default)]
    pub overrides: EngineKnobs,
    /// Extra or replacement catalog entries for this scenario only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub catalog: Option<CatalogDocument>,
}

fn config_error<E: std::fmt::Display>(e: serde_path_to_error::Error<E>) -> ScenarioError {
    let path = e.path().to_string();
    ScenarioError::Config {
        path,
        message: e.inner().to_string(),
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let de = toml::Deserializer::new(text);
        serde_path_to_error::deserialize(de).map_err(config_error)
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let mut de = serde_json::Deserializer::from_str(text);
        let cfg = serde_path_to_error::deserialize(&mut de).map_err(config_error)?;
        de.end().map_err(|e| ScenarioError::Config {
            path: ".".into(),
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn from_value(v: Value) -> Result<Self, ScenarioError> {
        serde_path_to_error::deserialize(v).map_err(config_error)
    }

    /// Loads TOML unless the text is a JSON object.
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        if text.trim_start().starts_with('{') {
            Self::from_json(text)
        } else {
            Self::from_toml(text)
        }
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form, independent of input format.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(&self.to_value()).expect("value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

/// Merges `overlay` entries over `base`, replacing entries by name.
pub fn overlay_catalog(base: &Catalog, overlay: &CatalogDocument) -> Result<Catalog, CatalogError> {
    let mut doc = base.to_document();
    fn merge<T: Clone>(into: &mut Vec<T>, from: &[T], name: impl Fn(&T) -> &str) {
        for item in from {
            match into.iter_mut().find(|x| name(x) == name(item)) {
                Some(slot) => *slot = item.clone(),
                None => into.push(item.clone()),
            }
        }
    }
    merge(&mut doc.memory_devices, &overlay.memory_devices, |r| {
        &r.name
    });
    merge(&mut doc.hbm_generations, &overlay.hbm_generations, |r| {
        &r.name
    });
    merge(&mut doc.nodes, &overlay.nodes, |r| &r.name);
    Catalog::from_document(doc)
}

/// A config with every reference looked up.
#[derive(Debug, Clone)]
pub struct ResolvedScenario {
    pub config: ScenarioConfig,
    pub catalog: Catalog,
    pub node: NodeSpec,
    pub topology: Topology,
}

pub fn resolve(
    config: &ScenarioConfig,
    catalog: &Catalog,
) -> Result<ResolvedScenario, ScenarioError> {
    let catalog = match &config.catalog {
        Some(doc) => overlay_catalog(catalog, doc)?,
        None => catalog.clone(),
    };
    let node = match &config.node {
        NodeRef::Name(name) => catalog
            .node(name)
            .cloned()
            .ok_or_else(|| ScenarioError::UnknownNode(name.clone()))?,
        NodeRef::Inline(record) => record.resolve(catalog.device_specs())?,
    };
    let topology = config.topology.to_topology()?;
    config.model.validate()?;
    config.request.validate()?;
    config.overrides.validate()?;
    config.cost_model.validate()?;
    if config.sharding.is_some() == config.explore.is_some() {
        return Err(ScenarioError::PlanChoice);
    }
    Ok(ResolvedScenario {
        config: config.clone(),
        catalog,
        node,
        topology,
    })
}

impl ResolvedScenario {
    fn explore_request<'a>(&'a self, spec: &'a ExploreSpec) -> ExploreRequest<'a> {
        ExploreRequest {
            model: &self.config.model,
            request: &self.config.request,
            node: &self.node,
            topology: &self.topology,
            cost_model: &self.config.cost_model,
            knobs: &self.config.overrides,
            placement: &self.config.placement,
            budget: spec.budget,
            objectives: &spec.objectives,
        }
    }

    /// Pareto set for the config's explore block (budget 1 plan search when
    /// the config names an explicit plan instead).
    pub fn explore(&self) -> Result<Vec<ExplorePoint>, ScenarioError> {
        let fallback = ExploreSpec {
            budget: self
                .config
                .sharding
                .map_or(1, |p| ShardingPlan::new(p, Placement::default()).chips())
                .min(MAX_BUDGET),
            objectives: default_objectives(),
        };
        let spec = self.config.explore.as_ref().unwrap_or(&fallback);
        Ok(sharding::explore(&self.explore_request(spec))?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSummary {
    /// 1 for dense models.
    pub n_experts: u64,
    pub weight_bytes: u64,
    pub total_params: u64,
    pub active_params_per_token: u64,
    pub kv_bytes_per_token: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Phases {
    pub prefill: PhaseEstimate,
    /// First generated token.
    pub decode_first: PhaseEstimate,
    /// Last generated token, at the longest context.
    pub decode_last: PhaseEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BottleneckSummary {
    pub prefill: Bottleneck,
    pub decode: Bottleneck,
    pub row: BottleneckRow,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub provenance: Provenance,
    pub node: String,
    pub model: ModelSummary,
    pub plan: ShardingPlan,
    pub chips: u64,
    pub min_system_size: u64,
    pub feasibility: FeasibilityReport,
    pub phases: Phases,
    pub timing: ScenarioTiming,
    pub cost: CostReport,
    pub bottleneck: BottleneckSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pareto: Option<Vec<ExplorePoint>>,
}

/// Evaluates one scenario. Infeasible explicit plans and empty explore sets
/// are [`ScenarioError::Unsatisfiable`].
pub fn estimate(
    config: &ScenarioConfig,
    catalog: &Catalog,
) -> Result<ScenarioReport, ScenarioError> {
    let s = resolve(config, catalog)?;
    let cfg = &s.config;
    let (plan, pareto) = match (&cfg.sharding, &cfg.explore) {
        (Some(p), None) => (ShardingPlan::new(*p, cfg.placement.clone()), None),
        (None, Some(_)) => {
            let front = s.explore()?;
            (front[0].plan.clone(), Some(front))
        }
        _ => return Err(ScenarioError::PlanChoice),
    };
    let feasibility = check_feasible(&plan, &cfg.model, &cfg.request, &s.node, &cfg.overrides)?;
    if !feasibility.feasible {
        return Err(ScenarioError::Unsatisfiable(feasibility));
    }
    let min_system_size = sharding::min_system_size(
        &cfg.model,
        &cfg.request,
        &s.node,
        &cfg.placement,
        &cfg.overrides,
        MAX_BUDGET,
    )?;

    let eval = Evaluator::new(
        &cfg.model,
        &cfg.request,
        &s.node,
        &plan,
        &s.topology,
        &cfg.overrides,
    )?;
    let last_k = cfg.request.generated_tokens().max(1) - 1;
    let phases = Phases {
        prefill: eval.prefill()?,
        decode_first: eval.decode_step(eval.decode_context(0))?,
        decode_last: eval.decode_step(eval.decode_context(last_k))?,
    };
    let timing = eval.scenario_timing()?;
    let system = SystemSpec {
        node: &s.node,
        chips: plan.chips(),
    };
    let cost = ratio_metrics(timing.system_tokens_per_second, &system, &cfg.cost_model)?;

    let pressure = min_system_size > 1;
    let (decode, first_row) = roofline::classify(&phases.decode_first, pressure);
    let (_, last_row) = roofline::classify(&phases.decode_last, pressure);
    let bottleneck = BottleneckSummary {
        prefill: phases.prefill.bottleneck,
        decode,
        row: roofline::merge_rows(first_row, last_row),
    };

    let m = &cfg.model;
    Ok(ScenarioReport {
        provenance: Provenance {
            tool: TOOL_NAME,
            version: TOOL_VERSION,
            config_hash: cfg.hash(),
        },
        node: s.node.name.clone(),
        model: ModelSummary {
            n_experts: m.n_experts(),
            weight_bytes: workload::weight_bytes(m)?,
            total_params: m.total_params(),
            active_params_per_token: workload::active_params_per_token(m),
            kv_bytes_per_token: workload::kv_bytes_per_token(m),
        },
        chips: plan.chips(),
        plan,
        min_system_size,
        feasibility,
        phases,
        timing,
        cost,
        bottleneck,
        pareto,
    })
}

/// Rounds every non-integer number to [`REPORT_DIGITS`] significant digits.
pub fn round_floats(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().expect("f64 number");
            serde_json::Number::from_f64(round_sig(x, REPORT_DIGITS))
                .map(Value::Number)
                .unwrap_or(Value::Null)
        }
        Value::Array(a) => Value::Array(a.into_iter().map(round_floats).collect()),
        Value::Object(o) => {
            Value::Object(o.into_iter().map(|(k, v)| (k, round_floats(v))).collect())
        }
        other => other,
    }
}

fn pretty<T: Serialize>(value: &T) -> String {
    let v = round_floats(serde_json::to_value(value).expect("report serializes"));
    let mut s = serde_json::to_string_pretty(&v).expect("value serializes");
    s.push('\n');
    s
}

pub fn report_json(report: &ScenarioReport) -> String {
    pretty(report)
}

pub fn pareto_json(points: &[ExplorePoint]) -> String {
    pretty(&points)
}

fn sig(x: f64) -> String {
    round_sig(x, REPORT_DIGITS).to_string()
}

fn opt_sig(x: Option<f64>) -> String {
    x.map(sig).unwrap_or_default()
}

fn snake(b: Bottleneck) -> String {
    serde_json::to_value(b)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

/// Bottleneck-matrix row plus headline numbers, in Markdown.
pub fn report_markdown(report: &ScenarioReport) -> String {
    let row = &report.bottleneck.row;
    let p = &report.plan;
    let workload = format!(
        "{} on {} (tp={} pp={} ep={} dp={})",
        match report.model.n_experts {
            1 => "Dense".to_string(),
            n => format!("MoE-{n}"),
        },
        report.node,
        p.tp,
        p.pp,
        p.ep,
        p.dp
    );
    let mut out = String::new();
    out.push_str("| Workload | Memory capacity | Memory bandwidth | Compute | Interconnect |\n");
    out.push_str("|---|:---:|:---:|:---:|:---:|\n");
    out.push_str(&format!(
        "| {} | {} | {} | {} | {} |\n\n",
        workload,
        row.memory_capacity.symbol(),
        row.memory_bandwidth.symbol(),
        row.compute.symbol(),
        row.interconnect.symbol()
    ));
    out.push_str(
        "'✓' marks a primary bottleneck; '?' marks a derived interconnect bottleneck.\n\n",
    );
    out.push_str("| Metric | Value |\n|---|---:|\n");
    let lines = [
        ("Prefill bottleneck", snake(report.bottleneck.prefill)),
        ("Decode bottleneck", snake(report.bottleneck.decode)),
        ("Prefill step (s)", sig(report.phases.prefill.step_time)),
        (
            "Decode step, first token (s)",
            sig(report.phases.decode_first.step_time),
        ),
        ("TTFT (s)", sig(report.timing.ttft)),
        (
            "Time to completion (s)",
            sig(report.timing.time_to_completion),
        ),
        (
            "Decode tokens/s per replica",
            sig(report.timing.decode_tokens_per_second),
        ),
        ("Chips", report.chips.to_string()),
        (
            "Min system size (chips)",
            report.min_system_size.to_string(),
        ),
        ("System power (W)", sig(report.cost.system_power_watts)),
        ("TCO (USD/h)", sig(report.cost.tco_rate)),
        ("Tokens per USD", opt_sig(report.cost.tokens_per_usd)),
        ("gCO2e per token", opt_sig(report.cost.co2e_per_token)),
    ];
    for (k, v) in lines {
        out.push_str(&format!("| {k} | {v} |\n"));
    }
    out.push_str(&format!(
        "\nconfig sha256 {}\n",
        report.provenance.config_hash
    ));
    out
}

/// Column order of CSV output. Stable across versions.
pub const CSV_COLUMNS: [&str; 22] = [
    "chips",
    "tp",
    "pp",
    "ep",
    "dp",
    "prefill_step_time",
    "prefill_bottleneck",
    "decode_step_time",
    "decode_arithmetic_intensity",
    "decode_bottleneck",
    "ttft",
    "time_to_completion",
    "decode_tokens_per_second",
    "system_power_watts",
    "tco_rate",
    "tokens_per_usd",
    "co2e_per_token",
    "memory_capacity",
    "memory_bandwidth",
    "compute",
    "interconnect",
    "config_hash",
];

fn csv_fields(r: &ScenarioReport) -> Vec<String> {
    let row = &r.bottleneck.row;
    vec![
        r.chips.to_string(),
        r.plan.tp.to_string(),
        r.plan.pp.to_string(),
        r.plan.ep.to_string(),
        r.plan.dp.to_string(),
        sig(r.phases.prefill.step_time),
        snake(r.phases.prefill.bottleneck),
        sig(r.phases.decode_first.step_time),
        sig(r.phases.decode_first.arithmetic_intensity),
        snake(r.phases.decode_first.bottleneck),
        sig(r.timing.ttft),
        sig(r.timing.time_to_completion),
        sig(r.timing.decode_tokens_per_second),
        sig(r.cost.system_power_watts),
        sig(r.cost.tco_rate),
        opt_sig(r.cost.tokens_per_usd),
        opt_sig(r.cost.co2e_per_token),
        row.memory_capacity.symbol().into(),
        row.memory_bandwidth.symbol().into(),
        row.compute.symbol().into(),
        row.interconnect.symbol().into(),
        r.provenance.config_hash.clone(),
    ]
}

fn write_csv(header: Vec<&str>, rows: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

pub fn report_csv(report: &ScenarioReport) -> String {
    write_csv(CSV_COLUMNS.to_vec(), vec![csv_fields(report)])
}

pub fn pareto_csv(points: &[ExplorePoint]) -> String {
    let header = vec![
        "chips",
        "tp",
        "pp",
        "ep",
        "dp",
        "ttft",
        "time_to_completion",
        "decode_tokens_per_second",
        "system_power_watts",
        "tco_rate",
        "tokens_per_usd",
        "co2e_per_token",
    ];
    let rows = points
        .iter()
        .map(|p| {
            vec![
                p.chips.to_string(),
                p.plan.tp.to_string(),
                p.plan.pp.to_string(),
                p.plan.ep.to_string(),
                p.plan.dp.to_string(),
                sig(p.timing.ttft),
                sig(p.timing.time_to_completion),
                sig(p.timing.decode_tokens_per_second),
                sig(p.cost.system_power_watts),
                sig(p.cost.tco_rate),
                opt_sig(p.cost.tokens_per_usd),
                opt_sig(p.cost.co2e_per_token),
            ]
        })
        .collect();
    write_csv(header, rows)
}

/// A numeric config field and the values to try.
///
/// `path` is dot-separated into the config (`request.batch`,
/// `topology.link_bw_gbps`), or `device.<NAME>.<field>` to vary a catalog
/// memory device for this scenario (`device.HBM4.read_bw_gbps`).
#[derive(Debug, Clone, PartialEq)]
pub struct SweepAxis {
    pub path: String,
    pub values: Vec<f64>,
}

impl SweepAxis {
    /// Parses `path=v1,v2,...`. An empty list is allowed.
    pub fn parse(spec: &str) -> Result<Self, ScenarioError> {
        let bad = || ScenarioError::UnknownAxis(spec.to_string());
        let (path, list) = spec.split_once('=').ok_or_else(bad)?;
        let values = list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            path: path.trim().to_string(),
            values,
        })
    }
}

fn number_like(old: &Value, x: f64) -> Value {
    if (old.is_u64() || old.is_i64()) && x.fract() == 0.0 && x >= 0.0 {
        Value::from(x as u64)
    } else {
        serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
    }
}

fn set_path(root: &mut Value, path: &[&str], x: f64) -> bool {
    let mut cur = root;
    for key in path {
        cur = match cur {
            Value::Object(o) => match o.get_mut(*key) {
                Some(v) => v,
                None => return false,
            },
            Value::Array(a) => match key.parse::<usize>().ok().and_then(|i| a.get_mut(i)) {
                Some(v) => v,
                None => return false,
            },
            _ => return false,
        };
    }
    if !cur.is_number() {
        return false;
    }
    *cur = number_like(cur, x);
    true
}

/// Applies one axis value to a config.
pub fn apply_axis(
    config: &ScenarioConfig,
    catalog: &Catalog,
    path: &str,
    x: f64,
) -> Result<ScenarioConfig, ScenarioError> {
    let unknown = || ScenarioError::UnknownAxis(path.to_string());
    let segments: Vec<&str> = path.split('.').collect();
    if let ["device", name, field] = segments.as_slice() {
        let base = match &config.catalog {
            Some(doc) => overlay_catalog(catalog, doc)?,
            None => catalog.clone(),
        };
        let record = base.device_record(name).ok_or_else(unknown)?;
        let mut rv = serde_json::to_value(record).expect("record serializes");
        if !set_path(&mut rv, &[field], x) {
            return Err(unknown());
        }
        let record = serde_json::from_value(rv).map_err(|e| ScenarioError::Config {
            path: path.to_string(),
            message: e.to_string(),
        })?;
        let mut out = config.clone();
        let doc = out.catalog.get_or_insert_with(CatalogDocument::default);
        doc.memory_devices.retain(|r| r.name != *name);
        doc.memory_devices.push(record);
        return Ok(out);
    }
    let mut v = config.to_value();
    if !set_path(&mut v, &segments, x) {
        return Err(unknown());
    }
    ScenarioConfig::from_value(v)
}

/// One report per axis value, in axis order.
pub fn sweep(
    config: &ScenarioConfig,
    catalog: &Catalog,
    axis: &SweepAxis,
) -> Result<Vec<(f64, ScenarioReport)>, ScenarioError> {
    // Reject unknown axes even when the value list is empty.
    let probe = config
        .to_value()
        .pointer(&format!("/{}", axis.path.replace('.', "/")))
        .is_some_and(Value::is_number);
    if !probe && !axis.path.starts_with("device.") {
        return Err(ScenarioError::UnknownAxis(axis.path.clone()));
    }
    axis.values
        .par_iter()
        .map(|&x| {
            let cfg = apply_axis(config, catalog, &axis.path, x)?;
            estimate(&cfg, catalog).map(|r| (x, r))
        })
        .collect()
}

pub fn sweep_csv(axis: &SweepAxis, rows: &[(f64, ScenarioReport)]) -> String {
    let mut header = vec![axis.path.as_str()];
    header.extend(CSV_COLUMNS);
    let body = rows
        .iter()
        .map(|(x, r)| {
            let mut fields = vec![x.to_string()];
            fields.extend(csv_fields(r));
            fields
        })
        .collect();
    write_csv(header, body)
}

/// Flat JSON listing of the catalog.
pub fn catalog_json(catalog: &Catalog) -> String {
    let devices: Vec<Value> = catalog
        .devices()
        .map(|d| {
            let eff = crate::hardware::derive_efficiency(d).ok();
            json!({
                "name": d.name,
                "capacity_bytes": d.capacity_bytes,
                "read_bw": d.read_bw,
                "write_bw": d.write_bw,
                "power_watts": d.power_watts,
                "read_latency": d.read_latency,
                "read_granularity_bytes": d.read_granularity_bytes,
                "write_endurance": d.write_endurance,
                "bw_per_watt": eff.map(|e| e.bw_per_watt),
                "cap_per_watt": eff.map(|e| e.cap_per_watt),
            })
        })
        .collect();
    let generations: Vec<Value> = catalog
        .generations()
        .map(|g| {
            json!({
                "name": g.name,
                "pin_rate_gbps": g.pin_rate_gbps,
                "pins": g.pins,
                "dies_per_stack": g.dies_per_stack,
                "stack_bandwidth": crate::hardware::stack_bandwidth(g),
                "stack_capacity": crate::hardware::stack_capacity(g),
            })
        })
        .collect();
    let nodes: Vec<Value> = catalog
        .nodes()
        .map(|n| {
            json!({
                "name": n.name,
                "peak_flops": n.peak_flops,
                "tiers": n.tiers.iter().map(|t| json!({"device": t.name(), "stacks": t.stacks})).collect::<Vec<_>>(),
                "memory_capacity_bytes": n.memory_capacity_bytes(),
                "total_power_watts": n.total_power_watts(),
                "capex_usd": n.capex_usd,
            })
        })
        .collect();
    pretty(&json!({
        "memory_devices": devices,
        "hbm_generations": generations,
        "nodes": nodes,
    }))
}
