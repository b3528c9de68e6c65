//! Brute-force oracles and generators shared by the integration suites.
//!
//! Every oracle here recomputes its answer from first principles (explicit
//! matrices, explicit graphs, exhaustive plan lists) rather than calling the
//! closed forms it checks.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap, VecDeque};

use infersim_core::hardware::{Catalog, NodeSpec, TierSlot};
use infersim_core::interconnect::{dragonfly_gateway, TopologyKind};
use infersim_core::roofline::EngineKnobs;
use infersim_core::sharding::{check_feasible, Parallelism, Placement, ShardingPlan};
use infersim_core::workload::{ModelSpec, MoeSpec, RequestSpec};
use proptest::prelude::*;

/// One weight matrix of a transformer.
#[derive(Debug, Clone)]
pub struct Matrix {
    pub name: String,
    pub rows: u64,
    pub cols: u64,
    /// Multiplied by every token's activations (embedding lookups are not).
    pub active: bool,
}

/// Lists every weight matrix. For MoE layers the first `top_k` experts are
/// marked active; any choice of `top_k` experts has the same size.
pub fn enumerate_matrices(m: &ModelSpec) -> Vec<Matrix> {
    let mat = |name: String, rows, cols, active| Matrix {
        name,
        rows,
        cols,
        active,
    };
    let mut out = vec![mat("embed".into(), m.vocab, m.d_model, false)];
    let ffn = |out: &mut Vec<Matrix>, tag: String, width: u64, active: bool| {
        if width == 0 {
            return;
        }
        if m.gated {
            out.push(mat(format!("{tag}.gate"), m.d_model, width, active));
        }
        out.push(mat(format!("{tag}.up"), m.d_model, width, active));
        out.push(mat(format!("{tag}.down"), width, m.d_model, active));
    };
    for l in 0..m.layers {
        out.push(mat(
            format!("l{l}.q"),
            m.d_model,
            m.n_heads * m.d_head,
            true,
        ));
        out.push(mat(
            format!("l{l}.k"),
            m.d_model,
            m.n_kv_heads * m.d_head,
            true,
        ));
        out.push(mat(
            format!("l{l}.v"),
            m.d_model,
            m.n_kv_heads * m.d_head,
            true,
        ));
        out.push(mat(
            format!("l{l}.o"),
            m.n_heads * m.d_head,
            m.d_model,
            true,
        ));
        match &m.moe {
            None => ffn(&mut out, format!("l{l}.ffn"), m.ffn_dim, true),
            Some(moe) => {
                ffn(&mut out, format!("l{l}.shared"), moe.shared_ffn_dim, true);
                for e in 0..moe.n_experts {
                    ffn(&mut out, format!("l{l}.e{e}"), m.ffn_dim, e < moe.top_k);
                }
            }
        }
    }
    out
}

pub fn oracle_weight_bytes(m: &ModelSpec) -> u64 {
    enumerate_matrices(m)
        .iter()
        .map(|x| x.rows * x.cols)
        .sum::<u64>()
        * m.dtype_bytes
}

pub fn oracle_active_params(m: &ModelSpec) -> u64 {
    enumerate_matrices(m)
        .iter()
        .filter(|x| x.active)
        .map(|x| x.rows * x.cols)
        .sum()
}

/// FLOPs by walking every token of every sequence through every active
/// matrix (one multiply-add per weight) and every attention dot product.
/// Each KV head's query group is charged once, the grouped-query form.
pub fn oracle_flops(m: &ModelSpec, context_len: u64, tokens: u64, batch: u64) -> u64 {
    let mats = enumerate_matrices(m);
    let mut total = 0u64;
    for _seq in 0..batch {
        for _tok in 0..tokens {
            for x in mats.iter().filter(|x| x.active) {
                for _row in 0..x.rows {
                    total += 2 * x.cols;
                }
            }
            for _layer in 0..m.layers {
                for _head in 0..m.n_kv_heads {
                    for _key in 0..context_len {
                        // q·k score, then weight × v accumulation.
                        total += 2 * m.d_head + 2 * m.d_head;
                    }
                }
            }
        }
    }
    total
}

/// Explicit adjacency list for a topology; the first `n` vertices are the
/// compute nodes, any others are switches.
pub fn topology_graph(kind: &TopologyKind, n: u64) -> Vec<Vec<usize>> {
    let n = n as usize;
    match kind {
        TopologyKind::FullyConnected => (0..n)
            .map(|i| (0..n).filter(|&j| j != i).collect())
            .collect(),
        TopologyKind::Torus { dims } => {
            let dims: Vec<usize> = dims.iter().map(|&d| d as usize).collect();
            let total: usize = dims.iter().product();
            let mut adj = vec![Vec::new(); total];
            for (v, nbrs) in adj.iter_mut().enumerate() {
                let mut stride = 1;
                for &d in &dims {
                    let coord = (v / stride) % d;
                    for next in [(coord + 1) % d, (coord + d - 1) % d] {
                        let u = v - coord * stride + next * stride;
                        if u != v && !nbrs.contains(&u) {
                            nbrs.push(u);
                        }
                    }
                    stride *= d;
                }
            }
            adj
        }
        TopologyKind::Tree { fanout } => {
            let f = *fanout as usize;
            let mut ids: HashMap<(u32, usize), usize> = HashMap::new();
            let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
            let link = |adj: &mut Vec<Vec<usize>>, a: usize, b: usize| {
                adj[a].push(b);
                adj[b].push(a);
            };
            let depth = infersim_core::interconnect::tree_depth(*fanout, n as u64);
            for leaf in 0..n {
                let mut child = leaf;
                let mut index = leaf;
                for h in 1..=depth {
                    index /= f;
                    let next = adj.len();
                    let (sw, fresh) = match ids.get(&(h, index)) {
                        Some(&id) => (id, false),
                        None => {
                            ids.insert((h, index), next);
                            adj.push(Vec::new());
                            (next, true)
                        }
                    };
                    if !adj[child].contains(&sw) {
                        link(&mut adj, child, sw);
                    }
                    if !fresh {
                        break;
                    }
                    child = sw;
                }
            }
            adj
        }
        TopologyKind::Dragonfly { groups, per_group } => {
            let (g, p) = (*groups, *per_group);
            let id = |grp: u64, r: u64| (grp * p + r) as usize;
            let mut adj = vec![Vec::new(); (g * p) as usize];
            for grp in 0..g {
                for a in 0..p {
                    for b in 0..p {
                        if a != b {
                            adj[id(grp, a)].push(id(grp, b));
                        }
                    }
                }
            }
            for i in 0..g {
                for j in (i + 1)..g {
                    let a = id(i, dragonfly_gateway(i, j, p));
                    let b = id(j, dragonfly_gateway(j, i, p));
                    adj[a].push(b);
                    adj[b].push(a);
                }
            }
            adj
        }
    }
}

fn bfs(adj: &[Vec<usize>], src: usize) -> Vec<u64> {
    let mut dist = vec![u64::MAX; adj.len()];
    dist[src] = 0;
    let mut queue = VecDeque::from([src]);
    while let Some(v) = queue.pop_front() {
        for &u in &adj[v] {
            if dist[u] == u64::MAX {
                dist[u] = dist[v] + 1;
                queue.push_back(u);
            }
        }
    }
    dist
}

/// Mean hop count over ordered pairs of compute nodes by all-pairs BFS.
/// Tree hops count switches traversed, one less than the edge count.
pub fn bfs_avg_hops(kind: &TopologyKind, n: u64) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    let adj = topology_graph(kind, n);
    let tree = matches!(kind, TopologyKind::Tree { .. });
    let mut total = 0u64;
    for s in 0..n as usize {
        let d = bfs(&adj, s);
        for t in (0..n as usize).filter(|&t| t != s) {
            assert_ne!(d[t], u64::MAX, "graph disconnected");
            total += if tree { d[t] - 1 } else { d[t] };
        }
    }
    total as f64 / (n * (n - 1)) as f64
}

/// Every topology with at most `max_nodes` compute nodes, with its node count.
pub fn small_topologies(max_nodes: u64) -> Vec<(TopologyKind, u64)> {
    let mut out = Vec::new();
    for n in 1..=max_nodes {
        out.push((TopologyKind::FullyConnected, n));
        for fanout in 2..=max_nodes.max(2) {
            out.push((TopologyKind::Tree { fanout }, n));
        }
    }
    fn tori(prefix: Vec<u64>, product: u64, max: u64, out: &mut Vec<(TopologyKind, u64)>) {
        if !prefix.is_empty() {
            out.push((
                TopologyKind::Torus {
                    dims: prefix.clone(),
                },
                product,
            ));
        }
        for d in 2..=max / product {
            let mut next = prefix.clone();
            next.push(d);
            tori(next, product * d, max, out);
        }
    }
    tori(Vec::new(), 1, max_nodes, &mut out);
    for groups in 1..=max_nodes {
        for per_group in 1..=max_nodes / groups {
            out.push((
                TopologyKind::Dragonfly { groups, per_group },
                groups * per_group,
            ));
        }
    }
    out
}

/// Smallest feasible plan size by trying every (tp, pp, ep, dp) tuple with
/// at most `bound` chips, divisor or not.
pub fn exhaustive_min_chips(
    model: &ModelSpec,
    request: &RequestSpec,
    node: &NodeSpec,
    placement: &Placement,
    knobs: &EngineKnobs,
    bound: u64,
) -> Option<u64> {
    all_plans(bound, placement)
        .into_iter()
        .filter(|p| {
            check_feasible(p, model, request, node, knobs)
                .map(|r| r.feasible)
                .unwrap_or(false)
        })
        .map(|p| p.chips())
        .min()
}

pub fn all_plans(bound: u64, placement: &Placement) -> Vec<ShardingPlan> {
    let mut out = Vec::new();
    for tp in 1..=bound {
        for pp in 1..=bound / tp {
            for ep in 1..=bound / (tp * pp) {
                for dp in 1..=bound / (tp * pp * ep) {
                    out.push(ShardingPlan::new(
                        Parallelism { tp, pp, ep, dp },
                        placement.clone(),
                    ));
                }
            }
        }
    }
    out
}

/// Indices not dominated by any other row, by direct pairwise comparison.
pub fn oracle_pareto(values: &[Vec<f64>]) -> BTreeSet<usize> {
    let mut keep = BTreeSet::new();
    'outer: for i in 0..values.len() {
        for j in 0..values.len() {
            if i == j {
                continue;
            }
            let mut no_worse = true;
            let mut better = false;
            for (other, mine) in values[j].iter().zip(&values[i]) {
                if other > mine {
                    no_worse = false;
                }
                if other < mine {
                    better = true;
                }
            }
            if no_worse && better {
                continue 'outer;
            }
        }
        keep.insert(i);
    }
    keep
}

/// Dispatch bytes by routing every token of every sequence, layer by layer,
/// to each of its `top_k` experts.
pub fn routed_dispatch_bytes(m: &ModelSpec, sequences: u64, tokens: u64) -> u64 {
    let mut total = 0;
    for _layer in 0..m.layers {
        for _seq in 0..sequences {
            for _tok in 0..tokens {
                for _choice in 0..m.top_k() {
                    total += m.d_model * m.dtype_bytes;
                }
            }
        }
    }
    total
}

/// One-tier HBM node with the given per-chip capacity in bytes.
pub fn tiny_node(capacity_bytes: u64) -> NodeSpec {
    let cat = Catalog::builtin();
    let mut node = cat.node("accel-hbm").expect("builtin node").clone();
    let mut device = node.tiers[0].device.clone();
    device.capacity_bytes = capacity_bytes;
    node.tiers = vec![TierSlot { device, stacks: 1 }];
    node
}

pub fn toy_model() -> impl Strategy<Value = ModelSpec> {
    (
        1u64..=4,
        1u64..=3,
        1u64..=3,
        1u64..=8,
        1u64..=32,
        1u64..=32,
        1u64..=50,
        prop::sample::select(vec![1u64, 2, 4]),
        any::<bool>(),
        prop::option::of((1u64..=8, 1u64..=8, 0u64..=16)),
    )
        .prop_map(
            |(
                layers,
                n_kv_heads,
                group,
                d_head,
                d_model,
                ffn_dim,
                vocab,
                dtype_bytes,
                gated,
                moe,
            )| ModelSpec {
                layers,
                d_model,
                n_heads: n_kv_heads * group,
                n_kv_heads,
                d_head,
                ffn_dim,
                vocab,
                dtype_bytes,
                gated,
                moe: moe.map(|(n_experts, k, shared)| MoeSpec {
                    n_experts,
                    top_k: k.min(n_experts),
                    shared_ffn_dim: shared,
                }),
            },
        )
}

pub fn toy_request() -> impl Strategy<Value = RequestSpec> {
    (1u64..=16, 0u64..=8, 0u64..=4, 1u64..=8).prop_map(
        |(input_len, output_len, thought_len, batch)| RequestSpec {
            input_len,
            output_len,
            thought_len,
            batch,
            rag_corpus_bytes: 0,
            modality_flops_multiplier: 1.0,
            compute_only: false,
        },
    )
}

use infersim_core::hardware::MemoryDeviceSpec;
use infersim_core::interconnect::{collective_time, CollectiveKind, Topology};
use infersim_core::roofline::{effective_read_bw, Evaluator};
use infersim_core::sharding::{best_min_system_size, divisors, ExploreError};
use proptest::test_runner::TestCaseError;

/// A toy model and request with a random divisor-lattice plan on a
/// fully-connected or tree fabric.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub model: ModelSpec,
    pub request: RequestSpec,
    pub plan: ShardingPlan,
    pub topology: Topology,
}

pub fn scenario() -> impl Strategy<Value = Scenario> {
    (
        toy_model(),
        toy_request(),
        any::<[prop::sample::Index; 4]>(),
        prop::option::of(2u64..=4),
        any::<bool>(),
    )
        .prop_map(|(model, request, picks, fanout, in_network)| {
            let pick = |n: u64, i: &prop::sample::Index| {
                let d = divisors(n);
                d[i.index(d.len())]
            };
            let plan = ShardingPlan::new(
                Parallelism {
                    tp: pick(model.n_heads, &picks[0]),
                    pp: pick(model.layers, &picks[1]),
                    ep: pick(model.n_experts(), &picks[2]),
                    dp: pick(request.batch, &picks[3]),
                },
                Placement::all("HBM4"),
            );
            let kind = match fanout {
                Some(fanout) => TopologyKind::Tree { fanout },
                None => TopologyKind::FullyConnected,
            };
            let mut topology = Topology::new(kind, 5e10);
            topology.in_network_collectives = in_network && fanout.is_some();
            Scenario {
                model,
                request,
                plan,
                topology,
            }
        })
}

fn hbm_node() -> NodeSpec {
    Catalog::builtin()
        .node("accel-hbm")
        .expect("builtin node")
        .clone()
}

fn evaluator<'a>(s: &'a Scenario, node: &'a NodeSpec, knobs: &'a EngineKnobs) -> Evaluator<'a> {
    Evaluator::new(&s.model, &s.request, node, &s.plan, &s.topology, knobs).expect("valid scenario")
}

/// step_time is exactly max(compute, memory) + network in both phases.
pub fn check_step_identity(s: &Scenario, ctx_extra: u64) -> Result<(), TestCaseError> {
    let node = hbm_node();
    let knobs = EngineKnobs::default();
    let eval = evaluator(s, &node, &knobs);
    for est in [
        eval.prefill().unwrap(),
        eval.decode_step(s.request.input_len + 1 + ctx_extra)
            .unwrap(),
    ] {
        prop_assert_eq!(
            est.step_time,
            est.compute_time.max(est.memory_time) + est.network_time
        );
        prop_assert!(est.compute_time >= 0.0 && est.memory_time > 0.0 && est.network_time >= 0.0);
    }
    Ok(())
}

/// Raising memory bandwidth or peak FLOP/s never lengthens a step.
pub fn check_monotonicity(
    s: &Scenario,
    bw_scale: f64,
    flops_scale: f64,
) -> Result<(), TestCaseError> {
    let knobs = EngineKnobs::default();
    let base = hbm_node();
    let mut faster_mem = base.clone();
    for t in &mut faster_mem.tiers {
        t.device.read_bw *= bw_scale;
        t.device.write_bw *= bw_scale;
    }
    let mut faster_compute = base.clone();
    faster_compute.peak_flops *= flops_scale;
    let ctx = s.request.input_len + 1;
    let b = evaluator(s, &base, &knobs);
    let m = evaluator(s, &faster_mem, &knobs);
    let c = evaluator(s, &faster_compute, &knobs);
    for (x, y) in [
        (b.prefill().unwrap(), m.prefill().unwrap()),
        (b.decode_step(ctx).unwrap(), m.decode_step(ctx).unwrap()),
        (b.prefill().unwrap(), c.prefill().unwrap()),
        (b.decode_step(ctx).unwrap(), c.decode_step(ctx).unwrap()),
    ] {
        prop_assert!(
            y.step_time <= x.step_time,
            "{} > {}",
            y.step_time,
            x.step_time
        );
    }
    Ok(())
}

/// Granularity rounding can only waste bandwidth.
pub fn check_effective_bw(
    device: &MemoryDeviceSpec,
    request_bytes: f64,
) -> Result<(), TestCaseError> {
    let bw = effective_read_bw(device, request_bytes);
    prop_assert!(bw <= device.read_bw, "{bw} > {}", device.read_bw);
    prop_assert!(bw > 0.0);
    Ok(())
}

/// Enabling in-network collectives on a tree never slows a collective.
pub fn check_in_network_dominance(
    fanout: u64,
    n: u64,
    bytes: f64,
    link_bw: f64,
) -> Result<(), TestCaseError> {
    let host = Topology::new(TopologyKind::Tree { fanout }, link_bw);
    let switch = Topology {
        in_network_collectives: true,
        ..host.clone()
    };
    for kind in CollectiveKind::ALL {
        let a = collective_time(&host, kind, bytes, n).unwrap();
        let b = collective_time(&switch, kind, bytes, n).unwrap();
        prop_assert!(b <= a, "{kind:?}: {b} > {a}");
    }
    Ok(())
}

/// Adding an HBF tier to a node never raises its minimum system size.
pub fn check_hbf_relaxation(
    model: &ModelSpec,
    request: &RequestSpec,
    hbm_bytes: u64,
    hbf_bytes: u64,
) -> Result<(), TestCaseError> {
    let knobs = EngineKnobs::default();
    let without = tiny_node(hbm_bytes);
    let mut with = without.clone();
    let mut hbf = Catalog::builtin()
        .device("HBF")
        .expect("builtin HBF")
        .clone();
    hbf.capacity_bytes = hbf_bytes;
    with.tiers.push(TierSlot {
        device: hbf,
        stacks: 1,
    });
    let a = best_min_system_size(model, request, &without, &knobs, 64);
    let b = best_min_system_size(model, request, &with, &knobs, 64);
    match (a, b) {
        (Ok((a, _)), Ok((b, _))) => prop_assert!(b <= a, "with HBF {b} > without {a}"),
        (Ok((a, _)), Err(e)) => prop_assert!(false, "without HBF {a}, with HBF {e:?}"),
        (Err(ExploreError::Unsatisfiable(_)), _) => {}
        (Err(e), _) => prop_assert!(false, "{e:?}"),
    }
    Ok(())
}

pub fn device() -> impl Strategy<Value = MemoryDeviceSpec> {
    let cat = Catalog::builtin();
    let devices: Vec<MemoryDeviceSpec> = cat.devices().cloned().collect();
    (prop::sample::select(devices), 0u32..=16, 1.0f64..1e12).prop_map(|(mut d, shift, bw)| {
        d.read_granularity_bytes = 1 << shift;
        d.read_bw = bw;
        d
    })
}
