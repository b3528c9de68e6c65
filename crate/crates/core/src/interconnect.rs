//! Network topologies, hop counts and closed-form collective timings.
//!
//! Concrete graphs behind each topology family:
//!
//! * `FullyConnected`: a direct link between every pair of nodes.
//! * `Torus`: wrap-around grid with bidirectional links; node count is the
//!   product of `dims`.
//! * `Tree`: compute nodes are the leaves of a complete `fanout`-ary switch
//!   tree of depth `ceil(log_fanout n)`, filled left to right. A hop is one
//!   switch traversal, so two leaves whose lowest common switch sits at
//!   height `h` are `2h - 1` hops apart.
//! * `Dragonfly`: `groups` groups of `per_group` routers, all-to-all inside a
//!   group and one global link per pair of groups. Group `i`'s link to group
//!   `j` hangs off router `(j if j < i else j - 1) mod per_group`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::units::{ns_to_s, GB};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InterconnectError {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("{kind} topology cannot hold {n} nodes: {reason}")]
    InconsistentNodes {
        kind: &'static str,
        n: u64,
        reason: String,
    },
    #[error("{collective:?} with in-network collectives requires a tree topology")]
    Unsupported { collective: CollectiveKind },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TopologyKind {
    FullyConnected,
    Torus { dims: Vec<u64> },
    Tree { fanout: u64 },
    Dragonfly { groups: u64, per_group: u64 },
}

impl TopologyKind {
    pub fn label(&self) -> &'static str {
        match self {
            TopologyKind::FullyConnected => "fully_connected",
            TopologyKind::Torus { .. } => "torus",
            TopologyKind::Tree { .. } => "tree",
            TopologyKind::Dragonfly { .. } => "dragonfly",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollectiveKind {
    AllReduce,
    Broadcast,
    MoeDispatch,
    MoeCollect,
}

impl CollectiveKind {
    pub const ALL: [CollectiveKind; 4] = [
        CollectiveKind::AllReduce,
        CollectiveKind::Broadcast,
        CollectiveKind::MoeDispatch,
        CollectiveKind::MoeCollect,
    ];
}

/// A network fabric in base SI units.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub kind: TopologyKind,
    /// bytes/s per link
    pub link_bw: f64,
    /// seconds
    pub per_hop_latency: f64,
    /// seconds of software/NIC cost per message
    pub per_message_overhead: f64,
    pub in_network_collectives: bool,
    /// Fraction of `per_message_overhead` removed by on-chip message handling.
    pub overhead_reduction: f64,
    /// Hot-expert multiplier on MoE all-to-all bandwidth time.
    pub moe_skew: f64,
}

pub const DEFAULT_PER_HOP_LATENCY_NS: f64 = 100.0;
pub const DEFAULT_PER_MESSAGE_OVERHEAD_NS: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKindName {
    FullyConnected,
    Torus,
    Tree,
    Dragonfly,
}

/// Config-file form of a [`Topology`], with unit-suffixed keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyRecord {
    pub kind: TopologyKindName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dims: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fanout: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_group: Option<u64>,
    pub link_bw_gbps: f64,
    #[serde(default = "default_hop_ns")]
    pub per_hop_latency_ns: f64,
    #[serde(default = "default_overhead_ns")]
    pub per_message_overhead_ns: f64,
    #[serde(default)]
    pub in_network: bool,
    #[serde(default)]
    pub overhead_reduction: f64,
    #[serde(default = "default_skew")]
    pub moe_skew: f64,
}

fn default_hop_ns() -> f64 {
    DEFAULT_PER_HOP_LATENCY_NS
}

fn default_overhead_ns() -> f64 {
    DEFAULT_PER_MESSAGE_OVERHEAD_NS
}

fn default_skew() -> f64 {
    1.0
}

impl TopologyRecord {
    pub fn to_topology(&self) -> Result<Topology, InterconnectError> {
        let missing = |f: &str| {
            InterconnectError::InvalidTopology(format!("{:?} topology needs `{f}`", self.kind))
        };
        let kind = match self.kind {
            TopologyKindName::FullyConnected => TopologyKind::FullyConnected,
            TopologyKindName::Torus => TopologyKind::Torus {
                dims: self.dims.clone().ok_or_else(|| missing("dims"))?,
            },
            TopologyKindName::Tree => TopologyKind::Tree {
                fanout: self.fanout.ok_or_else(|| missing("fanout"))?,
            },
            TopologyKindName::Dragonfly => TopologyKind::Dragonfly {
                groups: self.groups.ok_or_else(|| missing("groups"))?,
                per_group: self.per_group.ok_or_else(|| missing("per_group"))?,
            },
        };
        let t = Topology {
            kind,
            link_bw: self.link_bw_gbps * GB,
            per_hop_latency: ns_to_s(self.per_hop_latency_ns),
            per_message_overhead: ns_to_s(self.per_message_overhead_ns),
            in_network_collectives: self.in_network,
            overhead_reduction: self.overhead_reduction,
            moe_skew: self.moe_skew,
        };
        t.validate()?;
        Ok(t)
    }
}

impl Topology {
    pub fn new(kind: TopologyKind, link_bw: f64) -> Self {
        Self {
            kind,
            link_bw,
            per_hop_latency: ns_to_s(DEFAULT_PER_HOP_LATENCY_NS),
            per_message_overhead: ns_to_s(DEFAULT_PER_MESSAGE_OVERHEAD_NS),
            in_network_collectives: false,
            overhead_reduction: 0.0,
            moe_skew: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), InterconnectError> {
        let bad = |s: &str| Err(InterconnectError::InvalidTopology(s.into()));
        match &self.kind {
            TopologyKind::FullyConnected => {}
            TopologyKind::Torus { dims } => {
                if dims.is_empty() || dims.iter().any(|&d| d < 2) {
                    return bad("torus dims must be non-empty and each >= 2");
                }
            }
            TopologyKind::Tree { fanout } => {
                if *fanout < 2 {
                    return bad("tree fanout must be >= 2");
                }
            }
            TopologyKind::Dragonfly { groups, per_group } => {
                if *groups == 0 || *per_group == 0 {
                    return bad("dragonfly groups and per_group must be >= 1");
                }
            }
        }
        if !(self.link_bw > 0.0 && self.link_bw.is_finite()) {
            return bad("link_bw must be > 0");
        }
        if !(self.per_hop_latency > 0.0) || !(self.per_message_overhead > 0.0) {
            return bad("latencies must be > 0");
        }
        if !(0.0..=1.0).contains(&self.overhead_reduction) {
            return bad("overhead_reduction must be in [0, 1]");
        }
        if !(self.moe_skew >= 1.0) {
            return bad("moe_skew must be >= 1");
        }
        Ok(())
    }

    /// Node count of the physical fabric, if it is fixed by the topology.
    pub fn capacity(&self) -> Option<u64> {
        match &self.kind {
            TopologyKind::Torus { dims } => Some(dims.iter().product()),
            TopologyKind::Dragonfly { groups, per_group } => Some(groups * per_group),
            TopologyKind::FullyConnected | TopologyKind::Tree { .. } => None,
        }
    }

    /// Size of the graph a group of `n` communicating chips lives on: the
    /// whole fabric for fixed-size topologies, `n` otherwise.
    pub fn fabric_size(&self, n: u64) -> Result<u64, InterconnectError> {
        match self.capacity() {
            Some(cap) if n > cap => Err(InterconnectError::InconsistentNodes {
                kind: self.kind.label(),
                n,
                reason: format!("fabric has {cap} nodes"),
            }),
            Some(cap) => Ok(cap),
            None => Ok(n),
        }
    }

    fn effective_overhead(&self) -> f64 {
        self.per_message_overhead * (1.0 - self.overhead_reduction)
    }
}

/// Depth of the smallest complete `fanout`-ary tree with at least `n` leaves.
pub fn tree_depth(fanout: u64, n: u64) -> u32 {
    let mut depth = 0;
    let mut leaves = 1u64;
    while leaves < n {
        leaves = leaves.saturating_mul(fanout);
        depth += 1;
    }
    depth
}

/// Sum of ring distances from one node to all others on a ring of `k`.
fn ring_distance_sum(k: u64) -> u64 {
    (0..k).map(|j| j.min(k - j)).sum()
}

/// Sum of shortest-path hop counts over ordered node pairs.
fn total_pair_hops(kind: &TopologyKind, n: u64) -> u128 {
    match kind {
        TopologyKind::FullyConnected => n as u128 * (n as u128 - 1),
        TopologyKind::Torus { dims } => {
            let nn = n as u128;
            dims.iter()
                .map(|&k| nn * ring_distance_sum(k) as u128 * (nn / k as u128))
                .sum()
        }
        TopologyKind::Tree { fanout } => {
            // Ordered distinct pairs within the same height-h subtree.
            let same_block = |h: u32| -> u128 {
                let block = (*fanout as u128).pow(h);
                let full = n as u128 / block;
                let rest = n as u128 % block;
                full * block * (block - 1) + rest * rest.saturating_sub(1)
            };
            let depth = tree_depth(*fanout, n);
            (1..=depth)
                .map(|h| (2 * h as u128 - 1) * (same_block(h) - same_block(h - 1)))
                .sum()
        }
        TopologyKind::Dragonfly { groups, per_group } => dragonfly_total_hops(*groups, *per_group),
    }
}

/// Router in group `i` that owns the global link to group `j`.
pub fn dragonfly_gateway(i: u64, j: u64, per_group: u64) -> u64 {
    (if j < i { j } else { j - 1 }) % per_group
}

fn dragonfly_total_hops(groups: u64, p: u64) -> u128 {
    let p2 = (p * p) as u128;
    // Inside a group every distinct pair is one hop.
    let mut total = groups as u128 * p as u128 * (p as u128 - 1);
    let mut via = vec![false; (p * p) as usize];
    for i in 0..groups {
        for j in 0..groups {
            if i == j {
                continue;
            }
            // Across groups the distance is 1, 2 or 3: a direct route costs
            // [a != R] + 1 + [b != S]; a detour through group k reaches 2 only
            // when both endpoints and k's two gateways line up.
            let r = dragonfly_gateway(i, j, p);
            let s = dragonfly_gateway(j, i, p);
            via.iter_mut().for_each(|v| *v = false);
            for k in (0..groups).filter(|&k| k != i && k != j) {
                if dragonfly_gateway(k, i, p) == dragonfly_gateway(k, j, p) {
                    let a = dragonfly_gateway(i, k, p);
                    let b = dragonfly_gateway(j, k, p);
                    via[(a * p + b) as usize] = true;
                }
            }
            let direct_two = 2 * (p as u128 - 1);
            let via_two = (0..p)
                .flat_map(|a| (0..p).map(move |b| (a, b)))
                .filter(|&(a, b)| (a != r) && (b != s) && via[(a * p + b) as usize])
                .count() as u128;
            let two = direct_two + via_two;
            let three = p2 - 1 - two;
            total += 1 + 2 * two + 3 * three;
        }
    }
    total
}

/// Mean shortest-path hop count over ordered pairs of distinct nodes.
pub fn avg_hops(t: &Topology, n: u64) -> Result<f64, InterconnectError> {
    let inconsistent = |reason: String| InterconnectError::InconsistentNodes {
        kind: t.kind.label(),
        n,
        reason,
    };
    if n == 0 {
        return Err(inconsistent("need at least one node".into()));
    }
    if let Some(cap) = t.capacity() {
        if n != cap {
            return Err(inconsistent(format!("topology has exactly {cap} nodes")));
        }
    }
    if n == 1 {
        return Ok(0.0);
    }
    let pairs = n as u128 * (n as u128 - 1);
    Ok(total_pair_hops(&t.kind, n) as f64 / pairs as f64)
}

/// Hops used when `n` chips communicate on this fabric.
pub fn group_hops(t: &Topology, n: u64) -> Result<f64, InterconnectError> {
    if n <= 1 {
        return Ok(0.0);
    }
    avg_hops(t, t.fabric_size(n)?)
}

pub fn message_time_with_hops(t: &Topology, hops: f64, bytes: f64) -> f64 {
    t.effective_overhead() + hops * t.per_hop_latency + bytes / t.link_bw
}

/// One point-to-point message between two of `n` chips.
pub fn message_time(t: &Topology, n: u64, bytes: f64) -> Result<f64, InterconnectError> {
    Ok(message_time_with_hops(t, group_hops(t, n)?, bytes))
}

/// Ring all-reduce: `2(n-1)` steps each moving `bytes/n`.
pub fn ring_allreduce_time(t: &Topology, hops: f64, bytes: f64, n: u64) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    2.0 * (n - 1) as f64 * message_time_with_hops(t, hops, bytes / n as f64)
}

/// Switch-aggregated all-reduce: reduce up the tree, multicast back down.
pub fn in_network_allreduce_time(t: &Topology, depth: u32, bytes: f64) -> f64 {
    2.0 * depth as f64 * t.per_hop_latency + 2.0 * bytes / t.link_bw
}

fn tree_broadcast_time(t: &Topology, hops: f64, bytes: f64, n: u64) -> f64 {
    let rounds = (n as f64).log2().ceil();
    rounds * message_time_with_hops(t, hops, bytes)
}

fn all_to_all_time(t: &Topology, hops: f64, bytes: f64, n: u64) -> f64 {
    let nf = n as f64;
    (nf - 1.0) * t.effective_overhead()
        + hops * t.per_hop_latency
        + t.moe_skew * bytes * (nf - 1.0) / nf / t.link_bw
}

/// Time for a collective among `n` chips where each contributes
/// `bytes_per_node`.
///
/// When in-network collectives are enabled on a tree, all-reduce and
/// broadcast take the faster of the switch-aggregated and host-based
/// algorithms, so the feature never slows a collective down.
pub fn collective_time(
    t: &Topology,
    kind: CollectiveKind,
    bytes_per_node: f64,
    n: u64,
) -> Result<f64, InterconnectError> {
    if n <= 1 {
        return Ok(0.0);
    }
    let hops = group_hops(t, n)?;
    let depth = match t.kind {
        TopologyKind::Tree { fanout } => Some(tree_depth(fanout, n)),
        _ => None,
    };
    let in_network = match (t.in_network_collectives, depth) {
        (false, _) => None,
        (true, Some(d)) => Some(d),
        (true, None) => match kind {
            CollectiveKind::AllReduce | CollectiveKind::Broadcast => {
                return Err(InterconnectError::Unsupported { collective: kind })
            }
            _ => None,
        },
    };
    Ok(match kind {
        CollectiveKind::AllReduce => {
            let ring = ring_allreduce_time(t, hops, bytes_per_node, n);
            match in_network {
                Some(d) => ring.min(in_network_allreduce_time(t, d, bytes_per_node)),
                None => ring,
            }
        }
        CollectiveKind::Broadcast => {
            let host = tree_broadcast_time(t, hops, bytes_per_node, n);
            match in_network {
                Some(d) => host.min(d as f64 * t.per_hop_latency + bytes_per_node / t.link_bw),
                None => host,
            }
        }
        CollectiveKind::MoeDispatch | CollectiveKind::MoeCollect => {
            all_to_all_time(t, hops, bytes_per_node, n)
        }
    })
}
