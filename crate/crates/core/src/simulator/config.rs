use std::collections::BTreeSet;
use std::fs;
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::codec::{PROTO_TCP, PROTO_UDP};
use crate::id_assignment::{assign_ids, BitWidth, IdAssignment};
use crate::marking::FilterAction;
use crate::prefix::Ipv4Prefix;
use crate::topology::{NodeId, PortRef, Topology, TopologyDocument};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpoofMode {
    /// The host's own address.
    #[default]
    None,
    /// Uniform over the scenario's spoof pool, per packet.
    Random,
    Fixed(Ipv4Addr),
}

fn default_udp() -> u8 {
    PROTO_UDP
}

fn default_tcp() -> u8 {
    PROTO_TCP
}

fn default_dns() -> u16 {
    53
}

fn default_http() -> u16 {
    80
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackerSpec {
    pub source: NodeId,
    #[serde(default)]
    pub spoof: SpoofMode,
    /// Packets per tick.
    pub rate: u32,
    #[serde(default = "default_udp")]
    pub protocol: u8,
    #[serde(default = "default_dns")]
    pub dst_port: u16,
    #[serde(default)]
    pub start_tick: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_tick: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenignFlow {
    pub src: NodeId,
    pub dst: NodeId,
    pub rate: u32,
    #[serde(default = "default_tcp")]
    pub protocol: u8,
    #[serde(default = "default_http")]
    pub dst_port: u16,
    #[serde(default)]
    pub start_tick: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_tick: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkAction {
    Disable,
    Enable,
}

/// Takes effect at the start of `tick`, before that tick's traffic moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteChange {
    pub tick: u64,
    /// Either end order is accepted.
    pub link: [PortRef; 2],
    pub action: LinkAction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefenseScope {
    /// Every router with tracing enabled.
    #[default]
    Tracing,
    /// Only routers on reconstructed attack paths.
    Paths,
}

fn default_pool() -> Ipv4Prefix {
    "198.18.0.0/24".parse().expect("literal prefix")
}

fn default_payload_len() -> usize {
    32
}

fn default_ttl() -> u8 {
    64
}

fn default_defense_delay() -> u64 {
    8
}

fn default_drop() -> FilterAction {
    FilterAction::Drop
}

/// Everything about a scenario except the topology and its IDs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioParams {
    pub victim: NodeId,
    #[serde(default)]
    pub attackers: Vec<AttackerSpec>,
    #[serde(default)]
    pub benign_flows: Vec<BenignFlow>,
    /// Packets per tick arriving at the victim that raise the alarm.
    pub ids_threshold: u64,
    pub duration: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub loss_prob: f64,
    #[serde(default)]
    pub route_changes: Vec<RouteChange>,
    #[serde(default = "default_pool")]
    pub spoof_pool: Ipv4Prefix,
    /// Transport payload size, at least 16 bytes.
    #[serde(default = "default_payload_len")]
    pub payload_len: usize,
    #[serde(default = "default_ttl")]
    pub ttl: u8,
    /// Ticks between the first traced attack packet and filter installation.
    #[serde(default = "default_defense_delay")]
    pub defense_delay: u64,
    #[serde(default)]
    pub defense_scope: DefenseScope,
    #[serde(default = "default_drop")]
    pub defense_action: FilterAction,
    #[serde(default)]
    pub stamp_receiver: bool,
    /// Nodes whose traffic is captured in both directions. Defaults to the
    /// victim.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capture_nodes: Option<BTreeSet<NodeId>>,
}

impl ScenarioParams {
    /// Minimal parameters: no traffic, tracing never triggered.
    pub fn new(victim: NodeId, duration: u64) -> Self {
        ScenarioParams {
            victim,
            attackers: Vec::new(),
            benign_flows: Vec::new(),
            ids_threshold: u64::MAX,
            duration,
            seed: 0,
            loss_prob: 0.0,
            route_changes: Vec::new(),
            spoof_pool: default_pool(),
            payload_len: default_payload_len(),
            ttl: default_ttl(),
            defense_delay: default_defense_delay(),
            defense_scope: DefenseScope::Tracing,
            defense_action: FilterAction::Drop,
            stamp_receiver: false,
            capture_nodes: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TopologySource {
    Path(PathBuf),
    Inline(TopologyDocument),
}

/// On-disk scenario. Relative paths resolve against the scenario file's
/// directory. Without an assignment file, IDs are assigned greedily at
/// `bit_width` (default 5).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub topology: TopologySource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assignment: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bit_width: Option<u8>,
    #[serde(flatten)]
    pub params: ScenarioParams,
}

#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub topology: Topology,
    pub assignment: IdAssignment,
    pub params: ScenarioParams,
}

fn read(path: &Path) -> Result<String, SimError> {
    fs::read_to_string(path).map_err(|source| SimError::Io { path: path.to_path_buf(), source })
}

impl ScenarioFile {
    /// Self-contained file form of a config: inline topology, explicit IDs
    /// written next to it by the caller when `assignment` is given.
    pub fn inline(config: &ScenarioConfig, assignment: Option<PathBuf>) -> Self {
        ScenarioFile {
            topology: TopologySource::Inline(config.topology.to_document()),
            bit_width: assignment.is_none().then(|| config.assignment.bit_width().bits()),
            assignment,
            params: config.params.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn load(path: &Path) -> Result<ScenarioConfig, SimError> {
        let file: ScenarioFile = serde_json::from_str(&read(path)?)?;
        file.resolve(path.parent().unwrap_or(Path::new(".")))
    }

    pub fn resolve(self, base: &Path) -> Result<ScenarioConfig, SimError> {
        let topology = match self.topology {
            TopologySource::Path(p) => Topology::from_json(&read(&base.join(p))?)?,
            TopologySource::Inline(doc) => Topology::from_document(doc).map_err(crate::topology::TopologyError::from)?,
        };
        let assignment = match (self.assignment, self.bit_width) {
            (Some(p), _) => IdAssignment::from_json(&read(&base.join(p))?, &topology)?,
            (None, bits) => assign_ids(&topology, BitWidth::new(bits.unwrap_or(BitWidth::DEFAULT.bits()))?)?,
        };
        let config = ScenarioConfig { topology, assignment, params: self.params };
        config.validate()?;
        Ok(config)
    }
}

impl ScenarioConfig {
    pub fn new(topology: Topology, assignment: IdAssignment, params: ScenarioParams) -> Result<Self, SimError> {
        let c = ScenarioConfig { topology, assignment, params };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let p = &self.params;
        let t = &self.topology;
        let bad = |msg: String| Err(SimError::Config(msg));
        if !t.contains(p.victim) {
            return bad(format!("victim {} is not in the topology", p.victim));
        }
        if p.ids_threshold == 0 {
            return bad("ids_threshold must be positive".into());
        }
        if !(0.0..1.0).contains(&p.loss_prob) {
            return bad(format!("loss_prob {} outside [0, 1)", p.loss_prob));
        }
        if p.payload_len < 16 {
            return bad(format!("payload_len {} below 16", p.payload_len));
        }
        let host = |role: &str, id: NodeId| match t.node(id) {
            Ok(n) if !n.kind.is_router() => Ok(()),
            Ok(_) => Err(SimError::Config(format!("{role} {id} is a router, not a host"))),
            Err(_) => Err(SimError::Config(format!("{role} {id} is not in the topology"))),
        };
        for a in &p.attackers {
            host("attacker", a.source)?;
        }
        for f in &p.benign_flows {
            host("benign source", f.src)?;
            if !t.contains(f.dst) {
                return bad(format!("benign destination {} is not in the topology", f.dst));
            }
        }
        for c in &p.route_changes {
            if t.find_link(c.link[0], c.link[1]).is_none() {
                return bad(format!("route change at tick {}: no link {:?}", c.tick, c.link));
            }
        }
        if let Some(nodes) = &p.capture_nodes {
            if let Some(n) = nodes.iter().find(|n| !t.contains(**n)) {
                return bad(format!("capture node {n} is not in the topology"));
            }
        }
        Ok(())
    }
}
