//! Port ID assignment.
//!
//! Every router port gets a small `k`-bit ID. IDs need not be globally
//! unique; they only have to be distinct among the ports that face any one
//! node, so that a backward walk from that node always knows which neighbor
//! wrote the last ID.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{NodeId, PortRef, Topology, TopologyError};

/// Number of bits per port ID, in `1..=8`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct BitWidth(u8);

impl BitWidth {
    pub const MIN: u8 = 1;
    pub const MAX: u8 = 8;
    pub const DEFAULT: BitWidth = BitWidth(5);

    pub fn new(bits: u8) -> Result<Self, AssignmentError> {
        if (Self::MIN..=Self::MAX).contains(&bits) {
            Ok(BitWidth(bits))
        } else {
            Err(AssignmentError::BadBitWidth(bits))
        }
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    /// Size of the ID space, `2^bits`.
    pub fn id_space(self) -> u32 {
        1 << self.0
    }
}

impl Default for BitWidth {
    fn default() -> Self {
        Self::DEFAULT
    }
}

impl TryFrom<u8> for BitWidth {
    type Error = AssignmentError;
    fn try_from(v: u8) -> Result<Self, Self::Error> {
        BitWidth::new(v)
    }
}

impl From<BitWidth> for u8 {
    fn from(w: BitWidth) -> u8 {
        w.0
    }
}

impl fmt::Display for BitWidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PortId(pub u8);

impl fmt::Display for PortId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error)]
pub enum AssignmentError {
    #[error("bit width {0} outside 1..=8")]
    BadBitWidth(u8),
    #[error("node {node} has {inbound} inbound router ports but {bits}-bit IDs allow only {space}", space = 1u32 << bits)]
    InfeasibleBitWidth { node: NodeId, inbound: usize, bits: u8 },
    #[error("router port {0} has no ID")]
    Coverage(PortRef),
    #[error("assignment names port {0} which is not a router port of the topology")]
    UnknownPort(PortRef),
    #[error("id {id} on port {port} does not fit in {bits} bits")]
    IdOutOfRange { port: PortRef, id: u8, bits: u8 },
    #[error("malformed assignment document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

/// A clash between two ports facing the same node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub node: NodeId,
    pub ports: (PortRef, PortRef),
    pub id: PortId,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "node {}: ports {} and {} both carry id {}", self.node, self.ports.0, self.ports.1, self.id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdAssignment {
    bit_width: BitWidth,
    ids: BTreeMap<PortRef, PortId>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AssignmentDocument {
    bit_width: BitWidth,
    ids: Vec<AssignmentEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AssignmentEntry {
    node: NodeId,
    port: u16,
    id: u8,
}

impl IdAssignment {
    /// Builds an assignment from explicit values, checking range only.
    pub fn from_ids(bit_width: BitWidth, ids: BTreeMap<PortRef, PortId>) -> Result<Self, AssignmentError> {
        for (&port, &id) in &ids {
            if u32::from(id.0) >= bit_width.id_space() {
                return Err(AssignmentError::IdOutOfRange { port, id: id.0, bits: bit_width.bits() });
            }
        }
        Ok(IdAssignment { bit_width, ids })
    }

    pub fn bit_width(&self) -> BitWidth {
        self.bit_width
    }

    pub fn id(&self, port: PortRef) -> Option<PortId> {
        self.ids.get(&port).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (PortRef, PortId)> + '_ {
        self.ids.iter().map(|(&p, &i)| (p, i))
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn to_json(&self) -> String {
        let doc = AssignmentDocument {
            bit_width: self.bit_width,
            ids: self
                .ids
                .iter()
                .map(|(p, id)| AssignmentEntry { node: p.node, port: p.port, id: id.0 })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("assignment serializes")
    }

    /// Parses an assignment file and checks it names only router ports of
    /// `topology`. Coverage and uniqueness are left to [`verify_assignment`].
    pub fn from_json(text: &str, topology: &Topology) -> Result<Self, AssignmentError> {
        let doc: AssignmentDocument = serde_json::from_str(text)?;
        let mut ids = BTreeMap::new();
        for e in doc.ids {
            let port = PortRef::new(e.node, e.port);
            let known = topology.port(port).is_ok() && topology.node(e.node)?.kind.is_router();
            if !known {
                return Err(AssignmentError::UnknownPort(port));
            }
            ids.insert(port, PortId(e.id));
        }
        Self::from_ids(doc.bit_width, ids)
    }
}

/// Router ports facing `node`, sorted by (neighbor id, port index).
fn inbound_router_ports(topology: &Topology, node: NodeId) -> Result<Vec<PortRef>, TopologyError> {
    let mut ports = Vec::new();
    for p in topology.inbound_ports(node)? {
        if topology.node(p.node)?.kind.is_router() {
            ports.push(p);
        }
    }
    Ok(ports)
}

/// Smallest bit width for which every node's inbound router ports can be
/// labeled distinctly: `ceil(log2(D))` with `D` the largest inbound count,
/// and never less than one.
pub fn min_feasible_bit_width(topology: &Topology) -> BitWidth {
    let max_inbound = topology
        .nodes()
        .map(|n| inbound_router_ports(topology, n.id).map(|v| v.len()).unwrap_or(0))
        .max()
        .unwrap_or(0);
    let mut bits = 1u8;
    while (1usize << bits) < max_inbound && bits < BitWidth::MAX {
        bits += 1;
    }
    BitWidth(bits)
}

/// Greedy increment-on-conflict labeling.
///
/// Nodes are visited in ascending id. At each node the router ports facing
/// it start from their port index (mod `2^k`) and are bumped upward, with
/// wraparound, until they no longer collide with an ID already handed out
/// at that node.
pub fn assign_ids(topology: &Topology, bit_width: BitWidth) -> Result<IdAssignment, AssignmentError> {
    let space = bit_width.id_space();
    let mut inbound = BTreeMap::new();
    for node in topology.nodes() {
        let ports = inbound_router_ports(topology, node.id)?;
        if ports.len() as u32 > space {
            return Err(AssignmentError::InfeasibleBitWidth {
                node: node.id,
                inbound: ports.len(),
                bits: bit_width.bits(),
            });
        }
        inbound.insert(node.id, ports);
    }

    let mut ids = BTreeMap::new();
    for ports in inbound.values() {
        let mut used = BTreeSet::new();
        for &port in ports {
            let mut candidate = u32::from(port.port) % space;
            while used.contains(&candidate) {
                candidate = (candidate + 1) % space;
            }
            used.insert(candidate);
            ids.insert(port, PortId(candidate as u8));
        }
    }
    Ok(IdAssignment { bit_width, ids })
}

/// Lists every pair of same-ID ports that face a common node. An empty list
/// means the assignment supports unambiguous reconstruction.
pub fn verify_assignment(topology: &Topology, assignment: &IdAssignment) -> Result<Vec<Violation>, AssignmentError> {
    for router in topology.routers() {
        for p in topology.ports(router.id)? {
            let port = PortRef::new(p.owner, p.index);
            if assignment.id(port).is_none() {
                return Err(AssignmentError::Coverage(port));
            }
        }
    }
    let mut violations = Vec::new();
    for node in topology.nodes() {
        let mut seen: BTreeMap<PortId, PortRef> = BTreeMap::new();
        for port in inbound_router_ports(topology, node.id)? {
            let id = assignment.id(port).expect("coverage checked");
            if let Some(&first) = seen.get(&id) {
                violations.push(Violation { node: node.id, ports: (first, port), id });
            } else {
                seen.insert(id, port);
            }
        }
    }
    Ok(violations)
}
