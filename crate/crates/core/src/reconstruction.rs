//! Backward path recovery from a single packet's ID list.
//!
//! Starting at the node that received the packet, the last ID names the one
//! neighbor whose port toward that node carries it; that neighbor becomes
//! the current node and the walk continues with the previous ID.

use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{self, find_tracemax, CodecError, Ipv4Packet, TracemaxOption, OPTION_LEN};
use crate::id_assignment::{IdAssignment, PortId};
use crate::topology::{NodeId, PortRef, Topology, TopologyError};

#[derive(Debug, Error)]
pub enum ReconstructError {
    #[error("at node {at}, id {id} matches several neighbors: {candidates:?}")]
    AmbiguousStep { at: NodeId, id: PortId, candidates: Vec<PortRef> },
    #[error("unknown router {0}")]
    UnknownRouter(NodeId),
    #[error("cannot tell which node received the packet")]
    MissingReceiver,
    #[error("receiver ip {0} is not in the topology")]
    UnknownReceiverIp(Ipv4Addr),
    #[error("option area holds no trace option")]
    NoTraceOption,
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Internal,
    /// The packet entered the system from this address.
    External(Ipv4Addr),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ReconstructedPath {
    /// Marking routers, source side first.
    pub routers: Vec<NodeId>,
    pub ips: Vec<Ipv4Addr>,
    pub origin: Origin,
    /// False when the walk stopped before consuming every ID, or the option
    /// was full so further hops may have gone unrecorded.
    pub complete: bool,
    pub receiver: NodeId,
    /// `(sender port, receiver port)` for every hop, source side first,
    /// ending with the hop into `receiver`.
    pub links: Vec<(PortRef, PortRef)>,
}

impl ReconstructedPath {
    /// `a.b.c.d -> e.f.g.h -> ...`, starting from the external sender when
    /// known and ending at the receiver.
    pub fn arrow(&self, topology: &Topology) -> String {
        let mut hops: Vec<String> = Vec::new();
        if let Origin::External(ip) = self.origin {
            hops.push(ip.to_string());
        }
        hops.extend(self.ips.iter().map(Ipv4Addr::to_string));
        if let Ok(n) = topology.node(self.receiver) {
            hops.push(n.ip.to_string());
        }
        hops.join(" -> ")
    }
}

pub fn map_to_ips(topology: &Topology, routers: &[NodeId]) -> Result<Vec<Ipv4Addr>, ReconstructError> {
    routers
        .iter()
        .map(|&r| topology.node(r).map(|n| n.ip).map_err(|_| ReconstructError::UnknownRouter(r)))
        .collect()
}

pub fn reconstruct(topology: &Topology, assignment: &IdAssignment, option: &TracemaxOption, receiver: NodeId) -> Result<ReconstructedPath, ReconstructError> {
    topology.node(receiver)?;
    let mut routers = Vec::with_capacity(option.ids.len());
    let mut links = Vec::with_capacity(option.ids.len());
    let mut current = receiver;
    let mut consumed_all = true;
    for &id in option.ids.iter().rev() {
        let mut candidates = Vec::new();
        for p in topology.inbound_ports(current)? {
            if topology.node(p.node)?.kind.is_router() && assignment.id(p) == Some(id) {
                candidates.push(p);
            }
        }
        match candidates.as_slice() {
            [] => {
                consumed_all = false;
                break;
            }
            [p] => {
                let peer = topology.port(*p)?.peer;
                routers.push(p.node);
                links.push((*p, peer));
                current = p.node;
            }
            _ => {
                return Err(ReconstructError::AmbiguousStep { at: current, id, candidates });
            }
        }
    }
    routers.reverse();
    links.reverse();
    let ips = map_to_ips(topology, &routers)?;
    Ok(ReconstructedPath {
        routers,
        ips,
        origin: option.sender_ip.map_or(Origin::Internal, Origin::External),
        complete: consumed_all && !option.is_full(assignment.bit_width()),
        receiver,
        links,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    In,
    Out,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::In => "in",
            Direction::Out => "out",
        })
    }
}

/// One captured packet: `tick node dir hexbytes`, with `-` for an unknown
/// node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptureRecord {
    pub tick: u64,
    pub node: Option<NodeId>,
    pub dir: Direction,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("capture line {line}: {message}")]
pub struct CaptureParseError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for CaptureRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node {
            Some(n) => write!(f, "{} {} {} {}", self.tick, n, self.dir, hex::encode(&self.bytes)),
            None => write!(f, "{} - {} {}", self.tick, self.dir, hex::encode(&self.bytes)),
        }
    }
}

impl FromStr for CaptureRecord {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let fields: Vec<&str> = s.split_whitespace().collect();
        let [tick, node, dir, bytes] = fields.as_slice() else {
            return Err(format!("expected 4 fields, found {}", fields.len()));
        };
        let tick = tick.parse().map_err(|_| format!("bad tick {tick:?}"))?;
        let node = match *node {
            "-" => None,
            n => Some(NodeId(n.parse().map_err(|_| format!("bad node {n:?}"))?)),
        };
        let dir = match *dir {
            "in" => Direction::In,
            "out" => Direction::Out,
            d => return Err(format!("bad direction {d:?}")),
        };
        let bytes = hex::decode(bytes).map_err(|e| format!("bad hex: {e}"))?;
        Ok(CaptureRecord { tick, node, dir, bytes })
    }
}

/// Parses a capture file, skipping blank lines and `#` comments.
pub fn parse_captures(text: &str) -> Result<Vec<CaptureRecord>, CaptureParseError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| l.parse().map_err(|message| CaptureParseError { line: i + 1, message }))
        .collect()
}

/// Pulls the trace option out of a raw option area. `Ok(None)` for an
/// unmarked packet.
pub fn extract_option(options: &[u8], assignment: &IdAssignment) -> Result<Option<TracemaxOption>, ReconstructError> {
    let bw = assignment.bit_width();
    if options.is_empty() {
        return Ok(None);
    }
    if options.len() == OPTION_LEN {
        return Ok(Some(codec::decode_option(options, bw)?));
    }
    let raw = find_tracemax(options).ok_or(ReconstructError::NoTraceOption)?;
    Ok(Some(codec::decode_option(raw, bw)?))
}

/// Decodes a captured packet and reconstructs its path. The receiver is the
/// capture node for inbound captures; otherwise the option's receiver field
/// is used.
pub fn reconstruct_from_capture(record: &CaptureRecord, topology: &Topology, assignment: &IdAssignment) -> Result<ReconstructedPath, ReconstructError> {
    let packet = Ipv4Packet::from_bytes(&record.bytes)?;
    let option = extract_option(&packet.header.options, assignment)?.unwrap_or_default();
    let receiver = match (record.dir, record.node, option.receiver_ip) {
        (Direction::In, Some(node), _) => node,
        (_, _, Some(ip)) => topology.node_by_ip(ip).ok_or(ReconstructError::UnknownReceiverIp(ip))?.id,
        (Direction::Out, Some(node), None) if option.ids.is_empty() => node,
        _ => return Err(ReconstructError::MissingReceiver),
    };
    reconstruct(topology, assignment, &option, receiver)
}
