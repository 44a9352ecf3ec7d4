//! Router network model: nodes, dense per-node ports, bidirectional links
//! and the hop-count routing used to build forwarding tables.
//!
//! A [`Topology`] is immutable once validated. Route changes in the
//! simulator are expressed as a set of disabled [`LinkId`]s passed to the
//! routing functions rather than by mutating the graph.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Index into [`Topology::links`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LinkId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeKind {
    CoreRouter,
    EdgeRouter,
    EndpointHost,
}

impl NodeKind {
    /// Routers forward and mark; hosts only originate and receive.
    pub fn is_router(self) -> bool {
        !matches!(self, NodeKind::EndpointHost)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Node {
    pub id: NodeId,
    pub kind: NodeKind,
    pub ip: Ipv4Addr,
    #[serde(default)]
    pub system_border: bool,
    #[serde(default)]
    pub ingress_filtering: bool,
}

/// One end of a link: `(node, local port index)`. Serialized as a
/// two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "(NodeId, u16)", into = "(NodeId, u16)")]
pub struct PortRef {
    pub node: NodeId,
    pub port: u16,
}

impl PortRef {
    pub fn new(node: NodeId, port: u16) -> Self {
        PortRef { node, port }
    }
}

impl From<(NodeId, u16)> for PortRef {
    fn from((node, port): (NodeId, u16)) -> Self {
        PortRef { node, port }
    }
}

impl From<PortRef> for (NodeId, u16) {
    fn from(p: PortRef) -> Self {
        (p.node, p.port)
    }
}

impl fmt::Display for PortRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.node, self.port)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Link {
    pub a: PortRef,
    pub b: PortRef,
}

impl Link {
    /// The end of this link opposite to `end`, if `end` belongs to it.
    pub fn other(&self, end: PortRef) -> Option<PortRef> {
        if end == self.a {
            Some(self.b)
        } else if end == self.b {
            Some(self.a)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Port {
    pub owner: NodeId,
    pub index: u16,
    pub peer: PortRef,
    pub link: LinkId,
}

/// Entry returned by [`Topology::neighbors`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Neighbor {
    pub node: NodeId,
    pub local_port: u16,
    pub remote_port: u16,
}

/// On-disk topology document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyDocument {
    pub nodes: Vec<Node>,
    pub links: Vec<Link>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValidationError {
    #[error("duplicate node id {0}")]
    DuplicateId(NodeId),
    #[error("duplicate ip address {0}")]
    DuplicateIp(Ipv4Addr),
    #[error("link {link} references undefined node {node}")]
    DanglingLink { link: usize, node: NodeId },
    #[error("link {0} is a self-loop")]
    SelfLoop(usize),
    #[error("port {0} is used by more than one link")]
    PortReused(PortRef),
    #[error("node {node} has non-dense port indices (missing port {missing})")]
    SparsePorts { node: NodeId, missing: u16 },
}

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("malformed topology document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid topology: {0}")]
    Validation(#[from] ValidationError),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {dst} is unreachable from {src}")]
    Unreachable { src: NodeId, dst: NodeId },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    nodes: BTreeMap<NodeId, Node>,
    links: Vec<Link>,
    ports: BTreeMap<NodeId, Vec<Port>>,
    by_ip: BTreeMap<Ipv4Addr, NodeId>,
}

impl Topology {
    pub fn from_document(doc: TopologyDocument) -> Result<Self, ValidationError> {
        let mut nodes = BTreeMap::new();
        let mut by_ip = BTreeMap::new();
        for node in doc.nodes {
            if by_ip.insert(node.ip, node.id).is_some() {
                return Err(ValidationError::DuplicateIp(node.ip));
            }
            let id = node.id;
            if nodes.insert(id, node).is_some() {
                return Err(ValidationError::DuplicateId(id));
            }
        }

        let mut ends: BTreeMap<PortRef, (PortRef, LinkId)> = BTreeMap::new();
        for (i, link) in doc.links.iter().enumerate() {
            for end in [link.a, link.b] {
                if !nodes.contains_key(&end.node) {
                    return Err(ValidationError::DanglingLink { link: i, node: end.node });
                }
            }
            if link.a.node == link.b.node {
                return Err(ValidationError::SelfLoop(i));
            }
            for (end, peer) in [(link.a, link.b), (link.b, link.a)] {
                if ends.insert(end, (peer, LinkId(i))).is_some() {
                    return Err(ValidationError::PortReused(end));
                }
            }
        }

        let mut ports: BTreeMap<NodeId, Vec<Port>> =
            nodes.keys().map(|&id| (id, Vec::new())).collect();
        // BTreeMap iteration yields each node's ports in ascending index order.
        for (end, (peer, link)) in ends {
            let list = ports.get_mut(&end.node).expect("node checked above");
            let expected = list.len() as u16;
            if end.port != expected {
                return Err(ValidationError::SparsePorts { node: end.node, missing: expected });
            }
            list.push(Port { owner: end.node, index: end.port, peer, link });
        }

        Ok(Topology { nodes, links: doc.links, ports, by_ip })
    }

    pub fn from_json(text: &str) -> Result<Self, TopologyError> {
        let doc: TopologyDocument = serde_json::from_str(text)?;
        Ok(Self::from_document(doc)?)
    }

    pub fn to_document(&self) -> TopologyDocument {
        TopologyDocument {
            nodes: self.nodes.values().cloned().collect(),
            links: self.links.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("topology serializes")
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    pub fn routers(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values().filter(|n| n.kind.is_router())
    }

    pub fn node(&self, id: NodeId) -> Result<&Node, TopologyError> {
        self.nodes.get(&id).ok_or(TopologyError::UnknownNode(id))
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.nodes.contains_key(&id)
    }

    pub fn node_by_ip(&self, ip: Ipv4Addr) -> Option<&Node> {
        self.by_ip.get(&ip).and_then(|id| self.nodes.get(id))
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, id: LinkId) -> Option<&Link> {
        self.links.get(id.0)
    }

    /// Finds the link joining two port ends, in either orientation.
    pub fn find_link(&self, a: PortRef, b: PortRef) -> Option<LinkId> {
        self.port(a).ok().filter(|p| p.peer == b).map(|p| p.link)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn ports(&self, id: NodeId) -> Result<&[Port], TopologyError> {
        self.ports.get(&id).map(Vec::as_slice).ok_or(TopologyError::UnknownNode(id))
    }

    pub fn port(&self, p: PortRef) -> Result<&Port, TopologyError> {
        self.ports(p.node)?
            .get(p.port as usize)
            .ok_or(TopologyError::UnknownNode(p.node))
    }

    /// One entry per incident link, ordered by local port index.
    pub fn neighbors(&self, id: NodeId) -> Result<Vec<Neighbor>, TopologyError> {
        Ok(self
            .ports(id)?
            .iter()
            .map(|p| Neighbor { node: p.peer.node, local_port: p.index, remote_port: p.peer.port })
            .collect())
    }

    /// Ports of *other* nodes that face `id`, i.e. the ports through which
    /// packets arrive at `id`. Ordered by (neighbor id, neighbor port).
    pub fn inbound_ports(&self, id: NodeId) -> Result<Vec<PortRef>, TopologyError> {
        let mut v: Vec<PortRef> = self.ports(id)?.iter().map(|p| p.peer).collect();
        v.sort();
        Ok(v)
    }

    /// Hop distances to `dst` over enabled links. Hosts other than `dst`
    /// never relay, so they terminate expansion.
    pub fn distances_to(&self, dst: NodeId, disabled: &BTreeSet<LinkId>) -> Result<BTreeMap<NodeId, u32>, TopologyError> {
        self.node(dst)?;
        let mut dist = BTreeMap::new();
        dist.insert(dst, 0u32);
        let mut queue = VecDeque::from([dst]);
        while let Some(x) = queue.pop_front() {
            if x != dst && !self.nodes[&x].kind.is_router() {
                continue;
            }
            let d = dist[&x];
            for p in &self.ports[&x] {
                if disabled.contains(&p.link) {
                    continue;
                }
                if let std::collections::btree_map::Entry::Vacant(e) = dist.entry(p.peer.node) {
                    e.insert(d + 1);
                    queue.push_back(p.peer.node);
                }
            }
        }
        Ok(dist)
    }

    /// Next hop toward `dst` from `from`, given precomputed distances.
    /// Ties go to the lowest neighbor id, then the lowest local port.
    pub fn next_hop(&self, from: NodeId, dst: NodeId, dist: &BTreeMap<NodeId, u32>, disabled: &BTreeSet<LinkId>) -> Option<&Port> {
        let d = *dist.get(&from)?;
        if d == 0 {
            return None;
        }
        self.ports[&from]
            .iter()
            .filter(|p| !disabled.contains(&p.link))
            .filter(|p| dist.get(&p.peer.node) == Some(&(d - 1)))
            .filter(|p| p.peer.node == dst || self.nodes[&p.peer.node].kind.is_router())
            .min_by_key(|p| (p.peer.node, p.index))
    }

    pub fn shortest_path(&self, src: NodeId, dst: NodeId) -> Result<Vec<NodeId>, TopologyError> {
        self.shortest_path_avoiding(src, dst, &BTreeSet::new())
    }

    /// Minimum-hop path from `src` to `dst` ignoring `disabled` links. Among
    /// equal-length paths the one that is lexicographically smallest by node
    /// id is returned.
    pub fn shortest_path_avoiding(&self, src: NodeId, dst: NodeId, disabled: &BTreeSet<LinkId>) -> Result<Vec<NodeId>, TopologyError> {
        self.node(src)?;
        let dist = self.distances_to(dst, disabled)?;
        let mut path = vec![src];
        let mut cur = src;
        while cur != dst {
            if cur != src && !self.nodes[&cur].kind.is_router() {
                return Err(TopologyError::Unreachable { src, dst });
            }
            let hop = self
                .next_hop(cur, dst, &dist, disabled)
                .ok_or(TopologyError::Unreachable { src, dst })?;
            cur = hop.peer.node;
            path.push(cur);
        }
        Ok(path)
    }
}

/// Incremental construction with automatic dense port numbering.
#[derive(Debug, Default, Clone)]
pub struct TopologyBuilder {
    nodes: Vec<Node>,
    links: Vec<Link>,
    next_port: BTreeMap<NodeId, u16>,
}

impl TopologyBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a node with the next free id and an address derived from it.
    pub fn add(&mut self, kind: NodeKind) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        let n = id.0 + 1;
        let ip = Ipv4Addr::new(10, (n >> 16) as u8, (n >> 8) as u8, n as u8);
        self.add_node(Node { id, kind, ip, system_border: false, ingress_filtering: false })
    }

    pub fn add_node(&mut self, node: Node) -> NodeId {
        let id = node.id;
        self.next_port.entry(id).or_insert(0);
        self.nodes.push(node);
        id
    }

    pub fn router(&mut self) -> NodeId {
        self.add(NodeKind::CoreRouter)
    }

    pub fn edge_router(&mut self) -> NodeId {
        self.add(NodeKind::EdgeRouter)
    }

    pub fn host(&mut self) -> NodeId {
        self.add(NodeKind::EndpointHost)
    }

    pub fn node_mut(&mut self, id: NodeId) -> Option<&mut Node> {
        self.nodes.iter_mut().find(|n| n.id == id)
    }

    /// Links the next free ports of `a` and `b`.
    pub fn link(&mut self, a: NodeId, b: NodeId) -> LinkId {
        let mut take = |n: NodeId| {
            let slot = self.next_port.entry(n).or_insert(0);
            let p = *slot;
            *slot += 1;
            PortRef::new(n, p)
        };
        let (pa, pb) = (take(a), take(b));
        self.links.push(Link { a: pa, b: pb });
        LinkId(self.links.len() - 1)
    }

    pub fn build(self) -> Result<Topology, ValidationError> {
        Topology::from_document(TopologyDocument { nodes: self.nodes, links: self.links })
    }
}

/// Small canned and random topologies.
pub mod generate {
    use super::*;
    use rand::Rng;

    /// `n` core routers in a line, ids `0..n`.
    pub fn chain(n: usize) -> Topology {
        let mut b = TopologyBuilder::new();
        let ids: Vec<_> = (0..n).map(|_| b.router()).collect();
        for w in ids.windows(2) {
            b.link(w[0], w[1]);
        }
        b.build().expect("chain is valid")
    }

    /// Hub router `0` with `leaves` edge routers attached.
    pub fn star(leaves: usize) -> Topology {
        let mut b = TopologyBuilder::new();
        let hub = b.router();
        for _ in 0..leaves {
            let leaf = b.edge_router();
            b.link(leaf, hub);
        }
        b.build().expect("star is valid")
    }

    /// Connected graph of `n` core routers: a random spanning tree plus up
    /// to `extra` additional distinct edges.
    pub fn random_connected<R: Rng + ?Sized>(n: usize, extra: usize, rng: &mut R) -> Topology {
        let mut b = TopologyBuilder::new();
        let ids: Vec<_> = (0..n).map(|_| b.router()).collect();
        let mut edges = BTreeSet::new();
        for i in 1..n {
            let j = rng.gen_range(0..i);
            edges.insert((j, i));
        }
        let mut attempts = 0;
        let target = edges.len() + extra;
        while n > 2 && edges.len() < target && attempts < extra * 20 {
            attempts += 1;
            let i = rng.gen_range(0..n);
            let j = rng.gen_range(0..n);
            if i != j {
                edges.insert((i.min(j), i.max(j)));
            }
        }
        for (i, j) in edges {
            b.link(ids[i], ids[j]);
        }
        b.build().expect("random graph is valid")
    }
}
