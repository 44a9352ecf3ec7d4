//! Oracles shared by the integration and acceptance tests. Each one is
//! written from the wire/graph definitions directly, not from library code.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use tracemax::id_assignment::{IdAssignment, PortId};
use tracemax::topology::{LinkId, NodeId, PortRef, Topology};

/// One's-complement sum over 16-bit big-endian words, folded and inverted.
pub fn ones_complement(bytes: &[u8]) -> u16 {
    let mut sum: u64 = 0;
    let mut i = 0;
    while i + 1 < bytes.len() {
        sum += u64::from(bytes[i]) << 8 | u64::from(bytes[i + 1]);
        i += 2;
    }
    if i < bytes.len() {
        sum += u64::from(bytes[i]) << 8;
    }
    while sum > 0xffff {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

/// True when the IPv4 header at the front of `packet` checksums to zero.
pub fn header_checksum_ok(packet: &[u8]) -> bool {
    let ihl = usize::from(packet[0] & 0x0f) * 4;
    ones_complement(&packet[..ihl]) == 0
}

/// Adjacency restricted to router-or-endpoint hops, sorted by neighbor.
fn neighbors(t: &Topology, n: NodeId) -> Vec<NodeId> {
    let set: BTreeSet<NodeId> = t.ports(n).unwrap().iter().map(|p| p.peer.node).collect();
    set.into_iter().collect()
}

/// Every simple path with 1..=max_hops edges, as node lists.
pub fn simple_paths(t: &Topology, max_hops: usize) -> Vec<Vec<NodeId>> {
    fn walk(t: &Topology, path: &mut Vec<NodeId>, max_hops: usize, out: &mut Vec<Vec<NodeId>>) {
        if path.len() > 1 {
            out.push(path.clone());
        }
        if path.len() > max_hops {
            return;
        }
        let last = *path.last().unwrap();
        for n in neighbors(t, last) {
            if !path.contains(&n) {
                path.push(n);
                walk(t, path, max_hops, out);
                path.pop();
            }
        }
    }
    let mut out = Vec::new();
    for n in t.nodes() {
        walk(t, &mut vec![n.id], max_hops, &mut out);
    }
    out
}

/// IDs that routers along `path` write, per the assignment table: for each
/// hop the lowest-numbered port of the sender facing the next node.
pub fn expected_ids(t: &Topology, asg: &IdAssignment, path: &[NodeId]) -> Vec<PortId> {
    path.windows(2)
        .map(|w| {
            let port = t.ports(w[0]).unwrap().iter().filter(|p| p.peer.node == w[1]).map(|p| p.index).min().unwrap();
            asg.id(PortRef::new(w[0], port)).unwrap()
        })
        .collect()
}

/// Brute-force shortest path: the lexicographically smallest among all
/// minimum-hop simple paths, where only `dst` may be a non-router inside
/// the path.
pub fn brute_shortest(t: &Topology, src: NodeId, dst: NodeId) -> Option<Vec<NodeId>> {
    search(t, src, dst, None)
}

/// [`brute_shortest`] with one single link between two routers removed.
pub fn brute_shortest_avoiding(t: &Topology, src: NodeId, dst: NodeId, cut: LinkId) -> Option<Vec<NodeId>> {
    search(t, src, dst, Some(cut))
}

fn search(t: &Topology, src: NodeId, dst: NodeId, cut: Option<LinkId>) -> Option<Vec<NodeId>> {
    let cut_pair = cut.map(|c| {
        let l = t.link(c).unwrap();
        (l.a.node.min(l.b.node), l.a.node.max(l.b.node))
    });
    let neighbors = |n: NodeId| -> Vec<NodeId> {
        neighbors(t, n).into_iter().filter(|&m| cut_pair != Some((n.min(m), n.max(m)))).collect()
    };
    fn walk(t: &Topology, nb: &dyn Fn(NodeId) -> Vec<NodeId>, dst: NodeId, path: &mut Vec<NodeId>, best: &mut Option<Vec<NodeId>>) {
        let last = *path.last().unwrap();
        if last == dst {
            let better = match best {
                None => true,
                Some(b) => path.len() < b.len() || (path.len() == b.len() && *path < *b),
            };
            if better {
                *best = Some(path.clone());
            }
            return;
        }
        if best.as_ref().is_some_and(|b| path.len() >= b.len()) {
            return;
        }
        if path.len() > 1 && !t.node(last).unwrap().kind.is_router() {
            return;
        }
        for n in nb(last) {
            if !path.contains(&n) {
                path.push(n);
                walk(t, nb, dst, path, best);
                path.pop();
            }
        }
    }
    let mut best = None;
    walk(t, &neighbors, dst, &mut vec![src], &mut best);
    best
}

/// Counts for each node how many inbound router ports share each ID.
pub fn inbound_id_histogram(t: &Topology, asg: &IdAssignment) -> BTreeMap<NodeId, BTreeMap<PortId, usize>> {
    let mut out: BTreeMap<NodeId, BTreeMap<PortId, usize>> = BTreeMap::new();
    for n in t.nodes() {
        let h = out.entry(n.id).or_default();
        for p in t.ports(n.id).unwrap() {
            if t.node(p.peer.node).unwrap().kind.is_router() {
                *h.entry(asg.id(p.peer).unwrap()).or_default() += 1;
            }
        }
    }
    out
}

pub mod strategies {
    use std::net::Ipv4Addr;

    use proptest::prelude::*;
    use tracemax::codec::{capacity, TracemaxOption};
    use tracemax::id_assignment::{BitWidth, PortId};

    /// A bit width with a valid option for it: any flag combination, any
    /// count up to capacity, ids in range.
    pub fn option() -> impl Strategy<Value = (BitWidth, TracemaxOption)> {
        (1u8..=8, any::<Option<u32>>(), any::<Option<u32>>()).prop_flat_map(|(k, s, r)| {
            let bw = BitWidth::new(k).unwrap();
            let cap = capacity(bw, s.is_some(), r.is_some());
            prop::collection::vec(0u16..(1u16 << k), 0..=cap).prop_map(move |ids| {
                let opt = TracemaxOption {
                    sender_ip: s.map(Ipv4Addr::from),
                    receiver_ip: r.map(Ipv4Addr::from),
                    ids: ids.into_iter().map(|i| PortId(i as u8)).collect(),
                };
                (bw, opt)
            })
        })
    }
}

/// The option bytes written out by hand from the wire layout.
pub fn reference_encoding(opt: &tracemax::codec::TracemaxOption, bits: u8) -> [u8; 40] {
    let mut out = [0u8; 40];
    out[0] = 0x56;
    out[1] = 40;
    out[2] = opt.ids.len() as u8 | if opt.sender_ip.is_some() { 0x80 } else { 0 } | if opt.receiver_ip.is_some() { 0x40 } else { 0 };
    let mut bit = 24;
    if let Some(ip) = opt.sender_ip {
        out[3..7].copy_from_slice(&ip.octets());
        bit = 56;
    }
    for id in &opt.ids {
        for i in (0..bits).rev() {
            if id.0 >> i & 1 == 1 {
                out[bit / 8] |= 0x80 >> (bit % 8);
            }
            bit += 1;
        }
    }
    if let Some(ip) = opt.receiver_ip {
        out[36..].copy_from_slice(&ip.octets());
    }
    out
}

/// Pushes a packet along an arbitrary node path through the real router
/// pipeline by pointing each router's table at the next node.
pub struct PathMarker {
    pub topology: Topology,
    pub assignment: IdAssignment,
    routers: BTreeMap<NodeId, tracemax::marking::RouterState>,
    log: tracemax::marking::CollectorLog,
}

impl PathMarker {
    pub fn new(topology: Topology, assignment: IdAssignment) -> Self {
        use tracemax::marking::{activate_tracing, RouterState, Trigger, TriggerScope};
        let mut routers = BTreeMap::new();
        for r in topology.routers() {
            routers.insert(r.id, RouterState::new(&topology, &assignment, r.id).unwrap());
        }
        let victim = topology.nodes().next().unwrap().id;
        activate_tracing(&mut routers, &Trigger { victim, scope: TriggerScope::All }).unwrap();
        PathMarker { topology, assignment, routers, log: Default::default() }
    }

    /// The packet as it reaches the last node of `path`. Every node before
    /// it must be a router.
    pub fn mark(&mut self, path: &[NodeId], payload: Vec<u8>) -> tracemax::codec::Ipv4Packet {
        use tracemax::codec::{Ipv4Header, Ipv4Packet, PROTO_UDP};
        use tracemax::marking::{ForwardDecision, ForwardingTable};
        use tracemax::prefix::Ipv4Prefix;
        let dst = self.topology.node(*path.last().unwrap()).unwrap().ip;
        let mut packet = Ipv4Packet::new(Ipv4Header::new(std::net::Ipv4Addr::new(192, 0, 2, 1), dst, PROTO_UDP), payload);
        let mut in_port = 0;
        for w in path.windows(2) {
            let out = self.topology.ports(w[0]).unwrap().iter().filter(|p| p.peer.node == w[1]).min_by_key(|p| p.index).unwrap();
            let (out_port, peer) = (out.index, out.peer);
            let r = self.routers.get_mut(&w[0]).unwrap();
            let mut table = ForwardingTable::new();
            table.insert(Ipv4Prefix::host(dst), out_port);
            r.forwarding_table = table;
            match r.process_packet(packet, in_port, 0, &mut self.log) {
                ForwardDecision::Forward { packet: p, out_port: o, .. } => {
                    assert_eq!(o, out_port);
                    packet = p;
                }
                other => panic!("{path:?}: {other:?}"),
            }
            in_port = peer.port;
        }
        self.log.clear();
        packet
    }
}

/// host - r1 - ... - r`routers` - host with tracing on everywhere. With
/// `border`, both end routers sit on the system border.
pub fn traced_line(routers: usize, bits: u8, border: bool) -> (tracemax::simulator::Network, NodeId, NodeId) {
    use tracemax::id_assignment::{assign_ids, BitWidth};
    use tracemax::marking::{activate_tracing, Trigger, TriggerScope};
    use tracemax::topology::TopologyBuilder;
    let mut b = TopologyBuilder::new();
    let src = b.host();
    let rs: Vec<NodeId> = (0..routers).map(|_| b.edge_router()).collect();
    let dst = b.host();
    b.link(src, rs[0]);
    for w in rs.windows(2) {
        b.link(w[0], w[1]);
    }
    b.link(rs[routers - 1], dst);
    if border {
        b.node_mut(rs[0]).unwrap().system_border = true;
        b.node_mut(rs[routers - 1]).unwrap().system_border = true;
    }
    let t = b.build().unwrap();
    let asg = assign_ids(&t, BitWidth::new(bits).unwrap()).unwrap();
    let mut net = tracemax::simulator::Network::new(t, asg).unwrap();
    activate_tracing(&mut net.routers, &Trigger { victim: dst, scope: TriggerScope::All }).unwrap();
    (net, src, dst)
}
