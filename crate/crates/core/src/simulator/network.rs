use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{LinkAction, RouteChange, SimError};
use crate::codec::Ipv4Packet;
use crate::id_assignment::IdAssignment;
use crate::marking::{CollectorEvent, CollectorLog, DropReason, ForwardDecision, RouterState};
use crate::prefix::Ipv4Prefix;
use crate::topology::{LinkId, NodeId, PortRef, Topology};

/// Result of handing a packet to one node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Step {
    Forward {
        /// Where the packet arrives next.
        to: PortRef,
        packet: Ipv4Packet,
        delay: u32,
        /// Routers that appended an ID, updated with this hop.
        marked_by: Vec<NodeId>,
    },
    Delivered(Ipv4Packet),
    Dropped(DropReason),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SimWarning {
    /// After a route change some nodes can no longer reach the victim.
    DisconnectedVictim { tick: u64, unreachable: Vec<NodeId> },
}

/// One arrival recorded by [`Network::send`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hop {
    pub tick: u64,
    pub node: NodeId,
    pub in_port: u16,
    /// The packet as it arrived.
    pub packet: Ipv4Packet,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Fate {
    Delivered { node: NodeId, packet: Ipv4Packet },
    Dropped { node: NodeId, reason: DropReason },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacketTrace {
    pub hops: Vec<Hop>,
    pub fate: Fate,
    pub marked_by: Vec<NodeId>,
}

/// Router states plus the shared view of which links are up.
#[derive(Debug, Clone)]
pub struct Network {
    topology: Topology,
    assignment: IdAssignment,
    pub routers: BTreeMap<NodeId, RouterState>,
    disabled: BTreeSet<LinkId>,
    /// Hop distances keyed by destination.
    dist: BTreeMap<NodeId, BTreeMap<NodeId, u32>>,
    pub log: CollectorLog,
}

impl Network {
    pub fn new(topology: Topology, assignment: IdAssignment) -> Result<Self, SimError> {
        let mut routers = BTreeMap::new();
        for r in topology.routers() {
            routers.insert(r.id, RouterState::new(&topology, &assignment, r.id)?);
        }
        let mut net = Network {
            topology,
            assignment,
            routers,
            disabled: BTreeSet::new(),
            dist: BTreeMap::new(),
            log: CollectorLog::new(),
        };
        net.rebuild_routes();
        Ok(net)
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn assignment(&self) -> &IdAssignment {
        &self.assignment
    }

    pub fn disabled_links(&self) -> &BTreeSet<LinkId> {
        &self.disabled
    }

    /// Recomputes every forwarding table from the current link state.
    pub fn rebuild_routes(&mut self) {
        self.dist.clear();
        for r in self.routers.values_mut() {
            r.forwarding_table = Default::default();
        }
        let dests: Vec<_> = self.topology.nodes().map(|n| (n.id, n.ip)).collect();
        for (dst, ip) in dests {
            let dist = self.topology.distances_to(dst, &self.disabled).expect("node from topology");
            for (&id, r) in self.routers.iter_mut() {
                if let Some(p) = self.topology.next_hop(id, dst, &dist, &self.disabled) {
                    r.forwarding_table.insert(Ipv4Prefix::host(ip), p.index);
                }
            }
            self.dist.insert(dst, dist);
        }
    }

    pub fn set_link(&mut self, link: LinkId, enabled: bool) {
        let changed = if enabled { self.disabled.remove(&link) } else { self.disabled.insert(link) };
        if changed {
            self.rebuild_routes();
        }
    }

    pub fn reachable(&self, from: NodeId, to: NodeId) -> bool {
        self.dist.get(&to).is_some_and(|d| d.contains_key(&from))
    }

    /// Port a host sends on to reach the node owning the destination
    /// address; when the address is unknown, its first enabled port.
    pub fn host_egress(&self, host: NodeId, packet: &Ipv4Packet) -> Option<PortRef> {
        let ports = self.topology.ports(host).ok()?;
        let port = match self.topology.node_by_ip(packet.header.dst) {
            Some(dst) => self.topology.next_hop(host, dst.id, self.dist.get(&dst.id)?, &self.disabled)?,
            None => ports.iter().find(|p| !self.disabled.contains(&p.link))?,
        };
        Some(port.peer)
    }

    /// Hands `packet` to `node`, which received it on `in_port`.
    pub fn step(&mut self, node: NodeId, in_port: u16, packet: Ipv4Packet, now: u64, marked_by: &[NodeId]) -> Step {
        let Some(router) = self.routers.get(&node) else {
            let me = self.topology.node(node).expect("node from topology");
            return if packet.header.dst == me.ip { Step::Delivered(packet) } else { Step::Dropped(DropReason::NoRoute) };
        };
        let before = self.log.records().len();
        match router.process_packet(packet, in_port, now, &mut self.log) {
            ForwardDecision::Forward { out_port, packet, delay } => {
                let mut marked = marked_by.to_vec();
                for r in &self.log.records()[before..] {
                    match r.event {
                        CollectorEvent::Cleared => marked.clear(),
                        CollectorEvent::Marked => marked.push(node),
                        _ => {}
                    }
                }
                if packet.header.options.is_empty() {
                    marked.clear();
                }
                let to = self.topology.port(PortRef::new(node, out_port)).expect("port from table").peer;
                Step::Forward { to, packet, delay, marked_by: marked }
            }
            ForwardDecision::Deliver(p) => Step::Delivered(p),
            ForwardDecision::Drop(reason) => Step::Dropped(reason),
        }
    }

    /// Walks a single packet from host `src` to its fate, one tick per hop
    /// starting at `now`, ignoring delay tags.
    pub fn send(&mut self, src: NodeId, packet: Ipv4Packet, now: u64) -> PacketTrace {
        let mut hops = Vec::new();
        let Some(mut at) = self.host_egress(src, &packet) else {
            return PacketTrace { hops, fate: Fate::Dropped { node: src, reason: DropReason::NoRoute }, marked_by: Vec::new() };
        };
        let mut packet = packet;
        let mut marked_by = Vec::new();
        let mut tick = now;
        loop {
            tick += 1;
            hops.push(Hop { tick, node: at.node, in_port: at.port, packet: packet.clone() });
            match self.step(at.node, at.port, packet, tick, &marked_by) {
                Step::Forward { to, packet: p, marked_by: m, .. } => {
                    packet = p;
                    marked_by = m;
                    at = to;
                }
                Step::Delivered(p) => return PacketTrace { hops, fate: Fate::Delivered { node: at.node, packet: p }, marked_by },
                Step::Dropped(reason) => return PacketTrace { hops, fate: Fate::Dropped { node: at.node, reason }, marked_by },
            }
        }
    }
}

/// Applies a link event and reports nodes cut off from `victim`.
pub fn route_change(network: &mut Network, event: &RouteChange, victim: NodeId) -> Result<Option<SimWarning>, SimError> {
    let link = network
        .topology()
        .find_link(event.link[0], event.link[1])
        .ok_or(SimError::UnknownLink(event.link[0], event.link[1]))?;
    network.set_link(link, event.action == LinkAction::Enable);
    let unreachable: Vec<NodeId> = network
        .topology()
        .nodes()
        .map(|n| n.id)
        .filter(|&n| n != victim && !network.reachable(n, victim))
        .collect();
    Ok((!unreachable.is_empty()).then_some(SimWarning::DisconnectedVictim { tick: event.tick, unreachable }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{Ipv4Header, PROTO_UDP};
    use crate::id_assignment::{assign_ids, BitWidth};
    use crate::marking::{activate_tracing, Trigger, TriggerScope};
    use crate::simulator::LinkAction;
    use crate::topology::TopologyBuilder;

    /// h0 - r1 - {r2 | r3} - r4 - h5: two equal-cost middles.
    fn diamond() -> (Network, Vec<LinkId>) {
        let mut b = TopologyBuilder::new();
        let h0 = b.host();
        let r1 = b.edge_router();
        let r2 = b.router();
        let r3 = b.router();
        let r4 = b.edge_router();
        let h5 = b.host();
        let links = vec![b.link(h0, r1), b.link(r1, r2), b.link(r1, r3), b.link(r2, r4), b.link(r3, r4), b.link(r4, h5)];
        let t = b.build().unwrap();
        let asg = assign_ids(&t, BitWidth::new(2).unwrap()).unwrap();
        let mut net = Network::new(t, asg).unwrap();
        activate_tracing(&mut net.routers, &Trigger { victim: NodeId(5), scope: TriggerScope::All }).unwrap();
        (net, links)
    }

    fn probe(net: &Network) -> Ipv4Packet {
        let t = net.topology();
        let h = Ipv4Header::new(t.node(NodeId(0)).unwrap().ip, t.node(NodeId(5)).unwrap().ip, PROTO_UDP);
        Ipv4Packet::new(h, vec![0, 1, 0, 53, 9, 9, 9, 9])
    }

    fn path(trace: &PacketTrace) -> Vec<NodeId> {
        trace.hops.iter().map(|h| h.node).collect()
    }

    #[test]
    fn send_follows_lowest_id_tie_break() {
        let (mut net, _) = diamond();
        let p = probe(&net);
        let tr = net.send(NodeId(0), p.clone(), 0);
        assert_eq!(path(&tr), [NodeId(1), NodeId(2), NodeId(4), NodeId(5)]);
        assert_eq!(tr.marked_by, [NodeId(1), NodeId(2), NodeId(4)]);
        let Fate::Delivered { node, packet } = tr.fate else { panic!("not delivered") };
        assert_eq!(node, NodeId(5));
        assert_eq!(packet.payload, p.payload);
    }

    #[test]
    fn route_change_shifts_and_restores() {
        let (mut net, links) = diamond();
        let r1r2 = net.topology().link(links[1]).copied().unwrap();
        let off = RouteChange { tick: 3, link: [r1r2.a, r1r2.b], action: LinkAction::Disable };
        assert_eq!(route_change(&mut net, &off, NodeId(5)).unwrap(), None);
        let tr = net.send(NodeId(0), probe(&net), 3);
        assert_eq!(tr.marked_by, [NodeId(1), NodeId(3), NodeId(4)]);

        let on = RouteChange { action: LinkAction::Enable, ..off };
        route_change(&mut net, &on, NodeId(5)).unwrap();
        let tr = net.send(NodeId(0), probe(&net), 4);
        assert_eq!(tr.marked_by, [NodeId(1), NodeId(2), NodeId(4)]);
    }

    #[test]
    fn cutting_the_victim_link_warns_and_drops() {
        let (mut net, links) = diamond();
        let last = net.topology().link(links[5]).copied().unwrap();
        let ev = RouteChange { tick: 7, link: [last.b, last.a], action: LinkAction::Disable };
        let warning = route_change(&mut net, &ev, NodeId(5)).unwrap();
        let Some(SimWarning::DisconnectedVictim { tick, unreachable }) = warning else { panic!("no warning") };
        assert_eq!(tick, 7);
        assert_eq!(unreachable.len(), 5);
        let p = probe(&net);
        assert_eq!(net.host_egress(NodeId(0), &p), None);
        assert_eq!(net.step(NodeId(1), 0, p, 0, &[]), Step::Dropped(DropReason::NoRoute));
    }

    #[test]
    fn unknown_link_is_an_error() {
        let (mut net, _) = diamond();
        let ev = RouteChange { tick: 0, link: [PortRef::new(NodeId(0), 0), PortRef::new(NodeId(4), 0)], action: LinkAction::Disable };
        assert!(matches!(route_change(&mut net, &ev, NodeId(5)), Err(SimError::UnknownLink(..))));
    }
}
