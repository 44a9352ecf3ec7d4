//! Per-router packet pipeline.
//!
//! [`RouterState::process_packet`] runs, in order: option-area sanity and
//! source-route rejection, border ingress clearing and sender stamping,
//! ingress filtering, defense filters, routing, TTL, port-ID marking and
//! border egress clearing. The payload is never touched.

mod collector;
mod filter;

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use collector::{packet_digest, CollectorEvent, CollectorLog, CollectorRecord};
pub use filter::{load_filters, AddrMatch, FilterAction, FilterSignature};

use crate::codec::{
    self, append_id, classify_foreign_options, decode_option, encode_option, find_tracemax, replace_last_id,
    set_receiver_ip, CodecError, Ipv4Packet, OptionBytes, OptionClass, TracemaxOption,
};
use crate::id_assignment::{BitWidth, IdAssignment, PortId};
use crate::prefix::Ipv4Prefix;
use crate::topology::{NodeId, NodeKind, PortRef, Topology, TopologyError};

#[derive(Debug, Error)]
pub enum MarkingError {
    #[error("trigger scope selects no routers")]
    EmptyScope,
    #[error("filter signature matches everything")]
    InvalidSignature,
    #[error("router port {0} has no assigned id")]
    Coverage(PortRef),
    #[error("node {0} is not a router")]
    NotARouter(NodeId),
    #[error("malformed filter file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    LsrSsr,
    IngressFilter,
    DefenseFilter,
    Malformed,
    NoRoute,
    TtlExpired,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ForwardDecision {
    Forward { out_port: u16, packet: Ipv4Packet, delay: u32 },
    /// Addressed to this router.
    Deliver(Ipv4Packet),
    Drop(DropReason),
}

/// What a router knows about one of its ports.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PortView {
    pub peer: PortRef,
    pub peer_kind: NodeKind,
    pub peer_ip: Ipv4Addr,
    /// ID this router writes when sending out of the port.
    pub id: PortId,
    /// ID the peer writes when sending toward us, when the peer is a router.
    pub peer_id: Option<PortId>,
}

/// Longest-prefix-match table from destination to output port.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ForwardingTable {
    routes: BTreeMap<Ipv4Prefix, u16>,
}

impl ForwardingTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, prefix: Ipv4Prefix, port: u16) {
        self.routes.insert(prefix, port);
    }

    pub fn lookup(&self, dst: Ipv4Addr) -> Option<u16> {
        self.routes
            .iter()
            .filter(|(p, _)| p.contains(dst))
            .max_by_key(|(p, _)| p.prefix_len())
            .map(|(_, &port)| port)
    }

    pub fn len(&self) -> usize {
        self.routes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.routes.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouterState {
    pub node: NodeId,
    pub ip: Ipv4Addr,
    pub bit_width: BitWidth,
    pub ports: Vec<PortView>,
    pub tracing_enabled: bool,
    /// Routers activated by the same trigger; used to decide whether the
    /// previous hop should have marked.
    pub tracing_scope: BTreeSet<NodeId>,
    pub system_border: bool,
    pub ingress_filtering: bool,
    /// Source prefixes accepted per host-facing port.
    pub legitimate_sources: BTreeMap<u16, Vec<Ipv4Prefix>>,
    pub filter_rules: Vec<FilterSignature>,
    pub forwarding_table: ForwardingTable,
    /// Reserve a receiver field in new options and keep it pointed at the
    /// node after the last marking router.
    pub stamp_receiver: bool,
    /// Latency added by a `delay` filter action.
    pub delay_ticks: u32,
}

impl RouterState {
    /// Builds the state of router `node` with tracing off and an empty
    /// forwarding table.
    pub fn new(topology: &Topology, assignment: &IdAssignment, node: NodeId) -> Result<Self, MarkingError> {
        let me = topology.node(node)?;
        if !me.kind.is_router() {
            return Err(MarkingError::NotARouter(node));
        }
        let mut ports = Vec::new();
        let mut legitimate_sources = BTreeMap::new();
        for p in topology.ports(node)? {
            let own = PortRef::new(node, p.index);
            let peer = topology.node(p.peer.node)?;
            let id = assignment.id(own).ok_or(MarkingError::Coverage(own))?;
            let peer_id = if peer.kind.is_router() {
                Some(assignment.id(p.peer).ok_or(MarkingError::Coverage(p.peer))?)
            } else {
                legitimate_sources.insert(p.index, vec![Ipv4Prefix::host(peer.ip)]);
                None
            };
            ports.push(PortView { peer: p.peer, peer_kind: peer.kind, peer_ip: peer.ip, id, peer_id });
        }
        Ok(RouterState {
            node,
            ip: me.ip,
            bit_width: assignment.bit_width(),
            ports,
            tracing_enabled: false,
            tracing_scope: BTreeSet::new(),
            system_border: me.system_border,
            ingress_filtering: me.ingress_filtering,
            legitimate_sources,
            filter_rules: Vec::new(),
            forwarding_table: ForwardingTable::new(),
            stamp_receiver: false,
            delay_ticks: 1,
        })
    }

    fn faces_outside(&self, port: u16) -> bool {
        self.system_border && self.ports[usize::from(port)].peer_kind == NodeKind::EndpointHost
    }

    fn new_option(&self, sender_ip: Option<Ipv4Addr>) -> OptionBytes {
        let opt = TracemaxOption {
            sender_ip,
            receiver_ip: self.stamp_receiver.then_some(Ipv4Addr::UNSPECIFIED),
            ids: Vec::new(),
        };
        encode_option(&opt, self.bit_width).expect("empty option always encodes")
    }

    /// Runs one packet through the pipeline. `in_port` is the local port the
    /// packet arrived on.
    pub fn process_packet(&self, mut packet: Ipv4Packet, in_port: u16, now: u64, log: &mut CollectorLog) -> ForwardDecision {
        let drop = |log: &mut CollectorLog, packet: &Ipv4Packet, reason| {
            log.record_drop(now, self.node, packet, reason);
            ForwardDecision::Drop(reason)
        };
        let Some(in_view) = self.ports.get(usize::from(in_port)) else {
            return drop(log, &packet, DropReason::Malformed);
        };

        match classify_foreign_options(&packet.header.options) {
            Err(_) => return drop(log, &packet, DropReason::Malformed),
            Ok(OptionClass::LsrOrSsr) => return drop(log, &packet, DropReason::LsrSsr),
            Ok(OptionClass::Tracemax) => {
                let ok = find_tracemax(&packet.header.options)
                    .is_some_and(|b| decode_option(b, self.bit_width).is_ok());
                if !ok {
                    return drop(log, &packet, DropReason::Malformed);
                }
            }
            Ok(_) => {}
        }

        // Border ingress: nothing written outside the system is trusted.
        let mut fresh = false;
        if self.faces_outside(in_port) {
            if !packet.header.options.is_empty() {
                log.record(now, self.node, CollectorEvent::Cleared, &packet, Some(&packet.header.options));
                packet.header.options.clear();
            }
            if self.tracing_enabled {
                packet.header.options = self.new_option(Some(in_view.peer_ip)).to_vec();
                fresh = true;
            }
        }

        if self.ingress_filtering {
            if let Some(allowed) = self.legitimate_sources.get(&in_port) {
                if !allowed.iter().any(|p| p.contains(packet.header.src)) {
                    return drop(log, &packet, DropReason::IngressFilter);
                }
            }
        }

        let mut delay = 0;
        if let Some(rule) = self.filter_rules.iter().find(|r| r.matches(&packet)) {
            match rule.action {
                FilterAction::Drop => return drop(log, &packet, DropReason::DefenseFilter),
                FilterAction::Delay => delay = self.delay_ticks,
                FilterAction::Pass => {}
            }
        }

        if packet.header.dst == self.ip {
            packet.sync_lengths();
            return ForwardDecision::Deliver(packet);
        }

        let Some(out_port) = self.forwarding_table.lookup(packet.header.dst) else {
            return drop(log, &packet, DropReason::NoRoute);
        };
        if packet.header.ttl <= 1 {
            return drop(log, &packet, DropReason::TtlExpired);
        }
        packet.header.ttl -= 1;

        if self.tracing_enabled {
            self.mark(&mut packet, in_view, out_port, fresh, now, log);
        }

        if self.faces_outside(out_port) {
            packet = self.egress_clear(packet, now, log);
        }
        packet.sync_lengths();
        ForwardDecision::Forward { out_port, packet, delay }
    }

    fn mark(&self, packet: &mut Ipv4Packet, in_view: &PortView, out_port: u16, mut fresh: bool, now: u64, log: &mut CollectorLog) {
        let bw = self.bit_width;
        let mut bytes: OptionBytes = match find_tracemax(&packet.header.options) {
            Some(b) => b.try_into().expect("trace option is 40 bytes"),
            None => {
                fresh = true;
                self.new_option(None)
            }
        };
        let current = decode_option(&bytes, bw).expect("validated on entry or freshly built");

        // The previous hop should have written the ID of its port facing us.
        if !fresh && !current.ids.is_empty() && !current.is_full(bw) && self.tracing_scope.contains(&in_view.peer.node) {
            if let Some(expected) = in_view.peer_id {
                if current.ids.last() != Some(&expected) {
                    replace_last_id(&mut bytes, expected, bw).expect("count checked");
                    log.record(now, self.node, CollectorEvent::Corrected, packet, Some(&bytes));
                }
            }
        }

        let out_view = &self.ports[usize::from(out_port)];
        match append_id(&bytes, out_view.id, bw) {
            Ok(mut next) => {
                set_receiver_ip(&mut next, out_view.peer_ip, bw).expect("valid option");
                log.record(now, self.node, CollectorEvent::Marked, packet, Some(&next));
                bytes = next;
            }
            Err(CodecError::CapacityExceeded { .. }) => {
                log.record(now, self.node, CollectorEvent::CapacityExceeded, packet, Some(&bytes));
            }
            Err(e) => unreachable!("append on a validated option: {e}"),
        }
        // The option claims the whole area; anything else is displaced.
        packet.header.options = bytes.to_vec();
    }

    /// Strips the trace option from a packet leaving the system, reporting
    /// the removed bytes to the collector first.
    pub fn egress_clear(&self, mut packet: Ipv4Packet, now: u64, log: &mut CollectorLog) -> Ipv4Packet {
        if let Some(opt) = find_tracemax(&packet.header.options) {
            log.record(now, self.node, CollectorEvent::Cleared, &packet, Some(opt));
            packet.header.options.clear();
            packet.sync_lengths();
        }
        packet
    }
}

/// Authenticated request from the victim's side to start tracing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trigger {
    pub victim: NodeId,
    pub scope: TriggerScope,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerScope {
    /// Every router in the system.
    All,
    Routers(BTreeSet<NodeId>),
}

/// Enables tracing on every router selected by the trigger. Returns how many
/// routers changed; a repeated trigger changes nothing.
pub fn activate_tracing(routers: &mut BTreeMap<NodeId, RouterState>, trigger: &Trigger) -> Result<usize, MarkingError> {
    let scope: BTreeSet<NodeId> = match &trigger.scope {
        TriggerScope::All => routers.keys().copied().collect(),
        TriggerScope::Routers(set) => set.iter().filter(|id| routers.contains_key(id)).copied().collect(),
    };
    if scope.is_empty() {
        return Err(MarkingError::EmptyScope);
    }
    let mut changed = 0;
    for id in &scope {
        let r = routers.get_mut(id).expect("filtered above");
        if !r.tracing_enabled || r.tracing_scope != scope {
            r.tracing_enabled = true;
            r.tracing_scope = scope.clone();
            changed += 1;
        }
    }
    Ok(changed)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterScope {
    /// Every router with tracing enabled.
    Tracing,
    Routers(BTreeSet<NodeId>),
}

/// Appends `signature` to each router in scope. Rules are evaluated
/// first-match-wins in installation order.
pub fn install_filters(routers: &mut BTreeMap<NodeId, RouterState>, signature: &FilterSignature, scope: &FilterScope) -> Result<usize, MarkingError> {
    signature.validate()?;
    let mut installed = 0;
    for r in routers.values_mut() {
        let selected = match scope {
            FilterScope::Tracing => r.tracing_enabled,
            FilterScope::Routers(set) => set.contains(&r.node),
        };
        if selected {
            r.filter_rules.push(signature.clone());
            installed += 1;
        }
    }
    Ok(installed)
}

/// Decodes the trace option of a packet, if it carries one.
pub fn trace_option(packet: &Ipv4Packet, bit_width: BitWidth) -> Result<Option<TracemaxOption>, CodecError> {
    find_tracemax(&packet.header.options)
        .map(|b| codec::decode_option(b, bit_width))
        .transpose()
}
