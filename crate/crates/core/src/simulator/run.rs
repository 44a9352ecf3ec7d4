use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{route_change, Network, SimWarning, Step};
use super::traffic::{generate_traffic, TrafficSpec};
use super::{ids_detect, DefenseScope, ScenarioConfig, SimError};
use crate::codec::Ipv4Packet;
use crate::marking::{
    activate_tracing, install_filters, trace_option, AddrMatch, CollectorEvent, CollectorLog, DropReason, FilterScope,
    FilterSignature, Trigger, TriggerScope,
};
use crate::prefix::Ipv4Prefix;
use crate::reconstruction::{reconstruct, CaptureRecord, Direction, Origin, ReconstructedPath};
use crate::topology::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowKind {
    Attack,
    Benign,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FlowRef {
    pub kind: FlowKind,
    pub index: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub generated: u64,
    pub delivered: u64,
    pub dropped: BTreeMap<DropReason, u64>,
    pub lost: u64,
    pub in_flight: u64,
}

impl Counters {
    pub fn dropped_total(&self) -> u64 {
        self.dropped.values().sum()
    }

    /// generated = delivered + dropped + lost + in_flight.
    pub fn balanced(&self) -> bool {
        self.generated == self.delivered + self.dropped_total() + self.lost + self.in_flight
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowStats {
    pub flow: FlowRef,
    pub source: NodeId,
    #[serde(flatten)]
    pub counters: Counters,
    /// Packets generated at or after the defense tick.
    pub after_defense: Counters,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconstructionStats {
    /// Delivered packets carrying a trace option.
    pub checked: u64,
    /// Of those, reconstructions equal to the recorded marking routers.
    pub matched: u64,
    pub errors: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TracedAttacker {
    pub path: ReconstructedPath,
    /// Routers that marked the packet the path was recovered from.
    pub hop_log: Vec<NodeId>,
    pub tick: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub seed: u64,
    pub duration: u64,
    /// First tick an attack packet reached the victim.
    pub attack_onset_tick: Option<u64>,
    pub detection_tick: Option<u64>,
    pub defense_tick: Option<u64>,
    /// Longest reconstruction seen per attacker index.
    pub traced_paths: BTreeMap<usize, TracedAttacker>,
    pub distinct_attacker_count: usize,
    /// Share of attack packets sent after filters went in that never
    /// reached the victim.
    pub attack_drop_rate: Option<f64>,
    /// Share of completed benign packets dropped by a router; losses on
    /// the wire are not drops.
    pub benign_drop_rate: f64,
    pub victim_packets: Vec<u64>,
    pub victim_bytes: Vec<u64>,
    pub capacity_exceeded_count: usize,
    pub collector_events: BTreeMap<String, usize>,
    pub reconstruction: ReconstructionStats,
    pub filters: Vec<FilterSignature>,
    pub flows: Vec<FlowStats>,
    pub warnings: Vec<SimWarning>,
}

impl SimReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub report: SimReport,
    pub log: CollectorLog,
    pub captures: Vec<CaptureRecord>,
}

impl SimOutcome {
    pub fn captures_text(&self) -> String {
        self.captures.iter().map(|c| format!("{c}\n")).collect()
    }
}

struct Flow {
    flow: FlowRef,
    source: NodeId,
    spec: TrafficSpec,
    rng: ChaCha8Rng,
    counters: Counters,
    after_defense: Counters,
}

struct InFlight {
    flow: usize,
    born: u64,
    node: NodeId,
    in_port: u16,
    packet: Ipv4Packet,
    marked_by: Vec<NodeId>,
}

enum End {
    Delivered,
    Dropped(DropReason),
    Lost,
}

struct Sim<'a> {
    config: &'a ScenarioConfig,
    net: Network,
    flows: Vec<Flow>,
    loss: ChaCha8Rng,
    queue: BTreeMap<u64, Vec<InFlight>>,
    capture_nodes: BTreeSet<NodeId>,
    captures: Vec<CaptureRecord>,
    signatures: Vec<FilterSignature>,
    victim_packets: Vec<u64>,
    victim_bytes: Vec<u64>,
    onset: Option<u64>,
    detection: Option<u64>,
    first_trace: Option<u64>,
    defense: Option<u64>,
    traced: BTreeMap<usize, TracedAttacker>,
    attack_paths: BTreeSet<(Origin, Vec<NodeId>)>,
    stats: ReconstructionStats,
    warnings: Vec<SimWarning>,
}

/// Runs the scenario to completion. Same config, same outcome, byte for
/// byte.
pub fn run_scenario(config: &ScenarioConfig) -> Result<SimOutcome, SimError> {
    config.validate()?;
    let p = &config.params;
    let mut net = Network::new(config.topology.clone(), config.assignment.clone())?;
    for r in net.routers.values_mut() {
        r.stamp_receiver = p.stamp_receiver;
    }
    let ip = |n: NodeId| config.topology.node(n).expect("validated").ip;
    let victim_ip = ip(p.victim);
    let spec = |src, dst_ip, rate, protocol, dst_port, spoof, start_tick, stop_tick| TrafficSpec {
        src_ip: ip(src),
        dst_ip,
        rate,
        protocol,
        dst_port,
        spoof,
        pool: p.spoof_pool,
        payload_len: p.payload_len,
        ttl: p.ttl,
        start_tick,
        stop_tick,
    };
    let mut flows = Vec::new();
    for (i, a) in p.attackers.iter().enumerate() {
        flows.push((
            FlowRef { kind: FlowKind::Attack, index: i },
            a.source,
            spec(a.source, victim_ip, a.rate, a.protocol, a.dst_port, a.spoof, a.start_tick, a.stop_tick),
        ));
    }
    for (i, b) in p.benign_flows.iter().enumerate() {
        flows.push((
            FlowRef { kind: FlowKind::Benign, index: i },
            b.src,
            spec(b.src, ip(b.dst), b.rate, b.protocol, b.dst_port, super::SpoofMode::None, b.start_tick, b.stop_tick),
        ));
    }
    let flows = flows
        .into_iter()
        .enumerate()
        .map(|(i, (flow, source, spec))| {
            let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
            rng.set_stream(i as u64 + 1);
            Flow { flow, source, spec, rng, counters: Counters::default(), after_defense: Counters::default() }
        })
        .collect();

    let mut signatures: Vec<FilterSignature> = Vec::new();
    for a in &p.attackers {
        let sig = FilterSignature {
            src: AddrMatch::Any,
            dst: AddrMatch::Prefix(Ipv4Prefix::host(victim_ip)),
            protocol: Some(a.protocol),
            port: (a.protocol != crate::codec::PROTO_ICMP).then_some(a.dst_port),
            action: p.defense_action,
        };
        if !signatures.contains(&sig) {
            signatures.push(sig);
        }
    }

    let mut loss = ChaCha8Rng::seed_from_u64(p.seed);
    loss.set_stream(0);
    let mut sim = Sim {
        config,
        net,
        flows,
        loss,
        queue: BTreeMap::new(),
        capture_nodes: p.capture_nodes.clone().unwrap_or_else(|| BTreeSet::from([p.victim])),
        captures: Vec::new(),
        signatures,
        victim_packets: vec![0; p.duration as usize],
        victim_bytes: vec![0; p.duration as usize],
        onset: None,
        detection: None,
        first_trace: None,
        defense: None,
        traced: BTreeMap::new(),
        attack_paths: BTreeSet::new(),
        stats: ReconstructionStats::default(),
        warnings: Vec::new(),
    };
    for tick in 0..p.duration {
        sim.tick(tick)?;
    }
    Ok(sim.finish())
}

impl Sim<'_> {
    fn tick(&mut self, tick: u64) -> Result<(), SimError> {
        let config = self.config;
        let p = &config.params;
        for ev in p.route_changes.iter().filter(|e| e.tick == tick) {
            if let Some(w) = route_change(&mut self.net, ev, p.victim)? {
                self.warnings.push(w);
            }
        }

        for f in 0..self.flows.len() {
            let flow = &mut self.flows[f];
            let packets = generate_traffic(&flow.spec, tick, &mut flow.rng);
            let source = flow.source;
            for packet in packets {
                self.count(f, tick, |c| c.generated += 1);
                match self.net.host_egress(source, &packet) {
                    None => self.end(f, tick, End::Dropped(DropReason::NoRoute)),
                    Some(to) => {
                        let entry = InFlight { flow: f, born: tick, node: to.node, in_port: to.port, packet, marked_by: Vec::new() };
                        self.transmit(entry, tick + 1);
                    }
                }
            }
        }

        for entry in self.queue.remove(&tick).unwrap_or_default() {
            self.arrive(entry, tick)?;
        }

        let idx = tick as usize;
        if self.detection.is_none() && ids_detect(&self.victim_packets[idx..=idx], p.ids_threshold).is_some() {
            self.detection = Some(tick);
            activate_tracing(&mut self.net.routers, &Trigger { victim: p.victim, scope: TriggerScope::All })?;
        }

        if self.defense.is_none() && self.first_trace.is_some_and(|t| t + p.defense_delay <= tick) {
            let scope = match p.defense_scope {
                DefenseScope::Tracing => FilterScope::Tracing,
                DefenseScope::Paths => FilterScope::Routers(self.attack_paths.iter().flat_map(|(_, r)| r.iter().copied()).collect()),
            };
            for sig in &self.signatures {
                install_filters(&mut self.net.routers, sig, &scope)?;
            }
            self.defense = Some(tick);
        }
        Ok(())
    }

    fn count(&mut self, f: usize, born: u64, update: impl Fn(&mut Counters)) {
        let flow = &mut self.flows[f];
        update(&mut flow.counters);
        if self.defense.is_some_and(|d| born >= d) {
            update(&mut flow.after_defense);
        }
    }

    fn end(&mut self, f: usize, born: u64, end: End) {
        match end {
            End::Delivered => self.count(f, born, |c| c.delivered += 1),
            End::Dropped(r) => self.count(f, born, |c| *c.dropped.entry(r).or_default() += 1),
            End::Lost => self.count(f, born, |c| c.lost += 1),
        }
    }

    fn transmit(&mut self, entry: InFlight, arrival: u64) {
        let loss = self.config.params.loss_prob;
        if loss > 0.0 && self.loss.gen_bool(loss) {
            self.end(entry.flow, entry.born, End::Lost);
        } else {
            self.queue.entry(arrival).or_default().push(entry);
        }
    }

    fn capture(&mut self, tick: u64, node: NodeId, dir: Direction, packet: &Ipv4Packet) {
        if self.capture_nodes.contains(&node) {
            let bytes = packet.to_bytes().expect("simulated packets encode");
            self.captures.push(CaptureRecord { tick, node: Some(node), dir, bytes });
        }
    }

    fn arrive(&mut self, entry: InFlight, tick: u64) -> Result<(), SimError> {
        let InFlight { flow, born, node, in_port, packet, marked_by } = entry;
        self.capture(tick, node, Direction::In, &packet);
        match self.net.step(node, in_port, packet, tick, &marked_by) {
            Step::Forward { to, packet, delay, marked_by } => {
                self.capture(tick, node, Direction::Out, &packet);
                let next = InFlight { flow, born, node: to.node, in_port: to.port, packet, marked_by };
                self.transmit(next, tick + 1 + u64::from(delay));
            }
            Step::Dropped(reason) => self.end(flow, born, End::Dropped(reason)),
            Step::Delivered(packet) => {
                self.end(flow, born, End::Delivered);
                self.delivered(flow, node, packet, marked_by, tick);
            }
        }
        Ok(())
    }

    fn delivered(&mut self, f: usize, node: NodeId, packet: Ipv4Packet, marked_by: Vec<NodeId>, tick: u64) {
        let config = self.config;
        let p = &config.params;
        let attack = self.flows[f].flow.kind == FlowKind::Attack;
        if node == p.victim {
            self.victim_packets[tick as usize] += 1;
            self.victim_bytes[tick as usize] += u64::from(packet.header.total_length);
            if attack && self.onset.is_none() {
                self.onset = Some(tick);
            }
        }
        let bw = self.config.assignment.bit_width();
        let option = match trace_option(&packet, bw) {
            Ok(Some(o)) => o,
            Ok(None) => return,
            Err(_) => {
                self.stats.checked += 1;
                self.stats.errors += 1;
                return;
            }
        };
        self.stats.checked += 1;
        let path = match reconstruct(&self.config.topology, &self.config.assignment, &option, node) {
            Ok(path) => path,
            Err(_) => {
                self.stats.errors += 1;
                return;
            }
        };
        if path.routers == marked_by {
            self.stats.matched += 1;
        }
        if node != p.victim {
            return;
        }
        // Victim-side view: anything matching the alarm signature.
        if self.detection.is_some() && self.signatures.iter().any(|s| s.matches(&packet)) {
            self.first_trace.get_or_insert(tick);
            self.attack_paths.insert((path.origin, path.routers.clone()));
        }
        if attack {
            let index = self.flows[f].flow.index;
            let better = self.traced.get(&index).is_none_or(|t| path.routers.len() > t.path.routers.len());
            if better {
                self.traced.insert(index, TracedAttacker { path, hop_log: marked_by, tick });
            }
        }
    }

    fn finish(mut self) -> SimOutcome {
        for entries in std::mem::take(&mut self.queue).into_values() {
            for e in entries {
                self.count(e.flow, e.born, |c| c.in_flight += 1);
            }
        }
        let config = self.config;
        let p = &config.params;
        let mut attack_after = Counters::default();
        let mut benign = Counters::default();
        for f in &self.flows {
            let (target, c) = match f.flow.kind {
                FlowKind::Attack => (&mut attack_after, &f.after_defense),
                FlowKind::Benign => (&mut benign, &f.counters),
            };
            target.generated += c.generated;
            target.delivered += c.delivered;
            target.lost += c.lost;
            for (&r, &n) in &c.dropped {
                *target.dropped.entry(r).or_default() += n;
            }
        }
        let rate = |c: &Counters, with_loss: bool| {
            let done = c.delivered + c.dropped_total() + if with_loss { c.lost } else { 0 };
            (done > 0).then(|| c.dropped_total() as f64 / done as f64)
        };
        let log = std::mem::take(&mut self.net.log);
        let mut collector_events = BTreeMap::new();
        for r in log.records() {
            let key = serde_json::to_value(r.event).expect("event serializes");
            *collector_events.entry(key.as_str().unwrap_or_default().to_owned()).or_default() += 1;
        }
        let report = SimReport {
            seed: p.seed,
            duration: p.duration,
            attack_onset_tick: self.onset,
            detection_tick: self.detection,
            defense_tick: self.defense,
            distinct_attacker_count: distinct_attackers(&self.attack_paths),
            traced_paths: self.traced,
            attack_drop_rate: rate(&attack_after, true),
            benign_drop_rate: rate(&benign, false).unwrap_or(0.0),
            victim_packets: self.victim_packets,
            victim_bytes: self.victim_bytes,
            capacity_exceeded_count: log.count(CollectorEvent::CapacityExceeded),
            collector_events,
            reconstruction: self.stats,
            filters: if self.defense.is_some() { self.signatures } else { Vec::new() },
            flows: self
                .flows
                .into_iter()
                .map(|f| FlowStats { flow: f.flow, source: f.source, counters: f.counters, after_defense: f.after_defense })
                .collect(),
            warnings: self.warnings,
        };
        SimOutcome { report, log, captures: self.captures }
    }
}

/// Number of sources the victim can tell apart. Paths seen only partway
/// (tracing started while the packet was in flight) are folded into any
/// longer path they end.
pub fn distinct_attackers(paths: &BTreeSet<(Origin, Vec<NodeId>)>) -> usize {
    let dominated = |(origin, routers): &(Origin, Vec<NodeId>)| {
        *origin == Origin::Internal
            && paths
                .iter()
                .any(|(_, other)| other.len() > routers.len() && other.ends_with(routers))
    };
    let heads: BTreeSet<(Origin, Option<NodeId>)> = paths
        .iter()
        .filter(|p| !dominated(p))
        .map(|(o, r)| (*o, r.first().copied()))
        .collect();
    heads.len()
}
