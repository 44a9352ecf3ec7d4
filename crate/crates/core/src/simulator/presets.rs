use super::{AttackerSpec, BenignFlow, ScenarioConfig, ScenarioParams, SpoofMode};
use crate::id_assignment::{assign_ids, BitWidth};
use crate::topology::{NodeId, Topology, TopologyBuilder};

/// Node ids of a [`multi_attacker`] scenario.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiAttackerLayout {
    pub victim: NodeId,
    pub victim_edge: NodeId,
    pub hub: NodeId,
    pub attackers: Vec<NodeId>,
    /// Border router each attacker sits behind.
    pub borders: Vec<NodeId>,
    /// One benign host per border router.
    pub benign: Vec<NodeId>,
}

/// Victim behind an in-system edge router, a hub core router, and
/// `attackers` branches of growing length. Branch `i` is a border router
/// followed by `i + 1` core routers into the hub; it hosts one attacker and
/// one benign client. Attackers send UDP/53 at `attack_rate` each, clients
/// TCP/80 at one packet per tick. The IDS threshold is twice the benign
/// aggregate.
pub fn multi_attacker(attackers: usize, attack_rate: u32, spoof: SpoofMode, seed: u64) -> (ScenarioConfig, MultiAttackerLayout) {
    let mut b = TopologyBuilder::new();
    let victim = b.host();
    let victim_edge = b.edge_router();
    b.node_mut(victim_edge).expect("just added").ingress_filtering = true;
    let hub = b.router();
    b.link(victim, victim_edge);
    b.link(victim_edge, hub);
    let mut layout = MultiAttackerLayout { victim, victim_edge, hub, attackers: vec![], borders: vec![], benign: vec![] };
    for i in 0..attackers {
        let border = b.edge_router();
        b.node_mut(border).expect("just added").system_border = true;
        let attacker = b.host();
        let client = b.host();
        b.link(attacker, border);
        b.link(client, border);
        let mut prev = border;
        for _ in 0..=i {
            let core = b.router();
            b.link(prev, core);
            prev = core;
        }
        b.link(prev, hub);
        layout.attackers.push(attacker);
        layout.borders.push(border);
        layout.benign.push(client);
    }
    let topology: Topology = b.build().expect("preset topology is valid");
    let assignment = assign_ids(&topology, BitWidth::DEFAULT).expect("degrees are small");

    let mut params = ScenarioParams::new(victim, 60);
    params.seed = seed;
    params.defense_delay = 10;
    params.ids_threshold = 2 * attackers.max(1) as u64;
    params.attackers = layout
        .attackers
        .iter()
        .map(|&source| AttackerSpec {
            source,
            spoof,
            rate: attack_rate,
            protocol: crate::codec::PROTO_UDP,
            dst_port: 53,
            start_tick: 5,
            stop_tick: None,
        })
        .collect();
    params.benign_flows = layout
        .benign
        .iter()
        .map(|&src| BenignFlow {
            src,
            dst: victim,
            rate: 1,
            protocol: crate::codec::PROTO_TCP,
            dst_port: 80,
            start_tick: 0,
            stop_tick: None,
        })
        .collect();
    let config = ScenarioConfig::new(topology, assignment, params).expect("preset is consistent");
    (config, layout)
}
