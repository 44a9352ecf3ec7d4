mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tracemax::codec::{append_id, encode_option, TracemaxOption};
use tracemax::id_assignment::{assign_ids, min_feasible_bit_width, BitWidth, PortId};
use tracemax::marking::trace_option;
use tracemax::reconstruction::{reconstruct, Origin, ReconstructError};
use tracemax::topology::{generate, NodeId};

#[test]
fn every_short_simple_path_reconstructs() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut checked = 0usize;
    for round in 0..20 {
        let n = rng.gen_range(3..=10);
        let t = generate::random_connected(n, rng.gen_range(0..=4), &mut rng);
        let asg = assign_ids(&t, min_feasible_bit_width(&t)).unwrap();
        let bw = asg.bit_width();
        let mut marker = common::PathMarker::new(t.clone(), asg.clone());
        for path in common::simple_paths(&t, 6) {
            let packet = marker.mark(&path, vec![7; 12]);
            let opt = trace_option(&packet, bw).unwrap().unwrap();
            assert_eq!(opt.ids, common::expected_ids(&t, &asg, &path), "round {round}");
            let got = reconstruct(&t, &asg, &opt, *path.last().unwrap()).unwrap();
            assert_eq!(got.routers, path[..path.len() - 1], "round {round}");
            assert!(got.complete);
            assert_eq!(got.origin, Origin::Internal);
            checked += 1;
        }
    }
    assert!(checked > 1000);
}

#[test]
fn narrow_ids_still_unambiguous() {
    // 1-bit IDs on a chain: every step has exactly one candidate.
    let t = generate::chain(12);
    let asg = assign_ids(&t, BitWidth::new(1).unwrap()).unwrap();
    let path: Vec<NodeId> = (0..12).map(NodeId).collect();
    let mut marker = common::PathMarker::new(t.clone(), asg.clone());
    let packet = marker.mark(&path, vec![0; 8]);
    let opt = trace_option(&packet, asg.bit_width()).unwrap().unwrap();
    assert_eq!(reconstruct(&t, &asg, &opt, NodeId(11)).unwrap().routers, path[..11]);
}

#[test]
fn colliding_ids_are_reported_as_ambiguous() {
    let t = generate::star(3);
    let bw = BitWidth::new(2).unwrap();
    let mut asg_ids = assign_ids(&t, bw).unwrap().iter().collect::<std::collections::BTreeMap<_, _>>();
    for (p, id) in asg_ids.iter_mut() {
        if p.node != NodeId(0) {
            *id = PortId(1);
        }
    }
    let asg = tracemax::id_assignment::IdAssignment::from_ids(bw, asg_ids).unwrap();
    let opt = TracemaxOption { ids: vec![PortId(1)], ..Default::default() };
    assert!(matches!(reconstruct(&t, &asg, &opt, NodeId(0)), Err(ReconstructError::AmbiguousStep { .. })));
}

#[test]
fn saturated_option_is_flagged_incomplete() {
    let t = generate::chain(70);
    let bw = BitWidth::new(5).unwrap();
    let asg = assign_ids(&t, bw).unwrap();
    let path: Vec<NodeId> = (0..60).map(NodeId).collect();
    let mut bytes = encode_option(&TracemaxOption::default(), bw).unwrap();
    for id in common::expected_ids(&t, &asg, &path) {
        bytes = append_id(&bytes, id, bw).unwrap();
    }
    let opt = tracemax::codec::decode_option(&bytes, bw).unwrap();
    assert_eq!(opt.ids.len(), 59);
    let got = reconstruct(&t, &asg, &opt, NodeId(59)).unwrap();
    assert_eq!(got.routers, path[..59]);
    assert!(!got.complete);
}
