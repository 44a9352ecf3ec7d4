mod common;

use std::net::Ipv4Addr;

use common::strategies;
use proptest::prelude::*;
use tracemax::codec::{
    append_id, capacity, decode_option, encode_option, internet_checksum, replace_last_id, CodecError, Ipv4Header,
    Ipv4Packet, TracemaxOption, PROTO_UDP,
};
use tracemax::id_assignment::{BitWidth, PortId};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn decode_inverts_encode((bw, opt) in strategies::option()) {
        let bytes = encode_option(&opt, bw).unwrap();
        prop_assert_eq!(decode_option(&bytes, bw).unwrap(), opt);
    }

    #[test]
    fn encoding_matches_hand_layout((bw, opt) in strategies::option()) {
        prop_assert_eq!(encode_option(&opt, bw).unwrap(), common::reference_encoding(&opt, bw.bits()));
    }

    #[test]
    fn append_preserves_prefix((bw, opt) in strategies::option(), raw in any::<u8>()) {
        let bytes = encode_option(&opt, bw).unwrap();
        let id = PortId((u32::from(raw) % bw.id_space()) as u8);
        match append_id(&bytes, id, bw) {
            Ok(next) => {
                let back = decode_option(&next, bw).unwrap();
                prop_assert_eq!(&back.ids[..opt.ids.len()], &opt.ids[..]);
                prop_assert_eq!(back.ids.last(), Some(&id));
                prop_assert_eq!(back.sender_ip, opt.sender_ip);
                prop_assert_eq!(back.receiver_ip, opt.receiver_ip);
                // Octets holding earlier IDs are untouched, apart from the
                // one the new slot may share.
                let start = if opt.sender_ip.is_some() { 7 } else { 3 };
                let done = start + opt.ids.len() * usize::from(bw.bits()) / 8;
                prop_assert_eq!(&next[..2], &bytes[..2]);
                prop_assert_eq!(&next[3..done], &bytes[3..done]);
            }
            Err(CodecError::CapacityExceeded { .. }) => {
                prop_assert_eq!(opt.ids.len(), capacity(bw, opt.sender_ip.is_some(), opt.receiver_ip.is_some()));
            }
            Err(e) => prop_assert!(false, "unexpected {}", e),
        }
    }

    #[test]
    fn replace_last_touches_only_last((bw, opt) in strategies::option(), raw in any::<u8>()) {
        prop_assume!(!opt.ids.is_empty());
        let mut bytes = encode_option(&opt, bw).unwrap();
        let id = PortId((u32::from(raw) % bw.id_space()) as u8);
        let old = replace_last_id(&mut bytes, id, bw).unwrap();
        prop_assert_eq!(old, opt.ids.last().copied());
        let back = decode_option(&bytes, bw).unwrap();
        let n = opt.ids.len();
        prop_assert_eq!(&back.ids[..n - 1], &opt.ids[..n - 1]);
        prop_assert_eq!(back.ids[n - 1], id);
    }

    #[test]
    fn header_round_trip_with_valid_checksum(
        tos in any::<u8>(), id in any::<u16>(), ff in any::<u16>(), ttl in any::<u8>(), proto in any::<u8>(),
        src in any::<u32>(), dst in any::<u32>(), payload in prop::collection::vec(any::<u8>(), 0..64),
        marked in any::<Option<(u32, Vec<u8>)>>(),
    ) {
        let mut h = Ipv4Header::new(Ipv4Addr::from(src), Ipv4Addr::from(dst), proto);
        h.tos = tos;
        h.identification = id;
        h.flags_fragment = ff;
        h.ttl = ttl;
        if let Some((s, ids)) = marked {
            let bw = BitWidth::new(8).unwrap();
            let opt = TracemaxOption { sender_ip: Some(Ipv4Addr::from(s)), receiver_ip: None, ids: ids.into_iter().take(33).map(PortId).collect() };
            h.options = encode_option(&opt, bw).unwrap().to_vec();
        }
        let p = Ipv4Packet::new(h, payload);
        let bytes = p.to_bytes().unwrap();
        prop_assert!(common::header_checksum_ok(&bytes));
        prop_assert_eq!(internet_checksum(&bytes[..p.header.header_len()]), 0);
        let back = Ipv4Packet::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back.payload, &p.payload);
        prop_assert_eq!(&back.header.options, &p.header.options);
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn checksum_matches_oracle(data in prop::collection::vec(any::<u8>(), 0..120)) {
        prop_assert_eq!(internet_checksum(&data), common::ones_complement(&data));
    }
}

#[test]
fn corrupted_header_is_rejected() {
    let p = Ipv4Packet::new(Ipv4Header::new(Ipv4Addr::new(10, 0, 0, 1), Ipv4Addr::new(10, 0, 0, 2), PROTO_UDP), vec![1, 2, 3, 4]);
    let mut bytes = p.to_bytes().unwrap();
    bytes[8] ^= 1;
    assert!(matches!(Ipv4Packet::from_bytes(&bytes), Err(CodecError::BadChecksum { .. })));
}

#[test]
fn capacity_table() {
    let w = |k| BitWidth::new(k).unwrap();
    assert_eq!(capacity(w(5), false, false), 59);
    assert_eq!(capacity(w(5), true, true), 46);
    assert_eq!(capacity(w(8), false, false), 37);
    assert_eq!(capacity(w(1), false, false), 63);
}
