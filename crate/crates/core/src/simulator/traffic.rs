use std::net::Ipv4Addr;

use rand::Rng;

use super::SpoofMode;
use crate::codec::{Ipv4Header, Ipv4Packet};
use crate::prefix::Ipv4Prefix;

/// One flow's packet template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrafficSpec {
    /// Address of the sending host.
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub rate: u32,
    pub protocol: u8,
    pub dst_port: u16,
    pub spoof: SpoofMode,
    pub pool: Ipv4Prefix,
    pub payload_len: usize,
    pub ttl: u8,
    pub start_tick: u64,
    pub stop_tick: Option<u64>,
}

impl TrafficSpec {
    pub fn active(&self, tick: u64) -> bool {
        tick >= self.start_tick && self.stop_tick.is_none_or(|s| tick < s)
    }
}

/// Packets the flow emits during `tick`.
///
/// Payload layout: source port, destination port, tick, index within the
/// tick, then random filler up to `payload_len`.
pub fn generate_traffic<R: Rng + ?Sized>(spec: &TrafficSpec, tick: u64, rng: &mut R) -> Vec<Ipv4Packet> {
    if !spec.active(tick) {
        return Vec::new();
    }
    (0..spec.rate)
        .map(|i| {
            let src = match spec.spoof {
                SpoofMode::None => spec.src_ip,
                SpoofMode::Fixed(ip) => ip,
                SpoofMode::Random => spec.pool.nth(rng.gen_range(0..spec.pool.size())),
            };
            let mut header = Ipv4Header::new(src, spec.dst_ip, spec.protocol);
            header.identification = rng.gen();
            header.ttl = spec.ttl;
            let mut payload = Vec::with_capacity(spec.payload_len.max(16));
            payload.extend_from_slice(&rng.gen_range(1024u16..=u16::MAX).to_be_bytes());
            payload.extend_from_slice(&spec.dst_port.to_be_bytes());
            payload.extend_from_slice(&tick.to_be_bytes());
            payload.extend_from_slice(&i.to_be_bytes());
            while payload.len() < spec.payload_len {
                payload.push(rng.gen());
            }
            Ipv4Packet::new(header, payload)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::PROTO_UDP;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(rate: u32, spoof: SpoofMode) -> TrafficSpec {
        TrafficSpec {
            src_ip: Ipv4Addr::new(10, 0, 0, 1),
            dst_ip: Ipv4Addr::new(10, 0, 0, 9),
            rate,
            protocol: PROTO_UDP,
            dst_port: 53,
            spoof,
            pool: "198.18.0.0/28".parse().unwrap(),
            payload_len: 32,
            ttl: 64,
            start_tick: 0,
            stop_tick: None,
        }
    }

    #[test]
    fn zero_rate_is_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(generate_traffic(&spec(0, SpoofMode::Random), 0, &mut rng).is_empty());
    }

    #[test]
    fn fixed_spoof_repeats_source() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let fake = Ipv4Addr::new(203, 0, 113, 7);
        let pkts = generate_traffic(&spec(3, SpoofMode::Fixed(fake)), 4, &mut rng);
        assert_eq!(pkts.len(), 3);
        assert!(pkts.iter().all(|p| p.header.src == fake));
        assert!(pkts.iter().all(|p| p.l4_ports().unwrap().1 == 53 && p.payload.len() == 32));
    }

    #[test]
    fn window_bounds() {
        let mut s = spec(2, SpoofMode::None);
        s.start_tick = 3;
        s.stop_tick = Some(5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let counts: Vec<usize> = (0..7).map(|t| generate_traffic(&s, t, &mut rng).len()).collect();
        assert_eq!(counts, [0, 0, 0, 2, 2, 0, 0]);
    }

    #[test]
    fn same_seed_same_packets() {
        let s = spec(5, SpoofMode::Random);
        let a = generate_traffic(&s, 2, &mut ChaCha8Rng::seed_from_u64(9));
        let b = generate_traffic(&s, 2, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn random_spoof_is_uniform_over_pool() {
        let s = spec(10_000, SpoofMode::Random);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut counts = [0u32; 16];
        for p in generate_traffic(&s, 0, &mut rng) {
            assert!(s.pool.contains(p.header.src));
            counts[(u32::from(p.header.src) & 0xf) as usize] += 1;
        }
        let expected = 10_000.0 / 16.0;
        let chi2: f64 = counts.iter().map(|&c| (f64::from(c) - expected).powi(2) / expected).sum();
        // 15 degrees of freedom, p = 0.001.
        assert!(chi2 < 37.7, "chi-square {chi2}");
    }
}
