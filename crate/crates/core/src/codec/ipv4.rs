use std::net::Ipv4Addr;

use super::CodecError;

pub const MIN_HEADER_LEN: usize = 20;
pub const MAX_OPTIONS_LEN: usize = 40;

pub const PROTO_ICMP: u8 = 1;
pub const PROTO_TCP: u8 = 6;
pub const PROTO_UDP: u8 = 17;

/// Internet checksum (one's-complement of the one's-complement sum of
/// 16-bit big-endian words). An odd trailing byte is padded with zero.
pub fn internet_checksum(data: &[u8]) -> u16 {
    let mut sum: u32 = 0;
    let mut chunks = data.chunks_exact(2);
    for c in &mut chunks {
        sum += u32::from(u16::from_be_bytes([c[0], c[1]]));
    }
    if let [last] = chunks.remainder() {
        sum += u32::from(*last) << 8;
    }
    while sum >> 16 != 0 {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ipv4Header {
    /// DSCP (upper six bits) and ECN (lower two bits).
    pub tos: u8,
    pub total_length: u16,
    pub identification: u16,
    /// Flags (upper three bits) and fragment offset.
    pub flags_fragment: u16,
    pub ttl: u8,
    pub protocol: u8,
    /// Checksum as read off the wire; [`Ipv4Header::encode`] ignores it.
    pub header_checksum: u16,
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
    pub options: Vec<u8>,
}

impl Ipv4Header {
    pub fn new(src: Ipv4Addr, dst: Ipv4Addr, protocol: u8) -> Self {
        Ipv4Header {
            tos: 0,
            total_length: MIN_HEADER_LEN as u16,
            identification: 0,
            flags_fragment: 0,
            ttl: 64,
            protocol,
            header_checksum: 0,
            src,
            dst,
            options: Vec::new(),
        }
    }

    /// Header length in 32-bit words.
    pub fn ihl(&self) -> u8 {
        ((MIN_HEADER_LEN + self.options.len()) / 4) as u8
    }

    pub fn header_len(&self) -> usize {
        MIN_HEADER_LEN + self.options.len()
    }

    /// Serializes the header with a freshly computed checksum.
    pub fn encode(&self) -> Result<Vec<u8>, CodecError> {
        if self.options.len() > MAX_OPTIONS_LEN || !self.options.len().is_multiple_of(4) {
            return Err(CodecError::BadIhl(((MIN_HEADER_LEN + self.options.len()) / 4) as u8));
        }
        let mut out = Vec::with_capacity(self.header_len());
        out.push(0x40 | self.ihl());
        out.push(self.tos);
        out.extend_from_slice(&self.total_length.to_be_bytes());
        out.extend_from_slice(&self.identification.to_be_bytes());
        out.extend_from_slice(&self.flags_fragment.to_be_bytes());
        out.push(self.ttl);
        out.push(self.protocol);
        out.extend_from_slice(&[0, 0]);
        out.extend_from_slice(&self.src.octets());
        out.extend_from_slice(&self.dst.octets());
        out.extend_from_slice(&self.options);
        let sum = internet_checksum(&out);
        out[10..12].copy_from_slice(&sum.to_be_bytes());
        Ok(out)
    }

    /// Parses and checksum-verifies the header at the start of `bytes`.
    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        if bytes.len() < MIN_HEADER_LEN {
            return Err(CodecError::TruncatedHeader { need: MIN_HEADER_LEN, have: bytes.len() });
        }
        let version = bytes[0] >> 4;
        if version != 4 {
            return Err(CodecError::BadVersion(version));
        }
        let ihl = bytes[0] & 0x0f;
        if ihl < 5 {
            return Err(CodecError::BadIhl(ihl));
        }
        let len = usize::from(ihl) * 4;
        if bytes.len() < len {
            return Err(CodecError::TruncatedHeader { need: len, have: bytes.len() });
        }
        let stored = u16::from_be_bytes([bytes[10], bytes[11]]);
        if internet_checksum(&bytes[..len]) != 0 {
            let mut copy = bytes[..len].to_vec();
            copy[10] = 0;
            copy[11] = 0;
            return Err(CodecError::BadChecksum { stored, computed: internet_checksum(&copy) });
        }
        let total_length = u16::from_be_bytes([bytes[2], bytes[3]]);
        if usize::from(total_length) < len {
            return Err(CodecError::BadTotalLength(total_length));
        }
        let be16 = |i: usize| u16::from_be_bytes([bytes[i], bytes[i + 1]]);
        let ip = |i: usize| Ipv4Addr::new(bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]);
        Ok(Ipv4Header {
            tos: bytes[1],
            total_length,
            identification: be16(4),
            flags_fragment: be16(6),
            ttl: bytes[8],
            protocol: bytes[9],
            header_checksum: stored,
            src: ip(12),
            dst: ip(16),
            options: bytes[MIN_HEADER_LEN..len].to_vec(),
        })
    }
}

/// A header plus opaque payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ipv4Packet {
    pub header: Ipv4Header,
    pub payload: Vec<u8>,
}

impl Ipv4Packet {
    pub fn new(header: Ipv4Header, payload: Vec<u8>) -> Self {
        let mut p = Ipv4Packet { header, payload };
        p.sync_lengths();
        p
    }

    /// Fixes up `total_length` after the options or payload changed.
    pub fn sync_lengths(&mut self) {
        self.header.total_length = (self.header.header_len() + self.payload.len()) as u16;
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CodecError> {
        let mut header = self.header.clone();
        header.total_length = (header.header_len() + self.payload.len()) as u16;
        let mut out = header.encode()?;
        out.extend_from_slice(&self.payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        let header = Ipv4Header::decode(bytes)?;
        let total = usize::from(header.total_length);
        if bytes.len() < total {
            return Err(CodecError::TruncatedPacket { need: total, have: bytes.len() });
        }
        let payload = bytes[header.header_len()..total].to_vec();
        Ok(Ipv4Packet { header, payload })
    }

    /// Source and destination ports when the payload starts with a TCP or
    /// UDP header.
    pub fn l4_ports(&self) -> Option<(u16, u16)> {
        match self.header.protocol {
            PROTO_TCP | PROTO_UDP if self.payload.len() >= 4 => Some((
                u16::from_be_bytes([self.payload[0], self.payload[1]]),
                u16::from_be_bytes([self.payload[2], self.payload[3]]),
            )),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Ipv4Header {
        let mut h = Ipv4Header::new(Ipv4Addr::new(192, 168, 0, 1), Ipv4Addr::new(192, 168, 0, 199), PROTO_UDP);
        h.identification = 0x1c46;
        h.flags_fragment = 0x4000;
        h.total_length = 0x73;
        h
    }

    /// Independent oracle: explicit word loop with end-around carry.
    fn words_sum(bytes: &[u8]) -> u16 {
        let mut acc: u64 = 0;
        for i in (0..bytes.len()).step_by(2) {
            let hi = bytes[i] as u64;
            let lo = *bytes.get(i + 1).unwrap_or(&0) as u64;
            acc += (hi << 8) | lo;
        }
        while acc > 0xffff {
            acc = (acc & 0xffff) + (acc >> 16);
        }
        acc as u16
    }

    #[test]
    fn known_header_checksum() {
        // Classic textbook header: 4500 0073 0000 4000 4011 b861 c0a8 0001 c0a8 00c7
        let mut h = sample();
        h.identification = 0;
        let bytes = h.encode().unwrap();
        assert_eq!(&bytes[10..12], &[0xb8, 0x61]);
        assert_eq!(words_sum(&bytes), 0xffff);
    }

    #[test]
    fn optionless_round_trip() {
        let h = sample();
        let bytes = h.encode().unwrap();
        assert_eq!(bytes.len(), 20);
        let back = Ipv4Header::decode(&bytes).unwrap();
        assert_eq!(back.options, h.options);
        assert_eq!(back.src, h.src);
        assert_eq!(back.total_length, h.total_length);
        assert_eq!(back.header_checksum, u16::from_be_bytes([bytes[10], bytes[11]]));
    }

    #[test]
    fn full_option_area_sets_ihl_15() {
        let mut p = Ipv4Packet::new(sample(), vec![7; 12]);
        let before = p.header.total_length;
        p.header.options = vec![0; 40];
        p.sync_lengths();
        assert_eq!(p.header.ihl(), 15);
        assert_eq!(p.header.total_length, before + 40);
        let bytes = p.to_bytes().unwrap();
        assert_eq!(bytes[0], 0x4f);
        assert_eq!(words_sum(&bytes[..60]), 0xffff);
        assert_eq!(Ipv4Packet::from_bytes(&bytes).unwrap(), {
            let mut q = p.clone();
            q.header.header_checksum = u16::from_be_bytes([bytes[10], bytes[11]]);
            q
        });
    }

    #[test]
    fn decode_errors() {
        let mut bytes = sample().encode().unwrap();
        assert!(matches!(Ipv4Header::decode(&bytes[..19]), Err(CodecError::TruncatedHeader { .. })));
        bytes[8] ^= 1;
        assert!(matches!(Ipv4Header::decode(&bytes), Err(CodecError::BadChecksum { .. })));
        bytes[8] ^= 1;
        bytes[0] = 0x44;
        assert!(matches!(Ipv4Header::decode(&bytes), Err(CodecError::BadIhl(4))));
        let mut h = sample();
        h.options = vec![1, 1, 1];
        assert!(matches!(h.encode(), Err(CodecError::BadIhl(_))));
    }

    #[test]
    fn odd_length_checksum_pads() {
        assert_eq!(internet_checksum(&[0x01]), !0x0100);
        assert_eq!(internet_checksum(&[]), 0xffff);
    }
}
