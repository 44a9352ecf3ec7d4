//! Wire formats: IPv4 headers, the trace option, and hex dumps.

mod ipv4;
mod option;

use std::fmt::Write;

use thiserror::Error;

pub use ipv4::{internet_checksum, Ipv4Header, Ipv4Packet, MAX_OPTIONS_LEN, MIN_HEADER_LEN, PROTO_ICMP, PROTO_TCP, PROTO_UDP};
pub use option::{
    append_id, capacity, classify_foreign_options, decode_option, encode_option, find_tracemax, replace_last_id,
    rs_drs_capacity, set_receiver_ip, OptionBytes, OptionClass, TracemaxOption, OPTION_LEN, OPTION_TYPE,
    OPTION_TYPE_LSR, OPTION_TYPE_SSR,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("option preamble {:02x} {:02x} is not 56 28", .0[0], .0[1])]
    BadPreamble([u8; 2]),
    #[error("option must be {OPTION_LEN} bytes, got {0}")]
    BadOptionLength(usize),
    #[error("option declares {count} ids but its layout holds at most {capacity}")]
    CountOverflow { count: usize, capacity: usize },
    #[error("option is full ({capacity} ids)")]
    CapacityExceeded { capacity: usize },
    #[error("id {id} does not fit in {bits} bits")]
    IdOutOfRange { id: u8, bits: u8 },
    #[error("ip version {0} is not 4")]
    BadVersion(u8),
    #[error("invalid header length {0} words")]
    BadIhl(u8),
    #[error("total length {0} is shorter than the header")]
    BadTotalLength(u16),
    #[error("header checksum {stored:#06x} does not validate (expected {computed:#06x})")]
    BadChecksum { stored: u16, computed: u16 },
    #[error("header truncated: need {need} bytes, have {have}")]
    TruncatedHeader { need: usize, have: usize },
    #[error("packet truncated: need {need} bytes, have {have}")]
    TruncatedPacket { need: usize, have: usize },
    #[error("option area malformed at offset {offset}")]
    MalformedOptionArea { offset: usize },
}

/// Lowercase hex, 16 bytes per line, each line prefixed by its offset.
pub fn hexdump(bytes: &[u8]) -> String {
    let mut out = String::new();
    for (i, chunk) in bytes.chunks(16).enumerate() {
        let _ = write!(out, "{:04x}:", i * 16);
        for b in chunk {
            let _ = write!(out, " {b:02x}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hexdump_layout() {
        let bytes: Vec<u8> = (0..20).collect();
        let dump = hexdump(&bytes);
        let lines: Vec<_> = dump.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], "0000: 00 01 02 03 04 05 06 07 08 09 0a 0b 0c 0d 0e 0f");
        assert_eq!(lines[1], "0010: 10 11 12 13");
        assert_eq!(hexdump(&[]), "");
    }
}
