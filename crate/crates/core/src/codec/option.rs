//! The 40-byte trace option.
//!
//! ```text
//! octet 0      0x56  copied=0, class=10, number=10110
//! octet 1      0x28  option length, always 40
//! octet 2      S R c c c c c c   S/R: sender/receiver IP present, c: id count
//! [4 octets]   sender IP, when S is set
//! ...          IDs, bit-packed MSB-first in marking order
//! [4 octets]   receiver IP in the last four octets, when R is set
//! ```

use std::net::Ipv4Addr;

use super::CodecError;
use crate::id_assignment::{BitWidth, PortId};

pub const OPTION_TYPE: u8 = 0x56;
pub const OPTION_LEN: usize = 40;
pub const OPTION_TYPE_LSR: u8 = 131;
pub const OPTION_TYPE_SSR: u8 = 137;

const FIXED_OCTETS: usize = 3;
const SENDER_FLAG: u8 = 0x80;
const RECEIVER_FLAG: u8 = 0x40;
const COUNT_MASK: u8 = 0x3f;
const MAX_COUNT: usize = COUNT_MASK as usize;
const IP_BITS: usize = 32;

pub type OptionBytes = [u8; OPTION_LEN];

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TracemaxOption {
    pub sender_ip: Option<Ipv4Addr>,
    pub receiver_ip: Option<Ipv4Addr>,
    /// Port IDs in marking order: the first router's ID first.
    pub ids: Vec<PortId>,
}

impl TracemaxOption {
    pub fn has_sender_ip(&self) -> bool {
        self.sender_ip.is_some()
    }

    pub fn has_receiver_ip(&self) -> bool {
        self.receiver_ip.is_some()
    }

    pub fn id_count(&self) -> usize {
        self.ids.len()
    }

    pub fn capacity(&self, bit_width: BitWidth) -> usize {
        capacity(bit_width, self.has_sender_ip(), self.has_receiver_ip())
    }

    pub fn is_full(&self, bit_width: BitWidth) -> bool {
        self.id_count() >= self.capacity(bit_width)
    }
}

/// How many IDs fit once the fixed octets and any IP fields are reserved.
pub fn capacity(bit_width: BitWidth, has_sender_ip: bool, has_receiver_ip: bool) -> usize {
    let mut bits = (OPTION_LEN - FIXED_OCTETS) * 8;
    if has_sender_ip {
        bits -= IP_BITS;
    }
    if has_receiver_ip {
        bits -= IP_BITS;
    }
    (bits / usize::from(bit_width.bits())).min(MAX_COUNT)
}

/// Router stamping with full IPv4 addresses after a two-octet option
/// header.
pub fn rs_drs_capacity() -> usize {
    (OPTION_LEN - 2) / 4
}

fn id_area_start(has_sender_ip: bool) -> usize {
    if has_sender_ip {
        FIXED_OCTETS + 4
    } else {
        FIXED_OCTETS
    }
}

fn put_bits(buf: &mut [u8], bit_offset: usize, value: u8, width: u8) {
    for i in 0..usize::from(width) {
        let bit = (value >> (usize::from(width) - 1 - i)) & 1;
        let pos = bit_offset + i;
        let mask = 0x80 >> (pos % 8);
        if bit == 1 {
            buf[pos / 8] |= mask;
        } else {
            buf[pos / 8] &= !mask;
        }
    }
}

fn get_bits(buf: &[u8], bit_offset: usize, width: u8) -> u8 {
    let mut v = 0u8;
    for i in 0..usize::from(width) {
        let pos = bit_offset + i;
        let bit = (buf[pos / 8] >> (7 - pos % 8)) & 1;
        v = (v << 1) | bit;
    }
    v
}

fn slot_offset(has_sender_ip: bool, index: usize, bit_width: BitWidth) -> usize {
    id_area_start(has_sender_ip) * 8 + index * usize::from(bit_width.bits())
}

struct Layout {
    sender: bool,
    receiver: bool,
    count: usize,
}

fn read_layout(bytes: &[u8], bit_width: BitWidth) -> Result<Layout, CodecError> {
    if bytes.len() != OPTION_LEN {
        return Err(CodecError::BadOptionLength(bytes.len()));
    }
    if bytes[0] != OPTION_TYPE || usize::from(bytes[1]) != OPTION_LEN {
        return Err(CodecError::BadPreamble([bytes[0], bytes[1]]));
    }
    let sender = bytes[2] & SENDER_FLAG != 0;
    let receiver = bytes[2] & RECEIVER_FLAG != 0;
    let count = usize::from(bytes[2] & COUNT_MASK);
    let cap = capacity(bit_width, sender, receiver);
    if count > cap {
        return Err(CodecError::CountOverflow { count, capacity: cap });
    }
    Ok(Layout { sender, receiver, count })
}

pub fn encode_option(opt: &TracemaxOption, bit_width: BitWidth) -> Result<OptionBytes, CodecError> {
    let cap = opt.capacity(bit_width);
    if opt.id_count() > cap {
        return Err(CodecError::CapacityExceeded { capacity: cap });
    }
    let mut out = [0u8; OPTION_LEN];
    out[0] = OPTION_TYPE;
    out[1] = OPTION_LEN as u8;
    out[2] = opt.id_count() as u8;
    if let Some(ip) = opt.sender_ip {
        out[2] |= SENDER_FLAG;
        out[FIXED_OCTETS..FIXED_OCTETS + 4].copy_from_slice(&ip.octets());
    }
    if let Some(ip) = opt.receiver_ip {
        out[2] |= RECEIVER_FLAG;
        out[OPTION_LEN - 4..].copy_from_slice(&ip.octets());
    }
    for (i, id) in opt.ids.iter().enumerate() {
        if u32::from(id.0) >= bit_width.id_space() {
            return Err(CodecError::IdOutOfRange { id: id.0, bits: bit_width.bits() });
        }
        put_bits(&mut out, slot_offset(opt.has_sender_ip(), i, bit_width), id.0, bit_width.bits());
    }
    Ok(out)
}

pub fn decode_option(bytes: &[u8], bit_width: BitWidth) -> Result<TracemaxOption, CodecError> {
    let layout = read_layout(bytes, bit_width)?;
    let ip_at = |i: usize| Ipv4Addr::new(bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]);
    let ids = (0..layout.count)
        .map(|i| PortId(get_bits(bytes, slot_offset(layout.sender, i, bit_width), bit_width.bits())))
        .collect();
    Ok(TracemaxOption {
        sender_ip: layout.sender.then(|| ip_at(FIXED_OCTETS)),
        receiver_ip: layout.receiver.then(|| ip_at(OPTION_LEN - 4)),
        ids,
    })
}

/// Writes `id` into the next free slot. Only the count bits of octet 2 and
/// the new slot change.
pub fn append_id(bytes: &[u8], id: PortId, bit_width: BitWidth) -> Result<OptionBytes, CodecError> {
    let layout = read_layout(bytes, bit_width)?;
    let cap = capacity(bit_width, layout.sender, layout.receiver);
    if layout.count >= cap {
        return Err(CodecError::CapacityExceeded { capacity: cap });
    }
    if u32::from(id.0) >= bit_width.id_space() {
        return Err(CodecError::IdOutOfRange { id: id.0, bits: bit_width.bits() });
    }
    let mut out: OptionBytes = bytes.try_into().expect("length checked");
    put_bits(&mut out, slot_offset(layout.sender, layout.count, bit_width), id.0, bit_width.bits());
    out[2] = (out[2] & !COUNT_MASK) | (layout.count as u8 + 1);
    Ok(out)
}

/// Replaces the most recently written ID. Returns the previous value, or
/// `None` when the option holds no IDs.
pub fn replace_last_id(bytes: &mut OptionBytes, id: PortId, bit_width: BitWidth) -> Result<Option<PortId>, CodecError> {
    let layout = read_layout(bytes, bit_width)?;
    if layout.count == 0 {
        return Ok(None);
    }
    if u32::from(id.0) >= bit_width.id_space() {
        return Err(CodecError::IdOutOfRange { id: id.0, bits: bit_width.bits() });
    }
    let at = slot_offset(layout.sender, layout.count - 1, bit_width);
    let old = get_bits(bytes, at, bit_width.bits());
    put_bits(bytes, at, id.0, bit_width.bits());
    Ok(Some(PortId(old)))
}

/// Overwrites the receiver field of an option that reserved one.
pub fn set_receiver_ip(bytes: &mut OptionBytes, ip: Ipv4Addr, bit_width: BitWidth) -> Result<bool, CodecError> {
    let layout = read_layout(bytes, bit_width)?;
    if layout.receiver {
        bytes[OPTION_LEN - 4..].copy_from_slice(&ip.octets());
    }
    Ok(layout.receiver)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptionClass {
    None,
    Tracemax,
    LsrOrSsr,
    Other,
}

/// Walks an IPv4 option area per its type/length framing.
pub fn classify_foreign_options(options: &[u8]) -> Result<OptionClass, CodecError> {
    let mut class = OptionClass::None;
    let mut i = 0;
    while i < options.len() {
        match options[i] {
            0 => break,
            1 => {
                i += 1;
                continue;
            }
            OPTION_TYPE_LSR | OPTION_TYPE_SSR => return Ok(OptionClass::LsrOrSsr),
            t => {
                let len = *options.get(i + 1).ok_or(CodecError::MalformedOptionArea { offset: i })?;
                let len = usize::from(len);
                if len < 2 || i + len > options.len() {
                    return Err(CodecError::MalformedOptionArea { offset: i });
                }
                if t == OPTION_TYPE {
                    class = OptionClass::Tracemax;
                } else if class == OptionClass::None {
                    class = OptionClass::Other;
                }
                i += len;
            }
        }
    }
    Ok(class)
}

/// Locates a well-framed trace option inside an option area.
pub fn find_tracemax(options: &[u8]) -> Option<&[u8]> {
    let mut i = 0;
    while i < options.len() {
        match options[i] {
            0 => return None,
            1 => i += 1,
            t => {
                let len = usize::from(*options.get(i + 1)?);
                if len < 2 || i + len > options.len() {
                    return None;
                }
                if t == OPTION_TYPE && len == OPTION_LEN {
                    return Some(&options[i..i + len]);
                }
                i += len;
            }
        }
    }
    None
}
