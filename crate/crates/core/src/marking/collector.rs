use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::DropReason;
use crate::codec::Ipv4Packet;
use crate::topology::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollectorEvent {
    Marked,
    Cleared,
    Dropped,
    CapacityExceeded,
    Corrected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectorRecord {
    pub time: u64,
    pub router: NodeId,
    pub event: CollectorEvent,
    pub packet: String,
    /// Option bytes at the time of the event, lowercase hex.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub option: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<DropReason>,
}

/// Stable short identifier for a packet across hops: covers the fields no
/// router rewrites.
pub fn packet_digest(packet: &Ipv4Packet) -> String {
    let h = &packet.header;
    let mut hasher = Sha256::new();
    hasher.update(h.src.octets());
    hasher.update(h.dst.octets());
    hasher.update(h.identification.to_be_bytes());
    hasher.update([h.protocol]);
    hasher.update(&packet.payload);
    hex::encode(&hasher.finalize()[..8])
}

/// Line-oriented event sink fed by routers.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CollectorLog {
    records: Vec<CollectorRecord>,
}

impl CollectorLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, time: u64, router: NodeId, event: CollectorEvent, packet: &Ipv4Packet, option: Option<&[u8]>) {
        self.records.push(CollectorRecord {
            time,
            router,
            event,
            packet: packet_digest(packet),
            option: option.map(hex::encode),
            reason: None,
        });
    }

    pub fn record_drop(&mut self, time: u64, router: NodeId, packet: &Ipv4Packet, reason: DropReason) {
        self.records.push(CollectorRecord {
            time,
            router,
            event: CollectorEvent::Dropped,
            packet: packet_digest(packet),
            option: None,
            reason: Some(reason),
        });
    }

    pub fn records(&self) -> &[CollectorRecord] {
        &self.records
    }

    pub fn count(&self, event: CollectorEvent) -> usize {
        self.records.iter().filter(|r| r.event == event).count()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn clear(&mut self) {
        self.records.clear();
    }

    /// One JSON object per line.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}
