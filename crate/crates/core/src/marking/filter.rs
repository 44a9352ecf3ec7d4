use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::MarkingError;
use crate::codec::Ipv4Packet;
use crate::prefix::{Ipv4Prefix, PrefixParseError};

/// Address match: `"any"`, a bare address, or a CIDR prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum AddrMatch {
    #[default]
    Any,
    Prefix(Ipv4Prefix),
}

impl AddrMatch {
    pub fn matches(&self, ip: std::net::Ipv4Addr) -> bool {
        match self {
            AddrMatch::Any => true,
            AddrMatch::Prefix(p) => p.contains(ip),
        }
    }

    pub fn is_any(&self) -> bool {
        matches!(self, AddrMatch::Any)
    }
}

impl fmt::Display for AddrMatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AddrMatch::Any => f.write_str("any"),
            AddrMatch::Prefix(p) => write!(f, "{p}"),
        }
    }
}

impl FromStr for AddrMatch {
    type Err = PrefixParseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "any" {
            Ok(AddrMatch::Any)
        } else {
            s.parse().map(AddrMatch::Prefix)
        }
    }
}

impl TryFrom<String> for AddrMatch {
    type Error = PrefixParseError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<AddrMatch> for String {
    fn from(m: AddrMatch) -> String {
        m.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterAction {
    Drop,
    Pass,
    Delay,
}

/// Traffic signature pushed to routers once an attack has been traced.
/// Missing match fields mean "any".
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSignature {
    #[serde(default)]
    pub src: AddrMatch,
    #[serde(default)]
    pub dst: AddrMatch,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol: Option<u8>,
    /// Destination transport port.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub port: Option<u16>,
    pub action: FilterAction,
}

impl FilterSignature {
    pub fn validate(&self) -> Result<(), MarkingError> {
        if self.src.is_any() && self.dst.is_any() && self.protocol.is_none() && self.port.is_none() {
            Err(MarkingError::InvalidSignature)
        } else {
            Ok(())
        }
    }

    pub fn matches(&self, packet: &Ipv4Packet) -> bool {
        let h = &packet.header;
        if !self.src.matches(h.src) || !self.dst.matches(h.dst) {
            return false;
        }
        if self.protocol.is_some_and(|p| p != h.protocol) {
            return false;
        }
        match self.port {
            None => true,
            Some(port) => packet.l4_ports().is_some_and(|(_, dst)| dst == port),
        }
    }
}

/// Parses a filter file: a JSON list of signatures, each validated.
pub fn load_filters(text: &str) -> Result<Vec<FilterSignature>, MarkingError> {
    let rules: Vec<FilterSignature> = serde_json::from_str(text)?;
    for r in &rules {
        r.validate()?;
    }
    Ok(rules)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{Ipv4Header, PROTO_TCP, PROTO_UDP};
    use std::net::Ipv4Addr;

    fn udp(dst_port: u16) -> Ipv4Packet {
        let h = Ipv4Header::new(Ipv4Addr::new(198, 18, 0, 4), Ipv4Addr::new(10, 0, 0, 9), PROTO_UDP);
        let mut payload = vec![0x30, 0x39];
        payload.extend_from_slice(&dst_port.to_be_bytes());
        payload.extend_from_slice(&[0; 8]);
        Ipv4Packet::new(h, payload)
    }

    #[test]
    fn signature_matching() {
        let sig = FilterSignature {
            src: AddrMatch::Any,
            dst: "10.0.0.9".parse().unwrap(),
            protocol: Some(PROTO_UDP),
            port: Some(53),
            action: FilterAction::Drop,
        };
        assert!(sig.matches(&udp(53)));
        assert!(!sig.matches(&udp(80)));
        let mut tcp = udp(53);
        tcp.header.protocol = PROTO_TCP;
        assert!(!sig.matches(&tcp));
    }

    #[test]
    fn all_any_is_invalid() {
        let sig = FilterSignature {
            src: AddrMatch::Any,
            dst: AddrMatch::Any,
            protocol: None,
            port: None,
            action: FilterAction::Drop,
        };
        assert!(matches!(sig.validate(), Err(MarkingError::InvalidSignature)));
    }

    #[test]
    fn filter_file() {
        let text = r#"[
            {"dst": "10.0.0.9", "protocol": 17, "port": 53, "action": "drop"},
            {"src": "198.18.0.0/15", "action": "delay"}
        ]"#;
        let rules = load_filters(text).unwrap();
        assert_eq!(rules.len(), 2);
        assert_eq!(rules[1].action, FilterAction::Delay);
        assert!(rules[1].dst.is_any());
        assert!(load_filters(r#"[{"action": "drop"}]"#).is_err());
        assert!(load_filters(r#"[{"action": "drop", "vlan": 3}]"#).is_err());
    }
}
