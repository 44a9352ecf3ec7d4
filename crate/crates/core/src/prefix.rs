use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid ipv4 prefix {0:?}")]
pub struct PrefixParseError(pub String);

/// An IPv4 network in CIDR form. A bare address parses as a `/32`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Ipv4Prefix {
    addr: Ipv4Addr,
    len: u8,
}

impl Ipv4Prefix {
    pub fn new(addr: Ipv4Addr, len: u8) -> Result<Self, PrefixParseError> {
        if len > 32 {
            return Err(PrefixParseError(format!("{addr}/{len}")));
        }
        let masked = u32::from(addr) & Self::mask(len);
        Ok(Ipv4Prefix { addr: Ipv4Addr::from(masked), len })
    }

    pub fn host(addr: Ipv4Addr) -> Self {
        Ipv4Prefix { addr, len: 32 }
    }

    fn mask(len: u8) -> u32 {
        if len == 0 {
            0
        } else {
            u32::MAX << (32 - u32::from(len))
        }
    }

    pub fn addr(&self) -> Ipv4Addr {
        self.addr
    }

    pub fn prefix_len(&self) -> u8 {
        self.len
    }

    pub fn contains(&self, ip: Ipv4Addr) -> bool {
        u32::from(ip) & Self::mask(self.len) == u32::from(self.addr)
    }

    pub fn size(&self) -> u64 {
        1u64 << (32 - u32::from(self.len))
    }

    /// The `index`-th address of the network, wrapping past the end.
    pub fn nth(&self, index: u64) -> Ipv4Addr {
        Ipv4Addr::from(u32::from(self.addr).wrapping_add((index % self.size()) as u32))
    }
}

impl fmt::Display for Ipv4Prefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.addr, self.len)
    }
}

impl FromStr for Ipv4Prefix {
    type Err = PrefixParseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || PrefixParseError(s.to_string());
        match s.split_once('/') {
            Some((a, l)) => {
                let addr = a.parse().map_err(|_| bad())?;
                let len = l.parse().map_err(|_| bad())?;
                Ipv4Prefix::new(addr, len).map_err(|_| bad())
            }
            None => Ok(Ipv4Prefix::host(s.parse().map_err(|_| bad())?)),
        }
    }
}

impl TryFrom<String> for Ipv4Prefix {
    type Error = PrefixParseError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Ipv4Prefix> for String {
    fn from(p: Ipv4Prefix) -> String {
        p.to_string()
    }
}
