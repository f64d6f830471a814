//! Forwarding actions emitted by XFSM transitions.
//!
//! 16-bit encoding: kind in the top 4 bits, arguments below.
//! `SET_DSCP` packs the DSCP value in bits 11..6 and the output port in 5..0.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum Action {
    #[default]
    None,
    Drop,
    Forward(u8),
    Flood,
    /// Rewrite DSCP, then forward.
    SetDscp {
        dscp: u8,
        port: u8,
    },
}

const KIND_NONE: u16 = 0;
const KIND_DROP: u16 = 1;
const KIND_FORWARD: u16 = 2;
const KIND_FLOOD: u16 = 3;
const KIND_SET_DSCP: u16 = 4;

impl Action {
    pub fn encode(self) -> u16 {
        match self {
            Action::None => KIND_NONE << 12,
            Action::Drop => KIND_DROP << 12,
            Action::Forward(p) => KIND_FORWARD << 12 | p as u16,
            Action::Flood => KIND_FLOOD << 12,
            Action::SetDscp { dscp, port } => KIND_SET_DSCP << 12 | ((dscp & 0x3F) as u16) << 6 | (port & 0x3F) as u16,
        }
    }

    pub fn decode(word: u16) -> Option<Action> {
        let args = word & 0x0FFF;
        match word >> 12 {
            KIND_NONE if args == 0 => Some(Action::None),
            KIND_DROP if args == 0 => Some(Action::Drop),
            KIND_FORWARD if args <= 0xFF => Some(Action::Forward(args as u8)),
            KIND_FLOOD if args == 0 => Some(Action::Flood),
            KIND_SET_DSCP => Some(Action::SetDscp {
                dscp: (args >> 6) as u8,
                port: (args & 0x3F) as u8,
            }),
            _ => None,
        }
    }

    pub fn port(self) -> Option<u8> {
        match self {
            Action::Forward(p) | Action::SetDscp { port: p, .. } => Some(p),
            _ => None,
        }
    }

    pub fn is_drop(self) -> bool {
        self == Action::Drop
    }

    /// Checks ports against a 1-based port count and DSCP against 6 bits.
    pub fn validate(self, num_ports: u8) -> Result<(), String> {
        if let Some(p) = self.port() {
            if p == 0 || p > num_ports {
                return Err(format!("port {p} outside 1..={num_ports}"));
            }
        }
        if let Action::SetDscp { dscp, .. } = self {
            if dscp > 0x3F {
                return Err(format!("DSCP {dscp} does not fit in 6 bits"));
            }
        }
        Ok(())
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::None => f.write_str("NONE"),
            Action::Drop => f.write_str("DROP"),
            Action::Forward(p) => write!(f, "FORWARD({p})"),
            Action::Flood => f.write_str("FLOOD"),
            Action::SetDscp { dscp, port } => write!(f, "SET_DSCP({dscp},{port})"),
        }
    }
}

impl FromStr for Action {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let upper = compact.to_ascii_uppercase();
        let (name, args) = match upper.split_once('(') {
            Some((n, rest)) => {
                let inner = rest
                    .strip_suffix(')')
                    .ok_or_else(|| format!("action `{s}`: missing `)`"))?;
                (n.to_string(), inner.split(',').map(str::to_string).collect::<Vec<_>>())
            }
            None => (upper.clone(), Vec::new()),
        };
        let num = |a: &str| -> Result<u8, String> {
            a.parse::<u8>().map_err(|_| format!("action `{s}`: bad argument `{a}`"))
        };
        match (name.as_str(), args.as_slice()) {
            ("NONE", []) => Ok(Action::None),
            ("DROP", []) => Ok(Action::Drop),
            ("FLOOD", []) => Ok(Action::Flood),
            ("FORWARD", [p]) => Ok(Action::Forward(num(p)?)),
            ("SET_DSCP", [d, p]) => Ok(Action::SetDscp {
                dscp: num(d)?,
                port: num(p)?,
            }),
            _ => Err(format!("unknown action `{s}`")),
        }
    }
}

impl Serialize for Action {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Action {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}
