//! The operand space shared by the condition block and the update ALUs.
//!
//! Every operand is addressed by a 4-bit selector. The standard layout maps
//! selectors 0..3 to per-flow registers R0..R3, 4..7 to globals G0..G3 and
//! 8..15 to header fields H0..H7. The wide layout trades four header slots
//! for four extra per-flow registers (R0..R7, G0..G3, H0..H3) for programs
//! that track more than four per-flow quantities.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub const MAX_FLOW_REGISTERS: usize = 8;
pub const GLOBAL_REGISTERS: usize = 4;
pub const HEADER_SLOTS: usize = 8;

pub type FlowRegisters = [u32; MAX_FLOW_REGISTERS];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Operand {
    Flow(u8),
    Global(u8),
    Header(u8),
}

impl Operand {
    pub fn is_writable(&self) -> bool {
        !matches!(self, Operand::Header(_))
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Flow(i) => write!(f, "R{i}"),
            Operand::Global(i) => write!(f, "G{i}"),
            Operand::Header(i) => write!(f, "H{i}"),
        }
    }
}

impl FromStr for Operand {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let mut chars = s.chars();
        let kind = chars.next().ok_or_else(|| "empty operand".to_string())?;
        let idx: u8 = chars.as_str().parse().map_err(|_| format!("bad operand `{s}`"))?;
        let op = match kind.to_ascii_uppercase() {
            'R' if (idx as usize) < MAX_FLOW_REGISTERS => Operand::Flow(idx),
            'G' if (idx as usize) < GLOBAL_REGISTERS => Operand::Global(idx),
            'H' if (idx as usize) < HEADER_SLOTS => Operand::Header(idx),
            _ => return Err(format!("bad operand `{s}`")),
        };
        Ok(op)
    }
}

impl Serialize for Operand {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Operand {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegisterLayout {
    #[default]
    Standard,
    Wide,
}

impl RegisterLayout {
    pub fn flow_registers(self) -> u8 {
        match self {
            RegisterLayout::Standard => 4,
            RegisterLayout::Wide => 8,
        }
    }

    pub fn header_slots(self) -> u8 {
        match self {
            RegisterLayout::Standard => 8,
            RegisterLayout::Wide => 4,
        }
    }

    /// 4-bit selector for `op`, or `None` if the layout cannot address it.
    pub fn selector(self, op: Operand) -> Option<u8> {
        let r = self.flow_registers();
        match op {
            Operand::Flow(i) if i < r => Some(i),
            Operand::Global(i) if (i as usize) < GLOBAL_REGISTERS => Some(r + i),
            Operand::Header(i) if i < self.header_slots() => Some(r + GLOBAL_REGISTERS as u8 + i),
            _ => None,
        }
    }

    pub fn operand(self, selector: u8) -> Operand {
        let sel = selector & 0xF;
        let r = self.flow_registers();
        let g = GLOBAL_REGISTERS as u8;
        if sel < r {
            Operand::Flow(sel)
        } else if sel < r + g {
            Operand::Global(sel - r)
        } else {
            Operand::Header(sel - r - g)
        }
    }

    pub fn addresses(self, op: Operand) -> bool {
        self.selector(op).is_some()
    }
}

/// Read-only view of every operand for one packet step.
#[derive(Debug, Clone, Copy)]
pub struct OperandView<'a> {
    pub flow: &'a FlowRegisters,
    pub global: &'a [u32; GLOBAL_REGISTERS],
    pub header: &'a [u32; HEADER_SLOTS],
}

impl OperandView<'_> {
    pub fn get(&self, op: Operand) -> u32 {
        match op {
            Operand::Flow(i) => self.flow[i as usize],
            Operand::Global(i) => self.global[i as usize],
            Operand::Header(i) => self.header[i as usize],
        }
    }
}
