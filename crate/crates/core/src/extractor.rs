//! Packet fields extractor.
//!
//! Each of the eight header slots H0..H7 is bound to a source: a named trace
//! column, a metadata value (timestamp, input port, length) or, for raw
//! frames, a shift-and-mask read at a bit offset. The same slot values feed
//! conditions, ALU operands, XFSM header matches and flow keys.
//!
//! Flow keys concatenate the scope's slots in order, most significant first,
//! each taking as many bits as its mask spans, and are left-aligned in 128
//! bits with zero padding on the right.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::operand::HEADER_SLOTS;
use crate::trace::{Column, TraceRecord};

/// Deepest bit offset a shift-and-mask block may read (a 1518-byte frame).
pub const MAX_PARSE_BITS: u32 = 1518 * 8;
pub const FLOW_KEY_BITS: u32 = 128;

/// Shift-and-mask block: read `width` bits at bit `offset`, right-align, AND `mask`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FieldSpec {
    pub offset: u32,
    pub width: u8,
    pub mask: u32,
}

impl FieldSpec {
    pub fn new(offset: u32, width: u8, mask: u32) -> Self {
        FieldSpec { offset, width, mask }
    }

    /// Raw-frame read equivalent to `(column >> shift) & mask` on the parsed value.
    pub fn for_column(col: Column, shift: u8, mask: u32) -> Self {
        let (offset, width) = col.frame_field();
        let avail = width.saturating_sub(shift as u32);
        let read = avail.min(32);
        FieldSpec {
            offset: offset + (avail - read),
            width: read as u8,
            mask,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.width == 0 || self.width > 32 {
            return Err(format!("width {} outside 1..=32", self.width));
        }
        if self.offset + self.width as u32 > MAX_PARSE_BITS {
            return Err(format!(
                "offset {} + width {} exceeds parse depth {MAX_PARSE_BITS}",
                self.offset, self.width
            ));
        }
        Ok(())
    }

    /// `None` when the packet is too short for this field.
    pub fn read(&self, raw: &[u8]) -> Option<u32> {
        let end = self.offset as usize + self.width as usize;
        if end > raw.len() * 8 {
            return None;
        }
        let mut v: u64 = 0;
        for bit in self.offset as usize..end {
            let byte = raw[bit / 8];
            v = v << 1 | (byte >> (7 - bit % 8) & 1) as u64;
        }
        Some(v as u32 & self.mask)
    }
}

/// Reads every spec; short packets read as 0 and bump `truncated`.
pub fn extract(raw: &[u8], specs: &[FieldSpec], truncated: &mut u64) -> Vec<u32> {
    specs
        .iter()
        .map(|s| {
            s.read(raw).unwrap_or_else(|| {
                *truncated += 1;
                0
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FieldSource {
    Column(Column),
    Timestamp,
    InPort,
    PktLen,
}

impl FieldSource {
    pub fn is_metadata(&self) -> bool {
        !matches!(self, FieldSource::Column(_))
    }
}

impl fmt::Display for FieldSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldSource::Column(c) => f.write_str(c.name()),
            FieldSource::Timestamp => f.write_str("ts"),
            FieldSource::InPort => f.write_str("in_port"),
            FieldSource::PktLen => f.write_str("pkt_len"),
        }
    }
}

impl std::str::FromStr for FieldSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "ts" => FieldSource::Timestamp,
            "in_port" => FieldSource::InPort,
            "pkt_len" => FieldSource::PktLen,
            other => FieldSource::Column(other.parse().map_err(|e| format!("{e}"))?),
        })
    }
}

/// How trace records become slot values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IngestMode {
    /// Pre-parsed named columns.
    #[default]
    Csv,
    /// Shift-and-mask reads over the `frame` bytes.
    Raw,
}

impl std::str::FromStr for IngestMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(IngestMode::Csv),
            "raw" => Ok(IngestMode::Raw),
            _ => Err(format!("unknown mode `{s}` (expected csv or raw)")),
        }
    }
}

/// Binds one header slot to its source.
///
/// In CSV mode a column value is `(value >> shift) & mask`; in raw mode the
/// `sam` block is read from the frame. Metadata sources behave the same in
/// both modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FieldBinding {
    pub slot: u8,
    pub source: FieldSource,
    pub shift: u8,
    pub mask: u32,
    pub sam: Option<FieldSpec>,
}

impl FieldBinding {
    /// Bits a right-aligned masked value can occupy.
    pub fn width(&self) -> u8 {
        (32 - self.mask.leading_zeros()) as u8
    }

    pub fn value(&self, rec: &TraceRecord, mode: IngestMode, truncated: &mut u64) -> u32 {
        let meta = |v: u64| ((v >> self.shift) as u32) & self.mask;
        match (self.source, mode) {
            (FieldSource::Timestamp, _) => meta(rec.ts as u64),
            (FieldSource::InPort, _) => meta(rec.in_port as u64),
            (FieldSource::PktLen, _) => meta(rec.pkt_len as u64),
            (FieldSource::Column(c), IngestMode::Csv) => meta(rec.get(c)),
            (FieldSource::Column(_), IngestMode::Raw) => {
                let spec = self.sam.unwrap_or(FieldSpec::new(0, 0, 0));
                let raw = rec.frame.as_deref().unwrap_or(&[]);
                match spec.read(raw) {
                    Some(v) if spec.width > 0 => v,
                    _ => {
                        *truncated += 1;
                        0
                    }
                }
            }
        }
    }
}

/// One packet's extracted operands and metadata.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct PacketRecord {
    pub headers: [u32; HEADER_SLOTS],
    pub ts: u32,
    pub in_port: u16,
    pub length: u32,
}

pub fn build_record(
    rec: &TraceRecord,
    bindings: &[FieldBinding],
    mode: IngestMode,
    truncated: &mut u64,
) -> PacketRecord {
    let mut headers = [0u32; HEADER_SLOTS];
    for b in bindings {
        headers[b.slot as usize] = b.value(rec, mode, truncated);
    }
    PacketRecord {
        headers,
        ts: rec.ts,
        in_port: rec.in_port,
        length: rec.pkt_len,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct FlowKey(pub u128);

impl fmt::Display for FlowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{:032x}", self.0)
    }
}

/// Ordered slots whose values form a flow key.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct KeyScope {
    parts: Vec<(u8, u8)>,
}

impl KeyScope {
    /// Resolves slot widths from the bindings.
    pub fn new(slots: &[u8], bindings: &[FieldBinding]) -> Result<Self, String> {
        if slots.is_empty() {
            return Err("flow key scope must not be empty".into());
        }
        let mut parts = Vec::with_capacity(slots.len());
        for &slot in slots {
            let b = bindings
                .iter()
                .find(|b| b.slot == slot)
                .ok_or_else(|| format!("scope slot H{slot} has no field binding"))?;
            parts.push((slot, b.width()));
        }
        let total: u32 = parts.iter().map(|(_, w)| *w as u32).sum();
        if total > FLOW_KEY_BITS {
            return Err(format!("scope spans {total} bits, more than {FLOW_KEY_BITS}"));
        }
        Ok(KeyScope { parts })
    }

    pub fn slots(&self) -> impl Iterator<Item = u8> + '_ {
        self.parts.iter().map(|(s, _)| *s)
    }

    pub fn width(&self) -> u32 {
        self.parts.iter().map(|(_, w)| *w as u32).sum()
    }

    /// Bit position (from the top of the 128-bit key) and width of `slot`.
    pub fn position(&self, slot: u8) -> Option<(u32, u8)> {
        let mut at = 0u32;
        for (s, w) in &self.parts {
            if *s == slot {
                return Some((at, *w));
            }
            at += *w as u32;
        }
        None
    }

    /// Left-aligned key from raw slot values (128-bit value, not masked by the caller).
    pub fn key_from(&self, headers: &[u32; HEADER_SLOTS]) -> FlowKey {
        let mut key: u128 = 0;
        for (slot, w) in &self.parts {
            let v = headers[*slot as usize] as u128 & ((1u128 << w) - 1);
            key = key << w | v;
        }
        let used = self.width();
        if used == 0 {
            FlowKey(0)
        } else {
            FlowKey(key << (FLOW_KEY_BITS - used))
        }
    }
}

pub fn flow_key(record: &PacketRecord, scope: &KeyScope) -> FlowKey {
    scope.key_from(&record.headers)
}

/// Offsets of common fields in an untagged Ethernet + IPv4 (no options) + TCP/UDP frame.
pub mod frame_layout {
    use super::FieldSpec;

    pub const ETH_DST_HI: FieldSpec = FieldSpec {
        offset: 0,
        width: 16,
        mask: 0xFFFF,
    };
    pub const ETH_DST_LO: FieldSpec = FieldSpec {
        offset: 16,
        width: 32,
        mask: u32::MAX,
    };
    pub const ETH_SRC_HI: FieldSpec = FieldSpec {
        offset: 48,
        width: 16,
        mask: 0xFFFF,
    };
    pub const ETH_SRC_LO: FieldSpec = FieldSpec {
        offset: 64,
        width: 32,
        mask: u32::MAX,
    };
    pub const DSCP: FieldSpec = FieldSpec {
        offset: 120,
        width: 6,
        mask: 0x3F,
    };
    pub const IP_PROTO: FieldSpec = FieldSpec {
        offset: 184,
        width: 8,
        mask: 0xFF,
    };
    pub const IP_SRC: FieldSpec = FieldSpec {
        offset: 208,
        width: 32,
        mask: u32::MAX,
    };
    pub const IP_DST: FieldSpec = FieldSpec {
        offset: 240,
        width: 32,
        mask: u32::MAX,
    };
    pub const SPORT: FieldSpec = FieldSpec {
        offset: 272,
        width: 16,
        mask: 0xFFFF,
    };
    pub const DPORT: FieldSpec = FieldSpec {
        offset: 288,
        width: 16,
        mask: 0xFFFF,
    };
    pub const TCP_FLAGS: FieldSpec = FieldSpec {
        offset: 376,
        width: 8,
        mask: 0xFF,
    };
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::FrameBuilder;
    use proptest::prelude::*;

    fn bind(slot: u8, source: FieldSource, mask: u32) -> FieldBinding {
        FieldBinding {
            slot,
            source,
            shift: 0,
            mask,
            sam: None,
        }
    }

    #[test]
    fn first_byte() {
        let mut t = 0;
        assert_eq!(
            extract(&[0x45, 0x00], &[FieldSpec::new(0, 8, 0xFF)], &mut t),
            vec![0x45]
        );
        assert_eq!(t, 0);
    }

    #[test]
    fn null_mask() {
        let mut t = 0;
        assert_eq!(extract(&[0xFF; 4], &[FieldSpec::new(0, 32, 0)], &mut t), vec![0]);
    }

    #[test]
    fn short_packet_counts_truncation() {
        let mut t = 0;
        assert_eq!(extract(&[0xFF], &[FieldSpec::new(4, 8, 0xFF)], &mut t), vec![0]);
        assert_eq!(t, 1);
    }

    #[test]
    fn ipv4_source_from_frame() {
        let frame = FrameBuilder::tcp().ip_src(0xC0A8_0A01).ip_dst(0x0A00_0002).build();
        // Manual slice: bytes 26..30 of the frame.
        let manual = u32::from_be_bytes(frame[26..30].try_into().unwrap());
        assert_eq!(manual, 0xC0A8_0A01);
        assert_eq!(frame_layout::IP_SRC.read(&frame), Some(manual));
        assert_eq!(frame_layout::IP_DST.read(&frame), Some(0x0A00_0002));
    }

    #[test]
    fn single_field_scope_left_aligned() {
        let b = [bind(2, FieldSource::Column(Column::IpSrc), u32::MAX)];
        let scope = KeyScope::new(&[2], &b).unwrap();
        let mut rec = PacketRecord::default();
        rec.headers[2] = 0x0A00_0001;
        assert_eq!(flow_key(&rec, &scope), FlowKey(0x0A00_0001u128 << 96));
    }

    #[test]
    fn empty_scope_forbidden() {
        assert!(KeyScope::new(&[], &[]).is_err());
    }

    #[test]
    fn unbound_or_oversized_scope_rejected() {
        assert!(KeyScope::new(&[3], &[]).is_err());
        let b: Vec<_> = (0..5)
            .map(|s| bind(s, FieldSource::Column(Column::IpSrc), u32::MAX))
            .collect();
        assert!(KeyScope::new(&[0, 1, 2, 3, 4], &b).is_err());
        assert!(KeyScope::new(&[0, 1, 2, 3], &b).is_ok());
    }

    #[test]
    fn mac_scopes_differ() {
        let frame = FrameBuilder::tcp()
            .eth_src(0x0200_0000_00AA)
            .eth_dst(0x0200_0000_00BB)
            .build();
        let bindings = [
            FieldBinding {
                slot: 0,
                source: FieldSource::Column(Column::EthSrc),
                shift: 0,
                mask: u32::MAX,
                sam: Some(frame_layout::ETH_SRC_LO),
            },
            FieldBinding {
                slot: 1,
                source: FieldSource::Column(Column::EthSrc),
                shift: 32,
                mask: 0xFFFF,
                sam: Some(frame_layout::ETH_SRC_HI),
            },
            FieldBinding {
                slot: 2,
                source: FieldSource::Column(Column::EthDst),
                shift: 0,
                mask: u32::MAX,
                sam: Some(frame_layout::ETH_DST_LO),
            },
            FieldBinding {
                slot: 3,
                source: FieldSource::Column(Column::EthDst),
                shift: 32,
                mask: 0xFFFF,
                sam: Some(frame_layout::ETH_DST_HI),
            },
        ];
        let mut rec = TraceRecord::new(0, 1, frame.len() as u32);
        rec.frame = Some(frame);
        let mut t = 0;
        let pkt = build_record(&rec, &bindings, IngestMode::Raw, &mut t);
        let src = KeyScope::new(&[1, 0], &bindings).unwrap();
        let dst = KeyScope::new(&[3, 2], &bindings).unwrap();
        assert_eq!(flow_key(&pkt, &src), FlowKey(0x0200_0000_00AAu128 << 80));
        assert_eq!(flow_key(&pkt, &dst), FlowKey(0x0200_0000_00BBu128 << 80));
        assert_eq!(t, 0);
    }

    #[test]
    fn csv_shift_and_mask() {
        let b = FieldBinding {
            slot: 0,
            source: FieldSource::Column(Column::EthSrc),
            shift: 32,
            mask: 0xFFFF,
            sam: None,
        };
        let rec = TraceRecord::new(0, 0, 0).with(Column::EthSrc, 0xAABB_CCDD_EEFF);
        let mut t = 0;
        assert_eq!(b.value(&rec, IngestMode::Csv, &mut t), 0xAABB);
        assert_eq!(b.width(), 16);
    }

    proptest! {
        #[test]
        fn flow_key_injective(a in any::<(u32, u16, u8)>(), b in any::<(u32, u16, u8)>()) {
            let bindings = [
                bind(0, FieldSource::Column(Column::IpSrc), u32::MAX),
                bind(1, FieldSource::Column(Column::Sport), 0xFFFF),
                bind(2, FieldSource::Column(Column::IpProto), 0xFF),
            ];
            let scope = KeyScope::new(&[0, 1, 2], &bindings).unwrap();
            let rec = |(x, y, z): (u32, u16, u8)| {
                let mut r = PacketRecord::default();
                r.headers[0] = x;
                r.headers[1] = y as u32;
                r.headers[2] = z as u32;
                r
            };
            let (ka, kb) = (flow_key(&rec(a), &scope), flow_key(&rec(b), &scope));
            prop_assert_eq!(ka == kb, a == b);
        }

        #[test]
        fn extract_is_pure(raw in proptest::collection::vec(any::<u8>(), 0..64), off in 0u32..600, w in 1u8..=32) {
            let spec = FieldSpec::new(off, w, u32::MAX);
            prop_assert_eq!(spec.read(&raw), spec.read(&raw));
        }
    }
}
