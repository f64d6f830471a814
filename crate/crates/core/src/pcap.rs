//! Classic libpcap file import.
//!
//! Converts an Ethernet capture into a canonical trace: timestamps become
//! microseconds relative to the first packet (plus `base`), protocol columns
//! are parsed from the standard Ethernet/IPv4 offsets and the raw bytes are
//! kept in the `frame` column.

use std::io::Read;

use thiserror::Error;

use crate::extractor::FieldSpec;
use crate::trace::{Column, Trace, TraceRecord};

const LINKTYPE_ETHERNET: u32 = 1;

#[derive(Debug, Error)]
pub enum PcapError {
    #[error("pcap I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a classic pcap file (magic {0:#010x})")]
    BadMagic(u32),
    #[error("unsupported link type {0}; only Ethernet is supported")]
    LinkType(u32),
    #[error("truncated pcap record at packet {0}")]
    Truncated(usize),
    #[error("capture spans more than 2^32 microseconds")]
    TooLong,
}

pub fn read_pcap<R: Read>(mut r: R, base: u32) -> Result<Trace, PcapError> {
    let mut data = Vec::new();
    r.read_to_end(&mut data)?;
    if data.len() < 24 {
        return Err(PcapError::Truncated(0));
    }
    let magic = u32::from_le_bytes(data[0..4].try_into().expect("4 bytes"));
    let (le, nanos) = match magic {
        0xA1B2_C3D4 => (true, false),
        0xA1B2_3C4D => (true, true),
        0xD4C3_B2A1 => (false, false),
        0x4D3C_B2A1 => (false, true),
        other => return Err(PcapError::BadMagic(other)),
    };
    let u32_at = |b: &[u8], at: usize| {
        let w: [u8; 4] = b[at..at + 4].try_into().expect("4 bytes");
        if le {
            u32::from_le_bytes(w)
        } else {
            u32::from_be_bytes(w)
        }
    };
    let link = u32_at(&data, 20);
    if link != LINKTYPE_ETHERNET {
        return Err(PcapError::LinkType(link));
    }
    let mut at = 24;
    let mut records = Vec::new();
    let mut first: Option<u64> = None;
    while at < data.len() {
        if at + 16 > data.len() {
            return Err(PcapError::Truncated(records.len()));
        }
        let sec = u32_at(&data, at) as u64;
        let frac = u32_at(&data, at + 4) as u64;
        let incl = u32_at(&data, at + 8) as usize;
        let orig = u32_at(&data, at + 12);
        at += 16;
        if at + incl > data.len() {
            return Err(PcapError::Truncated(records.len()));
        }
        let frame = data[at..at + incl].to_vec();
        at += incl;
        let us = sec * 1_000_000 + if nanos { frac / 1000 } else { frac };
        let t0 = *first.get_or_insert(us);
        let ts = (us.saturating_sub(t0)) + base as u64;
        if ts > u32::MAX as u64 {
            return Err(PcapError::TooLong);
        }
        let mut rec = TraceRecord::new(ts as u32, 1, orig);
        for c in Column::ALL {
            let (off, width) = c.frame_field();
            let value = if width > 32 {
                let hi = FieldSpec::new(off, (width - 32) as u8, u32::MAX).read(&frame);
                let lo = FieldSpec::new(off + width - 32, 32, u32::MAX).read(&frame);
                hi.zip(lo).map(|(h, l)| (h as u64) << 32 | l as u64)
            } else {
                FieldSpec::new(off, width as u8, u32::MAX).read(&frame).map(u64::from)
            };
            rec.set(c, value.unwrap_or(0));
        }
        rec.frame = Some(frame);
        records.push(rec);
    }
    // Captures can be slightly out of order; the trace format requires monotone time.
    records.sort_by_key(|r| r.ts);
    Ok(Trace::new(Column::ALL.to_vec(), records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::FrameBuilder;

    fn pcap_bytes(frames: &[(u32, u32, Vec<u8>)]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend(0xA1B2_C3D4u32.to_le_bytes());
        b.extend(2u16.to_le_bytes());
        b.extend(4u16.to_le_bytes());
        b.extend([0u8; 8]);
        b.extend(65535u32.to_le_bytes());
        b.extend(1u32.to_le_bytes());
        for (sec, usec, f) in frames {
            b.extend(sec.to_le_bytes());
            b.extend(usec.to_le_bytes());
            b.extend((f.len() as u32).to_le_bytes());
            b.extend((f.len() as u32).to_le_bytes());
            b.extend(f);
        }
        b
    }

    #[test]
    fn imports_fields_and_relative_time() {
        let f1 = FrameBuilder::tcp()
            .ip_src(0x0A00_0001)
            .dport(80)
            .tcp_flags(2)
            .eth_src(0xAABB_CCDD_EEFF)
            .build();
        let f2 = FrameBuilder::udp().ip_src(0x0A00_0002).build();
        let t = read_pcap(&pcap_bytes(&[(10, 5, f1), (11, 0, f2)])[..], 100).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.records[0].ts, 100);
        assert_eq!(t.records[1].ts, 100 + 999_995);
        assert_eq!(t.records[0].get(Column::IpSrc), 0x0A00_0001);
        assert_eq!(t.records[0].get(Column::Dport), 80);
        assert_eq!(t.records[0].get(Column::TcpFlags), 2);
        assert_eq!(t.records[0].get(Column::EthSrc), 0xAABB_CCDD_EEFF);
        assert_eq!(t.records[1].get(Column::IpProto), 17);
        assert!(t.has_frame);
    }

    #[test]
    fn rejects_bad_magic() {
        assert!(matches!(read_pcap(&[0u8; 24][..], 0), Err(PcapError::BadMagic(0))));
    }
}
