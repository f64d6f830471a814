//! Minimal Ethernet + IPv4 + TCP/UDP frame construction and editing.

use crate::trace::{Column, TraceRecord};

const ETH_LEN: usize = 14;
const IPV4_LEN: usize = 20;
const TCP_LEN: usize = 20;
const UDP_LEN: usize = 8;
pub const MIN_FRAME_LEN: usize = 60;

pub const PROTO_TCP: u8 = 6;
pub const PROTO_UDP: u8 = 17;

#[derive(Debug, Clone)]
pub struct FrameBuilder {
    eth_dst: u64,
    eth_src: u64,
    dscp: u8,
    proto: u8,
    ip_src: u32,
    ip_dst: u32,
    sport: u16,
    dport: u16,
    tcp_flags: u8,
    len: usize,
}

impl FrameBuilder {
    pub fn tcp() -> Self {
        FrameBuilder {
            eth_dst: 0,
            eth_src: 0,
            dscp: 0,
            proto: PROTO_TCP,
            ip_src: 0,
            ip_dst: 0,
            sport: 0,
            dport: 0,
            tcp_flags: 0,
            len: MIN_FRAME_LEN,
        }
    }

    pub fn udp() -> Self {
        FrameBuilder {
            proto: PROTO_UDP,
            ..FrameBuilder::tcp()
        }
    }

    pub fn eth_src(mut self, v: u64) -> Self {
        self.eth_src = v;
        self
    }

    pub fn eth_dst(mut self, v: u64) -> Self {
        self.eth_dst = v;
        self
    }

    pub fn dscp(mut self, v: u8) -> Self {
        self.dscp = v & 0x3F;
        self
    }

    pub fn ip_src(mut self, v: u32) -> Self {
        self.ip_src = v;
        self
    }

    pub fn ip_dst(mut self, v: u32) -> Self {
        self.ip_dst = v;
        self
    }

    pub fn sport(mut self, v: u16) -> Self {
        self.sport = v;
        self
    }

    pub fn dport(mut self, v: u16) -> Self {
        self.dport = v;
        self
    }

    pub fn tcp_flags(mut self, v: u8) -> Self {
        self.tcp_flags = v;
        self
    }

    /// Total frame length; padded with zeros, never shorter than the headers.
    pub fn len(mut self, v: usize) -> Self {
        self.len = v;
        self
    }

    /// Builds a frame from a record's protocol columns.
    pub fn from_record(rec: &TraceRecord) -> Self {
        let proto = rec.get(Column::IpProto) as u8;
        let base = if proto == PROTO_UDP {
            FrameBuilder::udp()
        } else {
            FrameBuilder::tcp()
        };
        base.eth_src(rec.get(Column::EthSrc))
            .eth_dst(rec.get(Column::EthDst))
            .dscp(rec.get(Column::Dscp) as u8)
            .ip_src(rec.get(Column::IpSrc) as u32)
            .ip_dst(rec.get(Column::IpDst) as u32)
            .sport(rec.get(Column::Sport) as u16)
            .dport(rec.get(Column::Dport) as u16)
            .tcp_flags(rec.get(Column::TcpFlags) as u8)
            .len(rec.pkt_len as usize)
    }

    pub fn build(&self) -> Vec<u8> {
        let l4 = if self.proto == PROTO_UDP { UDP_LEN } else { TCP_LEN };
        let len = self.len.max(ETH_LEN + IPV4_LEN + l4);
        let mut f = vec![0u8; len];
        f[0..6].copy_from_slice(&self.eth_dst.to_be_bytes()[2..]);
        f[6..12].copy_from_slice(&self.eth_src.to_be_bytes()[2..]);
        f[12..14].copy_from_slice(&0x0800u16.to_be_bytes());
        let ip = &mut f[ETH_LEN..ETH_LEN + IPV4_LEN];
        ip[0] = 0x45;
        ip[1] = self.dscp << 2;
        let total = (len - ETH_LEN).min(u16::MAX as usize) as u16;
        ip[2..4].copy_from_slice(&total.to_be_bytes());
        ip[8] = 64;
        ip[9] = self.proto;
        ip[12..16].copy_from_slice(&self.ip_src.to_be_bytes());
        ip[16..20].copy_from_slice(&self.ip_dst.to_be_bytes());
        let l4o = ETH_LEN + IPV4_LEN;
        f[l4o..l4o + 2].copy_from_slice(&self.sport.to_be_bytes());
        f[l4o + 2..l4o + 4].copy_from_slice(&self.dport.to_be_bytes());
        if self.proto == PROTO_UDP {
            let ulen = (len - l4o).min(u16::MAX as usize) as u16;
            f[l4o + 4..l4o + 6].copy_from_slice(&ulen.to_be_bytes());
        } else {
            f[l4o + 12] = 0x50;
            f[l4o + 13] = self.tcp_flags;
        }
        write_ipv4_checksum(&mut f);
        f
    }
}

fn ipv4_checksum(header: &[u8]) -> u16 {
    let mut sum: u32 = header
        .chunks(2)
        .enumerate()
        .filter(|(i, _)| *i != 5)
        .map(|(_, c)| u16::from_be_bytes([c[0], *c.get(1).unwrap_or(&0)]) as u32)
        .sum();
    while sum > 0xFFFF {
        sum = (sum & 0xFFFF) + (sum >> 16);
    }
    !(sum as u16)
}

fn write_ipv4_checksum(frame: &mut [u8]) {
    let sum = ipv4_checksum(&frame[ETH_LEN..ETH_LEN + IPV4_LEN]);
    frame[ETH_LEN + 10..ETH_LEN + 12].copy_from_slice(&sum.to_be_bytes());
}

/// Rewrites the DSCP bits of an IPv4 frame and refreshes the header checksum.
/// Returns false (frame untouched) when it is not an IPv4 frame.
pub fn set_dscp(frame: &mut [u8], dscp: u8) -> bool {
    if frame.len() < ETH_LEN + IPV4_LEN || frame[12..14] != [0x08, 0x00] {
        return false;
    }
    let tos = &mut frame[ETH_LEN + 1];
    *tos = (dscp & 0x3F) << 2 | (*tos & 0x03);
    write_ipv4_checksum(frame);
    true
}

pub fn ipv4_checksum_ok(frame: &[u8]) -> bool {
    if frame.len() < ETH_LEN + IPV4_LEN {
        return false;
    }
    let h = &frame[ETH_LEN..ETH_LEN + IPV4_LEN];
    u16::from_be_bytes([h[10], h[11]]) == ipv4_checksum(h)
}
