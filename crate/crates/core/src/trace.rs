//! Canonical CSV trace format.
//!
//! A trace is a CSV file with a header row. `ts` is required and must be
//! non-decreasing. `in_port` and `pkt_len` are optional metadata columns.
//! Protocol columns (`eth_src`, `eth_dst`, `ip_src`, `ip_dst`, `ip_proto`,
//! `sport`, `dport`, `tcp_flags`, `dscp`) are present only when a program
//! needs them. Raw-frame traces carry a hex-encoded `frame` column instead.
//!
//! MAC addresses are written `aa:bb:cc:dd:ee:ff`, IPv4 addresses as dotted
//! quads and everything else in decimal; `0x` hex is accepted on input.

use std::fmt;
use std::io;
use std::net::Ipv4Addr;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace I/O: {0}")]
    Io(#[from] io::Error),
    #[error("trace CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: column `{column}`: cannot parse `{value}`")]
    BadValue { line: u64, column: String, value: String },
    #[error("unknown trace column `{0}`")]
    UnknownColumn(String),
    #[error("trace is missing required column `{0}`")]
    MissingColumn(String),
    #[error("line {line}: timestamp {ts} precedes previous timestamp {prev}")]
    NonMonotoneTimestamp { line: u64, ts: u32, prev: u32 },
}

impl TraceError {
    /// Parse-type failures as opposed to content that violates trace rules.
    pub fn is_parse(&self) -> bool {
        matches!(
            self,
            TraceError::Csv(_) | TraceError::BadValue { .. } | TraceError::UnknownColumn(_)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Column {
    EthSrc,
    EthDst,
    IpSrc,
    IpDst,
    IpProto,
    Sport,
    Dport,
    TcpFlags,
    Dscp,
}

pub const COLUMN_COUNT: usize = 9;

impl Column {
    pub const ALL: [Column; COLUMN_COUNT] = [
        Column::EthSrc,
        Column::EthDst,
        Column::IpSrc,
        Column::IpDst,
        Column::IpProto,
        Column::Sport,
        Column::Dport,
        Column::TcpFlags,
        Column::Dscp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Column::EthSrc => "eth_src",
            Column::EthDst => "eth_dst",
            Column::IpSrc => "ip_src",
            Column::IpDst => "ip_dst",
            Column::IpProto => "ip_proto",
            Column::Sport => "sport",
            Column::Dport => "dport",
            Column::TcpFlags => "tcp_flags",
            Column::Dscp => "dscp",
        }
    }

    /// Bit offset and width in an untagged Ethernet + IPv4 (no options) + TCP/UDP frame.
    pub fn frame_field(self) -> (u32, u32) {
        match self {
            Column::EthDst => (0, 48),
            Column::EthSrc => (48, 48),
            Column::Dscp => (120, 6),
            Column::IpProto => (184, 8),
            Column::IpSrc => (208, 32),
            Column::IpDst => (240, 32),
            Column::Sport => (272, 16),
            Column::Dport => (288, 16),
            Column::TcpFlags => (376, 8),
        }
    }

    fn index(self) -> usize {
        self as usize
    }

    fn parse_value(self, s: &str) -> Option<u64> {
        let s = s.trim();
        match self {
            Column::EthSrc | Column::EthDst if s.contains(':') => parse_mac(s),
            Column::IpSrc | Column::IpDst if s.contains('.') => Ipv4Addr::from_str(s).ok().map(|a| u32::from(a) as u64),
            _ => parse_u64(s),
        }
    }

    fn format_value(self, v: u64) -> String {
        match self {
            Column::EthSrc | Column::EthDst => format_mac(v),
            Column::IpSrc | Column::IpDst => Ipv4Addr::from(v as u32).to_string(),
            _ => v.to_string(),
        }
    }
}

impl fmt::Display for Column {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Column {
    type Err = TraceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Column::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| TraceError::UnknownColumn(s.to_string()))
    }
}

pub fn parse_u64(s: &str) -> Option<u64> {
    if let Some(h) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        u64::from_str_radix(h, 16).ok()
    } else {
        s.parse().ok()
    }
}

pub fn parse_mac(s: &str) -> Option<u64> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 6 {
        return None;
    }
    parts.iter().try_fold(0u64, |acc, p| {
        u8::from_str_radix(p, 16).ok().map(|b| acc << 8 | b as u64)
    })
}

pub fn format_mac(v: u64) -> String {
    let b = v.to_be_bytes();
    format!(
        "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
        b[2], b[3], b[4], b[5], b[6], b[7]
    )
}

/// One packet as it appears in a trace.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TraceRecord {
    pub ts: u32,
    pub in_port: u16,
    pub pkt_len: u32,
    pub columns: [u64; COLUMN_COUNT],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<Vec<u8>>,
}

impl TraceRecord {
    pub fn new(ts: u32, in_port: u16, pkt_len: u32) -> Self {
        TraceRecord {
            ts,
            in_port,
            pkt_len,
            ..Default::default()
        }
    }

    pub fn get(&self, c: Column) -> u64 {
        self.columns[c.index()]
    }

    pub fn set(&mut self, c: Column, v: u64) {
        self.columns[c.index()] = v;
    }

    pub fn with(mut self, c: Column, v: u64) -> Self {
        self.set(c, v);
        self
    }
}

/// Records plus the set of columns the source actually provided.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Trace {
    pub columns: Vec<Column>,
    pub has_frame: bool,
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn new(columns: Vec<Column>, records: Vec<TraceRecord>) -> Self {
        let mut columns = columns;
        columns.sort();
        columns.dedup();
        Trace {
            columns,
            has_frame: records.iter().any(|r| r.frame.is_some()),
            records,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn has_column(&self, c: Column) -> bool {
        self.columns.contains(&c)
    }

    pub fn check_monotone(&self) -> Result<(), TraceError> {
        for (i, w) in self.records.windows(2).enumerate() {
            if w[1].ts < w[0].ts {
                return Err(TraceError::NonMonotoneTimestamp {
                    line: i as u64 + 3,
                    ts: w[1].ts,
                    prev: w[0].ts,
                });
            }
        }
        Ok(())
    }

    pub fn read_csv<R: io::Read>(reader: R) -> Result<Trace, TraceError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let mut ts_idx = None;
        let mut port_idx = None;
        let mut len_idx = None;
        let mut frame_idx = None;
        let mut cols = Vec::new();
        for (i, h) in headers.iter().enumerate() {
            match h {
                "ts" => ts_idx = Some(i),
                "in_port" => port_idx = Some(i),
                "pkt_len" => len_idx = Some(i),
                "frame" => frame_idx = Some(i),
                // Verdict-style bookkeeping columns are tolerated.
                "seq" => {}
                other => cols.push((i, other.parse::<Column>()?)),
            }
        }
        let ts_idx = ts_idx.ok_or_else(|| TraceError::MissingColumn("ts".into()))?;
        let mut records = Vec::new();
        for (n, row) in rdr.records().enumerate() {
            let row = row?;
            let line = n as u64 + 2;
            let bad = |column: &str, value: &str| TraceError::BadValue {
                line,
                column: column.to_string(),
                value: value.to_string(),
            };
            let field = |i: usize| row.get(i).unwrap_or("");
            let ts = parse_u64(field(ts_idx))
                .filter(|v| *v <= u32::MAX as u64)
                .ok_or_else(|| bad("ts", field(ts_idx)))? as u32;
            let mut rec = TraceRecord::new(ts, 0, 0);
            if let Some(i) = port_idx {
                rec.in_port = parse_u64(field(i))
                    .filter(|v| *v <= u16::MAX as u64)
                    .ok_or_else(|| bad("in_port", field(i)))? as u16;
            }
            if let Some(i) = frame_idx {
                let text = field(i);
                let bytes = hex::decode(text).map_err(|_| bad("frame", text))?;
                rec.pkt_len = bytes.len() as u32;
                rec.frame = Some(bytes);
            }
            if let Some(i) = len_idx {
                rec.pkt_len = parse_u64(field(i))
                    .filter(|v| *v <= u32::MAX as u64)
                    .ok_or_else(|| bad("pkt_len", field(i)))? as u32;
            }
            for (i, c) in &cols {
                let v = c.parse_value(field(*i)).ok_or_else(|| bad(c.name(), field(*i)))?;
                rec.set(*c, v);
            }
            records.push(rec);
        }
        let trace = Trace {
            columns: {
                let mut c: Vec<Column> = cols.into_iter().map(|(_, c)| c).collect();
                c.sort();
                c.dedup();
                c
            },
            has_frame: frame_idx.is_some(),
            records,
        };
        trace.check_monotone()?;
        Ok(trace)
    }

    pub fn read_path(path: &Path) -> Result<Trace, TraceError> {
        let f = std::fs::File::open(path)?;
        Trace::read_csv(io::BufReader::new(f))
    }

    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<(), TraceError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["ts", "in_port", "pkt_len"];
        header.extend(self.columns.iter().map(|c| c.name()));
        if self.has_frame {
            header.push("frame");
        }
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![r.ts.to_string(), r.in_port.to_string(), r.pkt_len.to_string()];
            row.extend(self.columns.iter().map(|c| c.format_value(r.get(*c))));
            if self.has_frame {
                row.push(r.frame.as_deref().map(hex::encode).unwrap_or_default());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory CSV write");
        String::from_utf8(buf).expect("CSV is UTF-8")
    }
}
