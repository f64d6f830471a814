//! Seeded synthetic trace generators.
//!
//! Every generator is a pure function of its parameters and seed. Timestamps
//! are microseconds.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{FrameBuilder, PROTO_TCP};
use crate::trace::{Column, Trace, TraceRecord};

pub const TCP_SYN: u64 = 0x02;
pub const TCP_ACK: u64 = 0x10;
const US: f64 = 1_000_000.0;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GenError {
    #[error("unknown trace kind `{0}` (expected poisson_flows, portscan_mix, bucket_stress or classifier_grid)")]
    UnknownKind(String),
    #[error("unknown parameter `{key}` for {kind}")]
    UnknownParam { kind: TraceKind, key: String },
    #[error("parameter `{key}`: {message}")]
    BadParam { key: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    PoissonFlows,
    PortscanMix,
    BucketStress,
    ClassifierGrid,
}

impl TraceKind {
    pub const ALL: [TraceKind; 4] = [
        TraceKind::PoissonFlows,
        TraceKind::PortscanMix,
        TraceKind::BucketStress,
        TraceKind::ClassifierGrid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TraceKind::PoissonFlows => "poisson_flows",
            TraceKind::PortscanMix => "portscan_mix",
            TraceKind::BucketStress => "bucket_stress",
            TraceKind::ClassifierGrid => "classifier_grid",
        }
    }

    /// Accepted parameters with their defaults.
    pub fn defaults(self) -> &'static [(&'static str, f64)] {
        match self {
            TraceKind::PoissonFlows => &[("flows", 100.0), ("rate", 1000.0), ("duration", 10.0), ("frames", 0.0)],
            TraceKind::PortscanMix => &[
                ("scanner_rate", 40.0),
                ("benign_rate", 5.0),
                ("benign", 8.0),
                ("duration", 30.0),
                ("silence_start", 12.0),
                ("silence", 6.0),
                ("jitter", 0.2),
                ("frames", 0.0),
            ],
            TraceKind::BucketStress => &[
                ("n", 100_000.0),
                ("q", 100.0),
                ("load", 2.0),
                ("flows", 1.0),
                ("base", 1_000_000.0),
            ],
            TraceKind::ClassifierGrid => &[
                ("means", 10.0),
                ("stds", 10.0),
                ("counts", 10.0),
                ("mean_min", 60.0),
                ("mean_max", 900.0),
                ("std_max", 90.0),
                ("count_max", 10.0),
                ("window", 10.0),
                ("base", 1_000_000.0),
            ],
        }
    }
}

impl fmt::Display for TraceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TraceKind {
    type Err = GenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TraceKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| GenError::UnknownKind(s.to_string()))
    }
}

/// Resolved numeric parameters.
#[derive(Debug, Clone)]
pub struct Params {
    values: BTreeMap<&'static str, f64>,
}

impl Params {
    pub fn new(kind: TraceKind, given: &BTreeMap<String, String>) -> Result<Params, GenError> {
        let mut values: BTreeMap<&'static str, f64> = kind.defaults().iter().copied().collect();
        for (k, v) in given {
            let slot = values
                .iter_mut()
                .find(|(name, _)| **name == k.as_str())
                .map(|(_, v)| v)
                .ok_or_else(|| GenError::UnknownParam { kind, key: k.clone() })?;
            *slot = v
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite() && *x >= 0.0)
                .ok_or_else(|| GenError::BadParam {
                    key: k.clone(),
                    message: format!("`{v}` is not a non-negative number"),
                })?;
        }
        Ok(Params { values })
    }

    pub fn get(&self, key: &str) -> f64 {
        self.values[key]
    }

    fn positive(&self, key: &str) -> Result<f64, GenError> {
        let v = self.get(key);
        if v > 0.0 {
            Ok(v)
        } else {
            Err(GenError::BadParam {
                key: key.to_string(),
                message: "must be positive".into(),
            })
        }
    }

    fn count(&self, key: &str) -> Result<usize, GenError> {
        let v = self.positive(key)?;
        if v.fract() != 0.0 || v > 1e8 {
            return Err(GenError::BadParam {
                key: key.to_string(),
                message: "must be a whole number up to 1e8".into(),
            });
        }
        Ok(v as usize)
    }
}

/// Parses `key=value` pairs.
pub fn parse_params<'a>(pairs: impl IntoIterator<Item = &'a str>) -> Result<BTreeMap<String, String>, GenError> {
    pairs
        .into_iter()
        .map(|p| {
            p.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| GenError::BadParam {
                    key: p.to_string(),
                    message: "expected key=value".into(),
                })
        })
        .collect()
}

pub fn generate(kind: TraceKind, params: &BTreeMap<String, String>, seed: u64) -> Result<Trace, GenError> {
    let p = Params::new(kind, params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        TraceKind::PoissonFlows => poisson_flows(&p, &mut rng),
        TraceKind::PortscanMix => portscan_mix(&p, &mut rng),
        TraceKind::BucketStress => bucket_stress(&p, &mut rng),
        TraceKind::ClassifierGrid => classifier_grid(&p, &mut rng),
    }
}

fn tcp_columns() -> Vec<Column> {
    vec![
        Column::IpSrc,
        Column::IpDst,
        Column::IpProto,
        Column::Sport,
        Column::Dport,
        Column::TcpFlags,
    ]
}

fn finish(columns: Vec<Column>, mut records: Vec<TraceRecord>, frames: bool) -> Trace {
    // Stable sort keeps generation order among equal timestamps.
    records.sort_by_key(|r| r.ts);
    if frames {
        for r in &mut records {
            r.frame = Some(FrameBuilder::from_record(r).build());
        }
    }
    Trace::new(columns, records)
}

fn to_ticks(seconds: f64) -> u32 {
    (seconds * US).round().clamp(0.0, u32::MAX as f64) as u32
}

fn poisson_flows(p: &Params, rng: &mut ChaCha8Rng) -> Result<Trace, GenError> {
    let flows = p.count("flows")?;
    let rate = p.positive("rate")?;
    let duration = p.positive("duration")?;
    let gap = Exp::new(rate).expect("positive rate");
    let tuples: Vec<(u32, u32, u16, u16)> = (0..flows)
        .map(|i| {
            (
                0x0A00_0000 | (i as u32 + 1),
                0xC0A8_0000 | rng.random_range(1..255u32),
                rng.random_range(1024..65535u16),
                *[80u16, 443, 22, 53, 8080]
                    .get(rng.random_range(0..5))
                    .expect("index in range"),
            )
        })
        .collect();
    let mut records = Vec::new();
    let mut t = 0.0;
    loop {
        t += gap.sample(rng);
        if t >= duration {
            break;
        }
        let (src, dst, sport, dport) = tuples[rng.random_range(0..flows)];
        let len = rng.random_range(64..1500u32);
        records.push(
            TraceRecord::new(to_ticks(t), 1, len)
                .with(Column::IpSrc, src as u64)
                .with(Column::IpDst, dst as u64)
                .with(Column::IpProto, PROTO_TCP as u64)
                .with(Column::Sport, sport as u64)
                .with(Column::Dport, dport as u64)
                .with(Column::TcpFlags, TCP_ACK),
        );
    }
    Ok(finish(tcp_columns(), records, p.get("frames") > 0.0))
}

pub const SCANNER_IP: u32 = 0x0A00_0042;
pub const BENIGN_BASE_IP: u32 = 0x0A00_0100;

/// One scanner and `benign` ordinary hosts. Each source sends SYNs on a
/// jittered periodic schedule; benign hosts follow every SYN with an ACK.
/// The scanner pauses for `silence` seconds starting at `silence_start`.
fn portscan_mix(p: &Params, rng: &mut ChaCha8Rng) -> Result<Trace, GenError> {
    let scanner_rate = p.positive("scanner_rate")?;
    let benign_rate = p.positive("benign_rate")?;
    let benign = p.get("benign") as usize;
    let duration = p.positive("duration")?;
    let jitter = p.get("jitter").min(0.9);
    let (quiet_from, quiet_len) = (p.get("silence_start"), p.get("silence"));
    let mut records = Vec::new();
    let syn = |ts: f64, src: u32, sport: u16, dport: u16| {
        TraceRecord::new(to_ticks(ts), 1, 64)
            .with(Column::IpSrc, src as u64)
            .with(Column::IpDst, 0xC0A8_0001)
            .with(Column::IpProto, PROTO_TCP as u64)
            .with(Column::Sport, sport as u64)
            .with(Column::Dport, dport as u64)
            .with(Column::TcpFlags, TCP_SYN)
    };
    let schedule = |rng: &mut ChaCha8Rng, rate: f64| -> Vec<f64> {
        let period = 1.0 / rate;
        let mut out = Vec::new();
        let mut t = rng.random_range(0.0..period);
        while t < duration {
            out.push(t);
            t += period * (1.0 + rng.random_range(-jitter..=jitter));
        }
        out
    };
    let mut dport: u16 = 1;
    for t in schedule(rng, scanner_rate) {
        if quiet_len > 0.0 && t >= quiet_from && t < quiet_from + quiet_len {
            continue;
        }
        records.push(syn(t, SCANNER_IP, 40000, dport));
        dport = dport.wrapping_add(1).max(1);
    }
    for h in 0..benign {
        let src = BENIGN_BASE_IP + h as u32;
        for (k, t) in schedule(rng, benign_rate).into_iter().enumerate() {
            let sport = 30000 + (k % 20000) as u16;
            records.push(syn(t, src, sport, 443));
            let ack_t = t + rng.random_range(0.001..0.02);
            if ack_t < duration {
                records.push(syn(ack_t, src, sport, 443).with(Column::TcpFlags, TCP_ACK));
            }
        }
    }
    Ok(finish(tcp_columns(), records, p.get("frames") > 0.0))
}

/// Arrivals with exponential gaps of mean Q / load, rounded to whole ticks
/// (so simultaneous arrivals occur), starting at `base`.
fn bucket_stress(p: &Params, rng: &mut ChaCha8Rng) -> Result<Trace, GenError> {
    let n = p.count("n")?;
    let q = p.positive("q")?;
    let load = p.positive("load")?;
    let flows = p.count("flows")?;
    let gap = Exp::new(load / q).expect("positive rate");
    let mut t = p.get("base");
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        t += gap.sample(rng).round();
        if t > u32::MAX as f64 {
            return Err(GenError::BadParam {
                key: "n".into(),
                message: "trace would overflow 32-bit timestamps".into(),
            });
        }
        let src = 0x0A00_0000 | (rng.random_range(0..flows) as u64 + 1);
        records.push(TraceRecord::new(t as u32, 1, 64).with(Column::IpSrc, src));
    }
    Ok(finish(vec![Column::IpSrc], records, false))
}

/// Flows realizing a grid of (size mean, size spread, packet count) targets.
///
/// Flow `i` has source `10.1.x.y`, sends its packets inside one measurement
/// window and then one more packet after the window has expired, which is
/// the packet the classifier decides on.
fn classifier_grid(p: &Params, rng: &mut ChaCha8Rng) -> Result<Trace, GenError> {
    let (nm, ns, nc) = (p.count("means")?, p.count("stds")?, p.count("counts")?);
    let (mean_min, mean_max) = (p.get("mean_min"), p.get("mean_max"));
    let std_max = p.get("std_max");
    let count_max = p.count("count_max")?;
    let window = p.positive("window")?;
    let base = p.get("base");
    let lerp = |lo: f64, hi: f64, i: usize, n: usize| {
        if n <= 1 {
            lo
        } else {
            lo + (hi - lo) * i as f64 / (n - 1) as f64
        }
    };
    let mut records = Vec::new();
    let mut flow = 0u32;
    for mi in 0..nm {
        for si in 0..ns {
            for ci in 0..nc {
                let mean = lerp(mean_min, mean_max, mi, nm);
                let std = lerp(0.0, std_max, si, ns);
                let count = lerp(1.0, count_max as f64, ci, nc).round().max(1.0) as usize;
                let src = 0x0A01_0000 | (flow + 1);
                flow += 1;
                let start = base + rng.random_range(0.0..window) * US;
                let dist = Normal::new(mean, std.max(1e-9)).expect("finite parameters");
                for k in 0..count {
                    let size = dist.sample(rng).round().clamp(20.0, 1514.0) as u32;
                    // Spread packets over the first 90% of the window.
                    let t = start + (k as f64 / count as f64) * 0.9 * window * US;
                    records.push(
                        TraceRecord::new(t as u32, 1, size)
                            .with(Column::IpSrc, src as u64)
                            .with(Column::IpDst, 0xC0A8_0001),
                    );
                }
                let decide = start + window * US + rng.random_range(1.0..1_000_000.0);
                records.push(
                    TraceRecord::new(decide as u32, 1, mean.round() as u32)
                        .with(Column::IpSrc, src as u64)
                        .with(Column::IpDst, 0xC0A8_0001),
                );
            }
        }
    }
    Ok(finish(vec![Column::IpSrc, Column::IpDst], records, false))
}
