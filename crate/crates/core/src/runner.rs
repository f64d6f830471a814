//! Trace replay: sessions, whole-trace runs, partitioned runs and verdict CSV.

use std::collections::BTreeMap;
use std::io;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::Action;
use crate::alu::DivisionMode;
use crate::engine::{overall_action, EngineError, EngineOptions, Pipeline, Verdict};
use crate::extractor::{build_record, IngestMode};
use crate::flow_context::bucket_hash;
use crate::program::Program;
use crate::stats::RunStats;
use crate::trace::{Trace, TraceRecord};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("trace is missing column `{column}` required by program `{program}`")]
    MissingColumn { column: String, program: String },
    #[error("raw mode needs a `frame` column in the trace")]
    MissingFrame,
    #[error("packet {seq}: timestamp {ts} precedes previous timestamp {prev}")]
    NonMonotone { seq: u64, ts: u32, prev: u32 },
    #[error("cannot partition: {0}")]
    NotPartitionable(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub opts: EngineOptions,
    pub partitions: usize,
    /// Record wall-clock throughput in the stats.
    pub timing: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            opts: EngineOptions::default(),
            partitions: 1,
            timing: false,
        }
    }
}

/// Checks that `trace` carries what the programs read in `mode`.
pub fn check_trace(programs: &[Arc<Program>], trace: &Trace, mode: IngestMode) -> Result<(), RunError> {
    if mode == IngestMode::Raw {
        let uses_columns = programs.iter().any(|p| !p.required_columns().is_empty());
        if uses_columns && !trace.has_frame {
            return Err(RunError::MissingFrame);
        }
        return Ok(());
    }
    for p in programs {
        for c in p.required_columns() {
            if !trace.has_column(c) {
                return Err(RunError::MissingColumn {
                    column: c.name().to_string(),
                    program: p.name.clone(),
                });
            }
        }
    }
    Ok(())
}

/// A long-lived pipeline fed packet batches, e.g. by the HTTP service.
#[derive(Debug, Clone)]
pub struct Session {
    programs: Vec<Arc<Program>>,
    pipeline: Pipeline,
    opts: EngineOptions,
    last_ts: Option<u32>,
    packets: u64,
    per_action: BTreeMap<String, u64>,
}

impl Session {
    pub fn new(programs: Vec<Arc<Program>>, opts: EngineOptions) -> Result<Session, RunError> {
        let pipeline = Pipeline::new(&programs, opts)?;
        Ok(Session {
            programs,
            pipeline,
            opts,
            last_ts: None,
            packets: 0,
            per_action: BTreeMap::new(),
        })
    }

    pub fn programs(&self) -> &[Arc<Program>] {
        &self.programs
    }

    pub fn pipeline(&self) -> &Pipeline {
        &self.pipeline
    }

    pub fn packets(&self) -> u64 {
        self.packets
    }

    /// Processes one packet; `rec` receives any header rewrites.
    pub fn feed(&mut self, rec: &mut TraceRecord) -> Result<Vec<Verdict>, RunError> {
        if let Some(prev) = self.last_ts {
            if rec.ts < prev {
                return Err(RunError::NonMonotone {
                    seq: self.packets,
                    ts: rec.ts,
                    prev,
                });
            }
        }
        self.last_ts = Some(rec.ts);
        let verdicts = self.pipeline.process(rec);
        self.packets += 1;
        *self
            .per_action
            .entry(overall_action(&verdicts).to_string())
            .or_default() += 1;
        Ok(verdicts)
    }

    /// Checks the whole batch first so a bad batch leaves the session untouched.
    pub fn feed_trace(&mut self, trace: &Trace) -> Result<Vec<Vec<Verdict>>, RunError> {
        check_trace(&self.programs, trace, self.opts.mode)?;
        let mut prev = self.last_ts;
        for (i, r) in trace.records.iter().enumerate() {
            if let Some(p) = prev {
                if r.ts < p {
                    return Err(RunError::NonMonotone {
                        seq: self.packets + i as u64,
                        ts: r.ts,
                        prev: p,
                    });
                }
            }
            prev = Some(r.ts);
        }
        trace.records.iter().map(|r| self.feed(&mut r.clone())).collect()
    }

    pub fn flush(&mut self) {
        self.pipeline.flush();
    }

    pub fn stats(&self) -> RunStats {
        RunStats {
            packets: self.packets,
            per_action: self.per_action.clone(),
            stages: self.pipeline.stages().iter().map(|s| s.stats()).collect(),
            seed: self.opts.seed,
            hazard_window: self.opts.hazard_window,
            hw_faithful_div: self.opts.division == DivisionMode::Hw16,
            mode: self.opts.mode,
            partitions: 1,
            throughput_pps: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    /// Verdicts of every stage each packet reached, in packet order.
    pub verdicts: Vec<Vec<Verdict>>,
    pub stats: RunStats,
}

impl RunOutput {
    pub fn actions(&self) -> Vec<Action> {
        self.verdicts.iter().map(|v| overall_action(v)).collect()
    }

    /// Verdicts of stage 0 only (every packet reaches it).
    pub fn first_stage(&self) -> Vec<&Verdict> {
        self.verdicts.iter().map(|v| &v[0]).collect()
    }
}

pub fn run_trace(programs: &[Arc<Program>], trace: &Trace, cfg: &RunConfig) -> Result<RunOutput, RunError> {
    check_trace(programs, trace, cfg.opts.mode)?;
    let started = Instant::now();
    let mut out = if cfg.partitions <= 1 {
        let mut session = Session::new(programs.to_vec(), cfg.opts)?;
        let verdicts = session.feed_trace(trace)?;
        session.flush();
        RunOutput {
            verdicts,
            stats: session.stats(),
        }
    } else {
        run_partitioned(programs, trace, cfg)?
    };
    if cfg.timing {
        let secs = started.elapsed().as_secs_f64();
        out.stats.throughput_pps = Some(if secs > 0.0 { trace.len() as f64 / secs } else { 0.0 });
    }
    Ok(out)
}

/// Splits the trace by lookup key across independent engines.
///
/// Equivalent to a sequential run for partitionable programs as long as no
/// table overflows; context counters become sums over the partitions.
fn run_partitioned(programs: &[Arc<Program>], trace: &Trace, cfg: &RunConfig) -> Result<RunOutput, RunError> {
    let [program] = programs else {
        return Err(RunError::NotPartitionable(
            "only single-stage runs can be partitioned".into(),
        ));
    };
    if !program.partitionable {
        return Err(RunError::NotPartitionable(format!(
            "program `{}` writes global registers or uses different lookup and update scopes",
            program.name
        )));
    }
    if cfg.opts.hazard_window > 0 {
        return Err(RunError::NotPartitionable(
            "hazard-window runs depend on global packet order".into(),
        ));
    }
    let n = cfg.partitions;
    let mut parts: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut scratch = 0;
    for (i, rec) in trace.records.iter().enumerate() {
        let pkt = build_record(rec, &program.bindings, cfg.opts.mode, &mut scratch);
        let key = program.lookup_scope.key_from(&pkt.headers);
        parts[(bucket_hash(key.0, 0x5EED) % n as u64) as usize].push(i);
    }
    type PartResult = Result<(Vec<Vec<Verdict>>, RunStats), RunError>;
    let results: Vec<PartResult> = std::thread::scope(|s| {
        let handles: Vec<_> = parts
            .iter()
            .map(|idx| {
                s.spawn(move || {
                    let mut session = Session::new(vec![Arc::clone(program)], cfg.opts)?;
                    let mut verdicts = Vec::with_capacity(idx.len());
                    for &i in idx {
                        verdicts.push(session.feed(&mut trace.records[i].clone())?);
                    }
                    session.flush();
                    Ok((verdicts, session.stats()))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("partition worker panicked"))
            .collect()
    });
    let mut merged: Vec<Option<Vec<Verdict>>> = vec![None; trace.len()];
    let mut stats: Option<RunStats> = None;
    for (idx, res) in parts.iter().zip(results) {
        let (verdicts, st) = res?;
        for (&i, mut v) in idx.iter().zip(verdicts) {
            for x in &mut v {
                x.seq = i as u64;
            }
            merged[i] = Some(v);
        }
        match stats.as_mut() {
            None => stats = Some(st),
            Some(acc) => acc.merge(&st),
        }
    }
    let mut stats = stats.unwrap_or_default();
    stats.partitions = n;
    Ok(RunOutput {
        verdicts: merged
            .into_iter()
            .map(|v| v.expect("every packet lands in one partition"))
            .collect(),
        stats,
    })
}

/// Writes one row per (packet, stage reached). The `stage` column appears
/// only for chains of more than one stage.
pub fn write_verdicts<W: io::Write>(
    writer: W,
    programs: &[Arc<Program>],
    verdicts: &[Vec<Verdict>],
) -> Result<(), csv::Error> {
    let multi = programs.len() > 1;
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["seq", "ts", "action", "pre_state", "post_state", "row_id", "cond_bits"];
    if multi {
        header.insert(0, "stage");
    }
    w.write_record(&header)?;
    for packet in verdicts {
        for v in packet {
            let p = &programs[v.stage];
            let mut row = vec![
                v.seq.to_string(),
                v.ts.to_string(),
                v.action.to_string(),
                p.state_label(v.pre_state),
                p.state_label(v.post_state),
                v.row_id.to_string(),
                v.cond.to_string(),
            ];
            if multi {
                row.insert(0, v.stage.to_string());
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn verdicts_csv(programs: &[Arc<Program>], verdicts: &[Vec<Verdict>]) -> String {
    let mut buf = Vec::new();
    write_verdicts(&mut buf, programs, verdicts).expect("in-memory CSV write");
    String::from_utf8(buf).expect("CSV is UTF-8")
}
