//! One OPP stage and stage chains.
//!
//! Per packet: extract fields, look up the flow context under the lookup
//! key, evaluate conditions, match the XFSM table on
//! `state | condition bits | match fields`, record the action, run the
//! instruction tuple on the pre-packet snapshot and write the new context
//! back under the update key. The action is part of the verdict; register
//! updates are applied after it within the same packet step.
//!
//! Housekeeping runs when a packet's timestamp enters a later management
//! period: one scan per crossed boundary, at most two (a third scan could not
//! change anything an idle entry has not already suffered).

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::Action;
use crate::alu::{compute_tuple, AluCounters, DivisionMode, Instruction, Writes};
use crate::bits::{Bits, BitsBuilder};
use crate::condition::{evaluate, ConditionVector, MAX_CONDITIONS};
use crate::extractor::{build_record, FlowKey, IngestMode, PacketRecord};
use crate::flow_context::{ContextSource, FlowContext, FlowContextTable};
use crate::frame;
use crate::operand::{FlowRegisters, OperandView, GLOBAL_REGISTERS, HEADER_SLOTS};
use crate::program::Program;
use crate::stats::StageStats;
use crate::tcam::{TcamError, TernaryEntry, TernaryTable};
use crate::trace::{Column, TraceRecord};

/// State, condition-vector and per-field prefix widths of an XFSM key.
pub const STATE_BITS: u16 = 16;
pub const COND_BITS: u16 = MAX_CONDITIONS as u16;
pub const MATCH_FIELD_BITS: u16 = 32;
pub const DEFAULT_XFSM_WIDTH: u16 = 160;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("XFSM table: {0}")]
    Tcam(#[from] TcamError),
    #[error("program has no stages")]
    EmptyChain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HeaderMatch {
    pub slot: u8,
    pub value: u32,
    pub mask: u32,
}

/// One transition. `state == None` matches any state; `next_state == None`
/// keeps the current one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct XfsmRow {
    pub id: usize,
    pub priority: u32,
    pub state: Option<u16>,
    /// Bit i constrains condition c_i.
    pub cond_value: u8,
    pub cond_mask: u8,
    pub header: Vec<HeaderMatch>,
    pub next_state: Option<u16>,
    pub action: Action,
    pub instructions: Vec<Instruction>,
}

impl XfsmRow {
    pub fn matches(&self, state: u16, cond: ConditionVector, headers: &[u32; HEADER_SLOTS]) -> bool {
        self.state.is_none_or(|s| s == state)
            && cond.0 & self.cond_mask == self.cond_value & self.cond_mask
            && self
                .header
                .iter()
                .all(|m| headers[m.slot as usize] & m.mask == m.value & m.mask)
    }

    pub fn is_catch_all(&self) -> bool {
        self.state.is_none() && self.cond_mask == 0 && self.header.iter().all(|m| m.mask == 0)
    }

    pub fn tcam_entry(&self, match_slots: &[u8], width: u16) -> TernaryEntry<usize> {
        let mut value = BitsBuilder::new(width);
        let mut mask = BitsBuilder::new(width);
        value.push(self.state.unwrap_or(0) as u64, STATE_BITS);
        mask.push(if self.state.is_some() { 0xFFFF } else { 0 }, STATE_BITS);
        value.push(self.cond_value.reverse_bits() as u64, COND_BITS);
        mask.push(self.cond_mask.reverse_bits() as u64, COND_BITS);
        for slot in match_slots {
            let m = self.header.iter().find(|m| m.slot == *slot);
            value.push(m.map_or(0, |m| m.value) as u64, MATCH_FIELD_BITS);
            mask.push(m.map_or(0, |m| m.mask) as u64, MATCH_FIELD_BITS);
        }
        TernaryEntry::new(value.finish(), mask.finish(), self.priority, self.id)
    }
}

/// Search key: state (16) | c0..c7 (8) | match fields (32 each), zero padded.
pub fn xfsm_key(
    state: u16,
    cond: ConditionVector,
    headers: &[u32; HEADER_SLOTS],
    match_slots: &[u8],
    width: u16,
) -> Bits {
    let mut b = BitsBuilder::new(width);
    b.push(state as u64, STATE_BITS);
    b.push(cond.0.reverse_bits() as u64, COND_BITS);
    for slot in match_slots {
        b.push(headers[*slot as usize] as u64, MATCH_FIELD_BITS);
    }
    b.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineOptions {
    pub seed: u64,
    /// Number of following packets that do not yet see a packet's state update.
    pub hazard_window: u32,
    pub division: DivisionMode,
    pub mode: IngestMode,
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions {
            seed: 0,
            hazard_window: 0,
            division: DivisionMode::Full32,
            mode: IngestMode::Csv,
        }
    }
}

/// Outcome of one packet in one stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub stage: usize,
    pub seq: u64,
    pub ts: u32,
    pub action: Action,
    pub pre_state: u16,
    pub post_state: u16,
    pub row_id: usize,
    pub cond: ConditionVector,
    pub source: ContextSource,
    pub pre_regs: FlowRegisters,
    pub post_regs: FlowRegisters,
}

#[derive(Debug, Clone)]
struct PendingWrite {
    apply_at: u64,
    key: FlowKey,
    ctx: FlowContext,
    writes: Writes,
}

#[derive(Debug, Clone)]
pub struct Stage {
    index: usize,
    program: Arc<Program>,
    opts: EngineOptions,
    table: FlowContextTable,
    xfsm: TernaryTable<usize>,
    globals: [u32; GLOBAL_REGISTERS],
    alu: AluCounters,
    truncations: u64,
    epoch: Option<u64>,
    scans: u64,
    pending: VecDeque<PendingWrite>,
    seq: u64,
    per_action: BTreeMap<String, u64>,
    per_transition: BTreeMap<String, u64>,
}

impl Stage {
    pub fn new(program: Arc<Program>, opts: EngineOptions) -> Result<Stage, EngineError> {
        Stage::with_index(program, opts, 0)
    }

    fn with_index(program: Arc<Program>, opts: EngineOptions, index: usize) -> Result<Stage, EngineError> {
        let seed = opts.seed.wrapping_add(index as u64);
        let mut table = FlowContextTable::new(program.tables, seed);
        for fb in &program.fallback {
            table.install_fallback(*fb)?;
        }
        let mut xfsm = TernaryTable::new(program.xfsm_width, program.xfsm_capacity);
        for row in &program.rows {
            xfsm.insert(row.tcam_entry(&program.match_slots, program.xfsm_width))?;
        }
        Ok(Stage {
            index,
            globals: program.globals,
            program,
            opts,
            table,
            xfsm,
            alu: AluCounters::default(),
            truncations: 0,
            epoch: None,
            scans: 0,
            pending: VecDeque::new(),
            seq: 0,
            per_action: BTreeMap::new(),
            per_transition: BTreeMap::new(),
        })
    }

    pub fn program(&self) -> &Arc<Program> {
        &self.program
    }

    pub fn options(&self) -> &EngineOptions {
        &self.opts
    }

    pub fn globals(&self) -> &[u32; GLOBAL_REGISTERS] {
        &self.globals
    }

    pub fn table(&self) -> &FlowContextTable {
        &self.table
    }

    pub fn packets(&self) -> u64 {
        self.seq
    }

    fn apply_due(&mut self, upto: u64) {
        while self.pending.front().is_some_and(|p| p.apply_at <= upto) {
            let p = self.pending.pop_front().expect("front exists");
            self.table.write_back(p.key, p.ctx);
            p.writes.apply_global(&mut self.globals);
        }
    }

    /// Applies writes still held back by the hazard window.
    pub fn flush(&mut self) {
        self.apply_due(u64::MAX);
    }

    fn clock(&mut self, ts: u32) {
        let period = self.program.management_period;
        if period == 0 {
            return;
        }
        let epoch = (ts / period) as u64;
        match self.epoch {
            None => self.epoch = Some(epoch),
            Some(prev) if epoch > prev => {
                for _ in 0..(epoch - prev).min(2) {
                    self.table.housekeep();
                    self.scans += 1;
                }
                self.epoch = Some(epoch);
            }
            Some(_) => {}
        }
    }

    /// Extracts fields from `rec`, processes the packet and applies any
    /// SET_DSCP rewrite to `rec` so later stages see it.
    pub fn process(&mut self, rec: &mut TraceRecord) -> Verdict {
        let pkt = build_record(rec, &self.program.bindings, self.opts.mode, &mut self.truncations);
        let verdict = self.process_packet(&pkt);
        if let Action::SetDscp { dscp, .. } = verdict.action {
            rec.set(Column::Dscp, dscp as u64);
            if let Some(f) = rec.frame.as_mut() {
                frame::set_dscp(f, dscp);
            }
        }
        verdict
    }

    pub fn process_packet(&mut self, pkt: &PacketRecord) -> Verdict {
        let seq = self.seq;
        self.seq += 1;
        self.apply_due(seq);
        self.clock(pkt.ts);

        let prog = Arc::clone(&self.program);
        let lookup_key = prog.lookup_scope.key_from(&pkt.headers);
        let (ctx, source) = self.table.lookup(lookup_key);
        let view = OperandView {
            flow: &ctx.regs,
            global: &self.globals,
            header: &pkt.headers,
        };
        let cond = evaluate(&prog.conditions, &view);
        let key = xfsm_key(ctx.state, cond, &pkt.headers, &prog.match_slots, prog.xfsm_width);
        let row_idx = *self
            .xfsm
            .lookup(&key)
            .expect("key width equals table width")
            .expect("validated programs carry a catch-all row");
        let row = &prog.rows[row_idx];
        let writes = compute_tuple(&row.instructions, &view, self.opts.division, &mut self.alu);

        let mut regs = ctx.regs;
        writes.apply_flow(&mut regs);
        let next = FlowContext::new(row.next_state.unwrap_or(ctx.state), regs);
        let update_key = prog.update_scope.key_from(&pkt.headers);
        if self.opts.hazard_window == 0 {
            writes.apply_global(&mut self.globals);
            self.table.write_back(update_key, next);
        } else {
            self.pending.push_back(PendingWrite {
                apply_at: seq + self.opts.hazard_window as u64 + 1,
                key: update_key,
                ctx: next,
                writes,
            });
        }

        *self.per_action.entry(row.action.to_string()).or_default() += 1;
        *self
            .per_transition
            .entry(format!("{}:{}", prog.state_label(ctx.state), row.id))
            .or_default() += 1;

        Verdict {
            stage: self.index,
            seq,
            ts: pkt.ts,
            action: row.action,
            pre_state: ctx.state,
            post_state: next.state,
            row_id: row.id,
            cond,
            source,
            pre_regs: ctx.regs,
            post_regs: regs,
        }
    }

    pub fn stats(&self) -> StageStats {
        StageStats {
            program: self.program.name.clone(),
            packets: self.seq,
            per_action: self.per_action.clone(),
            per_transition: self.per_transition.clone(),
            context: *self.table.stats(),
            housekeeping_scans: self.scans,
            div_by_zero: self.alu.div_by_zero,
            ewma_time_reversal: self.alu.ewma_time_reversal,
            truncations: self.truncations,
            hash_seeds: self.table.seeds().iter().map(|s| format!("{s:016x}")).collect(),
            globals: self.globals,
        }
    }
}

/// Stages applied in order; a DROP suppresses the remaining stages.
#[derive(Debug, Clone)]
pub struct Pipeline {
    stages: Vec<Stage>,
}

impl Pipeline {
    pub fn new(programs: &[Arc<Program>], opts: EngineOptions) -> Result<Pipeline, EngineError> {
        if programs.is_empty() {
            return Err(EngineError::EmptyChain);
        }
        let stages = programs
            .iter()
            .enumerate()
            .map(|(i, p)| Stage::with_index(Arc::clone(p), opts, i))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Pipeline { stages })
    }

    pub fn single(program: Arc<Program>, opts: EngineOptions) -> Result<Pipeline, EngineError> {
        Pipeline::new(&[program], opts)
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn stage(&self, i: usize) -> &Stage {
        &self.stages[i]
    }

    /// Verdicts of the stages the packet reached, in stage order.
    pub fn process(&mut self, rec: &mut TraceRecord) -> Vec<Verdict> {
        let mut out = Vec::with_capacity(self.stages.len());
        for stage in &mut self.stages {
            let v = stage.process(rec);
            let dropped = v.action.is_drop();
            out.push(v);
            if dropped {
                break;
            }
        }
        out
    }

    pub fn flush(&mut self) {
        for s in &mut self.stages {
            s.flush();
        }
    }
}

/// The packet-level action of a chain: DROP if any stage dropped, otherwise
/// the last action other than NONE.
pub fn overall_action(verdicts: &[Verdict]) -> Action {
    if verdicts.iter().any(|v| v.action.is_drop()) {
        return Action::Drop;
    }
    verdicts
        .iter()
        .rev()
        .map(|v| v.action)
        .find(|a| *a != Action::None)
        .unwrap_or(Action::None)
}
