//! Update logic block: instruction set, 32-bit encoding and parallel execution.
//!
//! Instruction word layout (bit 31 on the left):
//!
//! ```text
//!  31      24 23  20 19  16 15  12 11   8 7       0
//! +----------+------+------+------+------+---------+
//! |  opcode  |  f0  |  f1  |  f2  |  f3  |    0    |   register forms
//! +----------+------+------+------+------+---------+
//! |  opcode  |  f0  |  f1  |      immediate (16)    |   immediate forms
//! +----------+------+------+------------------------+
//! ```
//!
//! | mnemonic            | f0     | f1    | f2     | f3     |
//! |---------------------|--------|-------|--------|--------|
//! | `NOT out a`         | out    | a     | 0      | 0      |
//! | `ADD out a b` etc.  | out    | a     | b      | 0      |
//! | `ADDI out a imm`    | out    | a     | imm    |        |
//! | `AVG n mean x`      | n      | mean  | x      | 0      |
//! | `VAR n mean var x`  | n      | mean  | var    | x      |
//! | `EWMA ts acc now x` | ts     | acc   | now    | x      |
//!
//! Unused fields must be zero; a word with stray bits does not decode.
//!
//! All instructions of a tuple read the same pre-transition snapshot and
//! their writes commit together. The multi-line `avg`, `var` and `ewma`
//! recurrences are likewise evaluated with every right-hand side taken from
//! the snapshot, so `ewma` sees the elapsed time before it overwrites the
//! stored timestamp and `avg` divides by the new sample count.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::operand::{FlowRegisters, Operand, OperandView, RegisterLayout, GLOBAL_REGISTERS, HEADER_SLOTS};

pub const MAX_TUPLE_LEN: usize = 5;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum InstructionError {
    #[error("unknown opcode 0x{0:02x}")]
    UnknownOpcode(u8),
    #[error("reserved bits set in 0x{0:08x}")]
    ReservedBits(u32),
    #[error("output operand {0} is not writable")]
    ReadOnlyOutput(Operand),
    #[error("operand {0} not addressable in the {1:?} layout")]
    Unaddressable(Operand, RegisterLayout),
    #[error("instruction writes {0} twice")]
    DuplicateOutput(Operand),
    #[error("cannot parse instruction `{0}`: {1}")]
    Syntax(String, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Xor,
    And,
    Or,
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ImmOp {
    Addi,
    Subi,
    Muli,
    Divi,
    Lsl,
    Lsr,
    Ror,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Instruction {
    Nop,
    Not {
        out: Operand,
        a: Operand,
    },
    Bin {
        op: BinOp,
        out: Operand,
        a: Operand,
        b: Operand,
    },
    Imm {
        op: ImmOp,
        out: Operand,
        a: Operand,
        imm: u16,
    },
    Avg {
        count: Operand,
        mean: Operand,
        sample: Operand,
    },
    Var {
        count: Operand,
        mean: Operand,
        var: Operand,
        sample: Operand,
    },
    Ewma {
        last_ts: Operand,
        acc: Operand,
        now: Operand,
        sample: Operand,
    },
}

const BIN_OPS: [(BinOp, u8, &str); 7] = [
    (BinOp::Xor, 0x02, "XOR"),
    (BinOp::And, 0x03, "AND"),
    (BinOp::Or, 0x04, "OR"),
    (BinOp::Add, 0x10, "ADD"),
    (BinOp::Sub, 0x11, "SUB"),
    (BinOp::Mul, 0x12, "MUL"),
    (BinOp::Div, 0x13, "DIV"),
];

const IMM_OPS: [(ImmOp, u8, &str); 7] = [
    (ImmOp::Addi, 0x14, "ADDI"),
    (ImmOp::Subi, 0x15, "SUBI"),
    (ImmOp::Muli, 0x16, "MULI"),
    (ImmOp::Divi, 0x17, "DIVI"),
    (ImmOp::Lsl, 0x20, "LSL"),
    (ImmOp::Lsr, 0x21, "LSR"),
    (ImmOp::Ror, 0x22, "ROR"),
];

const OP_NOP: u8 = 0x00;
const OP_NOT: u8 = 0x01;
const OP_AVG: u8 = 0x30;
const OP_VAR: u8 = 0x31;
const OP_EWMA: u8 = 0x32;

impl BinOp {
    fn opcode(self) -> u8 {
        BIN_OPS.iter().find(|(o, _, _)| *o == self).unwrap().1
    }
    fn mnemonic(self) -> &'static str {
        BIN_OPS.iter().find(|(o, _, _)| *o == self).unwrap().2
    }
}

impl ImmOp {
    fn opcode(self) -> u8 {
        IMM_OPS.iter().find(|(o, _, _)| *o == self).unwrap().1
    }
    fn mnemonic(self) -> &'static str {
        IMM_OPS.iter().find(|(o, _, _)| *o == self).unwrap().2
    }
}

impl Instruction {
    pub fn opcode(&self) -> u8 {
        match self {
            Instruction::Nop => OP_NOP,
            Instruction::Not { .. } => OP_NOT,
            Instruction::Bin { op, .. } => op.opcode(),
            Instruction::Imm { op, .. } => op.opcode(),
            Instruction::Avg { .. } => OP_AVG,
            Instruction::Var { .. } => OP_VAR,
            Instruction::Ewma { .. } => OP_EWMA,
        }
    }

    /// Registers this instruction writes.
    pub fn outputs(&self) -> Vec<Operand> {
        match *self {
            Instruction::Nop => vec![],
            Instruction::Not { out, .. } | Instruction::Bin { out, .. } | Instruction::Imm { out, .. } => vec![out],
            Instruction::Avg { count, mean, .. } => vec![count, mean],
            Instruction::Var { count, mean, var, .. } => vec![count, mean, var],
            Instruction::Ewma { last_ts, acc, .. } => vec![last_ts, acc],
        }
    }

    /// Every operand the instruction references, outputs included.
    pub fn operands(&self) -> Vec<Operand> {
        match *self {
            Instruction::Nop => vec![],
            Instruction::Not { out, a } => vec![out, a],
            Instruction::Bin { out, a, b, .. } => vec![out, a, b],
            Instruction::Imm { out, a, .. } => vec![out, a],
            Instruction::Avg { count, mean, sample } => vec![count, mean, sample],
            Instruction::Var {
                count,
                mean,
                var,
                sample,
            } => vec![count, mean, var, sample],
            Instruction::Ewma {
                last_ts,
                acc,
                now,
                sample,
            } => vec![last_ts, acc, now, sample],
        }
    }

    /// Checks writability, addressability and per-instruction output overlap.
    pub fn validate(&self, layout: RegisterLayout) -> Result<(), InstructionError> {
        for op in self.operands() {
            if !layout.addresses(op) {
                return Err(InstructionError::Unaddressable(op, layout));
            }
        }
        let outs = self.outputs();
        for (i, out) in outs.iter().enumerate() {
            if !out.is_writable() {
                return Err(InstructionError::ReadOnlyOutput(*out));
            }
            if outs[..i].contains(out) {
                return Err(InstructionError::DuplicateOutput(*out));
            }
        }
        Ok(())
    }

    pub fn encode(&self, layout: RegisterLayout) -> Result<u32, InstructionError> {
        self.validate(layout)?;
        let sel = |op: Operand| layout.selector(op).unwrap() as u32;
        let word = |f: [u32; 4]| (self.opcode() as u32) << 24 | f[0] << 20 | f[1] << 16 | f[2] << 12 | f[3] << 8;
        Ok(match *self {
            Instruction::Nop => 0,
            Instruction::Not { out, a } => word([sel(out), sel(a), 0, 0]),
            Instruction::Bin { out, a, b, .. } => word([sel(out), sel(a), sel(b), 0]),
            Instruction::Imm { out, a, imm, .. } => word([sel(out), sel(a), 0, 0]) | imm as u32,
            Instruction::Avg { count, mean, sample } => word([sel(count), sel(mean), sel(sample), 0]),
            Instruction::Var {
                count,
                mean,
                var,
                sample,
            } => word([sel(count), sel(mean), sel(var), sel(sample)]),
            Instruction::Ewma {
                last_ts,
                acc,
                now,
                sample,
            } => word([sel(last_ts), sel(acc), sel(now), sel(sample)]),
        })
    }

    pub fn decode(word: u32, layout: RegisterLayout) -> Result<Self, InstructionError> {
        let opcode = (word >> 24) as u8;
        let f = |i: u32| layout.operand(((word >> (20 - 4 * i)) & 0xF) as u8);
        let low8 = word & 0xFF;
        let reserved = |mask: u32| {
            if word & mask != 0 {
                Err(InstructionError::ReservedBits(word))
            } else {
                Ok(())
            }
        };
        let insn = match opcode {
            OP_NOP => {
                reserved(0x00FF_FFFF)?;
                Instruction::Nop
            }
            OP_NOT => {
                reserved(0xFFFF)?;
                Instruction::Not { out: f(0), a: f(1) }
            }
            OP_AVG => {
                reserved(0x0F00 | low8)?;
                Instruction::Avg {
                    count: f(0),
                    mean: f(1),
                    sample: f(2),
                }
            }
            OP_VAR => {
                reserved(low8)?;
                Instruction::Var {
                    count: f(0),
                    mean: f(1),
                    var: f(2),
                    sample: f(3),
                }
            }
            OP_EWMA => {
                reserved(low8)?;
                Instruction::Ewma {
                    last_ts: f(0),
                    acc: f(1),
                    now: f(2),
                    sample: f(3),
                }
            }
            code => {
                if let Some((op, _, _)) = BIN_OPS.iter().find(|(_, c, _)| *c == code) {
                    reserved(0x0F00 | low8)?;
                    Instruction::Bin {
                        op: *op,
                        out: f(0),
                        a: f(1),
                        b: f(2),
                    }
                } else if let Some((op, _, _)) = IMM_OPS.iter().find(|(_, c, _)| *c == code) {
                    Instruction::Imm {
                        op: *op,
                        out: f(0),
                        a: f(1),
                        imm: word as u16,
                    }
                } else {
                    return Err(InstructionError::UnknownOpcode(code));
                }
            }
        };
        insn.validate(layout)?;
        Ok(insn)
    }

    /// Parses mnemonic form (`ADD R0 R0 G1`) or a packed hex word (`0x10045000`).
    pub fn parse(text: &str, layout: RegisterLayout) -> Result<Self, InstructionError> {
        let syntax = |msg: &str| InstructionError::Syntax(text.to_string(), msg.to_string());
        let cleaned = text.replace(',', " ");
        let toks: Vec<&str> = cleaned.split_whitespace().collect();
        let Some(head) = toks.first() else {
            return Err(syntax("empty"));
        };
        if toks.len() == 1 && (head.starts_with("0x") || head.starts_with("0X")) {
            let word = u32::from_str_radix(&head[2..], 16).map_err(|e| syntax(&e.to_string()))?;
            return Instruction::decode(word, layout);
        }
        let operand = |i: usize| -> Result<Operand, InstructionError> {
            toks.get(i)
                .ok_or_else(|| syntax("missing operand"))?
                .parse::<Operand>()
                .map_err(|e| syntax(&e))
        };
        let arity = |n: usize| {
            if toks.len() != n + 1 {
                Err(syntax(&format!("expected {n} operands")))
            } else {
                Ok(())
            }
        };
        let name = head.to_ascii_uppercase();
        let insn = match name.as_str() {
            "NOP" => {
                arity(0)?;
                Instruction::Nop
            }
            "NOT" => {
                arity(2)?;
                Instruction::Not {
                    out: operand(1)?,
                    a: operand(2)?,
                }
            }
            "AVG" => {
                arity(3)?;
                Instruction::Avg {
                    count: operand(1)?,
                    mean: operand(2)?,
                    sample: operand(3)?,
                }
            }
            "VAR" => {
                arity(4)?;
                Instruction::Var {
                    count: operand(1)?,
                    mean: operand(2)?,
                    var: operand(3)?,
                    sample: operand(4)?,
                }
            }
            "EWMA" => {
                arity(4)?;
                Instruction::Ewma {
                    last_ts: operand(1)?,
                    acc: operand(2)?,
                    now: operand(3)?,
                    sample: operand(4)?,
                }
            }
            other => {
                if let Some((op, _, _)) = BIN_OPS.iter().find(|(_, _, m)| *m == other) {
                    arity(3)?;
                    Instruction::Bin {
                        op: *op,
                        out: operand(1)?,
                        a: operand(2)?,
                        b: operand(3)?,
                    }
                } else if let Some((op, _, _)) = IMM_OPS.iter().find(|(_, _, m)| *m == other) {
                    arity(3)?;
                    let imm = parse_u16(toks[3]).ok_or_else(|| syntax("bad immediate"))?;
                    Instruction::Imm {
                        op: *op,
                        out: operand(1)?,
                        a: operand(2)?,
                        imm,
                    }
                } else {
                    return Err(syntax("unknown mnemonic"));
                }
            }
        };
        insn.validate(layout)?;
        Ok(insn)
    }
}

fn parse_u16(s: &str) -> Option<u16> {
    if let Some(hex) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        u16::from_str_radix(hex, 16).ok()
    } else {
        s.parse().ok()
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Instruction::Nop => write!(f, "NOP"),
            Instruction::Not { out, a } => write!(f, "NOT {out} {a}"),
            Instruction::Bin { op, out, a, b } => write!(f, "{} {out} {a} {b}", op.mnemonic()),
            Instruction::Imm { op, out, a, imm } => write!(f, "{} {out} {a} {imm}", op.mnemonic()),
            Instruction::Avg { count, mean, sample } => write!(f, "AVG {count} {mean} {sample}"),
            Instruction::Var {
                count,
                mean,
                var,
                sample,
            } => write!(f, "VAR {count} {mean} {var} {sample}"),
            Instruction::Ewma {
                last_ts,
                acc,
                now,
                sample,
            } => write!(f, "EWMA {last_ts} {acc} {now} {sample}"),
        }
    }
}

/// Width of the divider.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivisionMode {
    /// Full 32-bit truncating division.
    #[default]
    Full32,
    /// Dividend and divisor truncated to their low 16 bits, as in the
    /// two-cycle hardware divider.
    Hw16,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AluCounters {
    pub div_by_zero: u64,
    pub ewma_time_reversal: u64,
}

impl AluCounters {
    pub fn merge(&mut self, other: &AluCounters) {
        self.div_by_zero += other.div_by_zero;
        self.ewma_time_reversal += other.ewma_time_reversal;
    }
}

/// Unsigned division with the configured width. `None` on a zero divisor.
fn divide(num: u64, den: u64, mode: DivisionMode) -> Option<u64> {
    let (num, den) = match mode {
        DivisionMode::Full32 => (num, den),
        DivisionMode::Hw16 => (num & 0xFFFF, den & 0xFFFF),
    };
    num.checked_div(den)
}

/// Signed numerator over an unsigned divisor, rounding toward zero.
fn divide_signed(num: i64, den: u64, mode: DivisionMode, counters: &mut AluCounters) -> i64 {
    match divide(num.unsigned_abs(), den, mode) {
        Some(q) => {
            let q = q as i64;
            if num < 0 {
                -q
            } else {
                q
            }
        }
        None => {
            counters.div_by_zero += 1;
            0
        }
    }
}

pub fn exec_basic(op: BinOp, a: u32, b: u32, mode: DivisionMode, counters: &mut AluCounters) -> u32 {
    match op {
        BinOp::Xor => a ^ b,
        BinOp::And => a & b,
        BinOp::Or => a | b,
        BinOp::Add => a.wrapping_add(b),
        BinOp::Sub => a.wrapping_sub(b),
        BinOp::Mul => a.wrapping_mul(b),
        BinOp::Div => match divide(a as u64, b as u64, mode) {
            Some(q) => q as u32,
            None => {
                counters.div_by_zero += 1;
                0
            }
        },
    }
}

pub fn exec_imm(op: ImmOp, a: u32, imm: u16, mode: DivisionMode, counters: &mut AluCounters) -> u32 {
    let imm32 = imm as u32;
    match op {
        ImmOp::Addi => exec_basic(BinOp::Add, a, imm32, mode, counters),
        ImmOp::Subi => exec_basic(BinOp::Sub, a, imm32, mode, counters),
        ImmOp::Muli => exec_basic(BinOp::Mul, a, imm32, mode, counters),
        ImmOp::Divi => exec_basic(BinOp::Div, a, imm32, mode, counters),
        ImmOp::Lsl => a << (imm32 % 32),
        ImmOp::Lsr => a >> (imm32 % 32),
        ImmOp::Ror => a.rotate_right(imm32 % 32),
    }
}

/// Running mean: returns `(count + 1, mean + (sample - mean) / (count + 1))`.
pub fn exec_avg(count: u32, mean: u32, sample: u32, mode: DivisionMode, counters: &mut AluCounters) -> (u32, u32) {
    let n = count as u64 + 1;
    let delta = sample as i64 - mean as i64;
    let step = divide_signed(delta, n, mode, counters);
    (count.wrapping_add(1), (mean as i64 + step) as u32)
}

/// Running variance recurrence; every right-hand side reads the snapshot.
pub fn exec_var(
    count: u32,
    mean: u32,
    var: u32,
    sample: u32,
    mode: DivisionMode,
    counters: &mut AluCounters,
) -> (u32, u32, u32) {
    let (count2, mean2) = exec_avg(count, mean, sample, mode, counters);
    let n = count as u64 + 1;
    let dev = sample.abs_diff(mean);
    let sq = dev.wrapping_mul(dev);
    let step = divide_signed(sq as i64 - var as i64, n, mode, counters);
    (count2, mean2, (var as i64 + step) as u32)
}

/// Shift-decayed moving sum: `acc >> (now - last_ts) + sample`.
///
/// A timestamp older than `last_ts` counts as zero elapsed time and bumps
/// the time-reversal counter. Thirty-two or more elapsed ticks clear the
/// history.
pub fn exec_ewma(last_ts: u32, acc: u32, now: u32, sample: u32, counters: &mut AluCounters) -> (u32, u32) {
    let elapsed = if now >= last_ts {
        now - last_ts
    } else {
        counters.ewma_time_reversal += 1;
        0
    };
    let decayed = if elapsed >= 32 { 0 } else { acc >> elapsed };
    (now, decayed.wrapping_add(sample))
}

/// Pending register writes produced by one tuple.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Writes {
    items: [(Operand, u32); MAX_TUPLE_LEN * 3],
    len: usize,
}

impl Default for Writes {
    fn default() -> Self {
        Writes {
            items: [(Operand::Flow(0), 0); MAX_TUPLE_LEN * 3],
            len: 0,
        }
    }
}

impl Writes {
    fn push(&mut self, op: Operand, value: u32) {
        self.items[self.len] = (op, value);
        self.len += 1;
    }

    pub fn iter(&self) -> impl Iterator<Item = &(Operand, u32)> {
        self.items[..self.len].iter()
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn apply_flow(&self, flow: &mut FlowRegisters) {
        for (op, v) in self.iter() {
            if let Operand::Flow(i) = op {
                flow[*i as usize] = *v;
            }
        }
    }

    pub fn apply_global(&self, global: &mut [u32; GLOBAL_REGISTERS]) {
        for (op, v) in self.iter() {
            if let Operand::Global(i) = op {
                global[*i as usize] = *v;
            }
        }
    }

    pub fn writes_globals(&self) -> bool {
        self.iter().any(|(op, _)| matches!(op, Operand::Global(_)))
    }
}

/// Computes every instruction against the same snapshot; commit is up to the caller.
pub fn compute_tuple(
    tuple: &[Instruction],
    view: &OperandView<'_>,
    mode: DivisionMode,
    counters: &mut AluCounters,
) -> Writes {
    let mut w = Writes::default();
    for insn in tuple {
        match *insn {
            Instruction::Nop => {}
            Instruction::Not { out, a } => w.push(out, !view.get(a)),
            Instruction::Bin { op, out, a, b } => w.push(out, exec_basic(op, view.get(a), view.get(b), mode, counters)),
            Instruction::Imm { op, out, a, imm } => w.push(out, exec_imm(op, view.get(a), imm, mode, counters)),
            Instruction::Avg { count, mean, sample } => {
                let (n, m) = exec_avg(view.get(count), view.get(mean), view.get(sample), mode, counters);
                w.push(count, n);
                w.push(mean, m);
            }
            Instruction::Var {
                count,
                mean,
                var,
                sample,
            } => {
                let (n, m, v) = exec_var(
                    view.get(count),
                    view.get(mean),
                    view.get(var),
                    view.get(sample),
                    mode,
                    counters,
                );
                w.push(count, n);
                w.push(mean, m);
                w.push(var, v);
            }
            Instruction::Ewma {
                last_ts,
                acc,
                now,
                sample,
            } => {
                let (t, a) = exec_ewma(
                    view.get(last_ts),
                    view.get(acc),
                    view.get(now),
                    view.get(sample),
                    counters,
                );
                w.push(last_ts, t);
                w.push(acc, a);
            }
        }
    }
    w
}

/// Executes a validated tuple in place with snapshot semantics.
pub fn execute_tuple(
    tuple: &[Instruction],
    flow: &mut FlowRegisters,
    global: &mut [u32; GLOBAL_REGISTERS],
    header: &[u32; HEADER_SLOTS],
    mode: DivisionMode,
    counters: &mut AluCounters,
) {
    let writes = {
        let view = OperandView { flow, global, header };
        compute_tuple(tuple, &view, mode, counters)
    };
    writes.apply_flow(flow);
    writes.apply_global(global);
}

/// Tuple-level validation: length bound and no destination written twice.
pub fn validate_tuple(tuple: &[Instruction], layout: RegisterLayout) -> Result<(), InstructionError> {
    if tuple.len() > MAX_TUPLE_LEN {
        return Err(InstructionError::Syntax(
            format!("{} instructions", tuple.len()),
            format!("at most {MAX_TUPLE_LEN} per transition"),
        ));
    }
    let mut seen = Vec::new();
    for insn in tuple {
        insn.validate(layout)?;
        for out in insn.outputs() {
            if seen.contains(&out) {
                return Err(InstructionError::DuplicateOutput(out));
            }
            seen.push(out);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const STD: RegisterLayout = RegisterLayout::Standard;

    fn p(s: &str) -> Instruction {
        Instruction::parse(s, STD).unwrap()
    }

    fn run(tuple: &[&str], flow: &mut FlowRegisters, global: &mut [u32; 4]) -> AluCounters {
        let tuple: Vec<_> = tuple.iter().map(|s| p(s)).collect();
        validate_tuple(&tuple, STD).unwrap();
        let mut c = AluCounters::default();
        execute_tuple(&tuple, flow, global, &[0; 8], DivisionMode::Full32, &mut c);
        c
    }

    #[test]
    fn basic_add() {
        let mut r = [0; 8];
        r[0] = 3;
        let mut g = [0, 4, 0, 0];
        run(&["ADD R0 R0 G1"], &mut r, &mut g);
        assert_eq!(r[0], 7);
    }

    #[test]
    fn snapshot_semantics() {
        let mut r = [0; 8];
        r[0] = 5;
        let mut g = [2, 0, 0, 0];
        run(&["ADDI R0 R0 1", "SUB R1 R0 G0"], &mut r, &mut g);
        assert_eq!((r[0], r[1]), (6, 3));
    }

    #[test]
    fn empty_and_nop_tuples_are_identity() {
        let mut r = [1, 2, 3, 4, 0, 0, 0, 0];
        let mut g = [5, 6, 7, 8];
        run(&[], &mut r, &mut g);
        run(&["NOP", "NOP"], &mut r, &mut g);
        assert_eq!(r, [1, 2, 3, 4, 0, 0, 0, 0]);
        assert_eq!(g, [5, 6, 7, 8]);
    }

    #[test]
    fn basic_edge_cases() {
        let mut c = AluCounters::default();
        let m = DivisionMode::Full32;
        // 2^32 modular oracle: (3 - 5) mod 2^32.
        let expect = ((3i64 - 5).rem_euclid(1 << 32)) as u32;
        assert_eq!(exec_imm(ImmOp::Subi, 3, 5, m, &mut c), expect);
        assert_eq!(expect, 0xFFFF_FFFE);
        assert_eq!(exec_basic(BinOp::Div, 7, 2, m, &mut c), 3);
        assert_eq!(exec_imm(ImmOp::Ror, 1, 1, m, &mut c), 0x8000_0000);
        assert_eq!(exec_imm(ImmOp::Lsl, 1, 33, m, &mut c), 2);
        assert_eq!(exec_basic(BinOp::Mul, 0x1_0000, 0x1_0000, m, &mut c), 0);
        assert_eq!(c.div_by_zero, 0);
        assert_eq!(exec_basic(BinOp::Div, 7, 0, m, &mut c), 0);
        assert_eq!(c.div_by_zero, 1);
    }

    #[test]
    fn not_is_complement() {
        let mut r = [0; 8];
        r[1] = 0x0F0F_0000;
        run(&["NOT R0 R1"], &mut r, &mut [0; 4]);
        assert_eq!(r[0], 0xF0F0_FFFF);
    }

    #[test]
    fn hw16_division() {
        let mut c = AluCounters::default();
        assert_eq!(exec_basic(BinOp::Div, 0x1_0008, 2, DivisionMode::Hw16, &mut c), 4);
        assert_eq!(exec_basic(BinOp::Div, 8, 0x1_0000, DivisionMode::Hw16, &mut c), 0);
        assert_eq!(c.div_by_zero, 1);
    }

    #[test]
    fn avg_examples() {
        let mut c = AluCounters::default();
        let m = DivisionMode::Full32;
        assert_eq!(exec_avg(0, 0, 10, m, &mut c), (1, 10));
        assert_eq!(exec_avg(1, 10, 20, m, &mut c), (2, 15));
        assert_eq!(exec_avg(7, 42, 42, m, &mut c), (8, 42));
        // Negative step truncates toward zero: 15 + (10 - 15) / 3 = 15 - 1.
        assert_eq!(exec_avg(2, 15, 10, m, &mut c), (3, 14));
    }

    #[test]
    fn var_examples() {
        let mut c = AluCounters::default();
        let m = DivisionMode::Full32;
        assert_eq!(exec_var(0, 0, 0, 10, m, &mut c), (1, 10, 100));
        assert_eq!(exec_var(4, 9, 0, 9, m, &mut c), (5, 9, 0));
    }

    #[test]
    fn var_constant_stream_decreases() {
        let mut c = AluCounters::default();
        let (mut n, mut mean, mut var) = (0, 0, 0);
        let mut history = Vec::new();
        for _ in 0..100 {
            (n, mean, var) = exec_var(n, mean, var, 1000, DivisionMode::Full32, &mut c);
            history.push(var);
        }
        assert_eq!(history[0], 1_000_000);
        for w in history[1..].windows(2) {
            assert!(w[1] <= w[0], "{} > {}", w[1], w[0]);
        }
        assert!(history[1] > history[10] && history[10] > history[99]);
    }

    #[test]
    fn ewma_examples() {
        let mut c = AluCounters::default();
        assert_eq!(exec_ewma(100, 8, 102, 1, &mut c), (102, 3));
        assert_eq!(exec_ewma(50, 8, 50, 5, &mut c), (50, 13));
        assert_eq!(exec_ewma(0, 1 << 31, 31, 0, &mut c), (31, 1));
        assert_eq!(exec_ewma(0, u32::MAX, 32, 7, &mut c), (32, 7));
        assert_eq!(c.ewma_time_reversal, 0);
        assert_eq!(exec_ewma(10, 8, 5, 1, &mut c), (5, 9));
        assert_eq!(c.ewma_time_reversal, 1);
    }

    #[test]
    fn tuple_rejects_duplicate_destination() {
        let t = [p("ADD R0 R1 R2"), p("AVG R3 R0 H1")];
        assert_eq!(
            validate_tuple(&t, STD),
            Err(InstructionError::DuplicateOutput(Operand::Flow(0)))
        );
        let six: Vec<_> = (0..6).map(|_| Instruction::Nop).collect();
        assert!(validate_tuple(&six, STD).is_err());
    }

    #[test]
    fn header_outputs_rejected() {
        assert_eq!(
            Instruction::parse("ADD H0 R0 R1", STD),
            Err(InstructionError::ReadOnlyOutput(Operand::Header(0)))
        );
        assert!(Instruction::parse("AVG R0 R0 H1", STD).is_err());
        assert!(Instruction::parse("ADD R4 R0 R1", STD).is_err());
        assert!(Instruction::parse("ADD R4 R0 R1", RegisterLayout::Wide).is_ok());
    }

    #[test]
    fn mnemonic_and_hex_agree() {
        let insn = p("ADD R0 R0 G1");
        let word = insn.encode(STD).unwrap();
        assert_eq!(word, 0x1000_5000);
        assert_eq!(Instruction::parse("0x10005000", STD).unwrap(), insn);
        assert_eq!(p("ADDI R1 R1 0x10").encode(STD).unwrap(), 0x1411_0010);
        assert_eq!(p(&insn.to_string()), insn);
    }

    #[test]
    fn decode_rejects_stray_bits() {
        assert_eq!(
            Instruction::decode(0x1000_5001, STD),
            Err(InstructionError::ReservedBits(0x1000_5001))
        );
        assert_eq!(
            Instruction::decode(0xFF00_0000, STD),
            Err(InstructionError::UnknownOpcode(0xFF))
        );
    }

    fn arb_instruction(layout: RegisterLayout) -> impl Strategy<Value = Instruction> {
        let any_op = (0u8..16).prop_map(move |s| layout.operand(s));
        let out_op = (0u8..(layout.flow_registers() + 4)).prop_map(move |s| layout.operand(s));
        prop_oneof![
            Just(Instruction::Nop),
            (out_op.clone(), any_op.clone()).prop_map(|(out, a)| Instruction::Not { out, a }),
            (0usize..7, out_op.clone(), any_op.clone(), any_op.clone()).prop_map(|(i, out, a, b)| Instruction::Bin {
                op: BIN_OPS[i].0,
                out,
                a,
                b
            }),
            (0usize..7, out_op.clone(), any_op.clone(), any::<u16>()).prop_map(|(i, out, a, imm)| Instruction::Imm {
                op: IMM_OPS[i].0,
                out,
                a,
                imm
            }),
            (out_op.clone(), out_op.clone(), any_op.clone()).prop_map(|(count, mean, sample)| Instruction::Avg {
                count,
                mean,
                sample
            }),
            (out_op.clone(), out_op.clone(), out_op.clone(), any_op.clone()).prop_map(|(count, mean, var, sample)| {
                Instruction::Var {
                    count,
                    mean,
                    var,
                    sample,
                }
            }),
            (out_op.clone(), out_op, any_op.clone(), any_op).prop_map(|(last_ts, acc, now, sample)| {
                Instruction::Ewma {
                    last_ts,
                    acc,
                    now,
                    sample,
                }
            }),
        ]
        .prop_filter("valid", move |i| i.validate(layout).is_ok())
    }

    proptest! {
        #[test]
        fn encode_decode_roundtrip(insn in arb_instruction(STD)) {
            let word = insn.encode(STD).unwrap();
            prop_assert_eq!(Instruction::decode(word, STD).unwrap(), insn);
            prop_assert_eq!(Instruction::parse(&insn.to_string(), STD).unwrap(), insn);
        }

        #[test]
        fn encode_decode_roundtrip_wide(insn in arb_instruction(RegisterLayout::Wide)) {
            let word = insn.encode(RegisterLayout::Wide).unwrap();
            prop_assert_eq!(Instruction::decode(word, RegisterLayout::Wide).unwrap(), insn);
        }

        #[test]
        fn decoded_words_reencode(word in any::<u32>()) {
            if let Ok(insn) = Instruction::decode(word, STD) {
                prop_assert_eq!(insn.encode(STD).unwrap(), word);
            }
        }
    }
}
