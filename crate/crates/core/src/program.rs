//! Program files: schema, loading, validation and the bundled programs.
//!
//! A program is a TOML document (see `docs/SCHEMA.md`). Loading parses it
//! into a [`ProgramConfig`] and compiles that into a [`Program`], collecting
//! every validation problem with its location instead of stopping at the
//! first one.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::Action;
use crate::alu::{validate_tuple, Instruction};
use crate::condition::{ConditionSpec, ConditionVector, MAX_CONDITIONS};
use crate::engine::{HeaderMatch, XfsmRow, COND_BITS, DEFAULT_XFSM_WIDTH, MATCH_FIELD_BITS, STATE_BITS};
use crate::extractor::{FieldBinding, FieldSource, FieldSpec, KeyScope};
use crate::flow_context::{FallbackEntry, FlowContext, TableConfig};
use crate::operand::{Operand, RegisterLayout, GLOBAL_REGISTERS, MAX_FLOW_REGISTERS};
use crate::tcam::DEFAULT_XFSM_CAPACITY;
use crate::trace::{parse_u64, Column};

pub const BUILTIN_PREFIX: &str = "builtin:";

const BUILTIN: &[(&str, &str)] = &[
    ("long_flow", include_str!("../programs/long_flow.toml")),
    ("load_balance", include_str!("../programs/load_balance.toml")),
    ("port_scan", include_str!("../programs/port_scan.toml")),
    ("c45_classifier", include_str!("../programs/c45_classifier.toml")),
    ("token_bucket", include_str!("../programs/token_bucket.toml")),
    ("mac_learning", include_str!("../programs/mac_learning.toml")),
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub location: String,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

fn list(issues: &[Issue]) -> String {
    issues.iter().map(|i| format!("  - {i}")).collect::<Vec<_>>().join("\n")
}

#[derive(Debug, Error)]
pub enum ProgramError {
    #[error("cannot read program `{path}`: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse program: {0}")]
    Parse(String),
    #[error("program `{name}` is invalid:\n{}", list(.issues))]
    Invalid { name: String, issues: Vec<Issue> },
    #[error("unknown bundled program `{0}`")]
    UnknownBuiltin(String),
}

impl ProgramError {
    pub fn issues(&self) -> &[Issue] {
        match self {
            ProgramError::Invalid { issues, .. } => issues,
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeUnit {
    Ns,
    #[default]
    Us,
    Ms,
    S,
    /// Abstract ticks with no wall-clock meaning.
    Ticks,
}

impl TimeUnit {
    pub fn per_second(self) -> Option<u64> {
        match self {
            TimeUnit::Ns => Some(1_000_000_000),
            TimeUnit::Us => Some(1_000_000),
            TimeUnit::Ms => Some(1_000),
            TimeUnit::S => Some(1),
            TimeUnit::Ticks => None,
        }
    }
}

fn default_ports() -> u8 {
    4
}

fn default_period() -> u32 {
    1_000_000
}

fn is_zero(v: &u8) -> bool {
    *v == 0
}

/// Binds a header slot to a trace column or metadata value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    pub slot: Operand,
    pub source: String,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub shift: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<u32>,
    /// Raw-frame bit offset; defaults to the standard Ethernet/IPv4 layout.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RowConfig {
    pub priority: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<String>,
    /// c0 first; `1`, `0` or `x` per condition, missing positions are `x`.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub conditions: String,
    #[serde(default, rename = "match", skip_serializing_if = "BTreeMap::is_empty")]
    pub header_match: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub next_state: Option<String>,
    #[serde(default)]
    pub action: Action,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub instructions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FallbackConfig {
    pub priority: u32,
    #[serde(rename = "match")]
    pub header_match: BTreeMap<String, String>,
    pub state: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub registers: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TablesConfig {
    pub subtables: usize,
    pub buckets: usize,
    pub bucket_depth: usize,
    pub fallback_capacity: usize,
    pub xfsm_capacity: usize,
    pub xfsm_width: u16,
}

impl Default for TablesConfig {
    fn default() -> Self {
        let t = TableConfig::default();
        TablesConfig {
            subtables: t.subtables,
            buckets: t.buckets,
            bucket_depth: t.bucket_depth,
            fallback_capacity: t.fallback_capacity,
            xfsm_capacity: DEFAULT_XFSM_CAPACITY,
            xfsm_width: DEFAULT_XFSM_WIDTH,
        }
    }
}

/// The program file as written.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProgramConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    #[serde(default)]
    pub timestamp_unit: TimeUnit,
    #[serde(default)]
    pub layout: RegisterLayout,
    #[serde(default = "default_ports")]
    pub num_ports: u8,
    #[serde(default = "default_period")]
    pub management_period: u32,
    pub lookup_scope: Vec<Operand>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub update_scope: Option<Vec<Operand>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub match_fields: Vec<Operand>,
    #[serde(default)]
    pub conditions: Vec<String>,
    pub states: BTreeMap<String, u16>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub globals: BTreeMap<String, u32>,
    #[serde(default)]
    pub tables: TablesConfig,
    #[serde(default)]
    pub fields: Vec<FieldConfig>,
    pub rows: Vec<RowConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub context_fallback: Vec<FallbackConfig>,
}

impl ProgramConfig {
    pub fn from_toml(text: &str) -> Result<ProgramConfig, ProgramError> {
        toml::from_str(text).map_err(|e| ProgramError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("program config serializes to TOML")
    }
}

/// A validated, compiled program.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub config: ProgramConfig,
    pub name: String,
    pub layout: RegisterLayout,
    pub num_ports: u8,
    pub management_period: u32,
    pub bindings: Vec<FieldBinding>,
    pub lookup_scope: KeyScope,
    pub update_scope: KeyScope,
    pub match_slots: Vec<u8>,
    pub conditions: Vec<ConditionSpec>,
    pub rows: Vec<XfsmRow>,
    pub globals: [u32; GLOBAL_REGISTERS],
    pub states: BTreeMap<u16, String>,
    pub fallback: Vec<FallbackEntry>,
    pub tables: TableConfig,
    pub xfsm_width: u16,
    pub xfsm_capacity: usize,
    pub partitionable: bool,
}

/// Natural bit width of a field source.
fn source_width(src: FieldSource) -> u32 {
    match src {
        FieldSource::Timestamp | FieldSource::PktLen => 32,
        FieldSource::InPort => 16,
        FieldSource::Column(c) => c.frame_field().1,
    }
}

fn parse_match(text: &str) -> Result<(u32, u32), String> {
    let (v, m) = match text.split_once('/') {
        Some((v, m)) => (v.trim(), Some(m.trim())),
        None => (text.trim(), None),
    };
    let num = |s: &str| {
        parse_u64(s)
            .filter(|x| *x <= u32::MAX as u64)
            .map(|x| x as u32)
            .ok_or_else(|| format!("bad match value `{s}`"))
    };
    let value = num(v)?;
    let mask = match m {
        Some(m) => num(m)?,
        None => u32::MAX,
    };
    Ok((value & mask, mask))
}

struct Compiler<'a> {
    cfg: &'a ProgramConfig,
    issues: Vec<Issue>,
}

impl Compiler<'_> {
    fn issue(&mut self, location: impl Into<String>, message: impl Into<String>) {
        self.issues.push(Issue {
            location: location.into(),
            message: message.into(),
        });
    }

    fn header_slot(&mut self, loc: &str, op: Operand, layout: RegisterLayout) -> Option<u8> {
        match op {
            Operand::Header(i) if i < layout.header_slots() => Some(i),
            Operand::Header(i) => {
                self.issue(loc, format!("H{i} is not addressable in the {layout:?} layout"));
                None
            }
            other => {
                self.issue(loc, format!("`{other}` is not a header slot"));
                None
            }
        }
    }

    fn state_code(&mut self, loc: &str, label: &str) -> Option<u16> {
        match self.cfg.states.get(label) {
            Some(c) => Some(*c),
            None => {
                self.issue(loc, format!("state `{label}` is not declared"));
                None
            }
        }
    }
}

impl Program {
    pub fn from_config(cfg: ProgramConfig) -> Result<Program, ProgramError> {
        let mut c = Compiler {
            cfg: &cfg,
            issues: Vec::new(),
        };
        let layout = cfg.layout;

        if cfg.name.trim().is_empty() {
            c.issue("name", "must not be empty");
        }
        if cfg.num_ports == 0 || cfg.num_ports > 63 {
            c.issue("num_ports", format!("{} outside 1..=63", cfg.num_ports));
        }

        // States.
        let mut states = BTreeMap::new();
        for (label, code) in &cfg.states {
            if let Some(prev) = states.insert(*code, label.clone()) {
                c.issue(
                    format!("states.{label}"),
                    format!("code {code} already used by `{prev}`"),
                );
            }
        }
        if !states.contains_key(&0) {
            c.issue("states", "the default state (code 0) must be declared");
        }

        // Globals.
        let mut globals = [0u32; GLOBAL_REGISTERS];
        for (name, v) in &cfg.globals {
            match name.parse::<Operand>() {
                Ok(Operand::Global(i)) => globals[i as usize] = *v,
                _ => c.issue(format!("globals.{name}"), "expected G0..G3"),
            }
        }

        // Field bindings.
        let mut bindings = Vec::new();
        let mut bound = BTreeSet::new();
        for (i, f) in cfg.fields.iter().enumerate() {
            let loc = format!("fields[{i}]");
            let Some(slot) = c.header_slot(&loc, f.slot, layout) else {
                continue;
            };
            if !bound.insert(slot) {
                c.issue(&loc, format!("H{slot} is bound twice"));
                continue;
            }
            let source = match f.source.parse::<FieldSource>() {
                Ok(s) => s,
                Err(e) => {
                    c.issue(&loc, e);
                    continue;
                }
            };
            let natural = source_width(source);
            if f.shift as u32 >= natural {
                c.issue(
                    &loc,
                    format!("shift {} discards the whole {natural}-bit source", f.shift),
                );
                continue;
            }
            let avail = (natural - f.shift as u32).min(32);
            let mask = f.mask.unwrap_or(if avail == 32 { u32::MAX } else { (1 << avail) - 1 });
            if mask == 0 {
                c.issue(&loc, "mask must not be zero");
            }
            let sam = match source {
                FieldSource::Column(col) => {
                    let mut spec = FieldSpec::for_column(col, f.shift, mask);
                    if let Some(o) = f.offset {
                        spec.offset = o;
                    }
                    if let Some(w) = f.width {
                        spec.width = w;
                    }
                    if let Err(e) = spec.validate() {
                        c.issue(&loc, e);
                    }
                    Some(spec)
                }
                _ => {
                    if f.offset.is_some() || f.width.is_some() {
                        c.issue(&loc, "offset/width apply only to frame columns");
                    }
                    None
                }
            };
            bindings.push(FieldBinding {
                slot,
                source,
                shift: f.shift,
                mask,
                sam,
            });
        }

        // Scopes.
        let scope = |c: &mut Compiler, name: &str, ops: &[Operand]| -> Option<KeyScope> {
            let slots: Vec<u8> = ops.iter().filter_map(|op| c.header_slot(name, *op, layout)).collect();
            if slots.len() != ops.len() {
                return None;
            }
            KeyScope::new(&slots, &bindings).map_err(|e| c.issue(name, e)).ok()
        };
        let lookup_scope = scope(&mut c, "lookup_scope", &cfg.lookup_scope);
        let update_ops = cfg.update_scope.clone().unwrap_or_else(|| cfg.lookup_scope.clone());
        let update_scope = scope(&mut c, "update_scope", &update_ops);

        // XFSM match fields and table geometry.
        let t = &cfg.tables;
        let mut match_slots = Vec::new();
        for (i, op) in cfg.match_fields.iter().enumerate() {
            let loc = format!("match_fields[{i}]");
            if let Some(s) = c.header_slot(&loc, *op, layout) {
                if !bound.contains(&s) {
                    c.issue(&loc, format!("H{s} has no field binding"));
                }
                if match_slots.contains(&s) {
                    c.issue(&loc, format!("H{s} listed twice"));
                }
                match_slots.push(s);
            }
        }
        let key_bits = STATE_BITS + COND_BITS + MATCH_FIELD_BITS * cfg.match_fields.len() as u16;
        if t.xfsm_width > crate::bits::MAX_WIDTH {
            c.issue("tables.xfsm_width", format!("at most {} bits", crate::bits::MAX_WIDTH));
        } else if key_bits > t.xfsm_width {
            c.issue(
                "match_fields",
                format!("XFSM key needs {key_bits} bits but the table is {} wide", t.xfsm_width),
            );
        }
        let tables = TableConfig {
            subtables: t.subtables,
            buckets: t.buckets,
            bucket_depth: t.bucket_depth,
            fallback_capacity: t.fallback_capacity,
        };
        if let Err(e) = tables.validate() {
            c.issue("tables", e);
        }
        if cfg.rows.len() > t.xfsm_capacity {
            c.issue(
                "rows",
                format!("{} rows exceed XFSM capacity {}", cfg.rows.len(), t.xfsm_capacity),
            );
        }

        let check_operand = |c: &mut Compiler, loc: &str, op: Operand| {
            if !layout.addresses(op) {
                c.issue(loc, format!("`{op}` is not addressable in the {layout:?} layout"));
            } else if let Operand::Header(h) = op {
                if !bound.contains(&h) {
                    c.issue(loc, format!("`{op}` has no field binding"));
                }
            }
        };

        // Conditions.
        if cfg.conditions.len() > MAX_CONDITIONS {
            c.issue(
                "conditions",
                format!("{} conditions, at most {MAX_CONDITIONS}", cfg.conditions.len()),
            );
        }
        let mut conditions = Vec::new();
        for (i, text) in cfg.conditions.iter().enumerate() {
            let loc = format!("conditions[{i}]");
            match text.parse::<ConditionSpec>() {
                Ok(spec) => {
                    check_operand(&mut c, &loc, spec.lhs);
                    check_operand(&mut c, &loc, spec.rhs);
                    conditions.push(spec);
                }
                Err(e) => c.issue(&loc, e),
            }
        }

        // Rows.
        let mut rows = Vec::new();
        let mut priorities = BTreeMap::new();
        for (i, r) in cfg.rows.iter().enumerate() {
            let loc = format!("rows[{i}]");
            if let Some(prev) = priorities.insert(r.priority, i) {
                c.issue(&loc, format!("priority {} already used by rows[{prev}]", r.priority));
            }
            let state = r.state.as_ref().and_then(|s| c.state_code(&format!("{loc}.state"), s));
            let next_state = r
                .next_state
                .as_ref()
                .and_then(|s| c.state_code(&format!("{loc}.next_state"), s));
            let (mut cond_value, mut cond_mask) = (0u8, 0u8);
            if r.conditions.chars().count() > MAX_CONDITIONS {
                c.issue(format!("{loc}.conditions"), "more than 8 positions");
            }
            for (j, ch) in r.conditions.chars().take(MAX_CONDITIONS).enumerate() {
                match ch {
                    '1' | '0' => {
                        if j >= cfg.conditions.len() {
                            c.issue(format!("{loc}.conditions"), format!("c{j} is not configured"));
                        }
                        cond_mask |= 1 << j;
                        if ch == '1' {
                            cond_value |= 1 << j;
                        }
                    }
                    'x' | 'X' | '-' | '*' => {}
                    other => c.issue(format!("{loc}.conditions"), format!("unexpected `{other}`")),
                }
            }
            let mut header = Vec::new();
            for (k, text) in &r.header_match {
                let mloc = format!("{loc}.match.{k}");
                let slot = match k.parse::<Operand>() {
                    Ok(Operand::Header(s)) if match_slots.contains(&s) => s,
                    _ => {
                        c.issue(&mloc, "not one of the program's match_fields");
                        continue;
                    }
                };
                match parse_match(text) {
                    Ok((value, mask)) => header.push(HeaderMatch { slot, value, mask }),
                    Err(e) => c.issue(&mloc, e),
                }
            }
            if let Err(e) = r.action.validate(cfg.num_ports) {
                c.issue(format!("{loc}.action"), e);
            }
            let mut instructions = Vec::new();
            for (j, text) in r.instructions.iter().enumerate() {
                match Instruction::parse(text, layout) {
                    Ok(insn) => instructions.push(insn),
                    Err(e) => c.issue(format!("{loc}.instructions[{j}]"), e.to_string()),
                }
            }
            if instructions.len() == r.instructions.len() {
                match validate_tuple(&instructions, layout) {
                    Ok(()) => {
                        for insn in &instructions {
                            for op in insn.operands() {
                                check_operand(&mut c, &format!("{loc}.instructions"), op);
                            }
                        }
                    }
                    Err(e) => c.issue(format!("{loc}.instructions"), e.to_string()),
                }
            }
            rows.push(XfsmRow {
                id: i,
                priority: r.priority,
                state,
                cond_value,
                cond_mask,
                header,
                next_state,
                action: r.action,
                instructions,
            });
        }
        if !rows
            .iter()
            .zip(&cfg.rows)
            .any(|(r, rc)| rc.state.is_none() && r.is_catch_all())
        {
            c.issue(
                "rows",
                "no catch-all row (any state, all conditions `x`, no header match)",
            );
        }

        // Wildcard fallback entries on the lookup key.
        let mut fallback = Vec::new();
        for (i, f) in cfg.context_fallback.iter().enumerate() {
            let loc = format!("context_fallback[{i}]");
            let state = c.state_code(&format!("{loc}.state"), &f.state);
            if f.registers.len() > layout.flow_registers() as usize {
                c.issue(
                    format!("{loc}.registers"),
                    format!(
                        "{} registers, layout has {}",
                        f.registers.len(),
                        layout.flow_registers()
                    ),
                );
            }
            let mut regs = [0u32; MAX_FLOW_REGISTERS];
            for (j, v) in f.registers.iter().take(MAX_FLOW_REGISTERS).enumerate() {
                regs[j] = *v;
            }
            let (mut value, mut mask) = (0u128, 0u128);
            for (k, text) in &f.header_match {
                let mloc = format!("{loc}.match.{k}");
                let pos = match (k.parse::<Operand>(), &lookup_scope) {
                    (Ok(Operand::Header(s)), Some(scope)) => scope.position(s),
                    _ => None,
                };
                let Some((at, w)) = pos else {
                    c.issue(&mloc, "not a slot of the lookup scope");
                    continue;
                };
                match parse_match(text) {
                    Ok((v, m)) => {
                        let wmask = if w == 32 { u32::MAX } else { (1u32 << w) - 1 };
                        let shift = 128 - at - w as u32;
                        value |= ((v & wmask) as u128) << shift;
                        mask |= ((m & wmask) as u128) << shift;
                    }
                    Err(e) => c.issue(&mloc, e),
                }
            }
            if let Some(state) = state {
                fallback.push(FallbackEntry {
                    value,
                    mask,
                    priority: f.priority,
                    context: FlowContext::new(state, regs),
                });
            }
        }
        if cfg.context_fallback.len() > t.fallback_capacity {
            c.issue("context_fallback", "more entries than the fallback table holds");
        }
        let mut fb_prio = BTreeSet::new();
        for (i, f) in cfg.context_fallback.iter().enumerate() {
            if !fb_prio.insert(f.priority) {
                c.issue(
                    format!("context_fallback[{i}]"),
                    format!("priority {} already used", f.priority),
                );
            }
        }

        let issues = c.issues;
        if !issues.is_empty() {
            return Err(ProgramError::Invalid {
                name: cfg.name.clone(),
                issues,
            });
        }
        let lookup_scope = lookup_scope.expect("no issues means scope compiled");
        let update_scope = update_scope.expect("no issues means scope compiled");
        let writes_globals = rows.iter().any(|r| {
            r.instructions
                .iter()
                .flat_map(|i| i.outputs())
                .any(|o| matches!(o, Operand::Global(_)))
        });
        let partitionable = !writes_globals && lookup_scope == update_scope;
        Ok(Program {
            name: cfg.name.clone(),
            layout,
            num_ports: cfg.num_ports,
            management_period: cfg.management_period,
            bindings,
            lookup_scope,
            update_scope,
            match_slots,
            conditions,
            rows,
            globals,
            states,
            fallback,
            tables,
            xfsm_width: t.xfsm_width,
            xfsm_capacity: t.xfsm_capacity,
            partitionable,
            config: cfg,
        })
    }

    pub fn from_toml(text: &str) -> Result<Program, ProgramError> {
        Program::from_config(ProgramConfig::from_toml(text)?)
    }

    pub fn load(path: &Path) -> Result<Program, ProgramError> {
        let text = std::fs::read_to_string(path).map_err(|source| ProgramError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Program::from_toml(&text)
    }

    /// Loads a file path or a `builtin:NAME` reference.
    pub fn resolve(spec: &str) -> Result<Program, ProgramError> {
        match spec.strip_prefix(BUILTIN_PREFIX) {
            Some(name) => builtin(name),
            None => Program::load(Path::new(spec)),
        }
    }

    pub fn to_toml(&self) -> String {
        self.config.to_toml()
    }

    pub fn state_label(&self, code: u16) -> String {
        self.states.get(&code).cloned().unwrap_or_else(|| code.to_string())
    }

    pub fn state_code(&self, label: &str) -> Option<u16> {
        self.config.states.get(label).copied()
    }

    /// Replaces a global's initial value.
    pub fn set_global(&mut self, index: usize, value: u32) {
        self.globals[index] = value;
        self.config.globals.insert(format!("G{index}"), value);
    }

    /// Trace columns needed in CSV mode.
    pub fn required_columns(&self) -> Vec<Column> {
        let mut cols: Vec<Column> = self
            .bindings
            .iter()
            .filter_map(|b| match b.source {
                FieldSource::Column(c) => Some(c),
                _ => None,
            })
            .collect();
        cols.sort();
        cols.dedup();
        cols
    }

    pub fn needs_metadata(&self, src: FieldSource) -> bool {
        self.bindings.iter().any(|b| b.source == src)
    }

    /// (state, condition vector) pairs that no header-independent row covers.
    pub fn uncovered(&self) -> Vec<(u16, ConditionVector)> {
        let headers = [0u32; crate::operand::HEADER_SLOTS];
        let mut out = Vec::new();
        for &state in self.states.keys() {
            for bits in 0..=u8::MAX {
                let cv = ConditionVector(bits);
                let covered = self
                    .rows
                    .iter()
                    .filter(|r| r.header.iter().all(|m| m.mask == 0))
                    .any(|r| r.matches(state, cv, &headers));
                if !covered {
                    out.push((state, cv));
                }
            }
        }
        out
    }
}

impl FromStr for Program {
    type Err = ProgramError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Program::from_toml(s)
    }
}

pub fn builtin_names() -> impl Iterator<Item = &'static str> {
    BUILTIN.iter().map(|(n, _)| *n)
}

pub fn builtin_source(name: &str) -> Option<&'static str> {
    BUILTIN.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn builtin(name: &str) -> Result<Program, ProgramError> {
    let text = builtin_source(name).ok_or_else(|| ProgramError::UnknownBuiltin(name.to_string()))?;
    Program::from_toml(text)
}

pub fn bundled_programs() -> Vec<Program> {
    builtin_names()
        .map(|n| builtin(n).expect("bundled programs are valid"))
        .collect()
}

/// The bundled token bucket with burst `b` packets and one token per `q` ticks.
///
/// G0 = B*Q and G1 = Q; G2 = (B - 2) * Q
/// (mod 2^32) positions the earliest conforming arrival after a refill.
pub fn token_bucket(b: u32, q: u32) -> Program {
    assert!(b >= 1 && q >= 1, "token bucket needs B >= 1 and Q >= 1");
    let mut p = builtin("token_bucket").expect("bundled programs are valid");
    p.set_global(0, b.wrapping_mul(q));
    p.set_global(1, q);
    p.set_global(2, (b as i64 - 2).wrapping_mul(q as i64) as u32);
    p
}
