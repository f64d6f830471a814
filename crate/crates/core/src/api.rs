//! Request/response types of the operations exposed over HTTP, and their
//! in-process implementations. The service wraps these; the CLI calls them
//! directly or through the HTTP client.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::calibrate::{calibrate_portscan, CalibrationParams, CalibrationReport, DEFAULT_SHIFTS};
use crate::engine::{EngineOptions, Verdict};
use crate::gen::{generate, GenError, TraceKind};
use crate::operand::Operand;
use crate::program::{builtin_names, builtin_source, Issue, Program, ProgramError};
use crate::runner::{run_trace, verdicts_csv, RunConfig, RunError};
use crate::stats::RunStats;
use crate::trace::{Trace, TraceError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Usage,
    Parse,
    Validation,
    Io,
    NotFound,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub kind: ErrorKind,
    pub message: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub issues: Vec<Issue>,
}

impl ApiError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        ApiError {
            kind,
            message: message.into(),
            issues: Vec::new(),
        }
    }
}

impl fmt::Display for ApiError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for ApiError {}

impl From<ProgramError> for ApiError {
    fn from(e: ProgramError) -> Self {
        let kind = match &e {
            ProgramError::Io { .. } => ErrorKind::Io,
            ProgramError::Parse(_) => ErrorKind::Parse,
            ProgramError::Invalid { .. } => ErrorKind::Validation,
            ProgramError::UnknownBuiltin(_) => ErrorKind::NotFound,
        };
        ApiError {
            kind,
            message: e.to_string(),
            issues: e.issues().to_vec(),
        }
    }
}

impl From<TraceError> for ApiError {
    fn from(e: TraceError) -> Self {
        let kind = match &e {
            TraceError::Io(_) => ErrorKind::Io,
            e if e.is_parse() => ErrorKind::Parse,
            _ => ErrorKind::Validation,
        };
        ApiError::new(kind, e.to_string())
    }
}

impl From<RunError> for ApiError {
    fn from(e: RunError) -> Self {
        let kind = match &e {
            RunError::NotPartitionable(_) => ErrorKind::Usage,
            RunError::Engine(_) => ErrorKind::Internal,
            _ => ErrorKind::Validation,
        };
        ApiError::new(kind, e.to_string())
    }
}

impl From<GenError> for ApiError {
    fn from(e: GenError) -> Self {
        ApiError::new(ErrorKind::Usage, e.to_string())
    }
}

/// A program given by bundled name or as TOML text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProgramSource {
    Builtin(String),
    Toml(String),
}

/// Replaces a global's initial value in one stage of the chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalOverride {
    #[serde(default)]
    pub stage: usize,
    pub index: usize,
    pub value: u32,
}

impl std::str::FromStr for GlobalOverride {
    type Err = String;

    /// `G1=100` or `2:G1=100` (stage 2).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (stage, rest) = match s.split_once(':') {
            Some((st, rest)) => (
                st.trim().parse::<usize>().map_err(|_| format!("bad stage in `{s}`"))?,
                rest,
            ),
            None => (0, s),
        };
        let (name, value) = rest
            .split_once('=')
            .ok_or_else(|| format!("expected Gi=value, got `{s}`"))?;
        let index = match name.trim().parse::<Operand>() {
            Ok(Operand::Global(i)) => i as usize,
            _ => return Err(format!("`{name}` is not a global register")),
        };
        let value = crate::trace::parse_u64(value.trim())
            .filter(|v| *v <= u32::MAX as u64)
            .ok_or_else(|| format!("bad value in `{s}`"))? as u32;
        Ok(GlobalOverride { stage, index, value })
    }
}

pub fn load_program(src: &ProgramSource) -> Result<Program, ApiError> {
    Ok(match src {
        ProgramSource::Builtin(name) => crate::program::builtin(name)?,
        ProgramSource::Toml(text) => Program::from_toml(text)?,
    })
}

pub fn load_chain(sources: &[ProgramSource], overrides: &[GlobalOverride]) -> Result<Vec<Arc<Program>>, ApiError> {
    if sources.is_empty() {
        return Err(ApiError::new(ErrorKind::Usage, "at least one program is required"));
    }
    let mut programs = sources.iter().map(load_program).collect::<Result<Vec<_>, _>>()?;
    for o in overrides {
        let p = programs
            .get_mut(o.stage)
            .ok_or_else(|| ApiError::new(ErrorKind::Usage, format!("no stage {} for global override", o.stage)))?;
        p.set_global(o.index, o.value);
    }
    Ok(programs.into_iter().map(Arc::new).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidateRequest {
    pub program: ProgramSource,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidateResponse {
    pub name: String,
    pub partitionable: bool,
    pub states: BTreeMap<String, u16>,
    pub rows: usize,
    pub conditions: Vec<String>,
    pub required_columns: Vec<String>,
}

pub fn validate(req: &ValidateRequest) -> Result<ValidateResponse, ApiError> {
    let p = load_program(&req.program)?;
    Ok(ValidateResponse {
        name: p.name.clone(),
        partitionable: p.partitionable,
        states: p.config.states.clone(),
        rows: p.rows.len(),
        conditions: p.conditions.iter().map(|c| c.to_string()).collect(),
        required_columns: p.required_columns().iter().map(|c| c.name().to_string()).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuiltinProgram {
    pub name: String,
    pub toml: String,
}

pub fn list_builtins() -> Vec<String> {
    builtin_names().map(str::to_string).collect()
}

pub fn get_builtin(name: &str) -> Result<BuiltinProgram, ApiError> {
    builtin_source(name)
        .map(|t| BuiltinProgram {
            name: name.to_string(),
            toml: t.to_string(),
        })
        .ok_or_else(|| ApiError::new(ErrorKind::NotFound, format!("unknown bundled program `{name}`")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRequest {
    pub programs: Vec<ProgramSource>,
    pub trace_csv: String,
    #[serde(default)]
    pub globals: Vec<GlobalOverride>,
    #[serde(default)]
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResponse {
    pub verdicts_csv: String,
    pub stats: RunStats,
}

pub fn run(req: &RunRequest) -> Result<RunResponse, ApiError> {
    let programs = load_chain(&req.programs, &req.globals)?;
    let trace = Trace::read_csv(req.trace_csv.as_bytes())?;
    let out = run_trace(&programs, &trace, &req.config)?;
    Ok(RunResponse {
        verdicts_csv: verdicts_csv(&programs, &out.verdicts),
        stats: out.stats,
    })
}

/// A verdict with state labels resolved, for JSON consumers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictRow {
    pub stage: usize,
    pub seq: u64,
    pub ts: u32,
    pub action: String,
    pub pre_state: String,
    pub post_state: String,
    pub row_id: usize,
    pub cond_bits: String,
    pub pre_regs: Vec<u32>,
    pub post_regs: Vec<u32>,
}

impl VerdictRow {
    pub fn new(v: &Verdict, p: &Program) -> Self {
        let n = p.layout.flow_registers() as usize;
        VerdictRow {
            stage: v.stage,
            seq: v.seq,
            ts: v.ts,
            action: v.action.to_string(),
            pre_state: p.state_label(v.pre_state),
            post_state: p.state_label(v.post_state),
            row_id: v.row_id,
            cond_bits: v.cond.to_string(),
            pre_regs: v.pre_regs[..n].to_vec(),
            post_regs: v.post_regs[..n].to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSessionRequest {
    pub programs: Vec<ProgramSource>,
    #[serde(default)]
    pub globals: Vec<GlobalOverride>,
    #[serde(default)]
    pub options: EngineOptions,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub id: String,
    pub programs: Vec<String>,
    pub packets: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketsRequest {
    pub trace_csv: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketsResponse {
    pub verdicts: Vec<VerdictRow>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenTraceRequest {
    pub kind: String,
    #[serde(default)]
    pub params: BTreeMap<String, String>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenTraceResponse {
    pub trace_csv: String,
    pub packets: usize,
}

pub fn gen_trace(req: &GenTraceRequest) -> Result<GenTraceResponse, ApiError> {
    let kind: TraceKind = req.kind.parse()?;
    let trace = generate(kind, &req.params, req.seed)?;
    Ok(GenTraceResponse {
        packets: trace.len(),
        trace_csv: trace.to_csv_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrateRequest {
    #[serde(default)]
    pub params: CalibrationParams,
    #[serde(default)]
    pub shifts: Vec<u8>,
}

pub fn calibrate(req: &CalibrateRequest) -> Result<CalibrationReport, ApiError> {
    if req.shifts.iter().any(|s| *s >= 32) {
        return Err(ApiError::new(ErrorKind::Usage, "shifts must be below 32"));
    }
    if !(req.params.scanner_rate > 0.0 && req.params.benign_rate > 0.0 && req.params.duration > 0.0) {
        return Err(ApiError::new(ErrorKind::Usage, "rates and duration must be positive"));
    }
    let shifts = if req.shifts.is_empty() {
        DEFAULT_SHIFTS.collect()
    } else {
        req.shifts.clone()
    };
    Ok(calibrate_portscan(&req.params, shifts))
}
