//! Port-scan threshold calibration.
//!
//! Replays a generated scanner/benign mix through the port-scan program with
//! dropping disabled, once per candidate EWMA tick size (the right shift
//! applied to the microsecond timestamp), and reports the SYN-rate
//! accumulator values each population reaches.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::engine::EngineOptions;
use crate::gen::{generate, TraceKind, SCANNER_IP};
use crate::operand::Operand;
use crate::program::{builtin, Program};
use crate::runner::{run_trace, RunConfig};
use crate::trace::Column;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationParams {
    pub scanner_rate: f64,
    pub benign_rate: f64,
    pub threshold: u32,
    pub duration: f64,
    pub seed: u64,
}

impl Default for CalibrationParams {
    fn default() -> Self {
        CalibrationParams {
            scanner_rate: 40.0,
            benign_rate: 5.0,
            threshold: 20,
            duration: 30.0,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub shift: u8,
    pub tick_us: u32,
    /// Largest accumulator value a scanner SYN observed.
    pub scanner_peak: u32,
    /// Largest accumulator value any benign SYN observed.
    pub benign_peak: u32,
    /// min(scanner_peak / threshold, threshold / benign_peak); > 1 separates.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub params: CalibrationParams,
    pub rows: Vec<CalibrationRow>,
    pub recommended_shift: Option<u8>,
}

impl CalibrationReport {
    pub fn render(&self) -> String {
        let mut s = format!(
            "scanner {} SYN/s, benign {} SYN/s, threshold G0 = {}\n",
            self.params.scanner_rate, self.params.benign_rate, self.params.threshold
        );
        s.push_str("shift  tick_us  scanner_peak  benign_peak  margin\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{:>5}  {:>7}  {:>12}  {:>11}  {:>6.2}\n",
                r.shift, r.tick_us, r.scanner_peak, r.benign_peak, r.margin
            ));
        }
        match self.recommended_shift {
            Some(sh) => s.push_str(&format!("recommended shift: {sh} (tick {} us)\n", 1u32 << sh)),
            None => s.push_str("no shift separates the two populations\n"),
        }
        s
    }
}

fn with_shift(base: &Program, shift: u8) -> Program {
    let mut cfg = base.config.clone();
    for f in &mut cfg.fields {
        if f.slot == Operand::Header(5) {
            f.shift = shift;
        }
    }
    let mut p = Program::from_config(cfg).expect("shifted port-scan program stays valid");
    p.set_global(0, u32::MAX);
    p
}

pub fn calibrate_portscan(params: &CalibrationParams, shifts: impl IntoIterator<Item = u8>) -> CalibrationReport {
    let base = builtin("port_scan").expect("bundled program");
    let gen_params: BTreeMap<String, String> = [
        ("scanner_rate", params.scanner_rate),
        ("benign_rate", params.benign_rate),
        ("duration", params.duration),
        ("silence", 0.0),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect();
    let trace = generate(TraceKind::PortscanMix, &gen_params, params.seed).expect("valid generator parameters");
    let syn_row = base.rows.iter().find(|r| r.priority == 80).map(|r| r.id);
    let threshold = params.threshold.max(1) as f64;
    let mut rows = Vec::new();
    for shift in shifts {
        let program = Arc::new(with_shift(&base, shift));
        let cfg = RunConfig {
            opts: EngineOptions {
                seed: params.seed,
                ..EngineOptions::default()
            },
            ..RunConfig::default()
        };
        let out = run_trace(&[program], &trace, &cfg).expect("generated trace fits the program");
        let (mut scanner_peak, mut benign_peak) = (0u32, 0u32);
        for (rec, v) in trace.records.iter().zip(&out.verdicts) {
            let v = &v[0];
            if Some(v.row_id) != syn_row {
                continue;
            }
            let r0 = v.pre_regs[0];
            if rec.get(Column::IpSrc) == SCANNER_IP as u64 {
                scanner_peak = scanner_peak.max(r0);
            } else {
                benign_peak = benign_peak.max(r0);
            }
        }
        let margin = (scanner_peak as f64 / threshold).min(threshold / benign_peak.max(1) as f64);
        rows.push(CalibrationRow {
            shift,
            tick_us: 1 << shift,
            scanner_peak,
            benign_peak,
            margin,
        });
    }
    let recommended_shift = rows
        .iter()
        .filter(|r| r.margin > 1.0)
        .max_by(|a, b| a.margin.total_cmp(&b.margin))
        .map(|r| r.shift);
    CalibrationReport {
        params: *params,
        rows,
        recommended_shift,
    }
}

pub const DEFAULT_SHIFTS: std::ops::RangeInclusive<u8> = 16..=22;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_shift_separates_default_mix() {
        let report = calibrate_portscan(&CalibrationParams::default(), DEFAULT_SHIFTS);
        println!("{}", report.render());
        let row19 = report.rows.iter().find(|r| r.shift == 19).unwrap();
        assert!(row19.margin > 1.0, "{row19:?}");
        assert!(report.recommended_shift.is_some());
    }
}
