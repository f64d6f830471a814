//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the lines and the recorded
//! calibration table always reach the test output.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use opp_core::action::Action;
use opp_core::alu::{compute_tuple, execute_tuple, AluCounters, BinOp, DivisionMode, ImmOp, Instruction};
use opp_core::bits::Bits;
use opp_core::calibrate::{calibrate_portscan, CalibrationParams, DEFAULT_SHIFTS};
use opp_core::engine::{EngineOptions, Verdict};
use opp_core::extractor::FlowKey;
use opp_core::flow_context::{ContextSource, FallbackEntry, FlowContext, FlowContextTable, TableConfig, WriteOutcome};
use opp_core::gen::{generate, parse_params, TraceKind, SCANNER_IP};
use opp_core::operand::{FlowRegisters, Operand, OperandView, RegisterLayout};
use opp_core::program::{builtin, token_bucket, Program};
use opp_core::runner::{run_trace, verdicts_csv, RunConfig, RunOutput};
use opp_core::tcam::{TernaryEntry, TernaryTable};
use opp_core::trace::{Column, Trace, TraceRecord};
use opp_oracle::context::{Context, ContextMap, Source, Wildcard};
use opp_oracle::mac::LearningSwitch;
use opp_oracle::stats::{ewma, replay, within_of_mean};
use opp_oracle::tcam::{lookup as oracle_lookup, Rule};
use opp_oracle::token_bucket::{rate_bound_violation, rate_bound_violation_naive, token_bucket as oracle_bucket};
use opp_oracle::tree::web_p2p_tree;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn gen(kind: TraceKind, params: &[&str], seed: u64) -> Trace {
    generate(kind, &parse_params(params.iter().copied()).unwrap(), seed).unwrap()
}

fn run(programs: &[Arc<Program>], trace: &Trace) -> RunOutput {
    run_trace(programs, trace, &RunConfig::default()).unwrap()
}

fn golden(name: &str) -> String {
    std::fs::read_to_string(format!("{}/tests/golden/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

// 1 ------------------------------------------------------------------------

fn token_bucket_equivalence() -> Outcome {
    let started = Instant::now();
    let mut checked = 0usize;
    for (i, b) in [1u32, 3, 10].into_iter().enumerate() {
        for (j, q) in [10u32, 100, 1000].into_iter().enumerate() {
            let seed = 100 + (i * 3 + j) as u64;
            let qs = format!("q={q}");
            let trace = gen(TraceKind::BucketStress, &["n=100000", &qs, "load=2"], seed);
            let arrivals: Vec<u64> = trace.records.iter().map(|r| r.ts as u64).collect();
            let out = run(&[Arc::new(token_bucket(b, q))], &trace);
            let engine: Vec<bool> = out.actions().iter().map(|a| !a.is_drop()).collect();
            let oracle = oracle_bucket(b as u64, q as u64, &arrivals);
            if let Some(k) = (0..engine.len()).find(|&k| engine[k] != oracle[k]) {
                return Err(format!(
                    "B={b} Q={q}: packet {k} at t={} engine {} oracle {}",
                    arrivals[k], engine[k], oracle[k]
                ));
            }
            let fwd: Vec<u64> = arrivals
                .iter()
                .zip(&engine)
                .filter(|(_, f)| **f)
                .map(|(t, _)| *t)
                .collect();
            if let Some((x, y)) = rate_bound_violation(b as u64, q as u64, &fwd) {
                return Err(format!("B={b} Q={q}: forwarded {x}..={y} exceed B + T/Q"));
            }
            let prefix = &fwd[..fwd.len().min(3000)];
            ensure(rate_bound_violation_naive(b as u64, q as u64, prefix).is_none(), || {
                format!("B={b} Q={q}: naive window count violated")
            })?;
            checked += arrivals.len();
        }
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 10.0, || format!("took {secs:.2} s (limit 10 s)"))?;
    Ok(format!(
        "{checked} arrivals over 9 (B, Q) pairs identical, rate bound holds, {secs:.2} s"
    ))
}

// 2 ------------------------------------------------------------------------

fn port_scan_behaviour() -> Outcome {
    let report = calibrate_portscan(&CalibrationParams::default(), DEFAULT_SHIFTS);
    println!("    calibration (opp calibrate-portscan):");
    for line in report.render().lines() {
        println!("      {line}");
    }
    ensure(report.recommended_shift == Some(19), || {
        format!(
            "calibration recommends {:?}, bundled program uses 19",
            report.recommended_shift
        )
    })?;

    let (silence_start, silence) = (12.0, 5.0);
    let trace = gen(
        TraceKind::PortscanMix,
        &[
            "scanner_rate=40",
            "benign_rate=5",
            "duration=30",
            "silence_start=12",
            "silence=5",
        ],
        7,
    );
    let program = Arc::new(builtin("port_scan").unwrap());
    let out = run(&[Arc::clone(&program)], &trace);
    let drop = program.state_code("DROP").unwrap();
    let monitor = program.state_code("MONITOR").unwrap();

    let mut scanner: Vec<(&TraceRecord, &Verdict)> = Vec::new();
    let mut benign_packets = 0;
    for (rec, v) in trace.records.iter().zip(out.first_stage()) {
        if rec.get(Column::IpSrc) == SCANNER_IP as u64 {
            scanner.push((rec, v));
        } else {
            benign_packets += 1;
            ensure(v.post_state != drop && !v.action.is_drop(), || {
                format!("benign source {:#x} dropped at t={}", rec.get(Column::IpSrc), rec.ts)
            })?;
        }
    }
    let entered = scanner
        .iter()
        .filter(|(_, v)| v.pre_state == monitor && v.post_state == drop)
        .count();
    ensure(entered > 0, || "scanner never reached DROP".into())?;
    let mut held = 0;
    for (rec, v) in &scanner {
        let in_drop = v.post_state == drop || (v.pre_state == drop && rec.ts < v.pre_regs[1]);
        if in_drop {
            held += 1;
            ensure(v.action == Action::Drop, || {
                format!("scanner packet at t={} in DROP was {}", rec.ts, v.action)
            })?;
        }
    }
    let resume_at = ((silence_start + silence) * 1e6) as u32;
    let idx = scanner
        .iter()
        .position(|(r, _)| r.ts >= resume_at)
        .ok_or("no scanner packet after silence")?;
    let gap = scanner[idx].0.ts - scanner[idx - 1].0.ts;
    let v = scanner[idx].1;
    ensure(gap >= 5_000_000, || format!("silence only {gap} us"))?;
    ensure(v.post_state == monitor && !v.action.is_drop(), || {
        format!(
            "first packet after silence: {} -> {} {}",
            program.state_label(v.pre_state),
            program.state_label(v.post_state),
            v.action
        )
    })?;
    Ok(format!(
        "scanner entered DROP {entered}x, {held} packets held in DROP all dropped; {benign_packets} benign packets never dropped; \
         after {:.2} s silence resumed {} -> MONITOR",
        gap as f64 / 1e6,
        program.state_label(v.pre_state)
    ))
}

// 3 ------------------------------------------------------------------------

fn classifier_equivalence() -> Outcome {
    let trace = gen(TraceKind::ClassifierGrid, &[], 5);
    let program = Arc::new(builtin("c45_classifier").unwrap());
    let out = run(&[Arc::clone(&program)], &trace);
    ensure(out.stats.stages[0].context.table_full == 0, || {
        "context table overflowed".into()
    })?;
    let g = program.globals;
    let tree = web_p2p_tree(g[1] as u64, g[2] as u64, g[3] as u64);
    let decision_rows: BTreeSet<usize> = program
        .rows
        .iter()
        .filter(|r| (77..=80).contains(&r.priority))
        .map(|r| r.id)
        .collect();

    let mut flows: BTreeMap<u64, Vec<(u64, &Verdict)>> = BTreeMap::new();
    for (rec, v) in trace.records.iter().zip(out.first_stage()) {
        flows
            .entry(rec.get(Column::IpSrc))
            .or_default()
            .push((rec.pkt_len as u64, v));
    }
    let mut coverage = [[0usize; 2]; 4];
    for (src, pkts) in &flows {
        let (last, window) = pkts.split_last().expect("flows have packets");
        let sizes: Vec<u64> = window.iter().map(|(s, _)| *s).collect();
        let m = replay(&sizes);
        let v = last.1;
        ensure(decision_rows.contains(&v.row_id), || {
            format!("flow {src:#x}: decision packet hit row {}", v.row_id)
        })?;
        let regs = [
            v.pre_regs[0] as i128,
            v.pre_regs[1] as i128,
            v.pre_regs[2] as i128,
            v.pre_regs[3] as i128,
        ];
        let want = [m.count as i128, m.mean, m.var, m.total];
        ensure(regs == want, || {
            format!("flow {src:#x}: engine R0..R3 {regs:?}, replay {want:?}")
        })?;
        let features = [m.mean as u64, m.var as u64, m.total as u64];
        let class = tree.classify(&features);
        let got = program.state_label(v.post_state);
        ensure(got == class, || {
            format!("flow {src:#x} {features:?}: engine {got}, tree {class}")
        })?;
        let high_var = features[1] > g[2] as u64;
        coverage[0][high_var as usize] += 1;
        if high_var {
            coverage[1][(features[0] > g[1] as u64) as usize] += 1;
        } else {
            coverage[2][(features[2] > g[3] as u64) as usize] += 1;
        }
        coverage[3][(got == "WEB") as usize] += 1;
    }
    ensure(flows.len() >= 1000, || format!("only {} flows", flows.len()))?;
    ensure(coverage.iter().all(|c| c[0] > 0 && c[1] > 0), || {
        format!("threshold coverage incomplete: {coverage:?}")
    })?;
    Ok(format!(
        "{} flows: class and R0..R3 match; var<=/>G2 {:?}, mean<=/>G1 {:?}, bytes<=/>G3 {:?}, P2P/WEB {:?}",
        flows.len(),
        coverage[0],
        coverage[1],
        coverage[2],
        coverage[3]
    ))
}

// 4 ------------------------------------------------------------------------

const BIN: [BinOp; 7] = [
    BinOp::Xor,
    BinOp::And,
    BinOp::Or,
    BinOp::Add,
    BinOp::Sub,
    BinOp::Mul,
    BinOp::Div,
];
const IMM: [ImmOp; 7] = [
    ImmOp::Addi,
    ImmOp::Subi,
    ImmOp::Muli,
    ImmOp::Divi,
    ImmOp::Lsl,
    ImmOp::Lsr,
    ImmOp::Ror,
];

fn arb_instruction(layout: RegisterLayout) -> impl Strategy<Value = Instruction> {
    let src = (0u8..16).prop_map(move |s| layout.operand(s));
    let dst = (0u8..layout.flow_registers() + 4).prop_map(move |s| layout.operand(s));
    prop_oneof![
        Just(Instruction::Nop),
        (dst.clone(), src.clone()).prop_map(|(out, a)| Instruction::Not { out, a }),
        (0usize..7, dst.clone(), src.clone(), src.clone()).prop_map(|(i, out, a, b)| Instruction::Bin {
            op: BIN[i],
            out,
            a,
            b
        }),
        (0usize..7, dst.clone(), src.clone(), any::<u16>()).prop_map(|(i, out, a, imm)| Instruction::Imm {
            op: IMM[i],
            out,
            a,
            imm
        }),
        (dst.clone(), dst.clone(), src.clone()).prop_map(|(count, mean, sample)| Instruction::Avg {
            count,
            mean,
            sample
        }),
        (dst.clone(), dst.clone(), dst.clone(), src.clone()).prop_map(|(count, mean, var, sample)| Instruction::Var {
            count,
            mean,
            var,
            sample
        }),
        (dst.clone(), dst, src.clone(), src).prop_map(|(last_ts, acc, now, sample)| Instruction::Ewma {
            last_ts,
            acc,
            now,
            sample
        }),
    ]
    .prop_filter("valid", move |i| i.validate(layout).is_ok())
}

/// Five instructions whose destinations are all different, drawn from a
/// shuffled list of the writable operands.
fn distinct_tuple() -> impl Strategy<Value = Vec<Instruction>> {
    let layout = RegisterLayout::Standard;
    let src = (0u8..16).prop_map(move |s| layout.operand(s));
    let dsts = Just((0u8..8).map(|s| layout.operand(s)).collect::<Vec<_>>()).prop_shuffle();
    let slot = (0usize..7, 0usize..7, src.clone(), src, any::<u16>());
    (dsts, proptest::collection::vec(slot, 5)).prop_map(|(dsts, slots)| {
        let mut free = dsts.into_iter();
        slots
            .into_iter()
            .map(|(kind, op, a, b, imm)| {
                let need = match kind {
                    0 => 0,
                    4 | 6 => 2,
                    5 => 3,
                    _ => 1,
                };
                let outs: Vec<Operand> = free.by_ref().take(need).collect();
                if outs.len() < need {
                    return Instruction::Nop;
                }
                match kind {
                    0 => Instruction::Nop,
                    1 => Instruction::Not { out: outs[0], a },
                    2 => Instruction::Bin {
                        op: BIN[op],
                        out: outs[0],
                        a,
                        b,
                    },
                    3 => Instruction::Imm {
                        op: IMM[op],
                        out: outs[0],
                        a,
                        imm,
                    },
                    4 => Instruction::Avg {
                        count: outs[0],
                        mean: outs[1],
                        sample: a,
                    },
                    5 => Instruction::Var {
                        count: outs[0],
                        mean: outs[1],
                        var: outs[2],
                        sample: a,
                    },
                    _ => Instruction::Ewma {
                        last_ts: outs[0],
                        acc: outs[1],
                        now: a,
                        sample: b,
                    },
                }
            })
            .collect()
    })
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        },
        proptest::test_runner::TestRng::deterministic_rng(proptest::test_runner::RngAlgorithm::ChaCha),
    )
}

fn prop_err<T: std::fmt::Debug>(what: &str, e: proptest::test_runner::TestError<T>) -> String {
    format!("{what}: {e}")
}

fn step(tuple: &[Instruction], flow: &mut FlowRegisters, header: [u32; 8]) {
    let mut global = [0u32; 4];
    execute_tuple(
        tuple,
        flow,
        &mut global,
        &header,
        DivisionMode::Full32,
        &mut AluCounters::default(),
    );
}

fn alu_correctness() -> Outcome {
    // (a) encoding round trip, both register layouts.
    let mut samples = 0;
    for layout in [RegisterLayout::Standard, RegisterLayout::Wide] {
        runner(60_000)
            .run(&arb_instruction(layout), |insn| {
                let word = insn.encode(layout).expect("valid instructions encode");
                prop_assert_eq!(Instruction::decode(word, layout).unwrap(), insn);
                prop_assert_eq!(Instruction::parse(&insn.to_string(), layout).unwrap(), insn);
                Ok(())
            })
            .map_err(|e| prop_err("round trip", e))?;
        samples += 60_000;
    }
    // Every register-form word whose opcode byte is known either fails to
    // decode or re-encodes to itself.
    let mut register_words = 0;
    for opcode in 0u32..=0xFF {
        for fields in 0u32..=0xFFFF {
            let word = opcode << 24 | fields << 8;
            if let Ok(insn) = Instruction::decode(word, RegisterLayout::Standard) {
                ensure(insn.encode(RegisterLayout::Standard) == Ok(word), || {
                    format!("{word:#010x} does not re-encode")
                })?;
                register_words += 1;
            }
        }
    }

    // (b) ewma against the closed form.
    let ewma_case = (
        0u32..1_000_000,
        0u32..1000,
        proptest::collection::vec((0u32..40, 0u32..1000), 1..64),
    );
    runner(10_000)
        .run(&ewma_case, |(t0, acc0, steps)| {
            let insn = [Instruction::Ewma {
                last_ts: Operand::Flow(0),
                acc: Operand::Flow(1),
                now: Operand::Header(0),
                sample: Operand::Header(1),
            }];
            let mut flow = [0u32; 8];
            flow[0] = t0;
            flow[1] = acc0;
            let mut t = t0;
            let mut events = Vec::new();
            for (gap, x) in steps {
                t += gap;
                step(&insn, &mut flow, [t, x, 0, 0, 0, 0, 0, 0]);
                events.push((t as u64, x as u64));
            }
            prop_assert_eq!(flow[1] as u64, ewma(t0 as u64, acc0 as u64, &events));
            Ok(())
        })
        .map_err(|e| prop_err("ewma", e))?;

    // (c) running mean and variance against the replay.
    let avg_case = proptest::collection::vec(any::<u32>(), 1..200);
    runner(10_000)
        .run(&avg_case, |samples| {
            let insn = [Instruction::Avg {
                count: Operand::Flow(0),
                mean: Operand::Flow(1),
                sample: Operand::Header(0),
            }];
            let mut flow = [0u32; 8];
            for &x in &samples {
                step(&insn, &mut flow, [x, 0, 0, 0, 0, 0, 0, 0]);
            }
            let wide: Vec<u64> = samples.iter().map(|&x| x as u64).collect();
            let m = replay(&wide);
            prop_assert_eq!(flow[0] as u64, m.count);
            prop_assert_eq!(flow[1] as i128, m.mean);
            prop_assert!(within_of_mean(&wide, flow[1] as i128, samples.len() as i128));
            Ok(())
        })
        .map_err(|e| prop_err("avg", e))?;
    let var_case = proptest::collection::vec(0u32..65_536, 1..200);
    runner(5_000)
        .run(&var_case, |samples| {
            let insn = [Instruction::Var {
                count: Operand::Flow(0),
                mean: Operand::Flow(1),
                var: Operand::Flow(2),
                sample: Operand::Header(0),
            }];
            let mut flow = [0u32; 8];
            for &x in &samples {
                step(&insn, &mut flow, [x, 0, 0, 0, 0, 0, 0, 0]);
            }
            let m = replay(&samples.iter().map(|&x| x as u64).collect::<Vec<_>>());
            prop_assert_eq!((flow[1] as i128, flow[2] as i128), (m.mean, m.var));
            Ok(())
        })
        .map_err(|e| prop_err("var", e))?;

    // (d) order of a tuple with distinct destinations does not matter.
    let case = (
        distinct_tuple(),
        any::<[u32; 4]>(),
        any::<[u32; 4]>(),
        any::<[u32; 8]>(),
    )
        .prop_flat_map(|(t, f, g, h)| (Just(t.clone()), Just(t).prop_shuffle(), Just(f), Just(g), Just(h)));
    runner(10_000)
        .run(&case, |(tuple, shuffled, f, g, h)| {
            let mut results = Vec::new();
            for order in [&tuple, &shuffled] {
                let mut flow = [0u32; 8];
                flow[..4].copy_from_slice(&f);
                let mut global = g;
                let mut c = AluCounters::default();
                execute_tuple(order, &mut flow, &mut global, &h, DivisionMode::Full32, &mut c);
                results.push((flow, global, c));
            }
            prop_assert_eq!(results[0], results[1]);
            // Snapshot semantics: computing against an untouched view gives the same writes.
            let flow0 = {
                let mut r = [0u32; 8];
                r[..4].copy_from_slice(&f);
                r
            };
            let view = OperandView {
                flow: &flow0,
                global: &g,
                header: &h,
            };
            let w = compute_tuple(&tuple, &view, DivisionMode::Full32, &mut AluCounters::default());
            let mut replayed = flow0;
            w.apply_flow(&mut replayed);
            prop_assert_eq!(replayed, results[0].0);
            Ok(())
        })
        .map_err(|e| prop_err("permutation", e))?;

    Ok(format!(
        "{samples} encodings round-trip ({register_words} register-form words exhaustively), \
         10^4 ewma / 10^4 avg / 5000 var replays exact, 10^4 permuted tuples equal"
    ))
}

// 5 ------------------------------------------------------------------------

fn limbs_to_bits(l: &[u64; 4], width: u16) -> Bits {
    Bits::from_words(*l, width)
}

fn tcam_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut total_keys = 0;
    let mut hits = 0usize;
    for (capacity, width) in [(32usize, 128u16), (128, 160)] {
        for ruleset in 0..10 {
            // Alternate between rulesets of mostly specific and mostly broad rules.
            let densities: &[f64] = if ruleset % 2 == 0 {
                &[0.3, 0.6, 1.0]
            } else {
                &[0.0, 0.02, 0.1, 0.3]
            };
            let random_limbs = |rng: &mut ChaCha8Rng, density: f64| -> [u64; 4] {
                let mut l = [0u64; 4];
                for bit in 0..width as usize {
                    if rng.random_bool(density) {
                        l[bit / 64] |= 1 << (bit % 64);
                    }
                }
                l
            };
            let mut priorities: Vec<u32> = (0..capacity as u32 * 4).collect();
            priorities.shuffle(&mut rng);
            let mut table: TernaryTable<usize> = TernaryTable::new(width, capacity);
            let mut rules = Vec::new();
            let mut handles = Vec::new();
            for (id, &priority) in priorities.iter().take(capacity).enumerate() {
                let density = densities[rng.random_range(0..densities.len())];
                let value = random_limbs(&mut rng, 0.5);
                let mask = random_limbs(&mut rng, density);
                handles.push(
                    table
                        .insert(TernaryEntry::new(
                            limbs_to_bits(&value, width),
                            limbs_to_bits(&mask, width),
                            priority,
                            id,
                        ))
                        .map_err(|e| e.to_string())?,
                );
                rules.push(Rule {
                    value: value.to_vec(),
                    mask: mask.to_vec(),
                    priority,
                    id,
                });
            }
            for k in 0..1000 {
                if k == 500 {
                    // Remove a quarter of the rules half way through.
                    for id in 0..capacity / 4 {
                        table.remove(handles[id * 4]).map_err(|e| e.to_string())?;
                        rules.retain(|r| r.id != id * 4);
                    }
                }
                let mut key = random_limbs(&mut rng, 0.5);
                if rng.random_bool(0.7) && !rules.is_empty() {
                    // Start from a rule so that matches are common, then disturb.
                    let r = &rules[rng.random_range(0..rules.len())];
                    for (w, k) in key.iter_mut().enumerate() {
                        *k = (r.value[w] & r.mask[w]) | (*k & !r.mask[w]);
                    }
                    if rng.random_bool(0.3) {
                        let bit = rng.random_range(0..width as usize);
                        key[bit / 64] ^= 1 << (bit % 64);
                    }
                }
                let got = table
                    .lookup(&limbs_to_bits(&key, width))
                    .map_err(|e| e.to_string())?
                    .copied();
                let want = oracle_lookup(&rules, &key);
                ensure(got == want, || {
                    format!("capacity {capacity}: key {key:x?} engine {got:?} oracle {want:?}")
                })?;
                hits += want.is_some() as usize;
                total_keys += 1;
            }
        }
    }
    ensure(hits < total_keys && hits > 0, || {
        format!("degenerate key mix: {hits} of {total_keys} hit")
    })?;
    Ok(format!(
        "{total_keys} keys at capacities 32 and 128 agree ({hits} hits, {} misses)",
        total_keys - hits
    ))
}

// 6 ------------------------------------------------------------------------

fn to_oracle(ctx: FlowContext) -> Context {
    Context {
        state: ctx.state,
        regs: ctx.regs,
    }
}

fn flow_context_equivalence() -> Outcome {
    let mut total_ops = 0;
    let mut sweeps = 0;
    let mut evicted_total = 0;
    let mut peak = 0.0f64;
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + seed);
        let cfg = TableConfig {
            subtables: 4,
            buckets: 256,
            bucket_depth: 2,
            fallback_capacity: 32,
        };
        let mut table = FlowContextTable::new(cfg, seed);
        let mut model = ContextMap::new();
        for i in 0..4u32 {
            let ctx = FlowContext::new(10 + i as u16, [i; 8]);
            let mask = (0xFu128 << 124) >> (i * 4);
            let value = (rng.random::<u128>()) & mask;
            table
                .install_fallback(FallbackEntry {
                    value,
                    mask,
                    priority: i,
                    context: ctx,
                })
                .map_err(|e| e.to_string())?;
            model.add_wildcard(Wildcard {
                value,
                mask,
                priority: i,
                context: to_oracle(ctx),
            });
        }
        let keys: Vec<u128> = (0..600).map(|_| rng.random()).collect();
        for op in 0..10_000 {
            let key = keys[rng.random_range(0..keys.len())];
            let roll = rng.random_range(0..100);
            if roll < 45 {
                let (ctx, src) = table.lookup(FlowKey(key));
                let (want, wsrc) = model.lookup(key);
                let src_same = matches!(
                    (src, wsrc),
                    (ContextSource::Exact, Source::Exact)
                        | (ContextSource::Fallback, Source::Fallback)
                        | (ContextSource::Default, Source::Default)
                );
                ensure(to_oracle(ctx) == want && src_same, || {
                    format!("op {op}: lookup {key:#x} engine {ctx:?}/{src:?} model {want:?}/{wsrc:?}")
                })?;
            } else if roll < 99 {
                let ctx = if rng.random_bool(0.1) {
                    FlowContext::DEFAULT
                } else {
                    FlowContext::new(rng.random_range(0..4), rng.random())
                };
                let outcome = table.write_back(FlowKey(key), ctx);
                let created = model.store(key, to_oracle(ctx));
                ensure(outcome != WriteOutcome::TableFull, || format!("op {op}: table full"))?;
                ensure((outcome == WriteOutcome::Inserted) == created, || {
                    format!("op {op}: write {key:#x} engine {outcome:?}, model created={created}")
                })?;
            } else {
                let before: BTreeSet<u128> = table.entries().map(|(k, _, _)| k.0).collect();
                let n = table.housekeep();
                let after: BTreeSet<u128> = table.entries().map(|(k, _, _)| k.0).collect();
                let gone: Vec<u128> = before.difference(&after).copied().collect();
                let want = model.sweep();
                ensure(gone == want && n as usize == want.len(), || {
                    format!("op {op}: sweep evicted {} keys, model {}", gone.len(), want.len())
                })?;
                sweeps += 1;
                evicted_total += want.len();
            }
            peak = peak.max(table.occupancy() as f64 / table.capacity() as f64);
            total_ops += 1;
        }
        let contents: BTreeMap<u128, Context> = table.entries().map(|(k, c, _)| (k.0, to_oracle(c))).collect();
        let model_contents: BTreeMap<u128, Context> =
            model.keys().into_iter().map(|k| (k, model.get(k).unwrap())).collect();
        ensure(contents == model_contents, || {
            format!("seed {seed}: final contents differ")
        })?;
    }
    ensure(peak < 0.5, || format!("occupancy reached {:.0}%", peak * 100.0))?;
    Ok(format!(
        "{total_ops} ops, {sweeps} housekeeping scans evicting {evicted_total} idle entries, peak occupancy {:.0}%",
        peak * 100.0
    ))
}

// 7 ------------------------------------------------------------------------

fn mac_learning() -> Outcome {
    let programs = [Arc::new(builtin("mac_learning").unwrap())];
    let mut frames = 0;
    for stem in ["mac_two_hosts", "mac_multi_host"] {
        let trace = Trace::read_csv(golden(&format!("{stem}.trace.csv")).as_bytes()).map_err(|e| e.to_string())?;
        let out = run(&programs, &trace);
        let csv = verdicts_csv(&programs, &out.verdicts);
        ensure(csv == golden(&format!("{stem}.verdicts.csv")), || {
            format!("{stem}: verdicts differ from golden file:\n{csv}")
        })?;
        let mut switch = LearningSwitch::new(4);
        for (rec, action) in trace.records.iter().zip(out.actions()) {
            let want = switch.frame(rec.get(Column::EthSrc), rec.get(Column::EthDst), rec.in_port);
            ensure(action.to_string() == want.to_string(), || {
                format!("{stem} t={}: {action} vs {want}", rec.ts)
            })?;
        }
        frames += trace.len();
    }
    Ok(format!(
        "two golden traces ({frames} frames) match byte-for-byte and agree with the switch model"
    ))
}

// 8 ------------------------------------------------------------------------

fn long_flow_index() -> Outcome {
    let program = Arc::new(builtin("long_flow").unwrap());
    let n = program.globals[0];
    ensure(n == 3, || format!("bundled N is {n}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut flows_checked = 0;
    for _ in 0..100 {
        let mut labels: Vec<u32> = vec![0; 8];
        for f in 1..=4u32 {
            labels.extend(std::iter::repeat_n(f, rng.random_range(2..10)));
        }
        labels.shuffle(&mut rng);
        let records: Vec<TraceRecord> = labels
            .iter()
            .enumerate()
            .map(|(i, &f)| {
                TraceRecord::new(1000 + i as u32, 1, 100)
                    .with(Column::IpSrc, 0x0A00_0000 | f as u64)
                    .with(Column::IpDst, 0xC0A8_0001)
                    .with(Column::IpProto, 6)
                    .with(Column::Sport, 1000 + f as u64)
                    .with(Column::Dport, 80)
            })
            .collect();
        let trace = Trace::new(
            vec![
                Column::IpSrc,
                Column::IpDst,
                Column::IpProto,
                Column::Sport,
                Column::Dport,
            ],
            records,
        );
        let out = run(&[Arc::clone(&program)], &trace);
        let mut per_flow: HashMap<u32, Vec<Action>> = HashMap::new();
        for (f, a) in labels.iter().zip(out.actions()) {
            per_flow.entry(*f).or_default().push(a);
        }
        for (f, actions) in &per_flow {
            let first = actions
                .iter()
                .position(|a| matches!(a, Action::SetDscp { dscp: 10, .. }));
            let expected = (actions.len() > n as usize + 1).then_some(n as usize + 1);
            ensure(first == expected, || {
                format!(
                    "flow {f}: first mark at {first:?}, expected {expected:?} of {}",
                    actions.len()
                )
            })?;
            flows_checked += 1;
        }
    }
    Ok(format!(
        "N=3: first DSCP rewrite is packet index 4 (the 5th) in all 100 interleavings ({flows_checked} flows)"
    ))
}

// 9 ------------------------------------------------------------------------

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cases: Vec<(&str, Vec<Arc<Program>>, Trace, RunConfig)> = vec![
        (
            "port_scan",
            vec![Arc::new(builtin("port_scan").unwrap())],
            gen(TraceKind::PortscanMix, &[], 3),
            RunConfig::default(),
        ),
        (
            "token_bucket",
            vec![Arc::new(token_bucket(3, 100))],
            gen(TraceKind::BucketStress, &["n=20000", "flows=16"], 3),
            RunConfig {
                opts: EngineOptions {
                    seed: 99,
                    ..EngineOptions::default()
                },
                ..RunConfig::default()
            },
        ),
        (
            "classifier",
            vec![Arc::new(builtin("c45_classifier").unwrap())],
            gen(TraceKind::ClassifierGrid, &["means=4", "stds=4", "counts=4"], 3),
            RunConfig::default(),
        ),
        (
            "chain+hazard",
            vec![
                Arc::new(builtin("port_scan").unwrap()),
                Arc::new(builtin("long_flow").unwrap()),
            ],
            gen(TraceKind::PortscanMix, &["duration=10"], 4),
            RunConfig {
                opts: EngineOptions {
                    hazard_window: 6,
                    ..EngineOptions::default()
                },
                ..RunConfig::default()
            },
        ),
        (
            "partitioned",
            vec![Arc::new(builtin("long_flow").unwrap())],
            gen(TraceKind::PoissonFlows, &[], 4),
            RunConfig {
                partitions: 4,
                ..RunConfig::default()
            },
        ),
    ];
    let mut files = 0;
    for (name, programs, trace, cfg) in &cases {
        let mut outputs = Vec::new();
        for attempt in 0..2 {
            let out = run_trace(programs, trace, cfg).map_err(|e| e.to_string())?;
            let v = dir.path().join(format!("{name}-{attempt}.verdicts.csv"));
            let s = dir.path().join(format!("{name}-{attempt}.stats.json"));
            std::fs::write(&v, verdicts_csv(programs, &out.verdicts)).map_err(|e| e.to_string())?;
            std::fs::write(&s, out.stats.to_json()).map_err(|e| e.to_string())?;
            outputs.push((std::fs::read(&v).unwrap(), std::fs::read(&s).unwrap()));
            files += 2;
        }
        ensure(outputs[0] == outputs[1], || format!("{name}: repeated run differs"))?;
    }
    for kind in TraceKind::ALL {
        let small: &[&str] = match kind {
            TraceKind::BucketStress => &["n=5000"],
            TraceKind::ClassifierGrid => &["means=3", "stds=3", "counts=3"],
            _ => &["duration=3"],
        };
        ensure(
            gen(kind, small, 21).to_csv_string() == gen(kind, small, 21).to_csv_string(),
            || format!("gen-trace {kind} not reproducible"),
        )?;
    }
    Ok(format!(
        "{} configurations, {files} output files byte-identical across repeats; 4 generators reproducible",
        cases.len()
    ))
}

fn main() -> ExitCode {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 9] = [
        ("token-bucket equivalence", token_bucket_equivalence),
        ("port-scan behaviour", port_scan_behaviour),
        ("classifier equivalence", classifier_equivalence),
        ("ALU correctness", alu_correctness),
        ("TCAM oracle equivalence", tcam_equivalence),
        ("flow-context model equivalence", flow_context_equivalence),
        ("MAC learning golden traces", mac_learning),
        ("long-flow marking index", long_flow_index),
        ("determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.iter().any(|x| x == &n.to_string() || name.contains(x.as_str())) {
            continue;
        }
        let started = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {n} PASS [{name}] {detail} ({secs:.2} s)"),
            Err(why) => {
                failed += 1;
                println!("criterion {n} FAIL [{name}] {why} ({secs:.2} s)");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
