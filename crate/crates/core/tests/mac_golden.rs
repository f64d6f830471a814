use std::sync::Arc;

use opp_core::program::builtin;
use opp_core::runner::{run_trace, verdicts_csv, RunConfig};
use opp_core::trace::{Column, Trace};
use opp_oracle::mac::LearningSwitch;

fn golden(name: &str) -> String {
    std::fs::read_to_string(format!("{}/tests/golden/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

fn check(stem: &str) {
    let trace = Trace::read_csv(golden(&format!("{stem}.trace.csv")).as_bytes()).unwrap();
    let programs = [Arc::new(builtin("mac_learning").unwrap())];
    let out = run_trace(&programs, &trace, &RunConfig::default()).unwrap();
    assert_eq!(
        verdicts_csv(&programs, &out.verdicts),
        golden(&format!("{stem}.verdicts.csv"))
    );

    let mut switch = LearningSwitch::new(4);
    for (rec, action) in trace.records.iter().zip(out.actions()) {
        let expected = switch.frame(rec.get(Column::EthSrc), rec.get(Column::EthDst), rec.in_port);
        assert_eq!(action.to_string(), expected.to_string(), "at ts {}", rec.ts);
    }
}

#[test]
fn two_hosts() {
    check("mac_two_hosts");
}

#[test]
fn multi_host_with_moves() {
    check("mac_multi_host");
}
