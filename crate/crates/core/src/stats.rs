//! Run statistics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::extractor::IngestMode;
use crate::flow_context::ContextStats;
use crate::operand::GLOBAL_REGISTERS;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StageStats {
    pub program: String,
    pub packets: u64,
    pub per_action: BTreeMap<String, u64>,
    /// Keyed by `pre_state:row_id`.
    pub per_transition: BTreeMap<String, u64>,
    pub context: ContextStats,
    pub housekeeping_scans: u64,
    pub div_by_zero: u64,
    pub ewma_time_reversal: u64,
    pub truncations: u64,
    pub hash_seeds: Vec<String>,
    pub globals: [u32; GLOBAL_REGISTERS],
}

fn merge_counts(into: &mut BTreeMap<String, u64>, from: &BTreeMap<String, u64>) {
    for (k, v) in from {
        *into.entry(k.clone()).or_default() += v;
    }
}

impl StageStats {
    /// Combines the stats of two independent instances of the same stage.
    /// Occupancy figures become sums over the instances; scans take the maximum.
    pub fn merge(&mut self, o: &StageStats) {
        self.packets += o.packets;
        merge_counts(&mut self.per_action, &o.per_action);
        merge_counts(&mut self.per_transition, &o.per_transition);
        self.context.merge(&o.context);
        self.housekeeping_scans = self.housekeeping_scans.max(o.housekeeping_scans);
        self.div_by_zero += o.div_by_zero;
        self.ewma_time_reversal += o.ewma_time_reversal;
        self.truncations += o.truncations;
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunStats {
    pub packets: u64,
    /// Packet-level outcome after the whole chain.
    pub per_action: BTreeMap<String, u64>,
    pub stages: Vec<StageStats>,
    pub seed: u64,
    pub hazard_window: u32,
    pub hw_faithful_div: bool,
    pub mode: IngestMode,
    pub partitions: usize,
    /// Wall-clock rate; only filled in when explicitly requested so that
    /// stats files stay reproducible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub throughput_pps: Option<f64>,
}

impl RunStats {
    pub fn action_total(&self) -> u64 {
        self.per_action.values().sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize") + "\n"
    }

    /// Merges the stats of a disjoint partition of the same run.
    pub fn merge(&mut self, o: &RunStats) {
        self.packets += o.packets;
        merge_counts(&mut self.per_action, &o.per_action);
        if self.stages.is_empty() {
            self.stages = o.stages.clone();
        } else {
            for (a, b) in self.stages.iter_mut().zip(&o.stages) {
                a.merge(b);
            }
        }
    }
}
