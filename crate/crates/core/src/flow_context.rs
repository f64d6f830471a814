//! Flow Context Table: a d-left hash table of per-flow contexts with a
//! wildcard TCAM fallback and default-context synthesis.
//!
//! Each key has one candidate bucket per subtable. New contexts go to the
//! least-loaded candidate bucket, leftmost on ties. A key lives in at most one
//! cell. Housekeeping ages entries ACTIVE -> INACTIVE -> DELETED; DELETED cells
//! are freed on the spot.

use serde::{Deserialize, Serialize};

use crate::bits::Bits;
use crate::extractor::FlowKey;
use crate::operand::{FlowRegisters, MAX_FLOW_REGISTERS};
use crate::tcam::{TcamError, TernaryEntry, TernaryTable, DEFAULT_FALLBACK_CAPACITY};

pub const DEFAULT_SUBTABLES: usize = 4;
pub const DEFAULT_BUCKETS: usize = 1024;
pub const DEFAULT_BUCKET_DEPTH: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct FlowContext {
    pub state: u16,
    pub regs: FlowRegisters,
}

impl FlowContext {
    pub const DEFAULT: FlowContext = FlowContext {
        state: 0,
        regs: [0; MAX_FLOW_REGISTERS],
    };

    pub fn new(state: u16, regs: FlowRegisters) -> Self {
        FlowContext { state, regs }
    }

    pub fn is_default(&self) -> bool {
        *self == FlowContext::DEFAULT
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Activity {
    Active,
    Inactive,
    Deleted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextSource {
    Exact,
    Fallback,
    Default,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TableConfig {
    pub subtables: usize,
    pub buckets: usize,
    pub bucket_depth: usize,
    pub fallback_capacity: usize,
}

impl Default for TableConfig {
    fn default() -> Self {
        TableConfig {
            subtables: DEFAULT_SUBTABLES,
            buckets: DEFAULT_BUCKETS,
            bucket_depth: DEFAULT_BUCKET_DEPTH,
            fallback_capacity: DEFAULT_FALLBACK_CAPACITY,
        }
    }
}

impl TableConfig {
    pub fn capacity(&self) -> usize {
        self.subtables * self.buckets * self.bucket_depth
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.subtables == 0 || self.buckets == 0 || self.bucket_depth == 0 {
            return Err("table dimensions must be non-zero".into());
        }
        if self.capacity() > 1 << 24 {
            return Err(format!("table capacity {} is unreasonably large", self.capacity()));
        }
        Ok(())
    }
}

/// Wildcard fallback rule over the 128-bit flow key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FallbackEntry {
    pub value: u128,
    pub mask: u128,
    pub priority: u32,
    pub context: FlowContext,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ContextStats {
    pub occupancy: u64,
    pub high_water: u64,
    pub inserts: u64,
    pub evictions: u64,
    pub table_full: u64,
    pub exact_hits: u64,
    pub fallback_hits: u64,
    pub default_hits: u64,
}

impl ContextStats {
    /// Sums counters of independent tables.
    pub fn merge(&mut self, o: &ContextStats) {
        self.occupancy += o.occupancy;
        self.high_water += o.high_water;
        self.inserts += o.inserts;
        self.evictions += o.evictions;
        self.table_full += o.table_full;
        self.exact_hits += o.exact_hits;
        self.fallback_hits += o.fallback_hits;
        self.default_hits += o.default_hits;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Cell {
    key: u128,
    ctx: FlowContext,
    flag: Activity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WriteOutcome {
    Updated,
    Inserted,
    Elided,
    TableFull,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-subtable seeds derived from one run seed.
pub fn derive_seeds(seed: u64, d: usize) -> Vec<u64> {
    (0..d as u64)
        .map(|i| splitmix64(seed ^ splitmix64(i.wrapping_add(0xD1B5_4A32_D192_ED03))))
        .collect()
}

pub fn bucket_hash(key: u128, seed: u64) -> u64 {
    let lo = key as u64;
    let hi = (key >> 64) as u64;
    splitmix64(splitmix64(lo ^ seed) ^ hi.rotate_left(29) ^ seed.rotate_left(7))
}

#[derive(Debug, Clone)]
pub struct FlowContextTable {
    cfg: TableConfig,
    seeds: Vec<u64>,
    cells: Vec<Option<Cell>>,
    fallback: TernaryTable<FlowContext>,
    stats: ContextStats,
}

impl FlowContextTable {
    pub fn new(cfg: TableConfig, seed: u64) -> Self {
        let seeds = derive_seeds(seed, cfg.subtables);
        FlowContextTable::with_seeds(cfg, seeds)
    }

    pub fn with_seeds(cfg: TableConfig, seeds: Vec<u64>) -> Self {
        assert_eq!(seeds.len(), cfg.subtables, "one seed per subtable");
        FlowContextTable {
            cells: vec![None; cfg.capacity()],
            fallback: TernaryTable::new(128, cfg.fallback_capacity),
            cfg,
            seeds,
            stats: ContextStats::default(),
        }
    }

    pub fn config(&self) -> &TableConfig {
        &self.cfg
    }

    pub fn seeds(&self) -> &[u64] {
        &self.seeds
    }

    pub fn stats(&self) -> &ContextStats {
        &self.stats
    }

    pub fn occupancy(&self) -> usize {
        self.stats.occupancy as usize
    }

    pub fn capacity(&self) -> usize {
        self.cfg.capacity()
    }

    pub fn install_fallback(&mut self, entry: FallbackEntry) -> Result<(), TcamError> {
        self.fallback.insert(TernaryEntry::new(
            Bits::from_u128(entry.value, 128),
            Bits::from_u128(entry.mask, 128),
            entry.priority,
            entry.context,
        ))?;
        Ok(())
    }

    /// Candidate bucket index in subtable `t`.
    pub fn bucket_of(&self, key: FlowKey, t: usize) -> usize {
        (bucket_hash(key.0, self.seeds[t]) % self.cfg.buckets as u64) as usize
    }

    fn bucket_range(&self, key: FlowKey, t: usize) -> std::ops::Range<usize> {
        let start = (t * self.cfg.buckets + self.bucket_of(key, t)) * self.cfg.bucket_depth;
        start..start + self.cfg.bucket_depth
    }

    fn find(&self, key: FlowKey) -> Option<usize> {
        (0..self.cfg.subtables).find_map(|t| {
            self.bucket_range(key, t)
                .find(|&i| matches!(self.cells[i], Some(c) if c.key == key.0))
        })
    }

    /// Exact hit, else wildcard fallback, else the default context. Exact hits are marked ACTIVE.
    pub fn lookup(&mut self, key: FlowKey) -> (FlowContext, ContextSource) {
        if let Some(i) = self.find(key) {
            let cell = self.cells[i].as_mut().expect("found cell is occupied");
            cell.flag = Activity::Active;
            self.stats.exact_hits += 1;
            return (cell.ctx, ContextSource::Exact);
        }
        let key_bits = Bits::from_u128(key.0, 128);
        if let Ok(Some(ctx)) = self.fallback.lookup(&key_bits) {
            self.stats.fallback_hits += 1;
            return (*ctx, ContextSource::Fallback);
        }
        self.stats.default_hits += 1;
        (FlowContext::DEFAULT, ContextSource::Default)
    }

    /// Read-only probe that neither marks activity nor counts.
    pub fn peek(&self, key: FlowKey) -> Option<(FlowContext, Activity)> {
        self.find(key).and_then(|i| self.cells[i]).map(|c| (c.ctx, c.flag))
    }

    pub fn write_back(&mut self, key: FlowKey, ctx: FlowContext) -> WriteOutcome {
        if let Some(i) = self.find(key) {
            let cell = self.cells[i].as_mut().expect("found cell is occupied");
            cell.ctx = ctx;
            cell.flag = Activity::Active;
            return WriteOutcome::Updated;
        }
        if ctx.is_default() {
            return WriteOutcome::Elided;
        }
        let mut best: Option<(usize, usize)> = None;
        for t in 0..self.cfg.subtables {
            let range = self.bucket_range(key, t);
            let load = range.clone().filter(|&i| self.cells[i].is_some()).count();
            if load < self.cfg.bucket_depth && best.is_none_or(|(_, l)| load < l) {
                let free = range
                    .clone()
                    .find(|&i| self.cells[i].is_none())
                    .expect("bucket below depth has a free cell");
                best = Some((free, load));
            }
        }
        match best {
            Some((i, _)) => {
                self.cells[i] = Some(Cell {
                    key: key.0,
                    ctx,
                    flag: Activity::Active,
                });
                self.stats.inserts += 1;
                self.stats.occupancy += 1;
                self.stats.high_water = self.stats.high_water.max(self.stats.occupancy);
                WriteOutcome::Inserted
            }
            None => {
                self.stats.table_full += 1;
                WriteOutcome::TableFull
            }
        }
    }

    /// One management scan; returns the number of evicted entries.
    pub fn housekeep(&mut self) -> u64 {
        let mut evicted = 0;
        for slot in self.cells.iter_mut() {
            if let Some(cell) = slot {
                match cell.flag {
                    Activity::Active => cell.flag = Activity::Inactive,
                    Activity::Inactive | Activity::Deleted => {
                        *slot = None;
                        evicted += 1;
                    }
                }
            }
        }
        self.stats.evictions += evicted;
        self.stats.occupancy -= evicted;
        evicted
    }

    /// Occupied cells as (key, context, flag), in table order.
    pub fn entries(&self) -> impl Iterator<Item = (FlowKey, FlowContext, Activity)> + '_ {
        self.cells.iter().flatten().map(|c| (FlowKey(c.key), c.ctx, c.flag))
    }
}
