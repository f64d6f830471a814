//! Associative-map model of the flow-context table.
//!
//! Unbounded, so it only agrees with the hashed table while the latter has
//! room for every flow.

use std::collections::HashMap;

pub type Registers = [u32; 8];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Context {
    pub state: u16,
    pub regs: Registers,
}

impl Context {
    pub const DEFAULT: Context = Context { state: 0, regs: [0; 8] };
}

/// Where a lookup result came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Exact,
    Fallback,
    Default,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Wildcard {
    pub value: u128,
    pub mask: u128,
    pub priority: u32,
    pub context: Context,
}

#[derive(Debug, Clone, Default)]
pub struct ContextMap {
    entries: HashMap<u128, (Context, bool)>,
    wildcards: Vec<Wildcard>,
}

impl ContextMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_wildcard(&mut self, w: Wildcard) {
        self.wildcards.push(w);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// An exact entry, else the best wildcard, else the all-zero context.
    /// Exact hits are marked recently used.
    pub fn lookup(&mut self, key: u128) -> (Context, Source) {
        if let Some((ctx, used)) = self.entries.get_mut(&key) {
            *used = true;
            return (*ctx, Source::Exact);
        }
        let best = self
            .wildcards
            .iter()
            .filter(|w| key & w.mask == w.value & w.mask)
            .max_by_key(|w| w.priority);
        match best {
            Some(w) => (w.context, Source::Fallback),
            None => (Context::DEFAULT, Source::Default),
        }
    }

    /// Stores `ctx`. A new flow whose context is still the default is not
    /// materialized. Returns true when an entry was created.
    pub fn store(&mut self, key: u128, ctx: Context) -> bool {
        if let Some(e) = self.entries.get_mut(&key) {
            *e = (ctx, true);
            return false;
        }
        if ctx == Context::DEFAULT {
            return false;
        }
        self.entries.insert(key, (ctx, true));
        true
    }

    /// One management pass: entries untouched since the previous pass are
    /// dropped, the rest are marked unused. Returns the dropped keys, sorted.
    pub fn sweep(&mut self) -> Vec<u128> {
        let mut gone: Vec<u128> = self
            .entries
            .iter()
            .filter(|(_, (_, used))| !used)
            .map(|(k, _)| *k)
            .collect();
        gone.sort_unstable();
        for k in &gone {
            self.entries.remove(k);
        }
        for (_, used) in self.entries.values_mut() {
            *used = false;
        }
        gone
    }

    pub fn get(&self, key: u128) -> Option<Context> {
        self.entries.get(&key).map(|(c, _)| *c)
    }

    pub fn keys(&self) -> Vec<u128> {
        let mut k: Vec<u128> = self.entries.keys().copied().collect();
        k.sort_unstable();
        k
    }
}
