//! Software ternary content-addressable memory.
//!
//! Entries are kept sorted by descending priority and a lookup returns the
//! first entry whose masked key equals its value. Priorities are unique per
//! table, so the result never depends on insertion order.

use thiserror::Error;

use crate::bits::Bits;

/// Default capacity of the flow-context wildcard fallback table.
pub const DEFAULT_FALLBACK_CAPACITY: usize = 32;
/// Default capacity of the XFSM transition table.
pub const DEFAULT_XFSM_CAPACITY: usize = 128;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TcamError {
    #[error("table full ({0} entries)")]
    TableFull(usize),
    #[error("priority {0} already in use")]
    DuplicatePriority(u32),
    #[error("width mismatch: table is {table} bits, got {got}")]
    WidthMismatch { table: u16, got: u16 },
    #[error("unknown entry handle {0:?}")]
    UnknownHandle(Handle),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Handle(u64);

/// One value/mask rule. A mask bit of 1 means the key bit must match.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TernaryEntry<P> {
    value: Bits,
    mask: Bits,
    priority: u32,
    payload: P,
}

impl<P> TernaryEntry<P> {
    /// Builds an entry, clearing value bits that the mask ignores.
    pub fn new(value: Bits, mask: Bits, priority: u32, payload: P) -> Self {
        TernaryEntry {
            value: value.and(&mask),
            mask,
            priority,
            payload,
        }
    }

    pub fn value(&self) -> &Bits {
        &self.value
    }

    pub fn mask(&self) -> &Bits {
        &self.mask
    }

    pub fn priority(&self) -> u32 {
        self.priority
    }

    pub fn payload(&self) -> &P {
        &self.payload
    }

    pub fn matches(&self, key: &Bits) -> bool {
        key.matches(&self.value, &self.mask)
    }
}

#[derive(Debug, Clone)]
pub struct TernaryTable<P> {
    width: u16,
    capacity: usize,
    entries: Vec<(Handle, TernaryEntry<P>)>,
    next_handle: u64,
}

impl<P> TernaryTable<P> {
    pub fn new(width: u16, capacity: usize) -> Self {
        TernaryTable {
            width,
            capacity,
            entries: Vec::with_capacity(capacity.min(1024)),
            next_handle: 0,
        }
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, entry: TernaryEntry<P>) -> Result<Handle, TcamError> {
        for got in [entry.value.width(), entry.mask.width()] {
            if got != self.width {
                return Err(TcamError::WidthMismatch { table: self.width, got });
            }
        }
        if self.entries.len() >= self.capacity {
            return Err(TcamError::TableFull(self.capacity));
        }
        // Sorted descending, so the insertion point is after every higher priority.
        let pos = match self.entries.binary_search_by(|(_, e)| entry.priority.cmp(&e.priority)) {
            Ok(_) => return Err(TcamError::DuplicatePriority(entry.priority)),
            Err(pos) => pos,
        };
        let handle = Handle(self.next_handle);
        self.next_handle += 1;
        self.entries.insert(pos, (handle, entry));
        Ok(handle)
    }

    pub fn remove(&mut self, handle: Handle) -> Result<TernaryEntry<P>, TcamError> {
        let pos = self
            .entries
            .iter()
            .position(|(h, _)| *h == handle)
            .ok_or(TcamError::UnknownHandle(handle))?;
        Ok(self.entries.remove(pos).1)
    }

    /// Highest-priority entry matching `key`.
    pub fn lookup_entry(&self, key: &Bits) -> Result<Option<&TernaryEntry<P>>, TcamError> {
        if key.width() != self.width {
            return Err(TcamError::WidthMismatch {
                table: self.width,
                got: key.width(),
            });
        }
        Ok(self.entries.iter().map(|(_, e)| e).find(|e| e.matches(key)))
    }

    pub fn lookup(&self, key: &Bits) -> Result<Option<&P>, TcamError> {
        Ok(self.lookup_entry(key)?.map(|e| &e.payload))
    }

    /// Entries in priority order, highest first.
    pub fn entries(&self) -> impl Iterator<Item = &TernaryEntry<P>> {
        self.entries.iter().map(|(_, e)| e)
    }
}
