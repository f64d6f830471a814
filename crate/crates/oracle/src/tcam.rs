//! Linear-scan ternary match.

use serde::{Deserialize, Serialize};

/// Keys, values and masks as 64-bit limbs, least significant limb first.
/// A mask bit of 1 means the key bit must equal the value bit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub value: Vec<u64>,
    pub mask: Vec<u64>,
    pub priority: u32,
    pub id: usize,
}

impl Rule {
    pub fn matches(&self, key: &[u64]) -> bool {
        key.iter()
            .zip(&self.value)
            .zip(&self.mask)
            .all(|((k, v), m)| (k ^ v) & m == 0)
    }
}

/// Id of the highest-priority matching rule. Priorities are expected to be
/// distinct; on a tie the rule listed first wins.
pub fn lookup(rules: &[Rule], key: &[u64]) -> Option<usize> {
    let mut best: Option<&Rule> = None;
    for r in rules {
        if r.matches(key) && best.is_none_or(|b| r.priority > b.priority) {
            best = Some(r);
        }
    }
    best.map(|r| r.id)
}
