//! Learning-switch model.

use std::collections::HashMap;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Forward(u16),
    Flood,
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Decision::Forward(p) => write!(f, "FORWARD({p})"),
            Decision::Flood => f.write_str("FLOOD"),
        }
    }
}

/// Ports are numbered `1..=ports`. A frame arriving on any other port
/// makes the switch forget its source address.
#[derive(Debug, Clone)]
pub struct LearningSwitch {
    ports: u16,
    table: HashMap<u64, u16>,
}

impl LearningSwitch {
    pub fn new(ports: u16) -> Self {
        LearningSwitch {
            ports,
            table: HashMap::new(),
        }
    }

    /// Decides on the destination as known before this frame, then learns
    /// the source.
    pub fn frame(&mut self, src: u64, dst: u64, in_port: u16) -> Decision {
        let d = match self.table.get(&dst) {
            Some(&p) => Decision::Forward(p),
            None => Decision::Flood,
        };
        if (1..=self.ports).contains(&in_port) {
            self.table.insert(src, in_port);
        } else {
            self.table.remove(&src);
        }
        d
    }

    pub fn port_of(&self, mac: u64) -> Option<u16> {
        self.table.get(&mac).copied()
    }
}
