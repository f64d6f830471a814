//! Reference models for the packet-processing engine.
//!
//! Everything here is written directly from the textbook definitions and
//! shares no code with `opp-core`; the engine's tests compare the two.

pub mod context;
pub mod mac;
pub mod stats;
pub mod tcam;
pub mod token_bucket;
pub mod tree;
