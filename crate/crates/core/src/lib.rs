//! Software model of an Open Packet Processor stage: an extended finite
//! state machine engine with per-flow contexts, programmable conditions and
//! a parallel register-update ALU.

pub mod action;
pub mod alu;
pub mod api;
pub mod bits;
pub mod calibrate;
pub mod condition;
pub mod engine;
pub mod extractor;
pub mod flow_context;
pub mod frame;
pub mod gen;
pub mod operand;
#[cfg(feature = "pcap")]
pub mod pcap;
pub mod program;
pub mod runner;
pub mod stats;
pub mod tcam;
pub mod trace;
