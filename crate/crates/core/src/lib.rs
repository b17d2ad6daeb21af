//! Cycle-level profiling of sequential and fork/join data pipelines.
//!
//! The crate records per-thread span events around pipeline executions
//! ([`probe`], [`recorder`]), reconstructs per-stream profiles offline
//! ([`reconstruct`]), estimates and removes instrumentation cost
//! ([`calibration`]), and reports hot locations, nesting heatmaps and load
//! balance ([`analysis`]). [`bench`] holds synthetic workloads and the
//! accuracy/overhead experiment runner.

pub mod codec;
pub mod cycles;
pub mod probe;
pub mod recorder;
pub mod reconstruct;
pub mod stats;
pub mod calibration;
pub mod analysis;
pub mod bench;
pub mod cli;
