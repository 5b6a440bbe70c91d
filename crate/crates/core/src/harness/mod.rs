//! File formats, synthetic benchmarks and experiment orchestration.

pub mod experiment;
pub mod io;
pub mod synth;
