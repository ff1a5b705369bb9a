//! Discrete-event simulation of on-demand distance-vector routing over
//! Bluetooth scatternets.

pub mod aodv;
pub mod baseband;
pub mod cli;
pub mod metrics;
pub mod scenario;
pub mod simkernel;
pub mod topology;

/// Simulation time in microseconds.
pub type Micros = u64;
