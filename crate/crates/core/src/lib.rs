//! Simulation core for energy-aware heterogeneous federated learning.
//!
//! Every simulated device trains the full network through an emulated
//! systolic-array accelerator whose MAC units may use compressed bfloat
//! storage formats and approximate (logarithmic) mantissa multipliers. An
//! analytical energy model charges every MAC, SIMD operation and SRAM/DRAM
//! access of a training step.
//!
//! The crate is `no_std` and only needs `alloc`; file formats, configuration
//! and the command line live in the companion `approxfl` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod accel;
pub mod arith;
pub mod baselines;
pub mod dataset;
pub mod error;
pub mod fl;
pub mod metrics;
pub mod nn;
pub mod partition;
pub mod presets;
pub mod rng;
pub mod sum;
pub mod tensor;

pub use error::{Error, Result};
