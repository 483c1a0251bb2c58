//! Analytical energy model of the training accelerator: a 16×16
//! weight-stationary systolic array, a 16-lane FP32 SIMD unit, five SRAM
//! buffers and off-chip DRAM.

pub mod config;
pub mod count;
pub mod ledger;
pub mod table;

pub use config::{AccelPreset, AcceleratorConfig, RowMapping, SimdCosts};
pub use count::{count_accesses, dram_footprint, tile, tile_conv, AccessCounts, Buffer, PhaseCounts, Tiling};
pub use ledger::{minibatch_energy, price, trace_energy, Breakdown, EnergyLedger};
pub use table::{EnergyTable, MacCost, SramCost};
