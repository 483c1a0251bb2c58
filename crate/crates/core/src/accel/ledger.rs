//! Pricing of access counts into per-component energy.

use serde::{Deserialize, Serialize};

use crate::accel::config::AcceleratorConfig;
use crate::accel::count::{count_accesses, AccessCounts, Buffer};
use crate::accel::table::EnergyTable;
use crate::error::Result;
use crate::nn::{ModelSpec, Network, TrainStepTrace};

const PJ: f64 = 1e-12;

/// Energy of some training work, split by component, in joules.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub sa_j: f64,
    pub simd_j: f64,
    /// Per buffer, indexed by [`Buffer::index`].
    pub sram_j: [f64; 5],
    pub dram_j: f64,
    /// The integer counts the joules were priced from.
    pub counts: AccessCounts,
}

/// Fractions of the total energy per component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub sa: f64,
    pub simd: f64,
    pub sram: f64,
    pub dram: f64,
}

impl EnergyLedger {
    pub fn sram_total_j(&self) -> f64 {
        self.sram_j.iter().sum()
    }

    pub fn sram_buffer_j(&self, buffer: Buffer) -> f64 {
        self.sram_j[buffer.index()]
    }

    /// Memory (DRAM + SRAM) plus compute (SA + SIMD).
    pub fn total_j(&self) -> f64 {
        (self.dram_j + self.sram_total_j()) + (self.sa_j + self.simd_j)
    }

    pub fn add(&mut self, other: &EnergyLedger) {
        self.sa_j += other.sa_j;
        self.simd_j += other.simd_j;
        for (a, b) in self.sram_j.iter_mut().zip(other.sram_j) {
            *a += b;
        }
        self.dram_j += other.dram_j;
        self.counts.add(&other.counts);
    }

    pub fn breakdown(&self) -> Breakdown {
        let t = self.total_j();
        let share = |x: f64| if t > 0.0 { x / t } else { 0.0 };
        Breakdown {
            sa: share(self.sa_j),
            simd: share(self.simd_j),
            sram: share(self.sram_total_j()),
            dram: share(self.dram_j),
        }
    }
}

/// Price integer counts with the unit costs of `table` for design `cfg`.
pub fn price(counts: &AccessCounts, cfg: &AcceleratorConfig, table: &EnergyTable) -> Result<EnergyLedger> {
    let mac = table.mac_pj(cfg.multiplier.mantissa_bits, cfg.multiplier.kind)?;
    let sram = table.sram_pj_per_bit(cfg.sram_bus_bits)?;
    let t = counts.total();
    let mut sram_j = [0.0; 5];
    for (j, bits) in sram_j.iter_mut().zip(t.sram_bits) {
        *j = bits as f64 * sram * PJ;
    }
    Ok(EnergyLedger {
        sa_j: t.sa_charged as f64 * mac * PJ,
        simd_j: t.simd_ops as f64 * table.alu_pj * PJ,
        sram_j,
        dram_j: t.dram_bits as f64 * table.dram_pj_per_bit * PJ,
        counts: *counts,
    })
}

/// Energy of the training work recorded in `trace`.
pub fn trace_energy(trace: &TrainStepTrace, cfg: &AcceleratorConfig, table: &EnergyTable) -> Result<EnergyLedger> {
    cfg.validate()?;
    price(&count_accesses(trace, cfg)?, cfg, table)
}

/// Energy of one training mini-batch (forward, backward and SGD update) of
/// `spec` with `batch` samples.
pub fn minibatch_energy(spec: &ModelSpec, cfg: &AcceleratorConfig, table: &EnergyTable, batch: usize) -> Result<EnergyLedger> {
    let net = Network::compile(spec)?;
    trace_energy(&TrainStepTrace::single(&net, batch), cfg, table)
}
