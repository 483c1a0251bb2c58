//! Per-operation and per-bit energy costs.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::arith::MultiplierKind;
use crate::error::{Error, Result};

/// Energy of one MAC operation for a storage width and multiplier kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MacCost {
    pub mantissa_bits: u8,
    pub multiplier: MultiplierKind,
    pub pj: f64,
}

/// SRAM access energy per bit for a bus width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SramCost {
    pub bus_bits: u32,
    pub pj_per_bit: f64,
}

/// Unit energy costs of the accelerator components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyTable {
    pub mac: Vec<MacCost>,
    /// FP32 SIMD ALU operation.
    pub alu_pj: f64,
    pub sram: Vec<SramCost>,
    pub dram_pj_per_bit: f64,
}

impl Default for EnergyTable {
    /// Synthesised 45 nm unit costs: FP32 exact 26.8 pJ, bfloat16 exact
    /// 5.35 pJ, bfloat16 MBM-7 3.11 pJ, bfloat12 MBM-3 2.78 pJ, bfloat10
    /// MBM-1 2.65 pJ per MAC; FP32 ALU 31.4 pJ per op; SRAM 0.401 pJ/bit on a
    /// 64-bit bus and 0.412 pJ/bit on a 60-bit bus; DRAM 41.0 pJ/bit.
    ///
    /// Mitchell multipliers have no measured cost; they are priced like the
    /// MBM of the same width (the correction adder is their only
    /// difference, so this is an upper bound).
    fn default() -> Self {
        let mac = |mantissa_bits, multiplier, pj| MacCost {
            mantissa_bits,
            multiplier,
            pj,
        };
        EnergyTable {
            mac: vec![
                mac(23, MultiplierKind::Exact, 26.8),
                mac(7, MultiplierKind::Exact, 5.35),
                mac(7, MultiplierKind::Mbm, 3.11),
                mac(3, MultiplierKind::Mbm, 2.78),
                mac(1, MultiplierKind::Mbm, 2.65),
                mac(7, MultiplierKind::Mitchell, 3.11),
                mac(3, MultiplierKind::Mitchell, 2.78),
                mac(1, MultiplierKind::Mitchell, 2.65),
            ],
            alu_pj: 31.4,
            sram: vec![
                SramCost {
                    bus_bits: 64,
                    pj_per_bit: 0.401,
                },
                SramCost {
                    bus_bits: 60,
                    pj_per_bit: 0.412,
                },
            ],
            dram_pj_per_bit: 41.0,
        }
    }
}

impl EnergyTable {
    pub fn mac_pj(&self, mantissa_bits: u8, multiplier: MultiplierKind) -> Result<f64> {
        self.mac
            .iter()
            .find(|c| c.mantissa_bits == mantissa_bits && c.multiplier == multiplier)
            .map(|c| c.pj)
            .ok_or_else(|| {
                Error::config(alloc::format!(
                    "energy table has no MAC cost for {multiplier:?} with {mantissa_bits} mantissa bits"
                ))
            })
    }

    pub fn sram_pj_per_bit(&self, bus_bits: u32) -> Result<f64> {
        self.sram
            .iter()
            .find(|c| c.bus_bits == bus_bits)
            .map(|c| c.pj_per_bit)
            .ok_or_else(|| Error::config(alloc::format!("energy table has no SRAM cost for a {bus_bits}-bit bus")))
    }

    pub fn validate(&self) -> Result<()> {
        let costs = self
            .mac
            .iter()
            .map(|c| c.pj)
            .chain(self.sram.iter().map(|c| c.pj_per_bit))
            .chain([self.alu_pj, self.dram_pj_per_bit]);
        for c in costs {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::config("energy costs must be positive and finite"));
            }
        }
        Ok(())
    }
}
