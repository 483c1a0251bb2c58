//! Accelerator geometry, numerics and SIMD operation costs.

use serde::{Deserialize, Serialize};

use crate::arith::{FloatFormat, MultiplierSpec};
use crate::error::{Error, Result};
use crate::nn::SaNumerics;

/// How a convolution's reduction dimension is laid onto the array rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowMapping {
    /// Input channels across rows; the `k×k` kernel taps are iterated in
    /// time, each tap being one weight-stationary pass.
    #[default]
    ChannelRows,
    /// Unrolled `channels·k²` window across rows (im2col).
    Im2col,
}

/// Number of SIMD ALU operations charged per element for each non-SA
/// operation, and SIMD memory traffic per operation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimdCosts {
    /// Batch norm per element: normalise, scale, shift, statistics (forward).
    pub batch_norm_forward: u64,
    pub batch_norm_backward: u64,
    pub relu_forward: u64,
    pub relu_backward: u64,
    pub residual_add_forward: u64,
    pub residual_add_backward: u64,
    /// Per input element.
    pub pool_forward: u64,
    pub pool_backward: u64,
    /// Per logit: max, subtract, exp, sum, divide.
    pub loss_forward: u64,
    pub loss_backward: u64,
    /// Per output element of a layer with bias.
    pub bias_forward: u64,
    pub bias_backward: u64,
    /// Per trainable parameter per mini-batch (scale and subtract).
    pub sgd_update: u64,
    /// 32-bit VMem words moved per ALU operation (two reads, one write).
    pub vmem_words_per_op: u64,
    /// ALU operations issued per 32-bit InMem instruction fetch.
    pub ops_per_instruction: u64,
}

impl Default for SimdCosts {
    fn default() -> Self {
        SimdCosts {
            batch_norm_forward: 4,
            batch_norm_backward: 4,
            relu_forward: 1,
            relu_backward: 1,
            residual_add_forward: 1,
            residual_add_backward: 1,
            pool_forward: 1,
            pool_backward: 1,
            loss_forward: 5,
            loss_backward: 1,
            bias_forward: 1,
            bias_backward: 1,
            sgd_update: 2,
            vmem_words_per_op: 3,
            ops_per_instruction: 16,
        }
    }
}

/// One accelerator design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcceleratorConfig {
    #[serde(default = "defaults::sa_dim")]
    pub sa_rows: usize,
    #[serde(default = "defaults::sa_dim")]
    pub sa_cols: usize,
    #[serde(default = "defaults::sa_dim")]
    pub simd_lanes: usize,
    /// Capacity of each of IBuf, WBuf, OBuf, InMem and VMem.
    #[serde(default = "defaults::buffer_bytes")]
    pub buffer_bytes: u64,
    pub sram_bus_bits: u32,
    #[serde(default = "defaults::dram_bytes")]
    pub dram_bytes: u64,
    pub storage: FloatFormat,
    pub multiplier: MultiplierSpec,
    #[serde(default)]
    pub row_mapping: RowMapping,
    #[serde(default)]
    pub simd: SimdCosts,
}

mod defaults {
    pub fn sa_dim() -> usize {
        16
    }
    pub fn buffer_bytes() -> u64 {
        64 * 1024
    }
    pub fn dram_bytes() -> u64 {
        2 << 30
    }
}

/// Named accelerator designs from exact FP32 to bfloat10 with MBM-1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AccelPreset {
    C1,
    C2,
    C3,
    C4,
    C5,
}

impl AccelPreset {
    pub const ALL: [AccelPreset; 5] = [AccelPreset::C1, AccelPreset::C2, AccelPreset::C3, AccelPreset::C4, AccelPreset::C5];

    pub fn name(self) -> &'static str {
        match self {
            AccelPreset::C1 => "C1",
            AccelPreset::C2 => "C2",
            AccelPreset::C3 => "C3",
            AccelPreset::C4 => "C4",
            AccelPreset::C5 => "C5",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name().eq_ignore_ascii_case(name))
    }

    pub fn config(self) -> AcceleratorConfig {
        let (storage, multiplier, bus) = match self {
            AccelPreset::C1 => (FloatFormat::FP32, MultiplierSpec::exact(23), 64),
            AccelPreset::C2 => (FloatFormat::BFLOAT16, MultiplierSpec::exact(7), 64),
            AccelPreset::C3 => (FloatFormat::BFLOAT16, MultiplierSpec::mbm(7), 64),
            AccelPreset::C4 => (FloatFormat::BFLOAT12, MultiplierSpec::mbm(3), 60),
            AccelPreset::C5 => (FloatFormat::BFLOAT10, MultiplierSpec::mbm(1), 60),
        };
        AcceleratorConfig::new(storage, multiplier, bus)
    }
}

impl AcceleratorConfig {
    /// Default geometry (16×16 array, 16 SIMD lanes, 64 KiB buffers, 2 GiB
    /// DRAM) with the given numerics.
    pub fn new(storage: FloatFormat, multiplier: MultiplierSpec, sram_bus_bits: u32) -> Self {
        AcceleratorConfig {
            sa_rows: 16,
            sa_cols: 16,
            simd_lanes: 16,
            buffer_bytes: defaults::buffer_bytes(),
            sram_bus_bits,
            dram_bytes: defaults::dram_bytes(),
            storage,
            multiplier,
            row_mapping: RowMapping::default(),
            simd: SimdCosts::default(),
        }
    }

    /// The same design with a Mitchell multiplier of equal width.
    pub fn with_mitchell(mut self) -> Self {
        self.multiplier = MultiplierSpec::mitchell(self.multiplier.mantissa_bits);
        self
    }

    pub fn numerics(&self) -> SaNumerics {
        SaNumerics {
            storage: self.storage,
            multiplier: self.multiplier,
        }
    }

    /// Storage width of SA operands in bits.
    pub fn word_bits(&self) -> u64 {
        u64::from(self.storage.width_bits())
    }

    pub fn validate(&self) -> Result<()> {
        if self.sa_rows == 0 || self.sa_cols == 0 || self.simd_lanes == 0 {
            return Err(Error::config("array and SIMD dimensions must be positive"));
        }
        if self.buffer_bytes == 0 || self.dram_bytes == 0 {
            return Err(Error::config("memory sizes must be positive"));
        }
        self.multiplier.validate()?;
        if self.multiplier.mantissa_bits != self.storage.mantissa_bits {
            return Err(Error::config("multiplier mantissa width must equal the storage format's"));
        }
        let expected_bus = if self.storage.width_bits() >= 16 { 64 } else { 60 };
        if self.sram_bus_bits != expected_bus {
            return Err(Error::config(alloc::format!(
                "a {}-bit format pairs with a {expected_bus}-bit SRAM bus, not {}",
                self.storage.width_bits(),
                self.sram_bus_bits
            )));
        }
        if self.simd.ops_per_instruction == 0 {
            return Err(Error::config("ops per instruction must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arith::MultiplierKind;

    #[test]
    fn presets_follow_the_design_table() {
        let c3 = AccelPreset::C3.config();
        assert_eq!(c3.storage, FloatFormat::BFLOAT16);
        assert_eq!(c3.multiplier.kind, MultiplierKind::Mbm);
        assert_eq!(c3.multiplier.mantissa_bits, 7);
        assert_eq!(c3.sram_bus_bits, 64);
        assert_eq!(AccelPreset::C5.config().sram_bus_bits, 60);
        for p in AccelPreset::ALL {
            p.config().validate().unwrap();
            assert_eq!(AccelPreset::from_name(p.name()), Some(p));
        }
    }

    #[test]
    fn bus_pairing_enforced() {
        let mut c = AccelPreset::C4.config();
        c.sram_bus_bits = 64;
        assert!(c.validate().is_err());
        let mut c = AccelPreset::C2.config();
        c.multiplier = MultiplierSpec::exact(3);
        assert!(c.validate().is_err());
    }
}
