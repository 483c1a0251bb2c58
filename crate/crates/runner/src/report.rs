//! Analytical tables: per-component energy breakdown of the accelerator
//! presets, multiplier error characterisation, MBM calibration and
//! partition previews.

use std::io::Write;

use serde::Serialize;

use approxfl_core::accel::{minibatch_energy, AccelPreset, EnergyTable};
use approxfl_core::arith::{calibrate_correction, characterize_error, default_mbm_correction, ErrorStats, MultiplierKind, MultiplierSpec};
use approxfl_core::dataset::Dataset;
use approxfl_core::nn::ModelSpec;
use approxfl_core::partition::{partition, GroupAssignment, PartitionSpec};
use approxfl_core::presets::width_scale;

use crate::error::Result;

/// One configuration's mini-batch energy split by component.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BreakdownRow {
    /// `C1`…`C5` (full model on that design) or `S1`…`S4` (width-scaled
    /// model on C1).
    pub config: String,
    pub sa_j: f64,
    pub simd_j: f64,
    pub sram_j: f64,
    pub dram_j: f64,
    pub total_j: f64,
    pub sa_share: f64,
    pub simd_share: f64,
    pub sram_share: f64,
    pub dram_share: f64,
    /// C1 total divided by this row's total.
    pub reduction_vs_c1: f64,
}

/// One-mini-batch breakdown of C1…C5 on `model`, then S1…S4 (the model
/// width-scaled by 1, ½, ¼, ⅛) on C1.
pub fn energy_breakdown(model: &ModelSpec, table: &EnergyTable, batch: usize) -> Result<Vec<BreakdownRow>> {
    let mut cases: Vec<(String, ModelSpec, AccelPreset)> =
        AccelPreset::ALL.iter().map(|&p| (p.name().to_string(), model.clone(), p)).collect();
    for level in ["S1", "S2", "S3", "S4"] {
        let s = width_scale(level).expect("known level");
        cases.push((level.to_string(), model.scaled_width(s)?, AccelPreset::C1));
    }
    let mut rows = Vec::with_capacity(cases.len());
    let mut reference = None;
    for (name, spec, preset) in cases {
        let e = minibatch_energy(&spec, &preset.config(), table, batch)?;
        let total = e.total_j();
        let c1 = *reference.get_or_insert(total);
        let b = e.breakdown();
        rows.push(BreakdownRow {
            config: name,
            sa_j: e.sa_j,
            simd_j: e.simd_j,
            sram_j: e.sram_total_j(),
            dram_j: e.dram_j,
            total_j: total,
            sa_share: b.sa,
            simd_share: b.simd,
            sram_share: b.sram,
            dram_share: b.dram,
            reduction_vs_c1: c1 / total,
        });
    }
    Ok(rows)
}

pub fn write_breakdown_table(rows: &[BreakdownRow], out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(
        out,
        "{:<6} {:>12} {:>7} {:>7} {:>7} {:>7} {:>9}",
        "config", "total (J)", "SA %", "SIMD %", "SRAM %", "DRAM %", "vs C1"
    )?;
    for r in rows {
        writeln!(
            out,
            "{:<6} {:>12.6e} {:>7.2} {:>7.2} {:>7.2} {:>7.2} {:>8.2}x",
            r.config,
            r.total_j,
            100.0 * r.sa_share,
            100.0 * r.simd_share,
            100.0 * r.sram_share,
            100.0 * r.dram_share,
            r.reduction_vs_c1
        )?;
    }
    Ok(())
}

/// Error statistics of one multiplier at one width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MultiplierRow {
    pub kind: MultiplierKind,
    pub mantissa_bits: u8,
    pub correction: f64,
    pub stats: ErrorStats,
}

/// Exhaustive-sweep statistics of the exact, Mitchell and (frozen) MBM
/// multipliers at each width.
pub fn characterize(widths: &[u8]) -> Result<Vec<MultiplierRow>> {
    let mut rows = Vec::new();
    for &m in widths {
        for spec in [MultiplierSpec::exact(m), MultiplierSpec::mitchell(m), MultiplierSpec::mbm(m)] {
            rows.push(MultiplierRow {
                kind: spec.kind,
                mantissa_bits: m,
                correction: spec.correction,
                stats: characterize_error(spec, m)?,
            });
        }
    }
    Ok(rows)
}

pub fn write_multiplier_table(rows: &[MultiplierRow], out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(
        out,
        "{:<9} {:>2} {:>13} {:>12} {:>12} {:>12}",
        "kind", "m", "c", "mean err", "mean |err|", "max |err|"
    )?;
    for r in rows {
        writeln!(
            out,
            "{:<9} {:>2} {:>13.10} {:>12.4e} {:>12.4e} {:>12.4e}",
            format!("{:?}", r.kind).to_lowercase(),
            r.mantissa_bits,
            r.correction,
            r.stats.mean_rel,
            r.stats.mean_abs_rel,
            r.stats.max_rel
        )?;
    }
    Ok(())
}

/// Result of re-running the MBM calibration at one width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CalibrationRow {
    pub mantissa_bits: u8,
    pub calibrated: f64,
    pub frozen: f64,
    pub stats: ErrorStats,
}

pub fn calibrate(widths: &[u8]) -> Result<Vec<CalibrationRow>> {
    widths
        .iter()
        .map(|&m| {
            let (c, stats) = calibrate_correction(m)?;
            Ok(CalibrationRow {
                mantissa_bits: m,
                calibrated: c,
                frozen: default_mbm_correction(m),
                stats,
            })
        })
        .collect()
}

pub fn write_calibration_table(rows: &[CalibrationRow], out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(
        out,
        "{:>2} {:>13} {:>13} {:>12} {:>12}",
        "m", "calibrated c", "frozen c", "mean err", "mean |err|"
    )?;
    for r in rows {
        writeln!(
            out,
            "{:>2} {:>13.10} {:>13.10} {:>12.4e} {:>12.4e}",
            r.mantissa_bits, r.calibrated, r.frozen, r.stats.mean_rel, r.stats.mean_abs_rel
        )?;
    }
    Ok(())
}

/// One device of a partition preview.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviceShard {
    pub device: usize,
    pub group: String,
    pub samples: usize,
    pub class_histogram: Vec<usize>,
}

pub fn partition_preview(train: &Dataset, spec: &PartitionSpec, assignment: &GroupAssignment) -> Result<Vec<DeviceShard>> {
    let shards = partition(train.labels(), train.classes(), spec, assignment)?;
    Ok(shards
        .iter()
        .enumerate()
        .map(|(d, s)| DeviceShard {
            device: d,
            group: assignment.labels[assignment.device_group[d]].clone(),
            samples: s.len(),
            class_histogram: train.class_histogram(s),
        })
        .collect())
}

pub fn write_partition_table(rows: &[DeviceShard], out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "{:>6} {:<12} {:>7}  class histogram", "device", "group", "samples")?;
    for r in rows {
        let hist: Vec<String> = r.class_histogram.iter().map(|n| n.to_string()).collect();
        writeln!(out, "{:>6} {:<12} {:>7}  {}", r.device, r.group, r.samples, hist.join(" "))?;
    }
    Ok(())
}
