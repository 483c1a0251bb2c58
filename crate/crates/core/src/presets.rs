//! Named fleet configurations: which strategy each device group runs.
//!
//! Mainline fleets have three equally sized groups `g1, g2, g3`; `g1` is
//! always unconstrained (exact FP32, full model) and `g2`, `g3` run the
//! named configuration:
//!
//! * `C1`…`C5` — every constrained device trains the full model on that
//!   accelerator design.
//! * `HeteroFL-S1`…`S4`, `FedRolex-S1`…`S4` — constrained devices train a
//!   static / rolling channel subset of width scale 1, ½, ¼, ⅛.
//! * `SmallModel-S1`…`S4` — the whole fleet trains the width-scaled model.
//! * `DropDevices` — constrained devices never train.
//! * `F1`…`F3` — FedProx with 100 %, 50 %, 25 % of the mini-batches, μ = 0.01.
//! * `Mix1`…`Mix4` — five-level mixtures: ⅕ C1 with ⅘ C2; ⅕ C1, ⅕ C2, ⅗ C3;
//!   ⅕ C1…C3 with ⅖ C4; ⅕ of each of C1…C5.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::accel::AccelPreset;
use crate::baselines::Strategy;
use crate::error::{Error, Result};

/// Proximal weight of the FedProx presets.
pub const FEDPROX_MU: f32 = 0.01;

/// A device group of a fleet: its label, share of the devices and strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub label: String,
    pub fraction: f64,
    pub strategy: Strategy,
}

/// Width scale of the model-scaling levels `S1`…`S4`.
pub fn width_scale(level: &str) -> Option<f64> {
    match level {
        "S1" => Some(1.0),
        "S2" => Some(0.5),
        "S3" => Some(0.25),
        "S4" => Some(0.125),
        _ => None,
    }
}

/// Mini-batch fraction of the FedProx levels `F1`…`F3`.
pub fn fedprox_fraction(level: &str) -> Option<f64> {
    match level {
        "F1" => Some(1.0),
        "F2" => Some(0.5),
        "F3" => Some(0.25),
        _ => None,
    }
}

/// Every fleet preset name.
pub fn fleet_names() -> Vec<String> {
    let mut names: Vec<String> = AccelPreset::ALL.iter().map(|p| p.name().to_string()).collect();
    for family in ["HeteroFL", "FedRolex", "SmallModel"] {
        for s in ["S1", "S2", "S3", "S4"] {
            names.push(format!("{family}-{s}"));
        }
    }
    names.push("DropDevices".into());
    names.extend(["F1", "F2", "F3", "Mix1", "Mix2", "Mix3", "Mix4"].map(String::from));
    names
}

fn ours(p: AccelPreset) -> Strategy {
    Strategy::Ours { accelerator: p.config() }
}

fn group(label: &str, fraction: f64, strategy: Strategy) -> GroupSpec {
    GroupSpec {
        label: label.into(),
        fraction,
        strategy,
    }
}

/// `g1` on C1, `g2` and `g3` on `constrained`.
fn mainline(label: &str, constrained: Strategy, unconstrained: Strategy) -> Vec<GroupSpec> {
    let third = 1.0 / 3.0;
    vec![
        group("C1", third, unconstrained),
        group(label, third, constrained.clone()),
        group(label, third, constrained),
    ]
}

/// Expand a fleet preset name.
pub fn fleet(name: &str) -> Result<Vec<GroupSpec>> {
    let unknown = || Error::config(format!("unknown fleet preset {name:?}; known: {}", fleet_names().join(", ")));
    if let Some(p) = AccelPreset::from_name(name) {
        return Ok(mainline(p.name(), ours(p), ours(AccelPreset::C1)));
    }
    if let Some(scale) = fedprox_fraction(name) {
        let prox = Strategy::FedProx {
            mu: FEDPROX_MU,
            batch_fraction: scale,
            accelerator: AccelPreset::C1.config(),
        };
        return Ok(mainline(name, prox, ours(AccelPreset::C1)));
    }
    if name == "DropDevices" {
        return Ok(mainline("drop", Strategy::DropDevices, ours(AccelPreset::C1)));
    }
    if let Some((family, level)) = name.split_once('-') {
        let scale = width_scale(level).ok_or_else(unknown)?;
        return match family {
            "HeteroFL" => Ok(mainline(level, Strategy::HeteroFl { scale }, ours(AccelPreset::C1))),
            "FedRolex" => Ok(mainline(level, Strategy::FedRolex { scale }, ours(AccelPreset::C1))),
            "SmallModel" => {
                let small = Strategy::SmallModel { scale };
                Ok(mainline(level, small.clone(), small))
            }
            _ => Err(unknown()),
        };
    }
    let fifth = 0.2;
    let levels: &[(AccelPreset, f64)] = match name {
        "Mix1" => &[(AccelPreset::C1, fifth), (AccelPreset::C2, 4.0 * fifth)],
        "Mix2" => &[(AccelPreset::C1, fifth), (AccelPreset::C2, fifth), (AccelPreset::C3, 3.0 * fifth)],
        "Mix3" => &[
            (AccelPreset::C1, fifth),
            (AccelPreset::C2, fifth),
            (AccelPreset::C3, fifth),
            (AccelPreset::C4, 2.0 * fifth),
        ],
        "Mix4" => &[
            (AccelPreset::C1, fifth),
            (AccelPreset::C2, fifth),
            (AccelPreset::C3, fifth),
            (AccelPreset::C4, fifth),
            (AccelPreset::C5, fifth),
        ],
        _ => return Err(unknown()),
    };
    Ok(levels.iter().map(|&(p, f)| group(p.name(), f, ours(p))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arith::{FloatFormat, MultiplierKind};

    #[test]
    fn every_name_expands() {
        for name in fleet_names() {
            let f = fleet(&name).unwrap();
            let total: f64 = f.iter().map(|g| g.fraction).sum();
            assert!((total - 1.0).abs() < 1e-9, "{name}");
            for g in &f {
                g.strategy.validate().unwrap();
            }
        }
        assert!(fleet("C9").is_err());
        assert!(fleet("HeteroFL-S7").is_err());
    }

    #[test]
    fn contents() {
        let c3 = fleet("C3").unwrap();
        let Strategy::Ours { accelerator } = &c3[1].strategy else {
            panic!()
        };
        assert_eq!(accelerator.storage, FloatFormat::BFLOAT16);
        assert_eq!(accelerator.multiplier.kind, MultiplierKind::Mbm);
        assert_eq!(c3[0].strategy, ours(AccelPreset::C1));
        let f2 = fleet("F2").unwrap();
        assert!(matches!(f2[2].strategy, Strategy::FedProx { batch_fraction, mu, .. } if batch_fraction == 0.5 && mu == 0.01));
        assert_eq!(fleet("HeteroFL-S4").unwrap()[1].strategy, Strategy::HeteroFl { scale: 0.125 });
        assert_eq!(fleet("Mix4").unwrap().len(), 5);
    }
}
