//! Versioned JSON run configuration.
//!
//! A configuration is a single JSON document. Every section except
//! `version` has defaults, so the minimal valid file is `{"version": 1}`:
//! the desk CNN on the bundled synthetic dataset, 16 IID devices, the `C1`
//! fleet, 30 rounds and seeds 1, 2, 3. Fleets are named presets (`"C3"`,
//! `"HeteroFL-S2"`, `"Mix4"`, …) or explicit group lists. Relative paths are
//! resolved against the directory of the configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use approxfl_core::accel::EnergyTable;
use approxfl_core::dataset::{Dataset, SyntheticSpec};
use approxfl_core::fl::{FlConfig, FleetGroup};
use approxfl_core::metrics::AccuracyMode;
use approxfl_core::nn::{zoo, Augmentation, ModelSpec};
use approxfl_core::partition::{assign_groups, GroupAssignment, PartitionKind, PartitionSpec};
use approxfl_core::presets::{self, GroupSpec};

use crate::error::{Result, RunnerError};
use crate::formats::{self, DatasetFormat};

/// Schema version this runner reads and writes.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    /// Free-form label copied into the summary.
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub model: ModelSource,
    #[serde(default)]
    pub dataset: DatasetSource,
    #[serde(default)]
    pub partition: PartitionConfig,
    #[serde(default)]
    pub fleet: FleetSource,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// JSON energy table; the built-in 45 nm table when absent.
    #[serde(default)]
    pub energy_table: Option<PathBuf>,
    /// Output directory; the command line `--out` takes precedence.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: SCHEMA_VERSION,
            name: None,
            model: ModelSource::default(),
            dataset: DatasetSource::default(),
            partition: PartitionConfig::default(),
            fleet: FleetSource::default(),
            training: TrainingConfig::default(),
            seeds: default_seeds(),
            energy_table: None,
            output_dir: None,
        }
    }
}

/// `{"preset": "desk"}` / `{"preset": "resnet20"}` or `{"spec": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSource {
    Preset(String),
    Spec(ModelSpec),
}

impl Default for ModelSource {
    fn default() -> Self {
        ModelSource::Preset("desk".into())
    }
}

/// Named model architectures: `desk` (small CNN sized to the input) and
/// `resnet20` (3×32×32 input).
pub fn model_preset(name: &str, input: [usize; 3], classes: usize) -> Option<ModelSpec> {
    match name {
        "desk" => Some(zoo::desk_cnn(input, classes, [16, 32])),
        "resnet20" => Some(zoo::resnet20(classes)),
        _ => None,
    }
}

/// Where the train/test data come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// The desk-scale synthetic set shipped with the runner.
    #[default]
    Bundled,
    /// Generate a synthetic set with these parameters.
    Synthetic(SyntheticSpec),
    /// Read train and test files.
    Files(DatasetFiles),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFiles {
    pub train: PathBuf,
    pub test: PathBuf,
    #[serde(default)]
    pub format: DatasetFormat,
    /// Standardise each channel with the training set's mean and standard
    /// deviation.
    #[serde(default = "yes")]
    pub normalize: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionConfig {
    pub devices: usize,
    pub scheme: PartitionKind,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig {
            devices: 16,
            scheme: PartitionKind::Iid,
        }
    }
}

/// A fleet preset name or an explicit list of groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FleetSource {
    Preset(String),
    Groups(Vec<GroupSpec>),
}

impl Default for FleetSource {
    fn default() -> Self {
        FleetSource::Preset("C1".into())
    }
}

impl FleetSource {
    pub fn expand(&self) -> Result<Vec<GroupSpec>> {
        match self {
            FleetSource::Preset(name) => Ok(presets::fleet(name)?),
            FleetSource::Groups(groups) => Ok(groups.clone()),
        }
    }
}

/// Round-loop hyper-parameters shared by every seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub rounds: usize,
    pub clients_per_round: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub lr_min: f32,
    pub eval_every: usize,
    pub augmentation: Augmentation,
    pub accuracy_mode: AccuracyMode,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            rounds: 30,
            clients_per_round: 16,
            local_epochs: 1,
            batch_size: 32,
            lr: 0.1,
            lr_min: 0.001,
            eval_every: 10,
            augmentation: Augmentation::default(),
            accuracy_mode: AccuracyMode::Literal,
        }
    }
}

impl TrainingConfig {
    pub fn fl_config(&self, seed: u64) -> FlConfig {
        FlConfig {
            rounds: self.rounds,
            clients_per_round: self.clients_per_round,
            local_epochs: self.local_epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            lr_min: self.lr_min,
            augmentation: self.augmentation,
            accuracy_mode: self.accuracy_mode,
            eval_every: self.eval_every,
            seed,
        }
    }
}

/// Parse a configuration from JSON text. Schema violations name the
/// offending field path.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path == "." {
            RunnerError::config(inner.to_string())
        } else {
            RunnerError::config(format!("at `{path}`: {inner}"))
        }
    })?;
    if cfg.version != SCHEMA_VERSION {
        return Err(RunnerError::config(format!(
            "unsupported schema version {} (this runner reads version {SCHEMA_VERSION})",
            cfg.version
        )));
    }
    Ok(cfg)
}

/// Read, parse and validate a configuration file; relative paths inside it
/// become relative to the file's directory.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| RunnerError::io(path, e))?;
    let mut cfg = parse_config(&text)?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    cfg.rebase(base);
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    /// Make relative paths relative to `base`.
    pub fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let DatasetSource::Files(f) = &mut self.dataset {
            fix(&mut f.train);
            fix(&mut f.test);
        }
        if let Some(p) = &mut self.energy_table {
            fix(p);
        }
        if let Some(p) = &mut self.output_dir {
            fix(p);
        }
    }

    /// Checks that need no data: seeds, sizes, referenced files, presets.
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(RunnerError::config("`seeds` must list at least one seed"));
        }
        if self.partition.devices == 0 {
            return Err(RunnerError::config("`partition.devices` must be positive"));
        }
        let t = &self.training;
        if t.rounds == 0 || t.clients_per_round == 0 || t.local_epochs == 0 || t.batch_size == 0 || t.eval_every == 0 {
            return Err(RunnerError::config(
                "`training` rounds, clients_per_round, local_epochs, batch_size and eval_every must be positive",
            ));
        }
        if let ModelSource::Preset(name) = &self.model {
            if model_preset(name, [3, 8, 8], 10).is_none() {
                return Err(RunnerError::config(format!("unknown model preset {name:?}; known: desk, resnet20")));
            }
        }
        let mut files: Vec<&Path> = Vec::new();
        if let DatasetSource::Files(f) = &self.dataset {
            files.extend([f.train.as_path(), f.test.as_path()]);
        }
        if let Some(p) = &self.energy_table {
            files.push(p);
        }
        if let Some(missing) = files.into_iter().find(|p| !p.is_file()) {
            return Err(RunnerError::config(format!("referenced file {} does not exist", missing.display())));
        }
        let groups = self.fleet.expand()?;
        if groups.is_empty() {
            return Err(RunnerError::config("the fleet has no groups"));
        }
        for g in &groups {
            g.strategy.validate()?;
        }
        self.assignment(&groups)?;
        Ok(())
    }

    pub fn assignment(&self, groups: &[GroupSpec]) -> Result<GroupAssignment> {
        let mix: Vec<(String, f64)> = groups.iter().map(|g| (g.label.clone(), g.fraction)).collect();
        Ok(assign_groups(self.partition.devices, &mix)?)
    }

    pub fn partition_spec(&self, seed: u64) -> PartitionSpec {
        PartitionSpec {
            kind: self.partition.scheme,
            devices: self.partition.devices,
            seed,
        }
    }

    pub fn energy(&self) -> Result<EnergyTable> {
        match &self.energy_table {
            None => Ok(EnergyTable::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| RunnerError::io(p, e))?;
                let de = &mut serde_json::Deserializer::from_str(&text);
                let table: EnergyTable = serde_path_to_error::deserialize(de)
                    .map_err(|e| RunnerError::config(format!("{}: at `{}`: {}", p.display(), e.path(), e.inner())))?;
                table.validate()?;
                Ok(table)
            }
        }
    }

    /// Load or generate the `(train, test)` datasets.
    pub fn datasets(&self) -> Result<(Dataset, Dataset)> {
        match &self.dataset {
            DatasetSource::Bundled => formats::bundled(),
            DatasetSource::Synthetic(spec) => Ok(approxfl_core::dataset::synthetic(spec)?),
            DatasetSource::Files(f) => {
                let mut train = formats::read_dataset(&f.train, f.format)?;
                let mut test = formats::read_dataset(&f.test, f.format)?;
                if train.sample_shape() != test.sample_shape() || train.classes() != test.classes() {
                    return Err(RunnerError::config("train and test files differ in sample shape or class count"));
                }
                if f.normalize {
                    formats::standardize(&mut train, &mut test);
                }
                Ok((train, test))
            }
        }
    }

    /// The model for a dataset of the given sample shape and class count.
    pub fn model_spec(&self, input: [usize; 3], classes: usize) -> Result<ModelSpec> {
        match &self.model {
            ModelSource::Preset(name) => {
                model_preset(name, input, classes).ok_or_else(|| RunnerError::config(format!("unknown model preset {name:?}")))
            }
            ModelSource::Spec(spec) => Ok(spec.clone()),
        }
    }

    pub fn fleet_groups(&self) -> Result<Vec<FleetGroup>> {
        Ok(self
            .fleet
            .expand()?
            .into_iter()
            .map(|g| FleetGroup {
                label: g.label,
                strategy: g.strategy,
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approxfl_core::arith::{FloatFormat, MultiplierKind};
    use approxfl_core::baselines::Strategy;

    #[test]
    fn minimal_file_gets_documented_defaults() {
        let cfg = parse_config(r#"{"version": 1}"#).unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.training.batch_size, 32);
        assert_eq!(cfg.partition.devices, 16);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_key_is_named() {
        let err = parse_config(r#"{"version": 1, "training": {"rounds": 3, "roundz": 4}}"#).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("training") && msg.contains("roundz"), "{msg}");
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn wrong_version_is_rejected() {
        assert!(parse_config(r#"{"version": 2}"#).is_err());
        assert!(parse_config(r#"{}"#).is_err());
    }

    #[test]
    fn preset_reference_expands() {
        let cfg = parse_config(r#"{"version": 1, "fleet": "C3"}"#).unwrap();
        let groups = cfg.fleet.expand().unwrap();
        let Strategy::Ours { accelerator } = &groups[1].strategy else {
            panic!("{groups:?}")
        };
        assert_eq!(accelerator.storage, FloatFormat::BFLOAT16);
        assert_eq!(accelerator.multiplier.kind, MultiplierKind::Mbm);
        assert_eq!(accelerator.multiplier.mantissa_bits, 7);
    }

    #[test]
    fn explicit_groups_and_partition() {
        let cfg = parse_config(
            r#"{"version": 1,
                "partition": {"devices": 10, "scheme": {"kind": "dirichlet", "alpha": 0.5}},
                "fleet": [{"label": "a", "fraction": 0.5, "strategy": {"kind": "drop_devices"}},
                          {"label": "b", "fraction": 0.5, "strategy": {"kind": "hetero_fl", "scale": 0.5}}],
                "seeds": [7]}"#,
        )
        .unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.partition.scheme, PartitionKind::Dirichlet { alpha: 0.5 });
        assert_eq!(cfg.fleet.expand().unwrap()[1].strategy, Strategy::HeteroFl { scale: 0.5 });
    }

    #[test]
    fn validation_errors() {
        let mut cfg = RunConfig::default();
        cfg.seeds.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.energy_table = Some("/definitely/missing.json".into());
        assert!(cfg.validate().unwrap_err().to_string().contains("missing.json"));
        let mut cfg = RunConfig::default();
        cfg.fleet = FleetSource::Preset("C9".into());
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 1);
    }
}
