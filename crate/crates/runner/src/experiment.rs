//! Running a configuration over its seeds and writing the artifacts.
//!
//! Files written to the output directory:
//!
//! * `rounds_seed<S>.csv` — one row per participating device per round with
//!   the device's energy ledger (see [`DEVICE_COLUMNS`]).
//! * `eval_seed<S>.csv` — one row per evaluated round: loss, energy so far,
//!   top-1 accuracy, fairness variance and every group's accuracy.
//! * `accuracy_energy.csv` — accuracy against cumulative fleet energy for
//!   every seed, ready for plotting.
//! * `summary.json` — final metrics per seed and their mean ± standard
//!   deviation, plus the analytical one-mini-batch energy of every group.
//!
//! Seeds run one after another; the clients of a round may train in
//! parallel. All files are written from the calling thread after the runs
//! finish, so output is byte-identical for identical inputs.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use approxfl_core::accel::{minibatch_energy, AccelPreset, AcceleratorConfig, Buffer, EnergyTable};
use approxfl_core::baselines::{apply_strategy, LocalPlan, Strategy};
use approxfl_core::dataset::Dataset;
use approxfl_core::fl::{Executor, Federation, FleetGroup, RoundRecord, RunHistory};
use approxfl_core::metrics::AccuracyMode;
use approxfl_core::nn::{ModelSpec, Network};
use approxfl_core::partition::partition;

use crate::config::RunConfig;
use crate::error::{Result, RunnerError};

/// Executes per-client jobs on a rayon pool; results come back in job
/// order regardless of scheduling.
pub struct RayonExecutor {
    pool: rayon::ThreadPool,
}

impl RayonExecutor {
    /// `threads == 0` uses rayon's default (one per CPU).
    pub fn new(threads: usize) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| RunnerError::config(format!("cannot start {threads} worker threads: {e}")))?;
        Ok(RayonExecutor { pool })
    }
}

impl Executor for RayonExecutor {
    fn map<T: Send, F: Fn(usize) -> T + Sync>(&self, jobs: usize, f: F) -> Vec<T> {
        self.pool.install(|| (0..jobs).into_par_iter().map(&f).collect())
    }
}

/// Everything loaded once and shared by all seeds.
pub struct Prepared {
    pub config: RunConfig,
    pub model: ModelSpec,
    pub train: Dataset,
    pub test: Dataset,
    pub groups: Vec<FleetGroup>,
    pub energy: EnergyTable,
}

impl Prepared {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let (train, test) = config.datasets()?;
        let model = config.model_spec(train.sample_shape(), train.classes())?;
        let groups = config.fleet_groups()?;
        let energy = config.energy()?;
        Ok(Prepared {
            config,
            model,
            train,
            test,
            groups,
            energy,
        })
    }

    pub fn federation(&self, seed: u64) -> Result<Federation<'_>> {
        let spec_groups = self.config.fleet.expand()?;
        let assignment = self.config.assignment(&spec_groups)?;
        let shards = partition(
            self.train.labels(),
            self.train.classes(),
            &self.config.partition_spec(seed),
            &assignment,
        )?;
        Ok(Federation {
            model: self.model.clone(),
            train: &self.train,
            test: &self.test,
            shards,
            assignment,
            groups: self.groups.clone(),
            energy: self.energy.clone(),
            config: self.config.training.fl_config(seed),
        })
    }

    /// Run one seed. `observer` sees each round record as it completes.
    pub fn run_seed<E: Executor>(&self, seed: u64, exec: &E, observer: impl FnMut(&RoundRecord)) -> Result<RunHistory> {
        let fed = self.federation(seed)?;
        Ok(fed.run(exec, observer)?)
    }
}

/// Short, stable name of a strategy for CSV columns.
pub fn strategy_name(strategy: &Strategy) -> String {
    let accel = |a: &AcceleratorConfig| {
        AccelPreset::ALL
            .iter()
            .find(|p| p.config() == *a)
            .map_or_else(|| "custom".to_string(), |p| p.name().to_string())
    };
    match strategy {
        Strategy::Ours { accelerator } => format!("ours-{}", accel(accelerator)),
        Strategy::HeteroFl { scale } => format!("heterofl-{scale}"),
        Strategy::FedRolex { scale } => format!("fedrolex-{scale}"),
        Strategy::SmallModel { scale } => format!("smallmodel-{scale}"),
        Strategy::DropDevices => "drop".into(),
        Strategy::FedProx {
            mu,
            batch_fraction,
            accelerator,
        } => format!("fedprox-{batch_fraction}-mu{mu}-{}", accel(accelerator)),
    }
}

/// Columns of the per-device round CSV.
pub fn device_columns() -> Vec<String> {
    let mut cols: Vec<String> = [
        "seed",
        "round",
        "lr",
        "device",
        "group",
        "group_label",
        "strategy",
        "samples",
        "minibatches",
        "mean_loss",
        "sa_j",
        "simd_j",
    ]
    .map(String::from)
    .to_vec();
    cols.extend(Buffer::ALL.iter().map(|b| format!("sram_{}_j", b.name())));
    cols.extend(["dram_j", "total_j", "cumulative_j"].map(String::from));
    cols
}

/// Names of [`device_columns`], for documentation and schema tests.
pub const DEVICE_COLUMNS: &str =
    "seed,round,lr,device,group,group_label,strategy,samples,minibatches,mean_loss,sa_j,simd_j,sram_ibuf_j,sram_wbuf_j,sram_obuf_j,sram_inmem_j,sram_vmem_j,dram_j,total_j,cumulative_j";

pub fn write_device_csv(path: &Path, seed: u64, groups: &[FleetGroup], records: &[RoundRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| RunnerError::io(path, e.into()))?;
    w.write_record(device_columns())?;
    for r in records {
        for d in &r.devices {
            let g = &groups[d.group];
            let e = &d.energy;
            let mut row = vec![
                seed.to_string(),
                r.round.to_string(),
                r.lr.to_string(),
                d.device.to_string(),
                d.group.to_string(),
                g.label.clone(),
                strategy_name(&g.strategy),
                d.samples.to_string(),
                d.minibatches.to_string(),
                d.mean_loss.to_string(),
                e.sa_j.to_string(),
                e.simd_j.to_string(),
            ];
            row.extend(e.sram_j.iter().map(|v| v.to_string()));
            row.extend([e.dram_j.to_string(), e.total_j().to_string(), d.cumulative_j.to_string()]);
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| RunnerError::io(path, e))
}

pub fn write_eval_csv(path: &Path, seed: u64, groups: &[FleetGroup], records: &[RoundRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| RunnerError::io(path, e.into()))?;
    let mut header: Vec<String> = [
        "seed",
        "round",
        "train_loss",
        "round_energy_j",
        "cumulative_energy_j",
        "top1",
        "fairness_variance",
    ]
    .map(String::from)
    .to_vec();
    header.extend((0..groups.len()).map(|g| format!("g{}_accuracy", g + 1)));
    w.write_record(&header)?;
    let mut cumulative = 0.0;
    for r in records {
        cumulative += r.energy_j();
        let Some(m) = &r.metrics else { continue };
        let mut row = vec![
            seed.to_string(),
            r.round.to_string(),
            r.train_loss.to_string(),
            r.energy_j().to_string(),
            cumulative.to_string(),
            m.top1.to_string(),
            m.fairness_variance.map_or_else(String::new, |v| v.to_string()),
        ];
        row.extend(m.group_accuracy.iter().map(|a| a.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| RunnerError::io(path, e))
}

fn write_accuracy_energy(path: &Path, runs: &[(u64, RunHistory)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| RunnerError::io(path, e.into()))?;
    w.write_record(["seed", "round", "cumulative_energy_j", "top1", "fairness_variance"])?;
    for (seed, h) in runs {
        let mut cumulative = 0.0;
        for r in &h.records {
            cumulative += r.energy_j();
            if let Some(m) = &r.metrics {
                w.write_record([
                    seed.to_string(),
                    r.round.to_string(),
                    cumulative.to_string(),
                    m.top1.to_string(),
                    m.fairness_variance.map_or_else(String::new, |v| v.to_string()),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| RunnerError::io(path, e))
}

/// Mean and sample standard deviation (zero for a single value).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return MeanStd {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub top1: f64,
    pub group_accuracy: Vec<f64>,
    pub fairness_variance: Option<f64>,
    pub total_energy_j: f64,
    /// Energy spent by each group's devices over the run.
    pub group_energy_j: Vec<f64>,
}

/// Analytical energy of one training mini-batch for a group's devices.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupMinibatch {
    pub group: String,
    pub strategy: String,
    /// `None` for groups that never train.
    pub energy_j: Option<f64>,
    /// Full-model C1 mini-batch energy divided by this group's.
    pub reduction_vs_c1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub schema_version: u32,
    pub name: Option<String>,
    pub fleet: Vec<FleetGroup>,
    pub devices: usize,
    pub rounds: usize,
    pub accuracy_mode: AccuracyMode,
    pub seeds: Vec<SeedSummary>,
    pub top1: MeanStd,
    pub group_accuracy: Vec<MeanStd>,
    pub fairness_variance: Option<MeanStd>,
    pub total_energy_j: MeanStd,
    pub minibatch_energy: Vec<GroupMinibatch>,
}

/// One-mini-batch energy of every group's plan relative to full-model C1.
pub fn group_minibatch_energy(model: &ModelSpec, groups: &[FleetGroup], table: &EnergyTable, batch: usize) -> Result<Vec<GroupMinibatch>> {
    let reference = minibatch_energy(model, &AccelPreset::C1.config(), table, batch)?.total_j();
    let mut global = model.clone();
    if let Some(s) = groups.iter().find_map(|g| g.strategy.global_scale()) {
        global = model.scaled_width(s)?;
    }
    let net = Network::compile(&global)?;
    groups
        .iter()
        .map(|g| {
            let (energy_j, reduction_vs_c1) = match apply_strategy(&g.strategy, &net, 1)? {
                LocalPlan::Skip => (None, None),
                LocalPlan::Train { spec, accelerator, .. } => {
                    let e = minibatch_energy(&spec, &accelerator, table, batch)?.total_j();
                    (Some(e), Some(reference / e))
                }
            };
            Ok(GroupMinibatch {
                group: g.label.clone(),
                strategy: strategy_name(&g.strategy),
                energy_j,
                reduction_vs_c1,
            })
        })
        .collect()
}

pub fn summarize(prepared: &Prepared, runs: &[(u64, RunHistory)]) -> Result<Summary> {
    let cfg = &prepared.config;
    let assignment = cfg.assignment(&cfg.fleet.expand()?)?;
    let mut seeds = Vec::with_capacity(runs.len());
    for (seed, h) in runs {
        let m = h
            .final_metrics()
            .ok_or_else(|| RunnerError::config("run finished without an evaluation"))?;
        let mut group_energy_j = vec![0.0; prepared.groups.len()];
        for (d, e) in h.device_energy_j.iter().enumerate() {
            group_energy_j[assignment.device_group[d]] += e;
        }
        seeds.push(SeedSummary {
            seed: *seed,
            top1: m.top1,
            group_accuracy: m.group_accuracy.clone(),
            fairness_variance: m.fairness_variance,
            total_energy_j: h.total_energy_j(),
            group_energy_j,
        });
    }
    let column = |f: &dyn Fn(&SeedSummary) -> f64| MeanStd::of(&seeds.iter().map(f).collect::<Vec<_>>());
    let groups = prepared.groups.len();
    Ok(Summary {
        schema_version: crate::config::SCHEMA_VERSION,
        name: cfg.name.clone(),
        fleet: prepared.groups.clone(),
        devices: cfg.partition.devices,
        rounds: cfg.training.rounds,
        accuracy_mode: cfg.training.accuracy_mode,
        top1: column(&|s| s.top1),
        group_accuracy: (0..groups).map(|g| column(&|s| s.group_accuracy[g])).collect(),
        fairness_variance: seeds
            .iter()
            .all(|s| s.fairness_variance.is_some())
            .then(|| column(&|s| s.fairness_variance.unwrap_or(f64::NAN))),
        total_energy_j: column(&|s| s.total_energy_j),
        minibatch_energy: group_minibatch_energy(&prepared.model, &prepared.groups, &prepared.energy, cfg.training.batch_size)?,
        seeds,
    })
}

/// Paths of the files one experiment writes.
pub struct Artifacts {
    pub device_csv: Vec<PathBuf>,
    pub eval_csv: Vec<PathBuf>,
    pub accuracy_energy: PathBuf,
    pub summary: PathBuf,
}

/// Run every seed of `prepared` and write all artifacts into `out`.
pub fn run_experiment<E: Executor>(prepared: &Prepared, out: &Path, exec: &E) -> Result<(Summary, Artifacts)> {
    fs::create_dir_all(out).map_err(|e| RunnerError::io(out, e))?;
    if prepared.config.training.accuracy_mode == AccuracyMode::Literal && prepared.groups.len() > 1 {
        log::warn!(
            "per-class accuracy uses the literal TP/(TP+TN+FP+FN) definition; with several classes it cannot reach 1 \
             (set training.accuracy_mode = \"recall\" for TP/(TP+FN))"
        );
    }
    let mut runs = Vec::with_capacity(prepared.config.seeds.len());
    for &seed in &prepared.config.seeds {
        log::info!("seed {seed}: {} rounds", prepared.config.training.rounds);
        let history = prepared.run_seed(seed, exec, |r| {
            if let Some(m) = &r.metrics {
                log::info!("seed {seed} round {}: loss {:.4}, top-1 {:.4}", r.round, r.train_loss, m.top1);
            }
        })?;
        runs.push((seed, history));
    }
    let mut artifacts = Artifacts {
        device_csv: Vec::new(),
        eval_csv: Vec::new(),
        accuracy_energy: out.join("accuracy_energy.csv"),
        summary: out.join("summary.json"),
    };
    for (seed, h) in &runs {
        let device = out.join(format!("rounds_seed{seed}.csv"));
        write_device_csv(&device, *seed, &prepared.groups, &h.records)?;
        let eval = out.join(format!("eval_seed{seed}.csv"));
        write_eval_csv(&eval, *seed, &prepared.groups, &h.records)?;
        artifacts.device_csv.push(device);
        artifacts.eval_csv.push(eval);
    }
    write_accuracy_energy(&artifacts.accuracy_energy, &runs)?;
    let summary = summarize(prepared, &runs)?;
    let json = serde_json::to_string_pretty(&summary)?;
    fs::write(&artifacts.summary, json + "\n").map_err(|e| RunnerError::io(&artifacts.summary, e))?;
    Ok((summary, artifacts))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std() {
        let m = MeanStd::of(&[1.0, 2.0, 3.0]);
        assert_eq!(m.mean, 2.0);
        assert_eq!(m.std, 1.0);
        assert_eq!(MeanStd::of(&[4.0]).std, 0.0);
    }

    #[test]
    fn columns_match_documentation() {
        assert_eq!(device_columns().join(","), DEVICE_COLUMNS);
    }

    #[test]
    fn strategy_names() {
        assert_eq!(
            strategy_name(&Strategy::Ours {
                accelerator: AccelPreset::C4.config()
            }),
            "ours-C4"
        );
        assert_eq!(strategy_name(&Strategy::FedRolex { scale: 0.25 }), "fedrolex-0.25");
        assert_eq!(strategy_name(&Strategy::DropDevices), "drop");
    }
}
