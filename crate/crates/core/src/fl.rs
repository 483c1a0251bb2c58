//! Synchronous federated averaging over a heterogeneous fleet: client
//! sampling, broadcast, local training through each device's strategy and
//! accelerator, weighted aggregation, energy accounting and evaluation.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::accel::{trace_energy, EnergyLedger, EnergyTable};
use crate::baselines::{aggregate, apply_strategy, extract_submodel, LocalPlan, Strategy, Update};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{self, AccuracyMode, MetricsReport};
use crate::nn::{cosine_lr, local_train, Augmentation, LocalTrainConfig, Model, ModelSpec, Network, ProximalTerm, SaNumerics};
use crate::partition::{GroupAssignment, Shards};
use crate::rng::{self, purpose};
use crate::tensor::Tensor;

/// Uniform sample of `count` devices from `pool` without replacement,
/// returned in ascending order.
pub fn select_clients<R: Rng>(pool: &[usize], count: usize, rng: &mut R) -> Vec<usize> {
    let count = count.min(pool.len());
    let mut picked: Vec<usize> = index::sample(rng, pool.len(), count).into_iter().map(|i| pool[i]).collect();
    picked.sort_unstable();
    picked
}

/// Runs independent per-client jobs, possibly in parallel. Results must be
/// returned in job order.
pub trait Executor: Sync {
    fn map<T: Send, F: Fn(usize) -> T + Sync>(&self, jobs: usize, f: F) -> Vec<T>;
}

/// Runs jobs one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T: Send, F: Fn(usize) -> T + Sync>(&self, jobs: usize, f: F) -> Vec<T> {
        (0..jobs).map(f).collect()
    }
}

/// Round-loop hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlConfig {
    pub rounds: usize,
    pub clients_per_round: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    /// Learning rate at round 0; decays with a cosine schedule to `lr_min`.
    pub lr: f32,
    pub lr_min: f32,
    #[serde(default)]
    pub augmentation: Augmentation,
    #[serde(default)]
    pub accuracy_mode: AccuracyMode,
    /// Evaluate the global model every this many rounds (and after the
    /// last round).
    pub eval_every: usize,
    pub seed: u64,
}

/// One device group: a label and the strategy its devices follow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetGroup {
    pub label: String,
    pub strategy: Strategy,
}

/// Everything a federated run needs.
#[derive(Debug, Clone)]
pub struct Federation<'a> {
    pub model: ModelSpec,
    pub train: &'a Dataset,
    pub test: &'a Dataset,
    pub shards: Shards,
    pub assignment: GroupAssignment,
    pub groups: Vec<FleetGroup>,
    pub energy: EnergyTable,
    pub config: FlConfig,
}

/// One device's participation in a round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceRecord {
    pub device: usize,
    pub group: usize,
    pub samples: usize,
    pub minibatches: u64,
    pub mean_loss: f32,
    pub energy: EnergyLedger,
    /// Device energy over all rounds so far, joules.
    pub cumulative_j: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 1-based round index.
    pub round: usize,
    pub lr: f32,
    pub devices: Vec<DeviceRecord>,
    /// Sample-weighted mean of the devices' training losses.
    pub train_loss: f64,
    /// Evaluation of the aggregated model, when evaluated this round.
    pub metrics: Option<MetricsReport>,
}

impl RoundRecord {
    pub fn energy_j(&self) -> f64 {
        self.devices.iter().map(|d| d.energy.total_j()).sum()
    }
}

#[derive(Debug, Clone)]
pub struct RunHistory {
    pub records: Vec<RoundRecord>,
    pub model: Model,
    /// Energy per device over the run, joules.
    pub device_energy_j: Vec<f64>,
}

impl RunHistory {
    pub fn total_energy_j(&self) -> f64 {
        self.device_energy_j.iter().sum()
    }

    pub fn final_metrics(&self) -> Option<&MetricsReport> {
        self.records.iter().rev().find_map(|r| r.metrics.as_ref())
    }
}

struct LocalResult {
    update: Update,
    record: DeviceRecord,
}

impl Federation<'_> {
    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        if c.rounds == 0 || c.clients_per_round == 0 || c.local_epochs == 0 || c.batch_size == 0 || c.eval_every == 0 {
            return Err(Error::config(
                "rounds, clients per round, epochs, batch size and evaluation interval must be positive",
            ));
        }
        if !(c.lr > 0.0 && c.lr_min >= 0.0 && c.lr_min <= c.lr) {
            return Err(Error::config("learning rates must satisfy 0 ≤ lr_min ≤ lr, lr > 0"));
        }
        if self.shards.len() != self.assignment.devices() {
            return Err(Error::config("shard count differs from the device count"));
        }
        if self.groups.len() != self.assignment.groups() {
            return Err(Error::config("every device group needs a strategy"));
        }
        for g in &self.groups {
            g.strategy.validate()?;
        }
        if self.train.sample_shape() != self.model.input || self.test.sample_shape() != self.model.input {
            return Err(Error::config("dataset sample shape differs from the model input"));
        }
        if self.train.classes() != self.model.classes || self.test.classes() != self.model.classes {
            return Err(Error::config("dataset class count differs from the model's"));
        }
        self.energy.validate()
    }

    /// Global model description: width-scaled when a group trains a small
    /// model (all such groups must agree on the scale).
    pub fn global_spec(&self) -> Result<ModelSpec> {
        let mut scale = None;
        for g in &self.groups {
            if let Some(s) = g.strategy.global_scale() {
                if scale.is_some_and(|t| t != s) {
                    return Err(Error::config("small-model groups disagree on the width scale"));
                }
                scale = Some(s);
            }
        }
        match scale {
            Some(s) => self.model.scaled_width(s),
            None => Ok(self.model.clone()),
        }
    }

    /// Devices that ever train (dropped devices are never selected).
    pub fn eligible_devices(&self) -> Vec<usize> {
        (0..self.assignment.devices())
            .filter(|&d| self.groups[self.assignment.device_group[d]].strategy != Strategy::DropDevices)
            .collect()
    }

    /// Per group, the class histogram of its devices' training data.
    pub fn group_histograms(&self) -> Vec<Vec<usize>> {
        (0..self.groups.len())
            .map(|g| {
                let mut h = vec![0; self.train.classes()];
                for d in self.assignment.members(g) {
                    for (k, n) in self.train.class_histogram(&self.shards[d]).into_iter().enumerate() {
                        h[k] += n;
                    }
                }
                h
            })
            .collect()
    }

    /// Run all rounds. `observer` sees every record as it is produced.
    pub fn run<E: Executor>(&self, exec: &E, mut observer: impl FnMut(&RoundRecord)) -> Result<RunHistory> {
        self.validate()?;
        let spec = self.global_spec()?;
        let net = Arc::new(Network::compile(&spec)?);
        let mut model = Model::init(&spec, &mut rng::stream(self.config.seed, &[purpose::INIT]))?;
        let eligible = self.eligible_devices();
        let histograms = self.group_histograms();
        let mut device_energy = vec![0.0; self.assignment.devices()];
        let mut records = Vec::with_capacity(self.config.rounds);

        for round in 1..=self.config.rounds {
            let lr = cosine_lr(self.config.lr, self.config.lr_min, round - 1, self.config.rounds);
            let mut rng = rng::stream(self.config.seed, &[purpose::SELECTION, round as u64]);
            let selected = select_clients(&eligible, self.config.clients_per_round, &mut rng);
            if selected.is_empty() {
                log::warn!("round {round}: no eligible devices, skipping aggregation");
            }
            let server = model.params();
            let results: Vec<Result<LocalResult>> = exec.map(selected.len(), |i| {
                let device = selected[i];
                self.train_device(&net, server, device, round, lr)
                    .map_err(|e| e.in_round(round, device))
            });
            let mut updates = Vec::with_capacity(results.len());
            let mut devices = Vec::with_capacity(results.len());
            for r in results {
                let LocalResult { update, mut record } = r?;
                device_energy[record.device] += record.energy.total_j();
                record.cumulative_j = device_energy[record.device];
                updates.push(update);
                devices.push(record);
            }
            if !updates.is_empty() {
                let params = aggregate(server, &updates)?;
                model = Model::from_params(net.clone(), params)?;
            }
            let weight: usize = devices.iter().map(|d| d.samples).sum();
            let train_loss = if weight > 0 {
                devices.iter().map(|d| f64::from(d.mean_loss) * d.samples as f64).sum::<f64>() / weight as f64
            } else {
                0.0
            };
            let evaluate = round % self.config.eval_every == 0 || round == self.config.rounds;
            let metrics = if evaluate {
                Some(evaluate_model(&model, self.test, &histograms, self.config.accuracy_mode)?)
            } else {
                None
            };
            let record = RoundRecord {
                round,
                lr,
                devices,
                train_loss,
                metrics,
            };
            observer(&record);
            records.push(record);
        }
        Ok(RunHistory {
            records,
            model,
            device_energy_j: device_energy,
        })
    }

    fn train_device(&self, net: &Arc<Network>, server: &[Tensor], device: usize, round: usize, lr: f32) -> Result<LocalResult> {
        let group = self.assignment.device_group[device];
        let plan = apply_strategy(&self.groups[group].strategy, net, round)?;
        let LocalPlan::Train {
            spec,
            mask,
            accelerator,
            batch_fraction,
            proximal_mu,
        } = plan
        else {
            return Err(Error::internal("a dropped device was selected"));
        };
        let numerics: SaNumerics = accelerator.numerics();
        // Broadcast: the device receives the global model in its storage
        // format.
        let mut received = match &mask {
            None => server.to_vec(),
            Some(m) => extract_submodel(server, &Network::compile(&spec)?, m)?,
        };
        for t in &mut received {
            t.round_to(numerics.storage);
        }
        let local_net = match &mask {
            None => net.clone(),
            Some(_) => Arc::new(Network::compile(&spec)?),
        };
        let anchor = received.clone();
        let mut local = Model::from_params(local_net, received)?;
        let cfg = LocalTrainConfig {
            epochs: self.config.local_epochs,
            batch_size: self.config.batch_size,
            batch_fraction,
            lr,
            augmentation: self.config.augmentation,
        };
        let proximal = proximal_mu.map(|mu| ProximalTerm { mu, anchor: &anchor });
        let mut rng = rng::stream(self.config.seed, &[purpose::LOCAL_TRAIN, round as u64, device as u64]);
        let shard = &self.shards[device];
        let outcome = local_train(&mut local, self.train, shard, &cfg, numerics, proximal, &mut rng)?;
        let energy = trace_energy(&outcome.trace, &accelerator, &self.energy)?;
        Ok(LocalResult {
            update: Update {
                samples: shard.len() as u64,
                params: local.into_params(),
                mask,
            },
            record: DeviceRecord {
                device,
                group,
                samples: shard.len(),
                minibatches: outcome.trace.minibatches(),
                mean_loss: outcome.mean_loss,
                energy,
                cumulative_j: 0.0,
            },
        })
    }
}

/// Predicted classes of `data` under `model` in exact FP32 evaluation mode.
pub fn predict_classes(model: &Model, data: &Dataset) -> Result<Vec<u32>> {
    const CHUNK: usize = 256;
    let classes = model.spec().classes;
    let mut out = Vec::with_capacity(data.len());
    let all: Vec<usize> = (0..data.len()).collect();
    for chunk in all.chunks(CHUNK) {
        let (x, _) = data.gather(chunk);
        let logits = model.predict(&x, SaNumerics::exact())?;
        for row in logits.chunks(classes) {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            out.push(best as u32);
        }
    }
    Ok(out)
}

/// Evaluate `model` on `test`. Overall metrics use the whole test set. A
/// group's accuracy is measured on the test samples of the classes present
/// in its training data and weights each class by its occurrence there.
pub fn evaluate_model(model: &Model, test: &Dataset, group_histograms: &[Vec<usize>], mode: AccuracyMode) -> Result<MetricsReport> {
    let predictions = predict_classes(model, test)?;
    let classes = test.classes();
    let counts = metrics::confusion(&predictions, test.labels(), classes)?;
    let mut report = metrics::report(&counts, mode, &[])?;
    report.group_accuracy = group_histograms
        .iter()
        .map(|h| {
            let present: Vec<usize> = (0..classes).filter(|&k| h[k] > 0).collect();
            if present.is_empty() {
                return Ok(0.0);
            }
            let idx = test.indices_of_classes(&present);
            let p: Vec<u32> = idx.iter().map(|&i| predictions[i]).collect();
            let y: Vec<u32> = idx.iter().map(|&i| test.labels()[i]).collect();
            let c = metrics::confusion(&p, &y, classes)?;
            let per_class = metrics::per_class_accuracy(&c, mode);
            metrics::group_accuracy(&per_class, h)
        })
        .collect::<Result<Vec<_>>>()?;
    report.fairness_variance = if report.group_accuracy.len() >= 2 {
        Some(metrics::fairness_variance(&report.group_accuracy)?)
    } else {
        None
    };
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selection_is_uniform_and_reproducible() {
        let pool: Vec<usize> = (0..100).collect();
        let a = select_clients(&pool, 10, &mut rng::stream(1, &[3]));
        let b = select_clients(&pool, 10, &mut rng::stream(1, &[3]));
        assert_eq!(a, b);
        assert_eq!(select_clients(&pool, 200, &mut rng::stream(1, &[3])), pool);
        let mut freq = vec![0u32; 100];
        let mut r = rng::stream(9, &[]);
        for _ in 0..1000 {
            let s = select_clients(&pool, 10, &mut r);
            assert_eq!(s.len(), 10);
            for d in s {
                freq[d] += 1;
            }
        }
        // Binomial(1000, 0.1): mean 100, σ ≈ 9.5.
        assert!(freq.iter().all(|&f| (71..=129).contains(&f)), "{freq:?}");
    }
}
