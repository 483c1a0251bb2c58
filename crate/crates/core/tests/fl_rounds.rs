//! End-to-end federated rounds on a tiny synthetic task.

use approxfl_core::accel::EnergyTable;
use approxfl_core::dataset::{synthetic, Dataset, SyntheticSpec};
use approxfl_core::fl::{evaluate_model, Federation, FlConfig, FleetGroup, Sequential};
use approxfl_core::metrics::AccuracyMode;
use approxfl_core::nn::{local_train, zoo, Augmentation, LocalTrainConfig, Model, ModelSpec};
use approxfl_core::partition::{assign_groups, partition, GroupAssignment, PartitionKind, PartitionSpec};
use approxfl_core::presets;
use approxfl_core::rng::{self, purpose};

fn data() -> (Dataset, Dataset) {
    synthetic(&SyntheticSpec {
        classes: 6,
        shape: [3, 8, 8],
        train_samples: 240,
        test_samples: 120,
        noise_std: 0.5,
        seed: 77,
    })
    .unwrap()
}

fn model() -> ModelSpec {
    zoo::desk_cnn([3, 8, 8], 6, [8, 16])
}

fn config(rounds: usize, clients: usize, seed: u64) -> FlConfig {
    FlConfig {
        rounds,
        clients_per_round: clients,
        local_epochs: 1,
        batch_size: 16,
        lr: 0.1,
        lr_min: 0.001,
        augmentation: Augmentation::default(),
        accuracy_mode: AccuracyMode::Recall,
        eval_every: 1,
        seed,
    }
}

fn federation<'a>(
    train: &'a Dataset,
    test: &'a Dataset,
    fleet: &str,
    kind: PartitionKind,
    devices: usize,
    cfg: FlConfig,
) -> Federation<'a> {
    let specs = presets::fleet(fleet).unwrap();
    let mixture: Vec<(String, f64)> = specs.iter().map(|g| (g.label.clone(), g.fraction)).collect();
    let assignment = assign_groups(devices, &mixture).unwrap();
    let spec = PartitionSpec {
        kind,
        devices,
        seed: cfg.seed,
    };
    Federation {
        model: model(),
        train,
        test,
        shards: partition(train.labels(), train.classes(), &spec, &assignment).unwrap(),
        assignment,
        groups: specs
            .into_iter()
            .map(|g| FleetGroup {
                label: g.label,
                strategy: g.strategy,
            })
            .collect(),
        energy: EnergyTable::default(),
        config: cfg,
    }
}

#[test]
fn one_device_one_round_is_one_centralised_epoch() {
    let (train, test) = data();
    let cfg = config(1, 1, 5);
    let shard: Vec<usize> = (0..train.len()).collect();
    let fed = Federation {
        model: model(),
        train: &train,
        test: &test,
        shards: vec![shard.clone()],
        assignment: GroupAssignment::single(1, "C1"),
        groups: vec![FleetGroup {
            label: "C1".into(),
            strategy: presets::fleet("C1").unwrap().remove(0).strategy,
        }],
        energy: EnergyTable::default(),
        config: cfg,
    };
    let history = fed.run(&Sequential, |_| {}).unwrap();

    let mut central = Model::init(&model(), &mut rng::stream(5, &[purpose::INIT])).unwrap();
    let local = LocalTrainConfig {
        epochs: 1,
        batch_size: 16,
        batch_fraction: 1.0,
        lr: 0.1,
        augmentation: Augmentation::default(),
    };
    let mut r = rng::stream(5, &[purpose::LOCAL_TRAIN, 1, 0]);
    local_train(
        &mut central,
        &train,
        &shard,
        &local,
        approxfl_core::nn::SaNumerics::exact(),
        None,
        &mut r,
    )
    .unwrap();
    assert_eq!(history.model.params(), central.params());
}

#[test]
fn dropped_devices_never_appear() {
    let (train, test) = data();
    let fed = federation(&train, &test, "DropDevices", PartitionKind::Iid, 6, config(3, 6, 1));
    let history = fed.run(&Sequential, |_| {}).unwrap();
    let g1 = fed.assignment.members(0);
    for r in &history.records {
        assert_eq!(r.devices.len(), g1.len(), "round {}", r.round);
        assert!(r.devices.iter().all(|d| d.group == 0 && g1.contains(&d.device)));
    }
    for d in fed.assignment.members(1).into_iter().chain(fed.assignment.members(2)) {
        assert_eq!(history.device_energy_j[d], 0.0);
    }
}

#[test]
fn homogeneous_and_mixed_fleets_log_monotone_energy() {
    let (train, test) = data();
    for fleet in ["C1", "C2", "HeteroFL-S2", "FedRolex-S3", "SmallModel-S2", "F2"] {
        let fed = federation(&train, &test, fleet, PartitionKind::ResourceCorrelated, 6, config(3, 4, 2));
        let history = fed.run(&Sequential, |_| {}).unwrap();
        assert_eq!(history.records.len(), 3);
        let mut last = vec![0.0f64; 6];
        for r in &history.records {
            assert_eq!(r.devices.len(), 4, "{fleet}");
            for d in &r.devices {
                assert!(d.energy.total_j() > 0.0, "{fleet}");
                assert!(d.cumulative_j >= last[d.device], "{fleet}");
                last[d.device] = d.cumulative_j;
                assert!(d.mean_loss.is_finite());
            }
            assert!(r.metrics.is_some());
        }
        let total: f64 = history.records.iter().map(|r| r.energy_j()).sum();
        assert!((total - history.total_energy_j()).abs() <= 1e-9 * total, "{fleet}");
    }
}

#[test]
fn approximate_groups_spend_less_energy_per_minibatch() {
    let (train, test) = data();
    let fed = federation(&train, &test, "C5", PartitionKind::Iid, 6, config(1, 6, 3));
    let history = fed.run(&Sequential, |_| {}).unwrap();
    let per_batch = |group: usize| {
        let ds: Vec<_> = history.records[0].devices.iter().filter(|d| d.group == group).collect();
        ds.iter().map(|d| d.energy.total_j()).sum::<f64>() / ds.iter().map(|d| d.minibatches as f64).sum::<f64>()
    };
    assert!(per_batch(0) > 3.0 * per_batch(1), "{} vs {}", per_batch(0), per_batch(1));
}

#[test]
fn runs_are_reproducible() {
    let (train, test) = data();
    let a = federation(&train, &test, "C3", PartitionKind::Dirichlet { alpha: 0.5 }, 6, config(2, 3, 9))
        .run(&Sequential, |_| {})
        .unwrap();
    let b = federation(&train, &test, "C3", PartitionKind::Dirichlet { alpha: 0.5 }, 6, config(2, 3, 9))
        .run(&Sequential, |_| {})
        .unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.model, b.model);
}

#[test]
fn training_beats_the_untrained_model() {
    let (train, test) = data();
    let fed = federation(&train, &test, "C1", PartitionKind::Iid, 4, config(10, 4, 4));
    let untrained = Model::init(&model(), &mut rng::stream(4, &[purpose::INIT])).unwrap();
    let before = evaluate_model(&untrained, &test, &fed.group_histograms(), AccuracyMode::Recall)
        .unwrap()
        .top1;
    let history = fed.run(&Sequential, |_| {}).unwrap();
    let after = history.final_metrics().unwrap().top1;
    assert!(after > before + 0.2, "{before} → {after}");
}

#[test]
fn invalid_federations_are_rejected() {
    let (train, test) = data();
    let mut fed = federation(&train, &test, "C1", PartitionKind::Iid, 3, config(1, 3, 1));
    fed.config.batch_size = 0;
    assert!(fed.run(&Sequential, |_| {}).is_err());
    let mut fed = federation(&train, &test, "C1", PartitionKind::Iid, 3, config(1, 3, 1));
    fed.groups.pop();
    assert!(fed.run(&Sequential, |_| {}).is_err());
    let mut fed = federation(&train, &test, "C1", PartitionKind::Iid, 3, config(1, 3, 1));
    fed.model = zoo::desk_cnn([3, 8, 8], 10, [8, 16]);
    assert!(fed.run(&Sequential, |_| {}).is_err());
}
