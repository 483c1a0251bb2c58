//! Splitting a dataset into per-device shards (IID, Dirichlet label skew,
//! resource-correlated class blocks) and assigning devices to groups.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, purpose};

/// How samples are distributed over devices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PartitionKind {
    /// Uniformly shuffled, equally sized shards.
    Iid,
    /// Per-class device proportions drawn from `Dir(alpha)`, then rebalanced
    /// to equal shard sizes.
    Dirichlet { alpha: f64 },
    /// Classes split into contiguous blocks, one block per device group;
    /// devices of a group sample IID from their group's classes.
    ResourceCorrelated,
}

/// Serialised with the kind's fields inline (`{"kind": "dirichlet",
/// "alpha": 0.1, "devices": 16, "seed": 1}`). serde cannot combine that
/// flattening with `deny_unknown_fields`; strict parsing is the job of the
/// runner's configuration layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    #[serde(flatten)]
    pub kind: PartitionKind,
    pub devices: usize,
    pub seed: u64,
}

/// Sample indices per device.
pub type Shards = Vec<Vec<usize>>;

/// Device → group index, plus one label per group (the configuration the
/// group runs). Groups are contiguous blocks of device indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupAssignment {
    pub labels: Vec<String>,
    pub device_group: Vec<usize>,
}

impl GroupAssignment {
    pub fn devices(&self) -> usize {
        self.device_group.len()
    }

    pub fn groups(&self) -> usize {
        self.labels.len()
    }

    pub fn members(&self, group: usize) -> Vec<usize> {
        (0..self.devices()).filter(|&d| self.device_group[d] == group).collect()
    }

    /// Every device in one group.
    pub fn single(devices: usize, label: &str) -> Self {
        GroupAssignment {
            labels: vec![label.into()],
            device_group: vec![0; devices],
        }
    }
}

/// Assign `devices` devices to groups in contiguous index blocks:
/// `⌊fraction·devices⌋` devices per group, the rounding remainder going to
/// the last group.
pub fn assign_groups(devices: usize, mixture: &[(String, f64)]) -> Result<GroupAssignment> {
    if mixture.is_empty() {
        return Err(Error::config("a fleet mixture needs at least one group"));
    }
    if mixture.iter().any(|(_, f)| !(*f >= 0.0 && f.is_finite())) {
        return Err(Error::config("mixture fractions must be non-negative"));
    }
    let total: f64 = mixture.iter().map(|(_, f)| f).sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::config(alloc::format!("mixture fractions sum to {total}, not 1")));
    }
    let mut device_group = Vec::with_capacity(devices);
    for (g, (_, f)) in mixture.iter().enumerate() {
        let n = if g + 1 == mixture.len() {
            devices - device_group.len()
        } else {
            // Guard against 0.2·100 evaluating to 19.999….
            libm::floor(f * devices as f64 + 1e-9) as usize
        };
        let n = n.min(devices - device_group.len());
        device_group.extend(core::iter::repeat_n(g, n));
    }
    Ok(GroupAssignment {
        labels: mixture.iter().map(|(l, _)| l.clone()).collect(),
        device_group,
    })
}

/// Contiguous class blocks, sizes as equal as possible with larger blocks
/// first: 10 classes over 3 groups → `{0..3}, {4..6}, {7..9}`.
pub fn class_blocks(classes: usize, groups: usize) -> Result<Vec<Vec<usize>>> {
    if groups == 0 || classes < groups {
        return Err(Error::config(alloc::format!(
            "{classes} classes cannot be split over {groups} groups"
        )));
    }
    let base = classes / groups;
    let extra = classes % groups;
    let mut next = 0;
    Ok((0..groups)
        .map(|g| {
            let n = base + usize::from(g < extra);
            let block = (next..next + n).collect();
            next += n;
            block
        })
        .collect())
}

/// Split `items` into `parts` contiguous runs with sizes differing by at
/// most one (larger runs first).
fn deal(items: &[usize], parts: usize) -> Shards {
    let base = items.len() / parts;
    let extra = items.len() % parts;
    let mut out = Vec::with_capacity(parts);
    let mut next = 0;
    for p in 0..parts {
        let n = base + usize::from(p < extra);
        out.push(items[next..next + n].to_vec());
        next += n;
    }
    out
}

/// Distribute the samples with class `labels` over devices. `groups` is
/// only consulted by [`PartitionKind::ResourceCorrelated`], whose class
/// blocks follow the group order. Every sample lands in exactly one shard;
/// shards are sorted by sample index.
pub fn partition(labels: &[u32], classes: usize, spec: &PartitionSpec, groups: &GroupAssignment) -> Result<Shards> {
    let devices = spec.devices;
    if devices == 0 {
        return Err(Error::config("at least one device is required"));
    }
    if groups.devices() != devices {
        return Err(Error::config("group assignment and partition disagree on the device count"));
    }
    if devices > labels.len() {
        return Err(Error::config(alloc::format!(
            "{devices} devices exceed the {} available samples",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes) {
        return Err(Error::input(alloc::format!("label {bad} outside the {classes}-class range")));
    }
    let mut rng = rng::stream(spec.seed, &[purpose::PARTITION]);
    let mut shards = match spec.kind {
        PartitionKind::Iid => {
            let mut all: Vec<usize> = (0..labels.len()).collect();
            all.shuffle(&mut rng);
            deal(&all, devices)
        }
        PartitionKind::Dirichlet { alpha } => dirichlet(labels, classes, devices, alpha, &mut rng)?,
        PartitionKind::ResourceCorrelated => {
            let blocks = class_blocks(classes, groups.groups())?;
            let mut shards = vec![Vec::new(); devices];
            for (g, block) in blocks.iter().enumerate() {
                let members = groups.members(g);
                let mut pool: Vec<usize> = (0..labels.len()).filter(|&i| block.contains(&(labels[i] as usize))).collect();
                if members.is_empty() {
                    if !pool.is_empty() {
                        return Err(Error::config(alloc::format!(
                            "group {g} holds classes {block:?} but has no devices"
                        )));
                    }
                    continue;
                }
                pool.shuffle(&mut rng);
                for (d, shard) in members.iter().zip(deal(&pool, members.len())) {
                    shards[*d] = shard;
                }
            }
            shards
        }
    };
    for s in &mut shards {
        s.sort_unstable();
    }
    Ok(shards)
}

fn dirichlet<R: Rng>(labels: &[u32], classes: usize, devices: usize, alpha: f64, rng: &mut R) -> Result<Shards> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::config("Dirichlet concentration must be positive"));
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::config(alloc::format!("{e}")))?;
    // held[d][j]: samples of class j on device d.
    let mut held: Vec<Vec<Vec<usize>>> = vec![vec![Vec::new(); classes]; devices];
    for j in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] as usize == j).collect();
        if members.is_empty() {
            continue;
        }
        members.shuffle(rng);
        let mut p: Vec<f64> = (0..devices).map(|_| gamma.sample(rng)).collect();
        let sum: f64 = p.iter().sum();
        if sum > 0.0 {
            p.iter_mut().for_each(|x| *x /= sum);
        } else {
            // Every draw underflowed: the mass goes to one device.
            p.iter_mut().for_each(|x| *x = 0.0);
            p[rng.random_range(0..devices)] = 1.0;
        }
        // Largest-remainder rounding of the class's sample counts.
        let n = members.len();
        let ideal: Vec<f64> = p.iter().map(|x| x * n as f64).collect();
        let mut counts: Vec<usize> = ideal.iter().map(|x| libm::floor(*x) as usize).collect();
        let mut order: Vec<usize> = (0..devices).collect();
        order.sort_by(|&a, &b| {
            let ra = ideal[a] - counts[a] as f64;
            let rb = ideal[b] - counts[b] as f64;
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        let mut missing = n - counts.iter().sum::<usize>();
        for &d in order.iter().cycle() {
            if missing == 0 {
                break;
            }
            counts[d] += 1;
            missing -= 1;
        }
        let mut next = 0;
        for (d, c) in counts.into_iter().enumerate() {
            held[d][j].extend_from_slice(&members[next..next + c]);
            next += c;
        }
    }
    rebalance(&mut held, labels.len());
    Ok(held.into_iter().map(|h| h.into_iter().flatten().collect()).collect())
}

/// Greedily move samples from the largest to the smallest shard until the
/// sizes equal the IID targets (`n/devices`, ±1). Each move takes the class
/// the receiving device already holds most of (among those the donor has),
/// which keeps the label skew as intact as possible.
fn rebalance(held: &mut [Vec<Vec<usize>>], total: usize) {
    let devices = held.len();
    let target: Vec<usize> = (0..devices).map(|d| total / devices + usize::from(d < total % devices)).collect();
    let mut size: Vec<usize> = held.iter().map(|h| h.iter().map(Vec::len).sum()).collect();
    loop {
        let over = (0..devices).max_by_key(|&d| (size[d] as isize - target[d] as isize, core::cmp::Reverse(d)));
        let under = (0..devices).min_by_key(|&d| (size[d] as isize - target[d] as isize, d));
        let (Some(o), Some(u)) = (over, under) else { return };
        if size[o] <= target[o] || size[u] >= target[u] {
            return;
        }
        let classes = held[o].len();
        let j = (0..classes)
            .filter(|&j| !held[o][j].is_empty())
            .max_by_key(|&j| (held[u][j].len(), core::cmp::Reverse(j)))
            .expect("an over-full shard holds samples");
        let moved = held[o][j].pop().expect("class is non-empty");
        held[u][j].push(moved);
        size[o] -= 1;
        size[u] += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn spec(kind: PartitionKind, devices: usize) -> PartitionSpec {
        PartitionSpec { kind, devices, seed: 3 }
    }

    fn labels(n: usize, classes: u32) -> Vec<u32> {
        (0..n as u32).map(|i| i % classes).collect()
    }

    fn assert_bijection(shards: &Shards, n: usize) {
        let mut all: Vec<usize> = shards.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn iid_equal_shards() {
        let l = labels(8, 2);
        let g = GroupAssignment::single(4, "C1");
        let s = partition(&l, 2, &spec(PartitionKind::Iid, 4), &g).unwrap();
        assert!(s.iter().all(|x| x.len() == 2));
        assert_bijection(&s, 8);
        assert_eq!(s, partition(&l, 2, &spec(PartitionKind::Iid, 4), &g).unwrap());
    }

    #[test]
    fn dirichlet_balanced_and_complete() {
        let l = labels(1003, 10);
        let g = GroupAssignment::single(7, "C1");
        let s = partition(&l, 10, &spec(PartitionKind::Dirichlet { alpha: 0.1 }, 7), &g).unwrap();
        assert_bijection(&s, 1003);
        let sizes: Vec<usize> = s.iter().map(Vec::len).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1, "{sizes:?}");
    }

    #[test]
    fn class_blocks_four_three_three() {
        let b = class_blocks(10, 3).unwrap();
        assert_eq!(b, vec![vec![0, 1, 2, 3], vec![4, 5, 6], vec![7, 8, 9]]);
        assert!(class_blocks(2, 3).is_err());
    }

    #[test]
    fn resource_correlated_confines_classes() {
        let l = labels(300, 10);
        let mix = [
            ("C1".to_string(), 1.0 / 3.0),
            ("C3".to_string(), 1.0 / 3.0),
            ("C5".to_string(), 1.0 / 3.0),
        ];
        let g = assign_groups(9, &mix).unwrap();
        let s = partition(&l, 10, &spec(PartitionKind::ResourceCorrelated, 9), &g).unwrap();
        assert_bijection(&s, 300);
        let blocks = class_blocks(10, 3).unwrap();
        for (d, shard) in s.iter().enumerate() {
            let block = &blocks[g.device_group[d]];
            assert!(shard.iter().all(|&i| block.contains(&(l[i] as usize))));
        }
    }

    #[test]
    fn group_assignment_remainder_goes_last() {
        let mix = [("C1".to_string(), 1.0 / 3.0), ("C3".to_string(), 2.0 / 3.0)];
        let g = assign_groups(100, &mix).unwrap();
        assert_eq!(g.members(0), (0..33).collect::<Vec<_>>());
        assert_eq!(g.members(1).len(), 67);
        let five: Vec<(String, f64)> = ["C1", "C2", "C3", "C4", "C5"].iter().map(|c| (c.to_string(), 0.2)).collect();
        let g = assign_groups(100, &five).unwrap();
        assert!((0..5).all(|k| g.members(k).len() == 20));
        assert!(assign_groups(10, &[("C1".to_string(), 0.5)]).is_err());
    }
}
