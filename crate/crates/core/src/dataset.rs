//! In-memory labelled image datasets and the seeded synthetic generator used
//! for desk-scale experiments.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Samples stored row-major (`[channels, height, width]` per sample) with
/// integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    sample_shape: [usize; 3],
    classes: usize,
    features: Vec<f32>,
    labels: Vec<u32>,
}

impl Dataset {
    pub fn new(sample_shape: [usize; 3], classes: usize, features: Vec<f32>, labels: Vec<u32>) -> Result<Self> {
        let per = sample_shape.iter().product::<usize>();
        if per == 0 {
            return Err(Error::input("sample shape must be positive"));
        }
        if features.len() != per * labels.len() {
            return Err(Error::input(alloc::format!(
                "{} feature values do not fill {} samples of {per} values",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes) {
            return Err(Error::input(alloc::format!("label {bad} outside the {classes}-class range")));
        }
        Ok(Dataset {
            sample_shape,
            classes,
            features,
            labels,
        })
    }

    pub fn sample_shape(&self) -> [usize; 3] {
        self.sample_shape
    }

    pub fn sample_len(&self) -> usize {
        self.sample_shape.iter().product()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let n = self.sample_len();
        &self.features[i * n..(i + 1) * n]
    }

    /// Concatenated features and labels of the given samples.
    pub fn gather(&self, indices: &[usize]) -> (Vec<f32>, Vec<u32>) {
        let mut x = Vec::with_capacity(indices.len() * self.sample_len());
        let mut y = Vec::with_capacity(indices.len());
        for &i in indices {
            x.extend_from_slice(self.sample(i));
            y.push(self.labels[i]);
        }
        (x, y)
    }

    /// Per-class sample counts over `indices`.
    pub fn class_histogram(&self, indices: &[usize]) -> Vec<usize> {
        let mut h = vec![0; self.classes];
        for &i in indices {
            h[self.labels[i] as usize] += 1;
        }
        h
    }

    /// Indices of all samples whose class is in `classes`.
    pub fn indices_of_classes(&self, classes: &[usize]) -> Vec<usize> {
        (0..self.len()).filter(|&i| classes.contains(&(self.labels[i] as usize))).collect()
    }
}

/// Parameters of the synthetic image task: each class has a smooth random
/// prototype (sum of low-frequency sinusoids per channel); samples are
/// prototypes shifted by up to one pixel, rescaled in contrast and corrupted
/// by Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub shape: [usize; 3],
    pub train_samples: usize,
    pub test_samples: usize,
    pub noise_std: f32,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: 10,
            shape: [3, 8, 8],
            train_samples: 2000,
            test_samples: 1000,
            noise_std: 0.9,
            seed: 2024,
        }
    }
}

const WAVES_PER_CHANNEL: usize = 3;

fn prototypes<R: Rng>(spec: &SyntheticSpec, rng: &mut R) -> Vec<Vec<f32>> {
    let [c_n, h, w] = spec.shape;
    let amp = 1.0 / libm::sqrtf(WAVES_PER_CHANNEL as f32 / 2.0);
    (0..spec.classes)
        .map(|_| {
            let mut p = vec![0.0f32; c_n * h * w];
            for c in 0..c_n {
                for _ in 0..WAVES_PER_CHANNEL {
                    let fy = rng.random_range(0..3) as f32;
                    let fx = rng.random_range(0..3) as f32;
                    let phase = rng.random_range(0.0..core::f32::consts::TAU);
                    for y in 0..h {
                        for x in 0..w {
                            let t = core::f32::consts::TAU * (fy * y as f32 / h as f32 + fx * x as f32 / w as f32);
                            p[(c * h + y) * w + x] += amp * libm::sinf(t + phase);
                        }
                    }
                }
            }
            p
        })
        .collect()
}

fn draw<R: Rng>(spec: &SyntheticSpec, protos: &[Vec<f32>], count: usize, rng: &mut R) -> Result<Dataset> {
    let [c_n, h, w] = spec.shape;
    let noise = Normal::new(0.0f32, spec.noise_std).map_err(|_| Error::config("noise level must be finite and non-negative"))?;
    let mut features = Vec::with_capacity(count * c_n * h * w);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        // Balanced classes in a shuffled-looking but deterministic order.
        let class = (i + rng.random_range(0..spec.classes)) % spec.classes;
        let dy = rng.random_range(-1i32..=1);
        let dx = rng.random_range(-1i32..=1);
        let contrast = rng.random_range(0.8f32..1.2);
        let proto = &protos[class];
        for c in 0..c_n {
            for y in 0..h {
                for x in 0..w {
                    let sy = (y as i32 + dy).rem_euclid(h as i32) as usize;
                    let sx = (x as i32 + dx).rem_euclid(w as i32) as usize;
                    features.push(contrast * proto[(c * h + sy) * w + sx] + noise.sample(rng));
                }
            }
        }
        labels.push(class as u32);
    }
    Dataset::new(spec.shape, spec.classes, features, labels)
}

/// Generate the `(train, test)` pair for `spec`; identical specs give
/// identical datasets.
pub fn synthetic(spec: &SyntheticSpec) -> Result<(Dataset, Dataset)> {
    if spec.classes < 2 || spec.shape.contains(&0) {
        return Err(Error::config("synthetic task needs two or more classes and a positive shape"));
    }
    let mut proto_rng = rng::stream(spec.seed, &[rng::purpose::DATASET, 0]);
    let protos = prototypes(spec, &mut proto_rng);
    let train = draw(
        spec,
        &protos,
        spec.train_samples,
        &mut rng::stream(spec.seed, &[rng::purpose::DATASET, 1]),
    )?;
    let test = draw(
        spec,
        &protos,
        spec.test_samples,
        &mut rng::stream(spec.seed, &[rng::purpose::DATASET, 2]),
    )?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(Dataset::new([1, 1, 2], 2, vec![0.0; 3], vec![0]).is_err());
        assert!(Dataset::new([1, 1, 1], 2, vec![0.0], vec![2]).is_err());
        let d = Dataset::new([1, 1, 2], 3, vec![1.0, 2.0, 3.0, 4.0], vec![2, 0]).unwrap();
        assert_eq!(d.sample(1), &[3.0, 4.0]);
        assert_eq!(d.gather(&[1, 0]), (vec![3.0, 4.0, 1.0, 2.0], vec![0, 2]));
        assert_eq!(d.class_histogram(&[0, 1]), vec![1, 0, 1]);
    }

    #[test]
    fn synthetic_is_deterministic_and_roughly_balanced() {
        let spec = SyntheticSpec::default();
        let (a, t) = synthetic(&spec).unwrap();
        let (b, _) = synthetic(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2000);
        assert_eq!(t.len(), 1000);
        let hist = a.class_histogram(&(0..a.len()).collect::<Vec<_>>());
        assert!(hist.iter().all(|&n| n > 150 && n < 250), "{hist:?}");
    }
}
