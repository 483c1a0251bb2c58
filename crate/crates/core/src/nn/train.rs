//! SGD updates and the local training loop of a device.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nn::model::{Model, SaNumerics};
use crate::nn::trace::TrainStepTrace;
use crate::tensor::Tensor;

/// `w ← w − lr·g` on every trainable parameter of the 32-bit master copy.
pub fn sgd_update(model: &mut Model, grads: &[Tensor], lr: f32) -> Result<()> {
    let net = model.network().clone();
    if grads.len() != net.params().len() {
        return Err(Error::config("gradient list does not match the model"));
    }
    for ((info, p), g) in net.params().iter().zip(model.params_mut()).zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::config("gradient shape does not match its parameter"));
        }
        if !info.kind.trainable() {
            continue;
        }
        for (w, &d) in p.data_mut().iter_mut().zip(g.data()) {
            *w -= lr * d;
        }
    }
    Ok(())
}

/// Proximal regulariser `μ/2·‖w − w_anchor‖²`, contributing `μ·(w − w_anchor)`
/// to each trainable parameter gradient.
#[derive(Debug, Clone, Copy)]
pub struct ProximalTerm<'a> {
    pub mu: f32,
    pub anchor: &'a [Tensor],
}

/// Optional input augmentation applied per sample of each mini-batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Augmentation {
    /// Mirror horizontally with probability ½.
    #[serde(default)]
    pub horizontal_flip: bool,
    /// Shift by up to one pixel in each direction with zero fill.
    #[serde(default)]
    pub random_crop: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Fraction of each epoch's mini-batches that is trained, in (0, 1].
    pub batch_fraction: f64,
    pub lr: f32,
    pub augmentation: Augmentation,
}

/// Result of local training.
#[derive(Debug, Clone)]
pub struct LocalOutcome {
    pub trace: TrainStepTrace,
    /// Mean training loss over processed mini-batches.
    pub mean_loss: f32,
}

/// Number of mini-batches trained per epoch: `ceil(fraction · ceil(n / B))`.
pub fn batches_per_epoch(samples: usize, batch_size: usize, fraction: f64) -> usize {
    let all = samples.div_ceil(batch_size);
    let kept = libm::ceil(fraction * all as f64 - 1e-9) as usize;
    kept.clamp(usize::from(all > 0), all)
}

fn augment<R: Rng>(x: &mut [f32], shape: [usize; 3], aug: Augmentation, rng: &mut R) {
    let [c_n, h, w] = shape;
    let n = c_n * h * w;
    for sample in x.chunks_mut(n) {
        if aug.horizontal_flip && rng.random_bool(0.5) {
            for row in sample.chunks_mut(w) {
                row.reverse();
            }
        }
        if aug.random_crop {
            let dy = rng.random_range(-1i32..=1);
            let dx = rng.random_range(-1i32..=1);
            let src = sample.to_vec();
            for c in 0..c_n {
                for y in 0..h {
                    for xx in 0..w {
                        let sy = y as i32 + dy;
                        let sx = xx as i32 + dx;
                        sample[(c * h + y) * w + xx] = if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                            src[(c * h + sy as usize) * w + sx as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

/// Train `model` on the samples `shard` of `data`. Each epoch reshuffles the
/// shard, splits it into mini-batches of `batch_size` (the last one may be
/// smaller) and trains the first `batches_per_epoch` of them.
pub fn local_train<R: Rng>(
    model: &mut Model,
    data: &Dataset,
    shard: &[usize],
    cfg: &LocalTrainConfig,
    numerics: SaNumerics,
    proximal: Option<ProximalTerm<'_>>,
    rng: &mut R,
) -> Result<LocalOutcome> {
    if shard.is_empty() {
        return Err(Error::EmptyShard);
    }
    if cfg.batch_size == 0 || !(cfg.batch_fraction > 0.0 && cfg.batch_fraction <= 1.0) {
        return Err(Error::config("batch size must be positive and batch fraction in (0, 1]"));
    }
    if data.sample_shape() != model.spec().input {
        return Err(Error::config("dataset sample shape differs from the model input"));
    }
    let net = model.network().clone();
    let mut trace = TrainStepTrace::new(&net);
    let mut order: Vec<usize> = shard.to_vec();
    let per_epoch = batches_per_epoch(shard.len(), cfg.batch_size, cfg.batch_fraction);
    let mut loss_sum = 0.0f32;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size).take(per_epoch) {
            let (mut x, y) = data.gather(chunk);
            if cfg.augmentation != Augmentation::default() {
                augment(&mut x, data.sample_shape(), cfg.augmentation, rng);
            }
            let pass = model.forward_train(&x, &y, numerics)?;
            let mut grads = model.backward(&pass, numerics)?;
            if let Some(prox) = proximal {
                for (((info, g), w), a) in net.params().iter().zip(grads.iter_mut()).zip(model.params()).zip(prox.anchor) {
                    if !info.kind.trainable() {
                        continue;
                    }
                    for ((gv, &wv), &av) in g.data_mut().iter_mut().zip(w.data()).zip(a.data()) {
                        *gv += prox.mu * (wv - av);
                    }
                }
            }
            sgd_update(model, &grads, cfg.lr)?;
            trace.record_batch(chunk.len());
            loss_sum += pass.loss;
        }
    }
    let batches = trace.minibatches();
    Ok(LocalOutcome {
        trace,
        mean_loss: if batches > 0 { loss_sum / batches as f32 } else { 0.0 },
    })
}

/// Cosine learning-rate decay from `initial` at round 0 to `min` at round
/// `rounds`.
pub fn cosine_lr(initial: f32, min: f32, round: usize, rounds: usize) -> f32 {
    if rounds == 0 {
        return initial;
    }
    let t = round.min(rounds) as f64 / rounds as f64;
    let cos = (1.0 + libm::cos(core::f64::consts::PI * t)) / 2.0;
    (f64::from(min) + (f64::from(initial) - f64::from(min)) * cos) as f32
}
