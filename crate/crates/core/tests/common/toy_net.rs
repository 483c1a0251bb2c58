//! Toy network (conv+bias → batch norm → ReLU → strided conv → ReLU →
//! global average pool → dense → softmax cross-entropy) with an
//! independent f64 reference implementation, and the finite-difference
//! gradient check built on it.
//!
//! Central differences of the f64 loss are compared with the analytic FP32
//! gradients. Coordinates whose ±ε evaluations switch a ReLU on or off
//! straddle a kink, where the difference quotient is not a derivative
//! estimate; those are excluded and counted.

#![allow(dead_code)]

use approxfl_core::nn::{Conv2d, Dense, Layer, Mode, Model, ModelSpec, ParamKind, SaNumerics};
use approxfl_core::rng;

/// Denominator floor so near-zero gradients compare on an absolute scale.
const REL_FLOOR: f64 = 1e-4;
const BN_EPS: f64 = 1e-5;

const BATCH: usize = 4;
const IN: [usize; 3] = [2, 6, 6];
const C1: usize = 3;
const C2: usize = 4;
const CLASSES: usize = 3;

pub fn toy_spec() -> ModelSpec {
    ModelSpec {
        input: IN,
        classes: CLASSES,
        layers: vec![
            Layer::Conv2d(Conv2d {
                in_channels: IN[0],
                out_channels: C1,
                kernel: 3,
                stride: 1,
                padding: 1,
                bias: true,
            }),
            Layer::BatchNorm { channels: C1 },
            Layer::Relu,
            Layer::Conv2d(Conv2d {
                in_channels: C1,
                out_channels: C2,
                kernel: 3,
                stride: 2,
                padding: 1,
                bias: false,
            }),
            Layer::Relu,
            Layer::AvgPool { kernel: 0 },
            Layer::Dense(Dense {
                in_features: C2,
                out_features: CLASSES,
            }),
        ],
    }
}

/// `[batch, cin, h, w]` → `[batch, cout, oh, ow]`, square kernel, zero padding.
#[allow(clippy::too_many_arguments)]
fn conv(
    x: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    wt: &[f64],
    bias: Option<&[f64]>,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut y = vec![0.0; BATCH * cout * oh * ow];
    for b in 0..BATCH {
        for o in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.map_or(0.0, |bb| bb[o]);
                    for i in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += x[((b * cin + i) * h + iy as usize) * w + ix as usize] * wt[((o * cin + i) * k + ky) * k + kx];
                            }
                        }
                    }
                    y[((b * cout + o) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    (y, oh, ow)
}

/// Loss of the toy network in f64, training-mode batch norm, together with
/// the on/off pattern of every ReLU.
fn oracle(params: &[Vec<f64>], x: &[f64], labels: &[u32]) -> (f64, Vec<bool>) {
    let mut active = Vec::new();
    let [cin, h, w] = IN;
    let (mut a, h1, w1) = conv(x, cin, h, w, &params[0], Some(&params[1]), C1, 3, 1, 1);
    let plane = h1 * w1;
    let (gamma, beta) = (&params[2], &params[3]);
    for c in 0..C1 {
        let vals: Vec<f64> = (0..BATCH).flat_map(|b| a[(b * C1 + c) * plane..][..plane].to_vec()).collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + BN_EPS).sqrt();
        for b in 0..BATCH {
            for v in &mut a[(b * C1 + c) * plane..][..plane] {
                let pre = gamma[c] * (*v - mean) * inv + beta[c];
                active.push(pre > 0.0);
                *v = pre.max(0.0);
            }
        }
    }
    let (mut z, h2, w2) = conv(&a, C1, h1, w1, &params[6], None, C2, 3, 2, 1);
    for v in &mut z {
        active.push(*v > 0.0);
        *v = v.max(0.0);
    }
    let plane2 = h2 * w2;
    let mut loss = 0.0;
    for b in 0..BATCH {
        let pooled: Vec<f64> = (0..C2)
            .map(|c| z[(b * C2 + c) * plane2..][..plane2].iter().sum::<f64>() / plane2 as f64)
            .collect();
        let logits: Vec<f64> = (0..CLASSES)
            .map(|o| params[8][o] + (0..C2).map(|i| params[7][o * C2 + i] * pooled[i]).sum::<f64>())
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        loss += lse - logits[labels[b] as usize];
    }
    (loss / BATCH as f64, active)
}

/// Uniform values in `[lo, hi)` from a SplitMix64 counter stream.
struct Uniform(u64);

impl Uniform {
    fn next(&mut self, lo: f32, hi: f32) -> f32 {
        self.0 += 1;
        let unit = (rng::splitmix64(self.0) >> 40) as f32 / (1u64 << 24) as f32;
        lo + (hi - lo) * unit
    }
}

/// Initialised toy model with non-trivial batch-norm affine parameters and
/// biases, a random input batch and labels.
pub fn setup() -> (Model, Vec<f32>, Vec<u32>) {
    let spec = toy_spec();
    let mut model = Model::init(&spec, &mut rng::stream(7, &[1])).unwrap();
    let mut u = Uniform(7);
    for (info, t) in model.network().clone().params().iter().zip(model.params_mut()) {
        match info.kind {
            ParamKind::BnScale => t.data_mut().iter_mut().for_each(|v| *v = u.next(0.5, 1.5)),
            ParamKind::BnShift | ParamKind::ConvBias | ParamKind::DenseBias => t.data_mut().iter_mut().for_each(|v| *v = u.next(-0.3, 0.3)),
            _ => {}
        }
    }
    let x: Vec<f32> = (0..BATCH * IN.iter().product::<usize>()).map(|_| u.next(-1.0, 1.0)).collect();
    let labels: Vec<u32> = (0..BATCH as u32).map(|b| b % CLASSES as u32).collect();
    (model, x, labels)
}

fn to_f64(model: &Model) -> Vec<Vec<f64>> {
    model
        .params()
        .iter()
        .map(|t| t.data().iter().map(|&v| f64::from(v)).collect())
        .collect()
}

/// Relative gap between the f64 reference loss and the FP32 engine's loss.
pub fn oracle_gap() -> f64 {
    let (model, x, labels) = setup();
    let xd: Vec<f64> = x.iter().map(|&v| f64::from(v)).collect();
    let (reference, _) = oracle(&to_f64(&model), &xd, &labels);
    let fp32 = f64::from(model.loss(&x, &labels, SaNumerics::exact(), Mode::Train).unwrap());
    (reference - fp32).abs() / reference.abs().max(1.0)
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    /// Trainable scalars compared.
    pub checked: usize,
    /// Coordinates skipped because ±ε crosses a ReLU kink.
    pub kinks: usize,
    pub max_rel_err: f64,
    /// `(parameter, element)` of the largest error.
    pub worst: (usize, usize),
    /// Whether every non-trainable slot received an exactly zero gradient.
    pub buffers_zero: bool,
}

/// Compare the analytic exact-mode gradients of every trainable scalar with
/// central differences of the f64 reference at step `eps`.
pub fn gradient_check(eps: f64) -> GradCheck {
    let (mut model, x, labels) = setup();
    let pass = model.forward_train(&x, &labels, SaNumerics::exact()).unwrap();
    let grads = model.backward(&pass, SaNumerics::exact()).unwrap();
    let mut params = to_f64(&model);
    let xd: Vec<f64> = x.iter().map(|&v| f64::from(v)).collect();
    let infos = model.network().params().to_vec();

    let mut report = GradCheck {
        checked: 0,
        kinks: 0,
        max_rel_err: 0.0,
        worst: (0, 0),
        buffers_zero: true,
    };
    for (p, info) in infos.iter().enumerate() {
        if !info.kind.trainable() {
            report.buffers_zero &= grads[p].data().iter().all(|&g| g == 0.0);
            continue;
        }
        for i in 0..params[p].len() {
            let orig = params[p][i];
            params[p][i] = orig + eps;
            let (up, up_pattern) = oracle(&params, &xd, &labels);
            params[p][i] = orig - eps;
            let (down, down_pattern) = oracle(&params, &xd, &labels);
            params[p][i] = orig;
            if up_pattern != down_pattern {
                report.kinks += 1;
                continue;
            }
            let fd = (up - down) / (2.0 * eps);
            let g = f64::from(grads[p].data()[i]);
            let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(REL_FLOOR);
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = (p, i);
            }
            report.checked += 1;
        }
    }
    report
}
