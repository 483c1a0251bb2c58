//! Operation traces of training work, consumed by the accelerator model.
//!
//! A trace stores the per-sample layer geometry of the trained network once,
//! plus a histogram of processed mini-batch sizes. Traces of the same
//! network add by merging histograms, so the energy of several mini-batches
//! is the sum of their individual energies.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::spec::{ConvShape, Network, Op};

/// Per-sample geometry of one traced layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerShape {
    /// Convolution on the systolic array. `first` layers skip the input
    /// gradient (the image gradient is never needed).
    Conv {
        shape: ConvShape,
        bias: bool,
        first: bool,
    },
    /// Fully connected layer on the systolic array.
    Dense {
        inputs: usize,
        outputs: usize,
        first: bool,
    },
    BatchNorm {
        channels: usize,
        spatial: usize,
    },
    Relu {
        elements: usize,
    },
    /// Average pooling; `elements` counts input elements per sample.
    AvgPool {
        elements: usize,
    },
    /// Skip-connection addition.
    ResidualAdd {
        elements: usize,
    },
    /// Softmax cross-entropy head over `classes` logits.
    Loss {
        classes: usize,
    },
}

/// Training phase of a systolic-array operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Forward,
    /// Input-gradient (error back-propagation) convolution.
    InputGradient,
    /// Weight-gradient convolution.
    WeightGradient,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Forward, Phase::InputGradient, Phase::WeightGradient];
}

impl LayerShape {
    /// Useful MAC operations of `phase` for a mini-batch of `batch` samples
    /// (zero for SIMD layers and for the skipped input gradient of the first
    /// layer). A convolution's forward count is `B·Q·H_out·W_out·P·k²`; the
    /// gradient phases perform the same number of useful products.
    pub fn macs(&self, phase: Phase, batch: usize) -> u64 {
        let per_sample = match *self {
            LayerShape::Conv { shape, first, .. } => {
                if first && phase == Phase::InputGradient {
                    0
                } else {
                    (shape.out_channels * shape.out_h * shape.out_w * shape.in_channels * shape.kernel * shape.kernel) as u64
                }
            }
            LayerShape::Dense { inputs, outputs, first } => {
                if first && phase == Phase::InputGradient {
                    0
                } else {
                    (inputs * outputs) as u64
                }
            }
            _ => 0,
        };
        per_sample * batch as u64
    }

    pub fn on_systolic_array(&self) -> bool {
        matches!(self, LayerShape::Conv { .. } | LayerShape::Dense { .. })
    }

    /// Trainable parameter count of the layer.
    pub fn parameters(&self) -> u64 {
        match *self {
            LayerShape::Conv { shape, bias, .. } => (shape.weight_len() + if bias { shape.out_channels } else { 0 }) as u64,
            LayerShape::Dense { inputs, outputs, .. } => (inputs * outputs + outputs) as u64,
            LayerShape::BatchNorm { channels, .. } => 2 * channels as u64,
            _ => 0,
        }
    }
}

/// Layer geometry of a network in execution order.
pub fn layer_shapes(net: &Network) -> Vec<LayerShape> {
    let mut out = Vec::new();
    for op in net.ops() {
        match *op {
            Op::Conv { shape, bias, first_sa, .. } => out.push(LayerShape::Conv {
                shape,
                bias: bias.is_some(),
                first: first_sa,
            }),
            Op::Dense {
                inputs, outputs, first_sa, ..
            } => out.push(LayerShape::Dense {
                inputs,
                outputs,
                first: first_sa,
            }),
            Op::BatchNorm { channels, spatial, .. } => out.push(LayerShape::BatchNorm { channels, spatial }),
            Op::Relu { elements } => out.push(LayerShape::Relu { elements }),
            Op::AvgPool { channels, in_h, in_w, .. } => out.push(LayerShape::AvgPool {
                elements: channels * in_h * in_w,
            }),
            Op::ResEnd { elements } => out.push(LayerShape::ResidualAdd { elements }),
            Op::ResBegin | Op::ResShortcut => {}
        }
    }
    out.push(LayerShape::Loss { classes: net.classes() });
    out
}

/// Training work performed by one device: layer geometry plus how many
/// mini-batches of each size went through forward, backward and update.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TrainStepTrace {
    pub layers: Vec<LayerShape>,
    /// Mini-batch size → number of mini-batches.
    pub batches: BTreeMap<usize, u64>,
}

impl TrainStepTrace {
    /// Empty trace for `net`.
    pub fn new(net: &Network) -> Self {
        TrainStepTrace {
            layers: layer_shapes(net),
            batches: BTreeMap::new(),
        }
    }

    /// Trace of a single mini-batch of `batch` samples.
    pub fn single(net: &Network, batch: usize) -> Self {
        let mut t = Self::new(net);
        t.record_batch(batch);
        t
    }

    pub fn record_batch(&mut self, batch: usize) {
        if batch > 0 {
            *self.batches.entry(batch).or_insert(0) += 1;
        }
    }

    pub fn minibatches(&self) -> u64 {
        self.batches.values().sum()
    }

    pub fn samples(&self) -> u64 {
        self.batches.iter().map(|(&b, &n)| b as u64 * n).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    /// Useful MACs of one layer and phase over the whole trace.
    pub fn layer_macs(&self, layer: usize, phase: Phase) -> u64 {
        self.batches.iter().map(|(&b, &n)| self.layers[layer].macs(phase, b) * n).sum()
    }

    /// Useful MACs of a phase summed over layers.
    pub fn phase_macs(&self, phase: Phase) -> u64 {
        (0..self.layers.len()).map(|l| self.layer_macs(l, phase)).sum()
    }

    pub fn total_macs(&self) -> u64 {
        Phase::ALL.iter().map(|&p| self.phase_macs(p)).sum()
    }

    /// Add another trace of the same network.
    pub fn merge(&mut self, other: &TrainStepTrace) -> Result<()> {
        if other.is_empty() {
            return Ok(());
        }
        if self.layers.is_empty() {
            self.layers = other.layers.clone();
        } else if self.layers != other.layers {
            return Err(Error::internal("merging traces of different networks"));
        }
        for (&b, &n) in &other.batches {
            *self.batches.entry(b).or_insert(0) += n;
        }
        Ok(())
    }
}
