//! Model description (serialisable layer graph) and its compiled form.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn one() -> usize {
    1
}

/// 2-D convolution over NCHW activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub padding: usize,
    #[serde(default)]
    pub bias: bool,
}

/// Fully connected layer (flattens its input, always has a bias).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dense {
    pub in_features: usize,
    pub out_features: usize,
}

/// One layer of the network. The loss head (softmax cross-entropy over the
/// final outputs) is implicit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Layer {
    Conv2d(Conv2d),
    Dense(Dense),
    BatchNorm {
        channels: usize,
    },
    Relu,
    /// Non-overlapping average pooling; `kernel = 0` pools globally.
    AvgPool {
        kernel: usize,
    },
    /// `body(x) + shortcut(x)`; an empty shortcut is the identity. The skip
    /// addition runs on the SIMD side.
    Residual {
        body: Vec<Layer>,
        #[serde(default)]
        shortcut: Vec<Layer>,
    },
}

/// A network: input sample shape `[channels, height, width]`, class count
/// and layer list. Training minimises softmax cross-entropy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub input: [usize; 3],
    pub classes: usize,
    pub layers: Vec<Layer>,
}

/// Activation geometry of a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvShape {
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvShape {
    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    ConvWeight,
    ConvBias,
    DenseWeight,
    DenseBias,
    BnScale,
    BnShift,
    BnRunningMean,
    BnRunningVar,
}

impl ParamKind {
    /// Whether SGD updates this parameter (running statistics are buffers).
    pub fn trainable(self) -> bool {
        !matches!(self, ParamKind::BnRunningMean | ParamKind::BnRunningVar)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamInfo {
    pub kind: ParamKind,
    pub shape: Vec<usize>,
    /// Index of the owning op in [`Network::ops`].
    pub op: usize,
}

/// Flattened executable form of a [`ModelSpec`]. Residual blocks become
/// `ResBegin body ResShortcut shortcut ResEnd` sequences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Op {
    Conv {
        shape: ConvShape,
        weight: usize,
        bias: Option<usize>,
        first_sa: bool,
    },
    Dense {
        inputs: usize,
        outputs: usize,
        weight: usize,
        bias: usize,
        first_sa: bool,
    },
    /// `param` indexes the scale; shift, running mean and running variance
    /// follow consecutively.
    BatchNorm {
        channels: usize,
        spatial: usize,
        param: usize,
    },
    Relu {
        elements: usize,
    },
    AvgPool {
        channels: usize,
        in_h: usize,
        in_w: usize,
        kernel_h: usize,
        kernel_w: usize,
    },
    ResBegin,
    ResShortcut,
    ResEnd {
        elements: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Network {
    spec: ModelSpec,
    ops: Vec<Op>,
    params: Vec<ParamInfo>,
}

impl Network {
    pub fn compile(spec: &ModelSpec) -> Result<Self> {
        let [c, h, w] = spec.input;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::config("model input dimensions must be positive"));
        }
        if spec.classes < 2 {
            return Err(Error::config("a classifier needs at least two classes"));
        }
        let mut builder = Builder {
            ops: Vec::new(),
            params: Vec::new(),
            seen_sa: false,
        };
        let (oc, oh, ow) = builder.layers(&spec.layers, (c, h, w))?;
        if oc * oh * ow != spec.classes {
            return Err(Error::config(format!(
                "model produces {} outputs but the task has {} classes",
                oc * oh * ow,
                spec.classes
            )));
        }
        Ok(Network {
            spec: spec.clone(),
            ops: builder.ops,
            params: builder.params,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn ops(&self) -> &[Op] {
        &self.ops
    }

    pub fn params(&self) -> &[ParamInfo] {
        &self.params
    }

    pub fn input_len(&self) -> usize {
        self.spec.input.iter().product()
    }

    pub fn classes(&self) -> usize {
        self.spec.classes
    }

    /// Number of scalar parameters, optionally only the trainable ones.
    pub fn parameter_count(&self, trainable_only: bool) -> usize {
        self.params
            .iter()
            .filter(|p| !trainable_only || p.kind.trainable())
            .map(|p| p.shape.iter().product::<usize>())
            .sum()
    }

    /// Index of the op producing the network outputs (the classifier).
    pub fn classifier_op(&self) -> Option<usize> {
        self.ops.iter().rposition(|op| matches!(op, Op::Conv { .. } | Op::Dense { .. }))
    }
}

struct Builder {
    ops: Vec<Op>,
    params: Vec<ParamInfo>,
    seen_sa: bool,
}

type Dims = (usize, usize, usize);

impl Builder {
    fn param(&mut self, kind: ParamKind, shape: Vec<usize>) -> usize {
        let op = self.ops.len();
        self.params.push(ParamInfo { kind, shape, op });
        self.params.len() - 1
    }

    fn first_sa(&mut self) -> bool {
        let first = !self.seen_sa;
        self.seen_sa = true;
        first
    }

    fn layers(&mut self, layers: &[Layer], mut dims: Dims) -> Result<Dims> {
        for layer in layers {
            dims = self.layer(layer, dims)?;
        }
        Ok(dims)
    }

    fn layer(&mut self, layer: &Layer, (c, h, w): Dims) -> Result<Dims> {
        match layer {
            Layer::Conv2d(conv) => {
                if conv.in_channels != c {
                    return Err(Error::config(format!(
                        "conv expects {} input channels, previous layer yields {c}",
                        conv.in_channels
                    )));
                }
                if conv.kernel == 0 || conv.stride == 0 || conv.out_channels == 0 {
                    return Err(Error::config("conv kernel, stride and channels must be positive"));
                }
                if h + 2 * conv.padding < conv.kernel || w + 2 * conv.padding < conv.kernel {
                    return Err(Error::config("conv kernel larger than padded input"));
                }
                let shape = ConvShape {
                    in_channels: c,
                    in_h: h,
                    in_w: w,
                    out_channels: conv.out_channels,
                    out_h: (h + 2 * conv.padding - conv.kernel) / conv.stride + 1,
                    out_w: (w + 2 * conv.padding - conv.kernel) / conv.stride + 1,
                    kernel: conv.kernel,
                    stride: conv.stride,
                    padding: conv.padding,
                };
                let weight = self.param(ParamKind::ConvWeight, vec![conv.out_channels, c, conv.kernel, conv.kernel]);
                let bias = conv.bias.then(|| self.param(ParamKind::ConvBias, vec![conv.out_channels]));
                let first_sa = self.first_sa();
                self.ops.push(Op::Conv {
                    shape,
                    weight,
                    bias,
                    first_sa,
                });
                Ok((shape.out_channels, shape.out_h, shape.out_w))
            }
            Layer::Dense(dense) => {
                if dense.in_features != c * h * w {
                    return Err(Error::config(format!(
                        "dense expects {} inputs, previous layer yields {}",
                        dense.in_features,
                        c * h * w
                    )));
                }
                if dense.out_features == 0 {
                    return Err(Error::config("dense layer needs at least one output"));
                }
                let weight = self.param(ParamKind::DenseWeight, vec![dense.out_features, dense.in_features]);
                let bias = self.param(ParamKind::DenseBias, vec![dense.out_features]);
                let first_sa = self.first_sa();
                self.ops.push(Op::Dense {
                    inputs: dense.in_features,
                    outputs: dense.out_features,
                    weight,
                    bias,
                    first_sa,
                });
                Ok((dense.out_features, 1, 1))
            }
            Layer::BatchNorm { channels } => {
                if *channels != c {
                    return Err(Error::config(format!("batch norm over {channels} channels, activation has {c}")));
                }
                let param = self.param(ParamKind::BnScale, vec![c]);
                self.param(ParamKind::BnShift, vec![c]);
                self.param(ParamKind::BnRunningMean, vec![c]);
                self.param(ParamKind::BnRunningVar, vec![c]);
                self.ops.push(Op::BatchNorm {
                    channels: c,
                    spatial: h * w,
                    param,
                });
                Ok((c, h, w))
            }
            Layer::Relu => {
                self.ops.push(Op::Relu { elements: c * h * w });
                Ok((c, h, w))
            }
            Layer::AvgPool { kernel } => {
                let (kh, kw) = if *kernel == 0 { (h, w) } else { (*kernel, *kernel) };
                if h % kh != 0 || w % kw != 0 {
                    return Err(Error::config(format!("pool kernel {kernel} does not divide {h}x{w}")));
                }
                self.ops.push(Op::AvgPool {
                    channels: c,
                    in_h: h,
                    in_w: w,
                    kernel_h: kh,
                    kernel_w: kw,
                });
                Ok((c, h / kh, w / kw))
            }
            Layer::Residual { body, shortcut } => {
                self.ops.push(Op::ResBegin);
                let body_dims = self.layers(body, (c, h, w))?;
                self.ops.push(Op::ResShortcut);
                let short_dims = self.layers(shortcut, (c, h, w))?;
                if body_dims != short_dims {
                    return Err(Error::config(format!(
                        "residual body yields {body_dims:?} but shortcut yields {short_dims:?}"
                    )));
                }
                let (oc, oh, ow) = body_dims;
                self.ops.push(Op::ResEnd { elements: oc * oh * ow });
                Ok(body_dims)
            }
        }
    }
}

impl ModelSpec {
    /// Width-scaled copy: every hidden conv/dense layer keeps
    /// `floor(scale * outputs)` outputs; the classifier keeps all outputs and
    /// input widths follow the preceding layer.
    pub fn scaled_width(&self, scale: f64) -> Result<ModelSpec> {
        if !(scale > 0.0 && scale <= 1.0) {
            return Err(Error::config("width scale must lie in (0, 1]"));
        }
        let net = Network::compile(self)?;
        let total_sa = net
            .ops()
            .iter()
            .filter(|op| matches!(op, Op::Conv { .. } | Op::Dense { .. }))
            .count();
        let mut state = Scaler { scale, seen: 0, total_sa };
        let channels = self.input[0];
        let (layers, _) = state.layers(&self.layers, channels, channels)?;
        let scaled = ModelSpec {
            input: self.input,
            classes: self.classes,
            layers,
        };
        Network::compile(&scaled)?;
        Ok(scaled)
    }
}

/// Number of outputs kept when scaling a layer of `outputs` by `scale`.
pub fn scaled_count(outputs: usize, scale: f64) -> Result<usize> {
    let kept = libm::floor(scale * outputs as f64) as usize;
    if kept == 0 {
        return Err(Error::config(format!("scale {scale} leaves no channels of a {outputs}-wide layer")));
    }
    Ok(kept)
}

struct Scaler {
    scale: f64,
    seen: usize,
    total_sa: usize,
}

impl Scaler {
    /// Rewrite `layers`; `old` and `new` are the incoming channel counts of
    /// the original and the scaled model.
    fn layers(&mut self, layers: &[Layer], mut old: usize, mut new: usize) -> Result<(Vec<Layer>, usize)> {
        let mut out = Vec::with_capacity(layers.len());
        for layer in layers {
            let (l, o, n) = self.layer(layer, old, new)?;
            out.push(l);
            old = o;
            new = n;
        }
        Ok((out, new))
    }

    fn outputs(&mut self, outputs: usize) -> Result<usize> {
        self.seen += 1;
        if self.seen == self.total_sa {
            Ok(outputs)
        } else {
            scaled_count(outputs, self.scale)
        }
    }

    fn layer(&mut self, layer: &Layer, old: usize, new: usize) -> Result<(Layer, usize, usize)> {
        Ok(match layer {
            Layer::Conv2d(conv) => {
                let out_channels = self.outputs(conv.out_channels)?;
                let scaled = Conv2d {
                    in_channels: new,
                    out_channels,
                    ..*conv
                };
                (Layer::Conv2d(scaled), conv.out_channels, out_channels)
            }
            Layer::Dense(dense) => {
                let out_features = self.outputs(dense.out_features)?;
                let spatial = dense.in_features / old;
                let scaled = Dense {
                    in_features: new * spatial,
                    out_features,
                };
                (Layer::Dense(scaled), dense.out_features, out_features)
            }
            Layer::BatchNorm { .. } => (Layer::BatchNorm { channels: new }, old, new),
            Layer::Relu => (Layer::Relu, old, new),
            Layer::AvgPool { kernel } => (Layer::AvgPool { kernel: *kernel }, old, new),
            Layer::Residual { body, shortcut } => {
                let body_old = output_channels(body).unwrap_or(old);
                let (body, n) = self.layers(body, old, new)?;
                let (shortcut, _) = self.layers(shortcut, old, new)?;
                (Layer::Residual { body, shortcut }, body_old, n)
            }
        })
    }
}

/// Channel count produced by the last channel-changing layer of `layers`.
fn output_channels(layers: &[Layer]) -> Option<usize> {
    layers.iter().rev().find_map(|l| match l {
        Layer::Conv2d(c) => Some(c.out_channels),
        Layer::Dense(d) => Some(d.out_features),
        Layer::Residual { body, .. } => output_channels(body),
        _ => None,
    })
}
