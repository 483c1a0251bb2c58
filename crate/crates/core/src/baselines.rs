//! Client-side training strategies: approximate accelerators, static
//! (HeteroFL) and rolling (FedRolex) channel subsets, a uniformly shrunk
//! model, dropping constrained devices, and FedProx.
//!
//! Subset strategies train a dense sub-network whose every array layer
//! keeps `⌊s·Q⌋` of its `Q` output channels (the classifier keeps all of
//! them; image channels are never masked). Input channels follow the
//! preceding layer's selection. The server merges sub-networks by averaging
//! each parameter over the clients that hold it.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::accel::{AccelPreset, AcceleratorConfig};
use crate::error::{Error, Result};
use crate::nn::spec::scaled_count;
use crate::nn::{ModelSpec, Network, Op};
use crate::sum::exact_sum;
use crate::tensor::Tensor;

/// Channel selection rule of a subset strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SubsetRule {
    /// The first `⌊s·Q⌋` channels, every round.
    Static { scale: f64 },
    /// `⌊s·Q⌋` consecutive channels starting at `round mod Q`, wrapping.
    Rolling { scale: f64, round: usize },
}

impl SubsetRule {
    pub fn scale(&self) -> f64 {
        match *self {
            SubsetRule::Static { scale } | SubsetRule::Rolling { scale, .. } => scale,
        }
    }

    /// Selected indices out of `q` channels, in sub-network order.
    pub fn select(&self, q: usize) -> Result<Vec<usize>> {
        let scale = self.scale();
        if !(scale > 0.0 && scale <= 1.0) {
            return Err(Error::config("width scale must lie in (0, 1]"));
        }
        let k = scaled_count(q, scale)?;
        Ok(match *self {
            SubsetRule::Static { .. } => (0..k).collect(),
            SubsetRule::Rolling { round, .. } => {
                let start = round % q;
                (0..k).map(|i| (start + i) % q).collect()
            }
        })
    }
}

/// Static leading-channel selection of one layer.
pub fn heterofl_indices(q: usize, scale: f64) -> Result<Vec<usize>> {
    SubsetRule::Static { scale }.select(q)
}

/// Rolling-window selection of one layer in round `round`.
pub fn fedrolex_indices(q: usize, scale: f64, round: usize) -> Result<Vec<usize>> {
    SubsetRule::Rolling { scale, round }.select(q)
}

/// Which server-parameter elements a sub-network holds: per parameter, the
/// selected index list of every tensor dimension (the sub-tensor is their
/// Cartesian product, row-major).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetMask {
    /// Selected output channels of every array layer, in network order.
    pub layers: Vec<Vec<usize>>,
    pub params: Vec<Vec<Vec<usize>>>,
}

impl SubsetMask {
    /// The mask selecting everything.
    pub fn full(net: &Network) -> Self {
        let params = net
            .params()
            .iter()
            .map(|p| p.shape.iter().map(|&n| (0..n).collect()).collect())
            .collect();
        let layers = net
            .ops()
            .iter()
            .filter_map(|op| match op {
                Op::Conv { shape, .. } => Some((0..shape.out_channels).collect()),
                Op::Dense { outputs, .. } => Some((0..*outputs).collect()),
                _ => None,
            })
            .collect();
        SubsetMask { layers, params }
    }

    /// Element count of parameter `p` in the sub-network.
    pub fn param_len(&self, p: usize) -> usize {
        self.params[p].iter().map(Vec::len).product()
    }

    /// Flat server-tensor offsets of parameter `p`'s sub-tensor, row-major.
    pub fn offsets(&self, p: usize, server_shape: &[usize]) -> Vec<usize> {
        let dims = &self.params[p];
        let mut out = vec![0usize];
        for (d, sel) in dims.iter().enumerate() {
            let stride: usize = server_shape[d + 1..].iter().product();
            out = out.iter().flat_map(|&base| sel.iter().map(move |&i| base + i * stride)).collect();
        }
        out
    }
}

/// Build the mask of `rule` over the server network `net`.
pub fn subset_mask(net: &Network, rule: SubsetRule) -> Result<SubsetMask> {
    let classifier = net.classifier_op();
    let mut params: Vec<Vec<Vec<usize>>> = vec![Vec::new(); net.params().len()];
    let mut layers = Vec::new();
    // Current channel selection and the server's channel count.
    let mut cur: Vec<usize> = (0..net.spec().input[0]).collect();
    let mut cur_full = net.spec().input[0];
    let mut stack: Vec<(Vec<usize>, usize)> = Vec::new();
    let mut body_out: Vec<(Vec<usize>, usize)> = Vec::new();
    for (i, op) in net.ops().iter().enumerate() {
        match op {
            Op::Conv { shape, weight, bias, .. } => {
                let out = if Some(i) == classifier {
                    (0..shape.out_channels).collect()
                } else {
                    rule.select(shape.out_channels)?
                };
                let k = shape.kernel;
                params[*weight] = vec![out.clone(), cur.clone(), (0..k).collect(), (0..k).collect()];
                if let Some(b) = bias {
                    params[*b] = vec![out.clone()];
                }
                layers.push(out.clone());
                cur = out;
                cur_full = shape.out_channels;
            }
            Op::Dense {
                inputs,
                outputs,
                weight,
                bias,
                ..
            } => {
                let out: Vec<usize> = if Some(i) == classifier {
                    (0..*outputs).collect()
                } else {
                    rule.select(*outputs)?
                };
                if inputs % cur_full != 0 {
                    return Err(Error::internal("dense input is not a whole number of channels"));
                }
                let spatial = inputs / cur_full;
                let ins: Vec<usize> = cur.iter().flat_map(|&c| (0..spatial).map(move |s| c * spatial + s)).collect();
                params[*weight] = vec![out.clone(), ins];
                params[*bias] = vec![out.clone()];
                layers.push(out.clone());
                cur = out;
                cur_full = *outputs;
            }
            Op::BatchNorm { param, .. } => {
                params[*param..*param + 4].fill(vec![cur.clone()]);
            }
            Op::Relu { .. } | Op::AvgPool { .. } => {}
            Op::ResBegin => stack.push((cur.clone(), cur_full)),
            Op::ResShortcut => {
                let (input, full) = stack.last().cloned().ok_or_else(|| Error::internal("unbalanced residual block"))?;
                body_out.push((core::mem::replace(&mut cur, input), cur_full));
                cur_full = full;
            }
            Op::ResEnd { .. } => {
                stack.pop();
                let (body, full) = body_out.pop().ok_or_else(|| Error::internal("unbalanced residual block"))?;
                if body != cur || full != cur_full {
                    return Err(Error::internal("residual body and shortcut select different channels"));
                }
            }
        }
    }
    Ok(SubsetMask { layers, params })
}

/// Copy the masked sub-tensors out of the server parameters.
pub fn extract_submodel(server: &[Tensor], sub_net: &Network, mask: &SubsetMask) -> Result<Vec<Tensor>> {
    if server.len() != mask.params.len() || sub_net.params().len() != server.len() {
        return Err(Error::internal("mask, server model and sub-network disagree on parameters"));
    }
    server
        .iter()
        .zip(sub_net.params())
        .enumerate()
        .map(|(p, (t, info))| {
            let dims: Vec<usize> = mask.params[p].iter().map(Vec::len).collect();
            if dims != info.shape {
                return Err(Error::internal(alloc::format!(
                    "mask of parameter {p} selects {dims:?}, sub-network expects {:?}",
                    info.shape
                )));
            }
            let data = mask.offsets(p, t.shape()).into_iter().map(|o| t.data()[o]).collect();
            Tensor::from_vec(&info.shape, data)
        })
        .collect()
}

/// One client's trained parameters for aggregation.
#[derive(Debug, Clone)]
pub struct Update {
    /// Aggregation weight: the client's local sample count.
    pub samples: u64,
    pub params: Vec<Tensor>,
    /// `None` for a full-model update.
    pub mask: Option<SubsetMask>,
}

/// Weighted average of client updates into new server parameters.
///
/// Every element becomes `Σ n_c·w_c / Σ n_c` over the clients holding it
/// (all clients for full-model updates); elements nobody holds keep the
/// server value. The numerator is summed exactly in `f64` (each `n_c·w_c`
/// is exact there), so the result is independent of client order.
pub fn aggregate(server: &[Tensor], updates: &[Update]) -> Result<Vec<Tensor>> {
    for u in updates {
        if u.params.len() != server.len() {
            return Err(Error::internal("update has the wrong number of parameters"));
        }
        if u.samples == 0 {
            return Err(Error::internal("update with zero samples"));
        }
    }
    let mut out = Vec::with_capacity(server.len());
    for (p, s) in server.iter().enumerate() {
        let n = s.len();
        // Per update: server offset → value.
        let mut values: Vec<Vec<Option<f32>>> = Vec::with_capacity(updates.len());
        for u in updates {
            let mut v = vec![None; n];
            match &u.mask {
                None => {
                    if u.params[p].shape() != s.shape() {
                        return Err(Error::internal("full update shape differs from the server's"));
                    }
                    for (slot, &x) in v.iter_mut().zip(u.params[p].data()) {
                        *slot = Some(x);
                    }
                }
                Some(m) => {
                    let offsets = m.offsets(p, s.shape());
                    if offsets.len() != u.params[p].len() {
                        return Err(Error::internal("sub-tensor size differs from its mask"));
                    }
                    for (o, &x) in offsets.into_iter().zip(u.params[p].data()) {
                        v[o] = Some(x);
                    }
                }
            }
            values.push(v);
        }
        let mut data = Vec::with_capacity(n);
        let mut terms = Vec::with_capacity(updates.len());
        for e in 0..n {
            terms.clear();
            let mut weight = 0u64;
            for (u, v) in updates.iter().zip(&values) {
                if let Some(x) = v[e] {
                    terms.push(u.samples as f64 * f64::from(x));
                    weight += u.samples;
                }
            }
            data.push(if weight == 0 {
                s.data()[e]
            } else {
                (exact_sum(&terms) / weight as f64) as f32
            });
        }
        out.push(Tensor::from_vec(s.shape(), data)?);
    }
    Ok(out)
}

fn default_fedprox_accelerator() -> AcceleratorConfig {
    AccelPreset::C1.config()
}

/// Training strategy of a device group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Strategy {
    /// Full model on the given (possibly approximate) accelerator.
    Ours { accelerator: AcceleratorConfig },
    /// Static leading-channel sub-network on the exact FP32 accelerator.
    HeteroFl { scale: f64 },
    /// Rolling-window sub-network on the exact FP32 accelerator.
    FedRolex { scale: f64 },
    /// The whole federation trains a width-scaled model; the device uses
    /// the exact FP32 accelerator.
    SmallModel { scale: f64 },
    /// The device never trains.
    DropDevices,
    /// Full model with a proximal term (free of energy cost) and a reduced
    /// share of the local mini-batches.
    FedProx {
        mu: f32,
        batch_fraction: f64,
        #[serde(default = "default_fedprox_accelerator")]
        accelerator: AcceleratorConfig,
    },
}

impl Strategy {
    pub fn validate(&self) -> Result<()> {
        match self {
            Strategy::Ours { accelerator } => accelerator.validate(),
            Strategy::HeteroFl { scale } | Strategy::FedRolex { scale } | Strategy::SmallModel { scale } => {
                if *scale > 0.0 && *scale <= 1.0 {
                    Ok(())
                } else {
                    Err(Error::config("width scale must lie in (0, 1]"))
                }
            }
            Strategy::DropDevices => Ok(()),
            Strategy::FedProx {
                mu,
                batch_fraction,
                accelerator,
            } => {
                if !(*mu >= 0.0 && mu.is_finite()) {
                    return Err(Error::config("proximal weight must be non-negative"));
                }
                if !(*batch_fraction > 0.0 && *batch_fraction <= 1.0) {
                    return Err(Error::config("batch fraction must lie in (0, 1]"));
                }
                accelerator.validate()
            }
        }
    }

    /// Width scale this strategy imposes on the global model.
    pub fn global_scale(&self) -> Option<f64> {
        match self {
            Strategy::SmallModel { scale } => Some(*scale),
            _ => None,
        }
    }
}

/// What a device does in one round.
#[derive(Debug, Clone, PartialEq)]
pub enum LocalPlan {
    /// No training, no update, no energy.
    Skip,
    Train {
        /// Sub-network to train (the server network for full-model plans).
        spec: ModelSpec,
        /// `None` when the full server model is trained.
        mask: Option<SubsetMask>,
        accelerator: AcceleratorConfig,
        batch_fraction: f64,
        proximal_mu: Option<f32>,
    },
}

/// Resolve `strategy` against the server network for `round`.
pub fn apply_strategy(strategy: &Strategy, server: &Network, round: usize) -> Result<LocalPlan> {
    let full = |accelerator: AcceleratorConfig, batch_fraction: f64, proximal_mu: Option<f32>| LocalPlan::Train {
        spec: server.spec().clone(),
        mask: None,
        accelerator,
        batch_fraction,
        proximal_mu,
    };
    Ok(match strategy {
        Strategy::Ours { accelerator } => full(*accelerator, 1.0, None),
        Strategy::SmallModel { .. } => full(AccelPreset::C1.config(), 1.0, None),
        Strategy::DropDevices => LocalPlan::Skip,
        Strategy::FedProx {
            mu,
            batch_fraction,
            accelerator,
        } => full(*accelerator, *batch_fraction, Some(*mu)),
        Strategy::HeteroFl { scale } | Strategy::FedRolex { scale } => {
            let rule = match strategy {
                Strategy::HeteroFl { .. } => SubsetRule::Static { scale: *scale },
                _ => SubsetRule::Rolling { scale: *scale, round },
            };
            let mask = subset_mask(server, rule)?;
            LocalPlan::Train {
                spec: server.spec().scaled_width(*scale)?,
                mask: Some(mask),
                accelerator: AccelPreset::C1.config(),
                batch_fraction: 1.0,
                proximal_mu: None,
            }
        }
    })
}
