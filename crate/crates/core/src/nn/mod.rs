//! Minimal training engine for small CNNs/MLPs. Convolution and dense
//! products of all three training phases run through the emulated MAC
//! multiplier; batch norm, activations, pooling, the loss and the optimiser
//! run exactly in 32-bit arithmetic.

pub mod kernels;
pub mod model;
pub mod spec;
pub mod trace;
pub mod train;
pub mod zoo;

pub use model::{ForwardPass, Mode, Model, SaNumerics};
pub use spec::{Conv2d, ConvShape, Dense, Layer, ModelSpec, Network, Op, ParamInfo, ParamKind};
pub use trace::{LayerShape, Phase, TrainStepTrace};
pub use train::{cosine_lr, local_train, sgd_update, Augmentation, LocalOutcome, LocalTrainConfig, ProximalTerm};
