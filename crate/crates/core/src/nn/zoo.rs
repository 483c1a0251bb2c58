//! Reference network descriptions.

use alloc::vec;
use alloc::vec::Vec;

use crate::nn::spec::{Conv2d, Dense, Layer, ModelSpec};

fn conv(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Layer {
    Layer::Conv2d(Conv2d {
        in_channels,
        out_channels,
        kernel,
        stride,
        padding: kernel / 2,
        bias: false,
    })
}

/// ResNet-20 for `3×32×32` inputs with base width 16: a stem convolution,
/// three stages of three basic blocks (16, 32, 64 channels, stride 2 at the
/// start of stages two and three with 1×1 projection shortcuts), global
/// average pooling and a dense classifier.
pub fn resnet20(classes: usize) -> ModelSpec {
    resnet20_width(classes, [16, 32, 64])
}

/// ResNet-20 topology with explicit stage widths.
pub fn resnet20_width(classes: usize, widths: [usize; 3]) -> ModelSpec {
    let mut layers: Vec<Layer> = vec![conv(3, widths[0], 3, 1), Layer::BatchNorm { channels: widths[0] }, Layer::Relu];
    let mut cin = widths[0];
    for (stage, &c) in widths.iter().enumerate() {
        for block in 0..3 {
            let stride = if stage > 0 && block == 0 { 2 } else { 1 };
            let body = vec![
                conv(cin, c, 3, stride),
                Layer::BatchNorm { channels: c },
                Layer::Relu,
                conv(c, c, 3, 1),
                Layer::BatchNorm { channels: c },
            ];
            let shortcut = if stride != 1 || cin != c {
                vec![conv(cin, c, 1, stride), Layer::BatchNorm { channels: c }]
            } else {
                vec![]
            };
            layers.push(Layer::Residual { body, shortcut });
            layers.push(Layer::Relu);
            cin = c;
        }
    }
    layers.push(Layer::AvgPool { kernel: 0 });
    layers.push(Layer::Dense(Dense {
        in_features: cin,
        out_features: classes,
    }));
    ModelSpec {
        input: [3, 32, 32],
        classes,
        layers,
    }
}

/// Small CNN for the desk-scale `channels×8×8` synthetic task:
/// conv3×3 → BN → ReLU → conv3×3/2 → BN → ReLU → global pool → dense.
pub fn desk_cnn(input: [usize; 3], classes: usize, widths: [usize; 2]) -> ModelSpec {
    ModelSpec {
        input,
        classes,
        layers: vec![
            conv(input[0], widths[0], 3, 1),
            Layer::BatchNorm { channels: widths[0] },
            Layer::Relu,
            conv(widths[0], widths[1], 3, 2),
            Layer::BatchNorm { channels: widths[1] },
            Layer::Relu,
            Layer::AvgPool { kernel: 0 },
            Layer::Dense(Dense {
                in_features: widths[1],
                out_features: classes,
            }),
        ],
    }
}

/// Default desk-scale network for the bundled synthetic dataset.
pub fn desk_default() -> ModelSpec {
    desk_cnn([3, 8, 8], 10, [16, 32])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::spec::Network;

    #[test]
    fn resnet20_compiles_with_expected_size() {
        let net = Network::compile(&resnet20(10)).unwrap();
        // 19 conv layers + 2 projection shortcuts + classifier.
        let sa = net
            .ops()
            .iter()
            .filter(|op| matches!(op, crate::nn::spec::Op::Conv { .. } | crate::nn::spec::Op::Dense { .. }))
            .count();
        assert_eq!(sa, 22);
        let weights: usize = net
            .params()
            .iter()
            .filter(|p| p.kind.trainable())
            .map(|p| p.shape.iter().product::<usize>())
            .sum();
        assert!(weights > 260_000 && weights < 280_000, "{weights}");
    }

    #[test]
    fn scaled_resnet_keeps_classifier() {
        let s = resnet20(10).scaled_width(0.125).unwrap();
        assert_eq!(s, resnet20_width(10, [2, 4, 8]));
        assert!(resnet20(10).scaled_width(0.01).is_err());
        assert_eq!(desk_default().scaled_width(0.5).unwrap(), desk_cnn([3, 8, 8], 10, [8, 16]));
    }
}
