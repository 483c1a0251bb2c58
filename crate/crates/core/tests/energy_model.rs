//! Access counting and pricing of the accelerator energy model, checked
//! against hand-traced counts.

use std::collections::BTreeMap;

use approxfl_core::accel::{
    count_accesses, minibatch_energy, price, tile_conv, trace_energy, AccelPreset, AcceleratorConfig, Buffer, EnergyTable, RowMapping,
};
use approxfl_core::nn::{zoo, ConvShape, LayerShape, Phase, TrainStepTrace};
use approxfl_core::Error;

fn conv(in_channels: usize, out_channels: usize, size: usize, stride: usize) -> ConvShape {
    ConvShape {
        in_channels,
        in_h: size,
        in_w: size,
        out_channels,
        out_h: size / stride,
        out_w: size / stride,
        kernel: 3,
        stride,
        padding: 1,
    }
}

fn trace_of(layers: Vec<LayerShape>, batches: &[(usize, u64)]) -> TrainStepTrace {
    TrainStepTrace {
        layers,
        batches: batches.iter().copied().collect::<BTreeMap<_, _>>(),
    }
}

#[test]
fn single_conv_counts_match_hand_trace() {
    // 3×3 conv, 16→16 channels, 8×8 image, batch 1, FP32, first layer.
    let cfg = AccelPreset::C1.config();
    let layer = LayerShape::Conv {
        shape: conv(16, 16, 8, 1),
        bias: false,
        first: true,
    };
    let counts = count_accesses(&trace_of(vec![layer], &[(1, 1)]), &cfg).unwrap();

    let fwd = counts.phase(Phase::Forward);
    // 9 taps × 1 row tile × 1 col tile; 64 output pixels through 256 PEs.
    assert_eq!(fwd.sa_charged, 64 * 9 * 256);
    assert_eq!(fwd.sa_utilized, 64 * 16 * 16 * 9);
    assert_eq!(fwd.sa_padded(), 0);
    // Input 1024 + weights 2304 read, output 1024 written, 32-bit words.
    assert_eq!(fwd.dram_bits, (1024 + 2304 + 1024) * 32);
    assert_eq!(fwd.sram_bits[Buffer::IBuf.index()], (64 * 9 * 256 + 1024) * 32);
    assert_eq!(fwd.sram_bits[Buffer::WBuf.index()], (9 * 256 + 2304) * 32);
    assert_eq!(fwd.sram_bits[Buffer::OBuf.index()], 2 * 64 * 9 * 16 * 32 + 1024 * 32);
    assert_eq!(fwd.simd_ops, 0);

    // First layer: no input gradient.
    assert_eq!(counts.phase(Phase::InputGradient), &Default::default());

    let wg = counts.phase(Phase::WeightGradient);
    assert_eq!(wg.sa_charged, 64 * 9 * 256);
    // Input, upstream gradient, weight gradient + SGD update (3 FP32 words
    // per parameter).
    assert_eq!(wg.dram_bits, (1024 + 1024 + 2304) * 32 + 3 * 2304 * 32);
    assert_eq!(wg.simd_ops, 2 * 2304);
    assert_eq!(wg.sram_bits[Buffer::InMem.index()], 2 * 2304 / 16 * 32);
    assert_eq!(wg.sram_bits[Buffer::VMem.index()], 2 * 2304 * 3 * 32 + 3 * 2304 * 32);
}

#[test]
fn padding_and_zero_insertion() {
    let cfg = AccelPreset::C1.config();
    // 3 input channels occupy 3 of 16 rows: 13/16 of the slots are padding.
    let t = tile_conv(&conv(3, 16, 8, 1), 1, Phase::Forward, &cfg);
    assert_eq!(t.charged, 64 * 9 * 256);
    assert_eq!(t.utilized, 64 * 3 * 16 * 9);
    assert_eq!(t.padded, t.charged - t.utilized);
    // Stride 2: the input gradient streams one vector per input pixel.
    let t = tile_conv(&conv(16, 32, 8, 2), 2, Phase::InputGradient, &cfg);
    assert_eq!(t.vectors, 2 * 64);
    assert_eq!((t.row_tiles, t.col_tiles), (2, 1));
    // im2col lays the 16·9 window over rows.
    let mut im = cfg;
    im.row_mapping = RowMapping::Im2col;
    let t = tile_conv(&conv(16, 16, 8, 1), 1, Phase::Forward, &im);
    assert_eq!(t.passes, 9);
    assert_eq!(t.row_tiles, 9);
}

#[test]
fn narrower_storage_halves_operand_traffic() {
    let layer = LayerShape::Conv {
        shape: conv(16, 32, 8, 1),
        bias: false,
        first: false,
    };
    let trace = trace_of(vec![layer], &[(2, 1)]);
    let fp32 = count_accesses(&trace, &AccelPreset::C1.config()).unwrap();
    let bf16 = count_accesses(&trace, &AccelPreset::C2.config()).unwrap();
    let f = fp32.phase(Phase::Forward);
    let b = bf16.phase(Phase::Forward);
    assert_eq!(f.sa_charged, b.sa_charged);
    assert_eq!(f.sram_bits[Buffer::IBuf.index()], 2 * b.sram_bits[Buffer::IBuf.index()]);
    assert_eq!(f.sram_bits[Buffer::WBuf.index()], 2 * b.sram_bits[Buffer::WBuf.index()]);
    assert_eq!(f.dram_bits, 2 * b.dram_bits);
}

#[test]
fn energy_decreases_from_c1_to_c5() {
    let table = EnergyTable::default();
    let spec = zoo::resnet20(10);
    let e: Vec<f64> = AccelPreset::ALL
        .iter()
        .map(|p| minibatch_energy(&spec, &p.config(), &table, 32).unwrap().total_j())
        .collect();
    assert!(e.windows(2).all(|w| w[0] > w[1]), "{e:?}");
}

#[test]
fn ledger_is_additive_and_conserves_energy() {
    let table = EnergyTable::default();
    let cfg = AccelPreset::C3.config();
    let net = approxfl_core::nn::Network::compile(&zoo::desk_default()).unwrap();
    let mut both = TrainStepTrace::single(&net, 32);
    both.record_batch(32);
    both.record_batch(7);
    let a = trace_energy(&TrainStepTrace::single(&net, 32), &cfg, &table).unwrap();
    let b = trace_energy(&TrainStepTrace::single(&net, 7), &cfg, &table).unwrap();
    let ab = trace_energy(&both, &cfg, &table).unwrap();
    let mut sum = a;
    sum.add(&a);
    sum.add(&b);
    assert_eq!(sum.counts, ab.counts);
    assert!((sum.total_j() - ab.total_j()).abs() <= 1e-12 * ab.total_j());
    // Components add up to the total; shares sum to one.
    let parts = ab.sa_j + ab.simd_j + ab.dram_j + Buffer::ALL.iter().map(|&x| ab.sram_buffer_j(x)).sum::<f64>();
    assert!((parts - ab.total_j()).abs() <= 1e-12 * ab.total_j());
    let s = ab.breakdown();
    assert!((s.sa + s.simd + s.sram + s.dram - 1.0).abs() < 1e-12);
    // Pricing is linear in the unit costs.
    let mut doubled = table.clone();
    doubled.dram_pj_per_bit *= 2.0;
    let d = price(&ab.counts, &cfg, &doubled).unwrap();
    assert_eq!(d.dram_j, 2.0 * ab.dram_j);
    assert_eq!(d.sa_j, ab.sa_j);
}

#[test]
fn capacity_is_enforced() {
    let mut cfg: AcceleratorConfig = AccelPreset::C1.config();
    cfg.dram_bytes = 1 << 20;
    let err = minibatch_energy(&zoo::resnet20(10), &cfg, &EnergyTable::default(), 32).unwrap_err();
    assert!(matches!(err, Error::Capacity { .. }));
}

#[test]
fn missing_cost_is_a_config_error() {
    let mut table = EnergyTable::default();
    table.mac.retain(|c| c.mantissa_bits != 1);
    let err = minibatch_energy(&zoo::desk_default(), &AccelPreset::C5.config(), &table, 8).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}
