//! Mapping of traced training work onto the systolic array and SIMD unit,
//! and counting of operations and memory accesses.
//!
//! The counting rules (see `docs/energy-model.md` in the repository):
//!
//! * **Tiling.** A convolution runs as weight-stationary passes. With the
//!   default [`RowMapping::ChannelRows`] the reduction channels occupy array
//!   rows, the produced channels occupy columns and each of the `k²` kernel
//!   taps is a separate pass: `passes = k²·⌈rows/R⌉·⌈cols/C⌉`. Every pass
//!   streams `vectors` input vectors through all `R·C` PEs, so the array is
//!   charged `vectors·passes·R·C` MAC slots, zero-padded slots included.
//!   Forward: rows = input channels, cols = output channels, one vector per
//!   output pixel. Input gradient: rows and cols swap and the upstream
//!   gradient is zero-inserted for strided layers (one vector per input
//!   pixel). Weight gradient: like forward. The first array layer has no
//!   input gradient. Dense layers are 1×1 convolutions on a 1×1 image.
//! * **SRAM.** IBuf: one operand read per charged slot. OBuf: one partial-sum
//!   read and write per vector, pass and column, at 32-bit accumulator width.
//!   WBuf: `R·C` weights loaded per pass. Every word moved to or from DRAM is
//!   also written to or read from its buffer. VMem: three 32-bit words per
//!   SIMD op; InMem: one 32-bit instruction per `ops_per_instruction` ops.
//! * **DRAM.** Per phase the streamed tensor is read once when it fits half
//!   of its (double-buffered) buffer; otherwise the cheaper of re-reading the
//!   stream per column tile or re-reading the weights per stream chunk is
//!   charged. Results are written once. The weight-gradient phase reads the
//!   layer input (and, for the first layer, the upstream gradient, which
//!   other layers share with the input-gradient phase) and writes the weight
//!   gradient. SIMD layers are fused on chip and cause no DRAM traffic. The
//!   SGD step reads the FP32 master weight and the gradient and writes the
//!   weight back (three 32-bit words per parameter).
//! * All SA-side words use the storage format width; SIMD words are 32-bit.

use serde::{Deserialize, Serialize};

use crate::accel::config::{AcceleratorConfig, RowMapping};
use crate::error::{Error, Result};
use crate::nn::spec::ConvShape;
use crate::nn::trace::{LayerShape, Phase, TrainStepTrace};

/// On-chip SRAM buffers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Buffer {
    IBuf,
    WBuf,
    OBuf,
    InMem,
    VMem,
}

impl Buffer {
    pub const ALL: [Buffer; 5] = [Buffer::IBuf, Buffer::WBuf, Buffer::OBuf, Buffer::InMem, Buffer::VMem];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Buffer::IBuf => "ibuf",
            Buffer::WBuf => "wbuf",
            Buffer::OBuf => "obuf",
            Buffer::InMem => "inmem",
            Buffer::VMem => "vmem",
        }
    }
}

/// Result of mapping one SA phase onto the array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Tiling {
    /// Weight-stationary passes (one weight tile load each).
    pub passes: u64,
    /// Input vectors streamed per pass.
    pub vectors: u64,
    /// Row-dimension tiles.
    pub row_tiles: u64,
    /// Column-dimension tiles.
    pub col_tiles: u64,
    /// MAC slots clocked: `vectors · passes · rows · cols`.
    pub charged: u64,
    /// Useful MACs.
    pub utilized: u64,
    /// Zero-filled slots: `charged − utilized`.
    pub padded: u64,
}

/// Tile a reduction of `rows` × `cols` output lanes, iterated over `taps`
/// temporal passes, for `vectors` streamed vectors of which `utilized` MACs
/// are useful.
pub fn tile(rows: usize, cols: usize, taps: usize, vectors: u64, utilized: u64, sa_rows: usize, sa_cols: usize) -> Tiling {
    let row_tiles = rows.div_ceil(sa_rows) as u64;
    let col_tiles = cols.div_ceil(sa_cols) as u64;
    let passes = taps as u64 * row_tiles * col_tiles;
    let charged = vectors * passes * (sa_rows * sa_cols) as u64;
    Tiling {
        passes,
        vectors,
        row_tiles,
        col_tiles,
        charged,
        utilized,
        padded: charged.saturating_sub(utilized),
    }
}

/// Reduction rows, produced columns and temporal taps of a phase.
fn phase_dims(in_channels: usize, out_channels: usize, kernel: usize, phase: Phase, mapping: RowMapping) -> (usize, usize, usize) {
    let (rows, cols) = match phase {
        Phase::InputGradient => (out_channels, in_channels),
        Phase::Forward | Phase::WeightGradient => (in_channels, out_channels),
    };
    let taps = kernel * kernel;
    match mapping {
        RowMapping::ChannelRows => (rows, cols, taps),
        RowMapping::Im2col => (rows * taps, cols, 1),
    }
}

/// Map one convolution phase over a mini-batch of `batch` samples.
pub fn tile_conv(shape: &ConvShape, batch: usize, phase: Phase, cfg: &AcceleratorConfig) -> Tiling {
    let (rows, cols, taps) = phase_dims(shape.in_channels, shape.out_channels, shape.kernel, phase, cfg.row_mapping);
    let out_pixels = (batch * shape.out_h * shape.out_w) as u64;
    let vectors = match phase {
        Phase::InputGradient => out_pixels * (shape.stride * shape.stride) as u64,
        _ => out_pixels,
    };
    let utilized = out_pixels * shape.weight_len() as u64;
    tile(rows, cols, taps, vectors, utilized, cfg.sa_rows, cfg.sa_cols)
}

/// Counts of one training phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PhaseCounts {
    /// MAC slots clocked on the array (useful + padded).
    pub sa_charged: u64,
    pub sa_utilized: u64,
    pub simd_ops: u64,
    /// Bits accessed per buffer, indexed by [`Buffer::index`].
    pub sram_bits: [u64; 5],
    pub dram_bits: u64,
}

impl PhaseCounts {
    fn add(&mut self, o: &PhaseCounts) {
        self.sa_charged += o.sa_charged;
        self.sa_utilized += o.sa_utilized;
        self.simd_ops += o.simd_ops;
        for (a, b) in self.sram_bits.iter_mut().zip(o.sram_bits) {
            *a += b;
        }
        self.dram_bits += o.dram_bits;
    }

    fn scaled(&self, n: u64) -> PhaseCounts {
        let mut s = *self;
        s.sa_charged *= n;
        s.sa_utilized *= n;
        s.simd_ops *= n;
        s.sram_bits.iter_mut().for_each(|b| *b *= n);
        s.dram_bits *= n;
        s
    }

    pub fn sa_padded(&self) -> u64 {
        self.sa_charged - self.sa_utilized
    }

    pub fn sram_total_bits(&self) -> u64 {
        self.sram_bits.iter().sum()
    }

    fn sram(&mut self, buffer: Buffer, bits: u64) {
        self.sram_bits[buffer.index()] += bits;
    }

    /// DRAM transfer of `words` staged through `buffer`.
    fn dram(&mut self, buffer: Buffer, words: u64, word_bits: u64) {
        self.dram_bits += words * word_bits;
        self.sram(buffer, words * word_bits);
    }

    fn simd(&mut self, ops: u64, cfg: &AcceleratorConfig) {
        self.simd_ops += ops;
        self.sram(Buffer::VMem, ops * cfg.simd.vmem_words_per_op * 32);
        self.sram(Buffer::InMem, ops / cfg.simd.ops_per_instruction * 32);
    }
}

/// Counts per training phase, indexed forward, input gradient, weight
/// gradient (the latter includes the SGD update).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AccessCounts {
    pub phases: [PhaseCounts; 3],
}

fn phase_index(p: Phase) -> usize {
    match p {
        Phase::Forward => 0,
        Phase::InputGradient => 1,
        Phase::WeightGradient => 2,
    }
}

impl AccessCounts {
    pub fn phase(&self, p: Phase) -> &PhaseCounts {
        &self.phases[phase_index(p)]
    }

    fn phase_mut(&mut self, p: Phase) -> &mut PhaseCounts {
        &mut self.phases[phase_index(p)]
    }

    pub fn total(&self) -> PhaseCounts {
        let mut t = PhaseCounts::default();
        for p in &self.phases {
            t.add(p);
        }
        t
    }

    pub fn add(&mut self, other: &AccessCounts) {
        for (a, b) in self.phases.iter_mut().zip(&other.phases) {
            a.add(b);
        }
    }

    pub fn is_zero(&self) -> bool {
        *self == AccessCounts::default()
    }
}

fn half_buffer_words(cfg: &AcceleratorConfig) -> u64 {
    (cfg.buffer_bytes / 2 * 8 / cfg.word_bits()).max(1)
}

/// Counts of one SA phase of a layer: `in_words`/`out_words` are the
/// layer's input/output activation sizes for the mini-batch.
#[allow(clippy::too_many_arguments)]
fn sa_phase(
    c: &mut PhaseCounts,
    t: &Tiling,
    phase: Phase,
    kernel: usize,
    weights: u64,
    in_words: u64,
    out_words: u64,
    first: bool,
    cfg: &AcceleratorConfig,
) {
    let w = cfg.word_bits();
    let lanes = (cfg.sa_rows * cfg.sa_cols) as u64;
    c.sa_charged += t.charged;
    c.sa_utilized += t.utilized;
    c.sram(Buffer::IBuf, t.charged * w);
    c.sram(Buffer::OBuf, 2 * t.vectors * t.passes * cfg.sa_cols as u64 * 32);
    c.sram(Buffer::WBuf, t.passes * lanes * w);

    let cap = half_buffer_words(cfg);
    let chunks = (t.vectors * cfg.sa_rows as u64).div_ceil(cap);
    match phase {
        Phase::WeightGradient => {
            c.dram(Buffer::IBuf, in_words, w);
            if first {
                c.dram(Buffer::OBuf, out_words, w);
            }
            c.dram(Buffer::WBuf, weights, w);
        }
        Phase::Forward | Phase::InputGradient => {
            let (stream, result) = if phase == Phase::Forward {
                (in_words, out_words)
            } else {
                (out_words, in_words)
            };
            if stream <= cap {
                c.dram(Buffer::IBuf, stream, w);
                c.dram(Buffer::WBuf, weights, w);
            } else {
                let taps = match cfg.row_mapping {
                    RowMapping::ChannelRows => (kernel * kernel) as u64,
                    RowMapping::Im2col => 1,
                };
                let column_weights_fit = taps * t.row_tiles * lanes <= cap;
                let restream = stream * t.col_tiles + if column_weights_fit { weights } else { weights * chunks };
                let reweight = stream + weights * chunks;
                if restream <= reweight {
                    c.dram(Buffer::IBuf, stream * t.col_tiles, w);
                    c.dram(Buffer::WBuf, if column_weights_fit { weights } else { weights * chunks }, w);
                } else {
                    c.dram(Buffer::IBuf, stream, w);
                    c.dram(Buffer::WBuf, weights * chunks, w);
                }
            }
            c.dram(Buffer::OBuf, result, w);
        }
    }
}

fn count_batch(layers: &[LayerShape], batch: usize, cfg: &AcceleratorConfig) -> AccessCounts {
    let mut counts = AccessCounts::default();
    let b = batch as u64;
    let s = &cfg.simd;
    let mut params = 0u64;
    for layer in layers {
        params += layer.parameters();
        match *layer {
            LayerShape::Conv { shape, bias, first } => {
                let in_words = b * (shape.in_channels * shape.in_h * shape.in_w) as u64;
                let out_words = b * (shape.out_channels * shape.out_h * shape.out_w) as u64;
                for phase in Phase::ALL {
                    if first && phase == Phase::InputGradient {
                        continue;
                    }
                    let t = tile_conv(&shape, batch, phase, cfg);
                    sa_phase(
                        counts.phase_mut(phase),
                        &t,
                        phase,
                        shape.kernel,
                        shape.weight_len() as u64,
                        in_words,
                        out_words,
                        first,
                        cfg,
                    );
                }
                if bias {
                    counts.phase_mut(Phase::Forward).simd(s.bias_forward * out_words, cfg);
                    counts.phase_mut(Phase::InputGradient).simd(s.bias_backward * out_words, cfg);
                }
            }
            LayerShape::Dense { inputs, outputs, first } => {
                let shape = ConvShape {
                    in_channels: inputs,
                    in_h: 1,
                    in_w: 1,
                    out_channels: outputs,
                    out_h: 1,
                    out_w: 1,
                    kernel: 1,
                    stride: 1,
                    padding: 0,
                };
                for phase in Phase::ALL {
                    if first && phase == Phase::InputGradient {
                        continue;
                    }
                    let t = tile_conv(&shape, batch, phase, cfg);
                    sa_phase(
                        counts.phase_mut(phase),
                        &t,
                        phase,
                        1,
                        (inputs * outputs) as u64,
                        b * inputs as u64,
                        b * outputs as u64,
                        first,
                        cfg,
                    );
                }
                let out_words = b * outputs as u64;
                counts.phase_mut(Phase::Forward).simd(s.bias_forward * out_words, cfg);
                counts.phase_mut(Phase::InputGradient).simd(s.bias_backward * out_words, cfg);
            }
            LayerShape::BatchNorm { channels, spatial } => {
                let n = b * (channels * spatial) as u64;
                counts.phase_mut(Phase::Forward).simd(s.batch_norm_forward * n, cfg);
                counts.phase_mut(Phase::InputGradient).simd(s.batch_norm_backward * n, cfg);
            }
            LayerShape::Relu { elements } => {
                let n = b * elements as u64;
                counts.phase_mut(Phase::Forward).simd(s.relu_forward * n, cfg);
                counts.phase_mut(Phase::InputGradient).simd(s.relu_backward * n, cfg);
            }
            LayerShape::AvgPool { elements } => {
                let n = b * elements as u64;
                counts.phase_mut(Phase::Forward).simd(s.pool_forward * n, cfg);
                counts.phase_mut(Phase::InputGradient).simd(s.pool_backward * n, cfg);
            }
            LayerShape::ResidualAdd { elements } => {
                let n = b * elements as u64;
                counts.phase_mut(Phase::Forward).simd(s.residual_add_forward * n, cfg);
                counts.phase_mut(Phase::InputGradient).simd(s.residual_add_backward * n, cfg);
            }
            LayerShape::Loss { classes } => {
                let n = b * classes as u64;
                counts.phase_mut(Phase::Forward).simd(s.loss_forward * n, cfg);
                counts.phase_mut(Phase::InputGradient).simd(s.loss_backward * n, cfg);
            }
        }
    }
    let update = counts.phase_mut(Phase::WeightGradient);
    update.simd(s.sgd_update * params, cfg);
    update.dram(Buffer::VMem, 3 * params, 32);
    counts
}

/// Bytes of DRAM a training step needs: FP32 master weights, gradients and
/// update scratch plus every layer's activations of the largest mini-batch
/// at storage width.
pub fn dram_footprint(trace: &TrainStepTrace, cfg: &AcceleratorConfig) -> u64 {
    let batch = trace.batches.keys().next_back().copied().unwrap_or(0) as u64;
    let params: u64 = trace.layers.iter().map(LayerShape::parameters).sum();
    let activations: u64 = trace
        .layers
        .iter()
        .map(|l| match *l {
            LayerShape::Conv { shape, .. } => (shape.out_channels * shape.out_h * shape.out_w) as u64,
            LayerShape::Dense { outputs, .. } => outputs as u64,
            LayerShape::BatchNorm { channels, spatial } => (channels * spatial) as u64,
            LayerShape::Relu { elements } | LayerShape::ResidualAdd { elements } => elements as u64,
            LayerShape::AvgPool { .. } => 0,
            LayerShape::Loss { classes } => classes as u64,
        })
        .sum();
    params * 4 * 3 + batch * activations * cfg.word_bits().div_ceil(8)
}

/// Count operations and accesses of all mini-batches in `trace`.
pub fn count_accesses(trace: &TrainStepTrace, cfg: &AcceleratorConfig) -> Result<AccessCounts> {
    let mut total = AccessCounts::default();
    if trace.is_empty() {
        return Ok(total);
    }
    let needed = dram_footprint(trace, cfg);
    if needed > cfg.dram_bytes {
        return Err(Error::Capacity {
            needed,
            available: cfg.dram_bytes,
        });
    }
    for (&batch, &n) in &trace.batches {
        let one = count_batch(&trace.layers, batch, cfg);
        let mut scaled = AccessCounts::default();
        for (dst, src) in scaled.phases.iter_mut().zip(&one.phases) {
            *dst = src.scaled(n);
        }
        total.add(&scaled);
    }
    Ok(total)
}
