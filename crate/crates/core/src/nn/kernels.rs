//! Convolution and dense GEMM kernels of the three training phases.
//!
//! Every multiply goes through the configured mantissa multiplier and is
//! accumulated by an exact 32-bit adder starting from `+0.0`. The
//! accumulation order for each output element is fixed (documented per
//! kernel) so results are reproducible bit for bit. Kernels are generic over
//! the multiply so each multiplier kind gets a monomorphised inner loop.

use alloc::vec;
use alloc::vec::Vec;

use crate::arith::{Multiplier, MultiplierKind, MultiplierSpec};
use crate::nn::spec::ConvShape;

/// Call `$kernel(args..., mul)` with a multiply closure specialised for the
/// multiplier kind. The two operand slices named in brackets are conditioned
/// once up front (truncated, subnormals flushed) so the per-MAC multiply is
/// branch free; operands holding NaN or infinities take the general path.
macro_rules! with_multiplier {
    ($spec:expr, [$a:ident, $b:ident], $kernel:ident($($arg:expr),* $(,)?)) => {{
        let m = Multiplier::new($spec);
        match (m.condition_slice($a), m.condition_slice($b)) {
            (Some(ca), Some(cb)) => {
                let ($a, $b) = (&ca[..], &cb[..]);
                match m.spec().kind {
                    MultiplierKind::Exact => $kernel($($arg),*, move |x: f32, y: f32| m.conditioned_exact(x, y)),
                    MultiplierKind::Mitchell | MultiplierKind::Mbm => {
                        $kernel($($arg),*, move |x: f32, y: f32| m.conditioned_log(x, y))
                    }
                }
            }
            _ => $kernel($($arg),*, move |x: f32, y: f32| m.product(x, y)),
        }
    }};
}

/// Unfold `x` (`batch × P × H × W`) into a `(k·k·P) × (batch·Ho·Wo)`
/// matrix. Row `(ky·k + kx)·P + p` holds, for every output pixel, the input
/// value tap `(ky, kx)` of channel `p` reads (zero where it falls into the
/// padding).
fn im2col(g: &ConvShape, batch: usize, x: &[f32]) -> Vec<f32> {
    let (p_n, k) = (g.in_channels, g.kernel);
    let in_plane = g.in_h * g.in_w;
    let out_plane = g.out_h * g.out_w;
    let n = batch * out_plane;
    let mut col = vec![0.0f32; k * k * p_n * n];
    for ky in 0..k {
        for kx in 0..k {
            for p in 0..p_n {
                let row = &mut col[((ky * k + kx) * p_n + p) * n..][..n];
                for b in 0..batch {
                    let xs = &x[(b * p_n + p) * in_plane..][..in_plane];
                    let dst = &mut row[b * out_plane..][..out_plane];
                    for oy in 0..g.out_h {
                        let Some(iy) = (oy * g.stride + ky).checked_sub(g.padding).filter(|&iy| iy < g.in_h) else {
                            continue;
                        };
                        for ox in 0..g.out_w {
                            if let Some(ix) = (ox * g.stride + kx).checked_sub(g.padding).filter(|&ix| ix < g.in_w) {
                                dst[oy * g.out_w + ox] = xs[iy * g.in_w + ix];
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

/// `dst[c][b·plane + i] = src[b][c][i]`.
fn channels_major(src: &[f32], batch: usize, channels: usize, plane: usize) -> Vec<f32> {
    let mut dst = vec![0.0f32; src.len()];
    for b in 0..batch {
        for c in 0..channels {
            dst[(c * batch + b) * plane..][..plane].copy_from_slice(&src[(b * channels + c) * plane..][..plane]);
        }
    }
    dst
}

/// `dst[(b·plane + i)·channels + c] = src[b][c][i]`.
fn pixels_major(src: &[f32], batch: usize, channels: usize, plane: usize) -> Vec<f32> {
    let mut dst = vec![0.0f32; src.len()];
    for b in 0..batch {
        for c in 0..channels {
            for (i, &v) in src[(b * channels + c) * plane..][..plane].iter().enumerate() {
                dst[(b * plane + i) * channels + c] = v;
            }
        }
    }
    dst
}

/// Inverse of [`channels_major`].
fn batch_major(src: &[f32], dst: &mut [f32], batch: usize, channels: usize, plane: usize) {
    for b in 0..batch {
        for c in 0..channels {
            dst[(b * channels + c) * plane..][..plane].copy_from_slice(&src[(c * batch + b) * plane..][..plane]);
        }
    }
}

/// Forward convolution. `out[b,q,oy,ox] = Σ_ky Σ_kx Σ_p w[q,p,ky,kx]·x[b,p,iy,ix]`
/// accumulated tap by tap and, within a tap, over input channels (the order
/// partial sums take through the array: taps in time, channels down the
/// rows). Taps falling into the padding contribute a zero product, which
/// leaves the running sum unchanged. Overwrites `out`.
pub fn conv_forward(g: &ConvShape, batch: usize, x: &[f32], w: &[f32], out: &mut [f32], spec: MultiplierSpec) {
    with_multiplier!(spec, [x, w], conv_forward_with(g, batch, x, w, out))
}

fn conv_forward_with<M: Fn(f32, f32) -> f32>(g: &ConvShape, batch: usize, x: &[f32], w: &[f32], out: &mut [f32], mul: M) {
    let (p_n, q_n, k) = (g.in_channels, g.out_channels, g.kernel);
    let out_plane = g.out_h * g.out_w;
    let n = batch * out_plane;
    let col = im2col(g, batch, x);
    let mut acc = vec![0.0f32; q_n * n];
    for q in 0..q_n {
        let a = &mut acc[q * n..][..n];
        for tap in 0..k * k {
            for p in 0..p_n {
                let wv = w[(q * p_n + p) * k * k + tap];
                if wv == 0.0 {
                    continue;
                }
                let c = &col[(tap * p_n + p) * n..][..n];
                for (o, &v) in a.iter_mut().zip(c) {
                    *o += mul(wv, v);
                }
            }
        }
    }
    batch_major(&acc, out, batch, q_n, out_plane);
}

/// Input gradient: the (zero-inserted, for strided layers) upstream gradient
/// convolved with the rotated, channel-transposed kernel.
/// `dx[b,p,iy,ix] = Σ_ky Σ_kx Σ_q w[q,p,ky,kx]·dy[b,q,oy,ox]`, accumulated
/// tap by tap and over output channels within a tap. Overwrites `dx`.
pub fn conv_backward_input(g: &ConvShape, batch: usize, dy: &[f32], w: &[f32], dx: &mut [f32], spec: MultiplierSpec) {
    with_multiplier!(spec, [dy, w], conv_backward_input_with(g, batch, dy, w, dx))
}

fn conv_backward_input_with<M: Fn(f32, f32) -> f32>(g: &ConvShape, batch: usize, dy: &[f32], w: &[f32], dx: &mut [f32], mul: M) {
    let (p_n, q_n, k) = (g.in_channels, g.out_channels, g.kernel);
    let in_plane = g.in_h * g.in_w;
    let out_plane = g.out_h * g.out_w;
    // Pixel-major layouts so the innermost loop runs over input channels.
    let dyp = pixels_major(dy, batch, q_n, out_plane);
    let mut wt = vec![0.0f32; k * k * q_n * p_n];
    for q in 0..q_n {
        for p in 0..p_n {
            for tap in 0..k * k {
                wt[(tap * q_n + q) * p_n + p] = w[(q * p_n + p) * k * k + tap];
            }
        }
    }
    let mut acc = vec![0.0f32; batch * in_plane * p_n];
    let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(batch * out_plane);
    for ky in 0..k {
        for kx in 0..k {
            // (upstream pixel, input pixel) pairs tap (ky, kx) connects; the
            // zero-inserted positions in between contribute nothing.
            pairs.clear();
            for b in 0..batch {
                for oy in 0..g.out_h {
                    let Some(iy) = (oy * g.stride + ky).checked_sub(g.padding).filter(|&iy| iy < g.in_h) else {
                        continue;
                    };
                    for ox in 0..g.out_w {
                        if let Some(ix) = (ox * g.stride + kx).checked_sub(g.padding).filter(|&ix| ix < g.in_w) {
                            pairs.push((b * out_plane + oy * g.out_w + ox, b * in_plane + iy * g.in_w + ix));
                        }
                    }
                }
            }
            let tap = ky * k + kx;
            for &(src, dst) in &pairs {
                let a = &mut acc[dst * p_n..][..p_n];
                for (q, &dv) in dyp[src * q_n..][..q_n].iter().enumerate() {
                    if dv == 0.0 {
                        continue;
                    }
                    let wr = &wt[(tap * q_n + q) * p_n..][..p_n];
                    for (o, &wv) in a.iter_mut().zip(wr) {
                        *o += mul(wv, dv);
                    }
                }
            }
        }
    }
    for b in 0..batch {
        for p in 0..p_n {
            for i in 0..in_plane {
                dx[(b * p_n + p) * in_plane + i] = acc[(b * in_plane + i) * p_n + p];
            }
        }
    }
}

/// Weight gradient: `dw[q,p,ky,kx] = Σ_b Σ_oy Σ_ox dy[b,q,oy,ox]·x[b,p,iy,ix]`
/// accumulated in `(b, oy, ox)` order. Overwrites `dw`.
pub fn conv_backward_weight(g: &ConvShape, batch: usize, x: &[f32], dy: &[f32], dw: &mut [f32], spec: MultiplierSpec) {
    with_multiplier!(spec, [x, dy], conv_backward_weight_with(g, batch, x, dy, dw))
}

fn conv_backward_weight_with<M: Fn(f32, f32) -> f32>(g: &ConvShape, batch: usize, x: &[f32], dy: &[f32], dw: &mut [f32], mul: M) {
    let (p_n, q_n, k) = (g.in_channels, g.out_channels, g.kernel);
    let out_plane = g.out_h * g.out_w;
    let n = batch * out_plane;
    let rows = k * k * p_n;
    let col = im2col(g, batch, x);
    // Pixel-major unfolded input so the innermost loop runs over rows.
    let mut colt = vec![0.0f32; n * rows];
    for r in 0..rows {
        for (i, &v) in col[r * n..][..n].iter().enumerate() {
            colt[i * rows + r] = v;
        }
    }
    let dyt = channels_major(dy, batch, q_n, out_plane);
    let mut acc = vec![0.0f32; rows];
    for q in 0..q_n {
        acc.fill(0.0);
        for (i, &dv) in dyt[q * n..][..n].iter().enumerate() {
            if dv == 0.0 {
                continue;
            }
            for (a, &cv) in acc.iter_mut().zip(&colt[i * rows..][..rows]) {
                *a += mul(dv, cv);
            }
        }
        for (r, &a) in acc.iter().enumerate() {
            let (tap, p) = (r / p_n, r % p_n);
            dw[(q * p_n + p) * k * k + tap] = a;
        }
    }
}

/// Dense forward: `y[b,q] = Σ_p w[q,p]·x[b,p]` in `p` order. Overwrites `y`.
pub fn dense_forward(inputs: usize, outputs: usize, batch: usize, x: &[f32], w: &[f32], y: &mut [f32], spec: MultiplierSpec) {
    with_multiplier!(spec, [x, w], dense_forward_with(inputs, outputs, batch, x, w, y))
}

fn dense_forward_with<M: Fn(f32, f32) -> f32>(inputs: usize, outputs: usize, batch: usize, x: &[f32], w: &[f32], y: &mut [f32], mul: M) {
    for b in 0..batch {
        let xs = &x[b * inputs..][..inputs];
        for q in 0..outputs {
            let ws = &w[q * inputs..][..inputs];
            let mut acc = 0.0f32;
            for p in 0..inputs {
                acc += mul(ws[p], xs[p]);
            }
            y[b * outputs + q] = acc;
        }
    }
}

/// Dense input gradient: `dx[b,p] = Σ_q w[q,p]·dy[b,q]` in `q` order.
pub fn dense_backward_input(inputs: usize, outputs: usize, batch: usize, dy: &[f32], w: &[f32], dx: &mut [f32], spec: MultiplierSpec) {
    with_multiplier!(spec, [dy, w], dense_backward_input_with(inputs, outputs, batch, dy, w, dx))
}

fn dense_backward_input_with<M: Fn(f32, f32) -> f32>(
    inputs: usize,
    outputs: usize,
    batch: usize,
    dy: &[f32],
    w: &[f32],
    dx: &mut [f32],
    mul: M,
) {
    for b in 0..batch {
        for p in 0..inputs {
            let mut acc = 0.0f32;
            for q in 0..outputs {
                acc += mul(w[q * inputs + p], dy[b * outputs + q]);
            }
            dx[b * inputs + p] = acc;
        }
    }
}

/// Dense weight gradient: `dw[q,p] = Σ_b dy[b,q]·x[b,p]` in `b` order.
pub fn dense_backward_weight(inputs: usize, outputs: usize, batch: usize, x: &[f32], dy: &[f32], dw: &mut [f32], spec: MultiplierSpec) {
    with_multiplier!(spec, [x, dy], dense_backward_weight_with(inputs, outputs, batch, x, dy, dw))
}

fn dense_backward_weight_with<M: Fn(f32, f32) -> f32>(
    inputs: usize,
    outputs: usize,
    batch: usize,
    x: &[f32],
    dy: &[f32],
    dw: &mut [f32],
    mul: M,
) {
    for q in 0..outputs {
        for p in 0..inputs {
            let mut acc = 0.0f32;
            for b in 0..batch {
                acc += mul(dy[b * outputs + q], x[b * inputs + p]);
            }
            dw[q * inputs + p] = acc;
        }
    }
}
