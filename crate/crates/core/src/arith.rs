//! Bit-exact emulation of compressed bfloat storage formats and of the
//! logarithmic mantissa multipliers inside the accelerator MAC units.
//!
//! Every emulated value travels in an `f32` carrier. A value belongs to a
//! narrower format when the low `23 - m` stored mantissa bits are zero and it
//! is not subnormal (subnormals are flushed to zero in every format).
//!
//! Two multiply entry points exist:
//! * [`approx_product`] returns the full-width product the multiplier hands to
//!   the exact 32-bit adder of the MAC unit (no rounding to the operand
//!   format; rounding happens when a result is written back to a buffer).
//! * [`approx_multiply`] additionally rounds that product to the operand
//!   format, i.e. the value a standalone multiply would store.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MANTISSA_MASK: u32 = 0x007f_ffff;
const EXPONENT_MASK: u32 = 0x7f80_0000;
const SIGN_MASK: u32 = 0x8000_0000;
const FIXED_FRAC_BITS: u32 = 32;

/// Floating-point storage format: 1 sign bit, 8 exponent bits and
/// `mantissa_bits` stored mantissa bits (bfloatX has X = 9 + mantissa_bits).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FloatFormat {
    pub mantissa_bits: u8,
}

impl FloatFormat {
    pub const FP32: FloatFormat = FloatFormat { mantissa_bits: 23 };
    pub const BFLOAT16: FloatFormat = FloatFormat { mantissa_bits: 7 };
    pub const BFLOAT12: FloatFormat = FloatFormat { mantissa_bits: 3 };
    pub const BFLOAT10: FloatFormat = FloatFormat { mantissa_bits: 1 };

    pub const SIGN_BITS: u32 = 1;
    pub const EXPONENT_BITS: u32 = 8;

    pub fn new(mantissa_bits: u8) -> Result<Self> {
        if mantissa_bits > 23 {
            return Err(Error::config(alloc::format!(
                "mantissa width {mantissa_bits} exceeds the 23-bit carrier"
            )));
        }
        Ok(FloatFormat { mantissa_bits })
    }

    /// Total storage width in bits.
    pub fn width_bits(self) -> u32 {
        Self::SIGN_BITS + Self::EXPONENT_BITS + u32::from(self.mantissa_bits)
    }

    /// Largest finite magnitude representable in the format.
    pub fn max_magnitude(self) -> f32 {
        f32::from_bits(max_magnitude_bits(u32::from(self.mantissa_bits)))
    }

    /// Whether `x` is exactly representable (NaN and infinities count as
    /// representable; subnormals do not).
    pub fn represents(self, x: f32) -> bool {
        round_to_format(x, self).to_bits() == x.to_bits() || x.is_nan()
    }
}

/// Which mantissa multiplier the MAC units use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MultiplierKind {
    Exact,
    /// Minimally biased logarithmic multiplier (Mitchell plus correction).
    Mbm,
    /// Mitchell's logarithmic multiplier (no correction).
    Mitchell,
}

/// A multiplier instance: kind, consumed operand mantissa width and the MBM
/// correction constant (zero for the other kinds).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiplierSpec {
    pub kind: MultiplierKind,
    pub mantissa_bits: u8,
    #[serde(default)]
    pub correction: f64,
}

/// Calibrated MBM correction constants for the retained mantissa widths used
/// by the accelerator presets, as `(mantissa_bits, c)`. Each value minimises
/// the magnitude of the mean signed relative error over the exhaustive
/// operand sweep on a grid of multiples of 2^-10 (see [`calibrate_correction`]).
pub const MBM_CORRECTIONS: [(u8, f64); 3] = [(1, 0.0400390625), (3, 0.072265625), (7, 0.080078125)];

impl MultiplierSpec {
    pub fn exact(mantissa_bits: u8) -> Self {
        MultiplierSpec {
            kind: MultiplierKind::Exact,
            mantissa_bits,
            correction: 0.0,
        }
    }

    pub fn mitchell(mantissa_bits: u8) -> Self {
        MultiplierSpec {
            kind: MultiplierKind::Mitchell,
            mantissa_bits,
            correction: 0.0,
        }
    }

    /// MBM with the frozen calibrated correction for this width.
    pub fn mbm(mantissa_bits: u8) -> Self {
        Self::mbm_with_correction(mantissa_bits, default_mbm_correction(mantissa_bits))
    }

    pub fn mbm_with_correction(mantissa_bits: u8, correction: f64) -> Self {
        MultiplierSpec {
            kind: MultiplierKind::Mbm,
            mantissa_bits,
            correction,
        }
    }

    /// Operand format consumed by this multiplier.
    pub fn format(&self) -> FloatFormat {
        FloatFormat {
            mantissa_bits: self.mantissa_bits,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mantissa_bits > 23 {
            return Err(Error::config("multiplier mantissa width exceeds 23 bits"));
        }
        let c = self.correction;
        match self.kind {
            MultiplierKind::Exact | MultiplierKind::Mitchell if c != 0.0 => {
                Err(Error::config("only the MBM multiplier takes a correction constant"))
            }
            MultiplierKind::Mbm if !(c > 0.0 && c < 1.0) => Err(Error::config("MBM correction must lie strictly inside (0, 1)")),
            _ => Ok(()),
        }
    }

    /// Full-width product as delivered to the MAC adder.
    #[inline]
    pub fn product(&self, a: f32, b: f32) -> f32 {
        approx_product(a, b, *self)
    }
}

/// Frozen MBM correction for `mantissa_bits`; widths without a calibrated
/// entry reuse the widest calibrated value.
pub fn default_mbm_correction(mantissa_bits: u8) -> f64 {
    MBM_CORRECTIONS
        .iter()
        .find(|(m, _)| *m == mantissa_bits)
        .map(|(_, c)| *c)
        .unwrap_or(MBM_CORRECTIONS[MBM_CORRECTIONS.len() - 1].1)
}

#[inline]
fn max_magnitude_bits(mantissa_bits: u32) -> u32 {
    let kept = ((1u32 << mantissa_bits) - 1) << (23 - mantissa_bits);
    (254 << 23) | kept
}

#[inline]
fn signed_zero(sign: u32) -> f32 {
    f32::from_bits(sign)
}

/// Truncate `x` to the format's mantissa width (round toward zero by bit
/// masking). Subnormals flush to signed zero; NaN and infinities pass
/// through unchanged.
#[inline]
pub fn round_to_format(x: f32, format: FloatFormat) -> f32 {
    let bits = x.to_bits();
    let exponent = bits & EXPONENT_MASK;
    if exponent == EXPONENT_MASK {
        return x;
    }
    if exponent == 0 {
        return signed_zero(bits & SIGN_MASK);
    }
    let drop = 23 - u32::from(format.mantissa_bits);
    f32::from_bits(bits & !((1u32 << drop) - 1))
}

/// Round every element of a slice in place.
pub fn round_slice(values: &mut [f32], format: FloatFormat) {
    for v in values.iter_mut() {
        *v = round_to_format(*v, format);
    }
}

/// Full-width product of two operands through the configured multiplier.
///
/// Operands are consumed at the multiplier's mantissa width (extra low bits
/// are ignored, subnormal operands count as zero). Exponent overflow
/// saturates to the operand format's largest magnitude; underflow flushes to
/// signed zero.
#[inline]
pub fn approx_product(a: f32, b: f32, spec: MultiplierSpec) -> f32 {
    if !a.is_finite() || !b.is_finite() {
        return a * b;
    }
    let (ab, bb) = (a.to_bits(), b.to_bits());
    let sign = (ab ^ bb) & SIGN_MASK;
    let ea = ((ab & EXPONENT_MASK) >> 23) as i32;
    let eb = ((bb & EXPONENT_MASK) >> 23) as i32;
    if ea == 0 || eb == 0 {
        return signed_zero(sign);
    }
    let m = u32::from(spec.mantissa_bits);
    match spec.kind {
        MultiplierKind::Exact => {
            let drop = 23 - m;
            let keep = !((1u32 << drop) - 1);
            let p = f32::from_bits(ab & keep) * f32::from_bits(bb & keep);
            let pb = p.to_bits();
            let pe = pb & EXPONENT_MASK;
            if pe == 0 {
                signed_zero(sign)
            } else if pe == EXPONENT_MASK {
                f32::from_bits(sign | max_magnitude_bits(m))
            } else {
                p
            }
        }
        MultiplierKind::Mitchell => log_product(sign, ea, eb, ab, bb, m, 0),
        MultiplierKind::Mbm => {
            let cq = libm::floor(spec.correction * (1u64 << FIXED_FRAC_BITS) as f64) as u64;
            log_product(sign, ea, eb, ab, bb, m, cq)
        }
    }
}

/// Piecewise logarithmic product in 32-fractional-bit fixed point:
/// `2^(k1+k2) (1 + x1 + x2 + c)` when `x1 + x2 < 1`, otherwise
/// `2^(k1+k2+1) (x1 + x2 + c/2)`, then truncated to the 23-bit carrier.
#[inline]
fn log_product(sign: u32, ea: i32, eb: i32, ab: u32, bb: u32, m: u32, cq: u64) -> f32 {
    let one = 1u64 << FIXED_FRAC_BITS;
    let shift = 23 - m;
    let xa = u64::from((ab & MANTISSA_MASK) >> shift) << (FIXED_FRAC_BITS - m);
    let xb = u64::from((bb & MANTISSA_MASK) >> shift) << (FIXED_FRAC_BITS - m);
    let sum = xa + xb;
    let mut exponent = ea + eb - 127;
    let mut mant = if sum < one {
        one + sum + cq
    } else {
        exponent += 1;
        sum + (cq >> 1)
    };
    while mant >= 2 * one {
        mant >>= 1;
        exponent += 1;
    }
    if exponent >= 255 {
        return f32::from_bits(sign | max_magnitude_bits(m));
    }
    if exponent <= 0 {
        return signed_zero(sign);
    }
    let frac = ((mant - one) >> (FIXED_FRAC_BITS - 23)) as u32;
    f32::from_bits(sign | ((exponent as u32) << 23) | frac)
}

/// A multiplier with its per-call constants precomputed, for hot loops.
/// [`Multiplier::product`] is bit-identical to [`approx_product`] but keeps
/// the common cases (zero and normal operands) free of data-dependent
/// branches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Multiplier {
    spec: MultiplierSpec,
    keep: u32,
    shift: u32,
    cq: u64,
    /// The correction truncated to 23 fractional bits, and its half.
    c_low: u32,
    c_high: u32,
    saturated: u32,
}

impl Multiplier {
    pub fn new(spec: MultiplierSpec) -> Self {
        let m = u32::from(spec.mantissa_bits).min(23);
        let cq = match spec.kind {
            MultiplierKind::Mbm => libm::floor(spec.correction * (1u64 << FIXED_FRAC_BITS) as f64) as u64,
            _ => 0,
        };
        Multiplier {
            spec,
            keep: !((1u32 << (23 - m)) - 1),
            shift: 23 - m,
            cq,
            c_low: (cq >> (FIXED_FRAC_BITS - 23)) as u32,
            c_high: ((cq >> 1) >> (FIXED_FRAC_BITS - 23)) as u32,
            saturated: max_magnitude_bits(m),
        }
    }

    pub fn spec(&self) -> MultiplierSpec {
        self.spec
    }

    #[inline(always)]
    pub fn product(&self, a: f32, b: f32) -> f32 {
        match self.spec.kind {
            MultiplierKind::Exact => self.exact_product(a, b),
            MultiplierKind::Mitchell | MultiplierKind::Mbm => self.log_product(a, b),
        }
    }

    /// Exact-mantissa product of the truncated operands.
    #[inline(always)]
    pub fn exact_product(&self, a: f32, b: f32) -> f32 {
        let (ab, bb) = (a.to_bits(), b.to_bits());
        let (ea, eb) = (ab & EXPONENT_MASK, bb & EXPONENT_MASK);
        if ea == EXPONENT_MASK || eb == EXPONENT_MASK {
            return approx_product(a, b, self.spec);
        }
        // Subnormal operands flush to signed zero.
        let ka = if ea == 0 { SIGN_MASK } else { self.keep };
        let kb = if eb == 0 { SIGN_MASK } else { self.keep };
        let p = (f32::from_bits(ab & ka) * f32::from_bits(bb & kb)).to_bits();
        let pe = p & EXPONENT_MASK;
        if pe == EXPONENT_MASK {
            return approx_product(a, b, self.spec);
        }
        f32::from_bits(if pe == 0 { p & SIGN_MASK } else { p })
    }

    /// The operand as the multiplier consumes it: mantissa truncated to the
    /// multiplier width, subnormals flushed to signed zero. `None` for NaN
    /// and infinities, which only the general path handles.
    #[inline(always)]
    pub fn condition(&self, x: f32) -> Option<f32> {
        let bits = x.to_bits();
        let e = bits & EXPONENT_MASK;
        if e == EXPONENT_MASK {
            None
        } else if e == 0 {
            Some(f32::from_bits(bits & SIGN_MASK))
        } else {
            Some(f32::from_bits(bits & self.keep))
        }
    }

    /// Condition a whole operand slice; `None` if any value is not finite.
    pub fn condition_slice(&self, xs: &[f32]) -> Option<Vec<f32>> {
        xs.iter().map(|&x| self.condition(x)).collect()
    }

    /// [`Multiplier::product`] of two conditioned operands, branch free.
    #[inline(always)]
    pub fn conditioned_product(&self, a: f32, b: f32) -> f32 {
        match self.spec.kind {
            MultiplierKind::Exact => self.conditioned_exact(a, b),
            MultiplierKind::Mitchell | MultiplierKind::Mbm => self.conditioned_log(a, b),
        }
    }

    /// Exact-kind [`Multiplier::conditioned_product`].
    #[inline(always)]
    pub fn conditioned_exact(&self, a: f32, b: f32) -> f32 {
        let p = (a * b).to_bits();
        let pe = p & EXPONENT_MASK;
        let sign = p & SIGN_MASK;
        let r = if pe == EXPONENT_MASK { self.saturated | sign } else { p };
        f32::from_bits(if pe == 0 { sign } else { r })
    }

    /// Mitchell / MBM [`Multiplier::conditioned_product`]. Conditioned
    /// operands have zero mantissa bits below the 23-bit carrier, so the
    /// fixed-point sum can be carried at 23 fractional bits with the
    /// correction pre-truncated; the result equals the 32-bit computation.
    #[inline(always)]
    pub fn conditioned_log(&self, a: f32, b: f32) -> f32 {
        let (ab, bb) = (a.to_bits(), b.to_bits());
        let ea = ((ab & EXPONENT_MASK) >> 23) as i32;
        let eb = ((bb & EXPONENT_MASK) >> 23) as i32;
        let sign = (ab ^ bb) & SIGN_MASK;
        let zero = ea == 0 || eb == 0;
        let one = 1u32 << 23;
        let sum = (ab & MANTISSA_MASK) + (bb & MANTISSA_MASK);
        let low = sum < one;
        let mut mant = if low { one + sum + self.c_low } else { sum + self.c_high };
        let mut exponent = ea + eb - 127 + i32::from(!low);
        let carry = mant >= 2 * one;
        mant >>= u32::from(carry);
        exponent += i32::from(carry);
        let normal = sign | ((exponent.clamp(0, 255) as u32) << 23) | (mant - one);
        let bits = if exponent >= 255 { self.saturated | sign } else { normal };
        f32::from_bits(if zero || exponent <= 0 { sign } else { bits })
    }

    /// Mitchell / MBM product (see [`approx_product`]).
    #[inline(always)]
    pub fn log_product(&self, a: f32, b: f32) -> f32 {
        let (ab, bb) = (a.to_bits(), b.to_bits());
        let ea = ((ab & EXPONENT_MASK) >> 23) as i32;
        let eb = ((bb & EXPONENT_MASK) >> 23) as i32;
        if ea == 255 || eb == 255 {
            return approx_product(a, b, self.spec);
        }
        let sign = (ab ^ bb) & SIGN_MASK;
        let zero = ea == 0 || eb == 0;
        let one = 1u64 << FIXED_FRAC_BITS;
        let m = 23 - self.shift;
        let xa = u64::from((ab & MANTISSA_MASK) >> self.shift) << (FIXED_FRAC_BITS - m);
        let xb = u64::from((bb & MANTISSA_MASK) >> self.shift) << (FIXED_FRAC_BITS - m);
        let sum = xa + xb;
        let low = sum < one;
        let mut mant = if low { one + sum + self.cq } else { sum + (self.cq >> 1) };
        let mut exponent = ea + eb - 127 + i32::from(!low);
        let carry = mant >= 2 * one;
        mant >>= u32::from(carry);
        exponent += i32::from(carry);
        if exponent >= 255 && !zero {
            return f32::from_bits(sign | max_magnitude_bits(m));
        }
        let frac = ((mant - one) >> (FIXED_FRAC_BITS - 23)) as u32;
        let normal = sign | ((exponent.clamp(0, 255) as u32) << 23) | frac;
        f32::from_bits(if zero || exponent <= 0 { sign } else { normal })
    }
}

/// Product rounded back to the operand format, the value a standalone
/// multiplier would store.
#[inline]
pub fn approx_multiply(a: f32, b: f32, spec: MultiplierSpec) -> f32 {
    round_to_format(approx_product(a, b, spec), spec.format())
}

/// One MAC step: the approximate product added to the accumulator by the
/// exact 32-bit adder.
#[inline]
pub fn exact_multiply_accumulate(acc: f32, a: f32, b: f32, spec: MultiplierSpec) -> f32 {
    acc + approx_product(a, b, spec)
}

/// Relative-error statistics of a multiplier over an exhaustive sweep.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorStats {
    /// Mean signed relative error (the bias).
    pub mean_rel: f64,
    /// Mean absolute relative error.
    pub mean_abs_rel: f64,
    /// Maximum absolute relative error.
    pub max_rel: f64,
    /// Number of operand pairs swept.
    pub samples: u64,
}

/// Exhaustively sweep every pair of `mantissa_bits`-wide operand mantissas
/// in `[1, 2)` and compare the full-width product against the exact one.
pub fn characterize_error(spec: MultiplierSpec, mantissa_bits: u8) -> Result<ErrorStats> {
    if mantissa_bits > 8 {
        return Err(Error::config("exhaustive characterisation supports at most 8 mantissa bits"));
    }
    let spec = MultiplierSpec { mantissa_bits, ..spec };
    let n = 1u32 << mantissa_bits;
    let shift = 23 - u32::from(mantissa_bits);
    let mut sum = 0.0f64;
    let mut sum_abs = 0.0f64;
    let mut max = 0.0f64;
    for i in 0..n {
        let a = f32::from_bits((127 << 23) | (i << shift));
        for j in 0..n {
            let b = f32::from_bits((127 << 23) | (j << shift));
            let exact = f64::from(a) * f64::from(b);
            let rel = (f64::from(approx_product(a, b, spec)) - exact) / exact;
            sum += rel;
            sum_abs += libm::fabs(rel);
            if libm::fabs(rel) > max {
                max = libm::fabs(rel);
            }
        }
    }
    let samples = u64::from(n) * u64::from(n);
    Ok(ErrorStats {
        mean_rel: sum / samples as f64,
        mean_abs_rel: sum_abs / samples as f64,
        max_rel: max,
        samples,
    })
}

/// Calibration grid resolution for the MBM correction.
pub const CORRECTION_STEP: f64 = 1.0 / 1024.0;

/// Find the MBM correction on the grid `k * 2^-10`, `k = 1..=256`, that
/// minimises the magnitude of the mean signed relative error over the
/// exhaustive sweep at `mantissa_bits`. Ties resolve to the smaller constant.
pub fn calibrate_correction(mantissa_bits: u8) -> Result<(f64, ErrorStats)> {
    let mut best: Option<(f64, ErrorStats)> = None;
    for k in 1..=256u32 {
        let c = f64::from(k) * CORRECTION_STEP;
        let stats = characterize_error(MultiplierSpec::mbm_with_correction(mantissa_bits, c), mantissa_bits)?;
        let better = match &best {
            None => true,
            Some((_, s)) => libm::fabs(stats.mean_rel) < libm::fabs(s.mean_rel),
        };
        if better {
            best = Some((c, stats));
        }
    }
    best.ok_or_else(|| Error::internal("empty calibration grid"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prepared_multiplier_matches_reference_path() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let specials = [
            0.0f32,
            -0.0,
            1.0e-40,
            -3.0e-39,
            f32::INFINITY,
            f32::NEG_INFINITY,
            f32::NAN,
            f32::MAX,
            1.0e38,
            1.0e-38,
            1.5,
        ];
        for spec in [
            MultiplierSpec::exact(23),
            MultiplierSpec::exact(7),
            MultiplierSpec::mitchell(3),
            MultiplierSpec::mbm(1),
            MultiplierSpec::mbm(7),
        ] {
            let fast = Multiplier::new(spec);
            let check = |a: f32, b: f32| {
                let (x, y) = (fast.product(a, b), approx_product(a, b, spec));
                assert!(
                    x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan()),
                    "{spec:?} {a:e} {b:e}: {x:e} vs {y:e}"
                );
                if let (Some(ca), Some(cb)) = (fast.condition(a), fast.condition(b)) {
                    let z = fast.conditioned_product(ca, cb);
                    assert_eq!(z.to_bits(), y.to_bits(), "conditioned {spec:?} {a:e} {b:e}");
                }
            };
            for &a in &specials {
                for &b in &specials {
                    check(a, b);
                }
            }
            for _ in 0..200_000 {
                check(f32::from_bits(rng.random()), f32::from_bits(rng.random()));
                check(rng.random_range(-4.0f32..4.0), rng.random_range(-4.0f32..4.0));
            }
        }
    }

    /// Independent reference: evaluate the piecewise log product in f64 and
    /// truncate the f64 result to the 23-bit carrier.
    fn reference_log_product(a: f32, b: f32, m: u32, c: f64) -> f32 {
        let split = |x: f32| {
            let bits = x.to_bits();
            let k = ((bits >> 23) & 0xff) as i32 - 127;
            let frac = ((bits & MANTISSA_MASK) >> (23 - m)) as f64 / (1u64 << m) as f64;
            (x.is_sign_negative(), k, frac)
        };
        let (sa, k1, x1) = split(a);
        let (sb, k2, x2) = split(b);
        let value = if x1 + x2 < 1.0 {
            libm::pow(2.0, f64::from(k1 + k2)) * (1.0 + x1 + x2 + c)
        } else {
            libm::pow(2.0, f64::from(k1 + k2 + 1)) * (x1 + x2 + c / 2.0)
        };
        let bits = value.to_bits();
        let exp = ((bits >> 52) & 0x7ff) as i64 - 1023 + 127;
        let frac = ((bits >> 29) & 0x7f_ffff) as u32;
        let sign = if sa != sb { SIGN_MASK } else { 0 };
        f32::from_bits(sign | ((exp as u32) << 23) | frac)
    }

    fn truncated_f64_product(a: f32, b: f32, m: u32) -> f32 {
        let p = f64::from(a) * f64::from(b);
        let bits = p.to_bits();
        let drop = 52 - m;
        let t = f64::from_bits(bits & !((1u64 << drop) - 1));
        t as f32
    }

    #[test]
    fn round_examples() {
        assert_eq!(round_to_format(1.0, FloatFormat::BFLOAT10), 1.0);
        let x = f32::from_bits(1.0f32.to_bits() + 1);
        assert_eq!(round_to_format(x, FloatFormat::BFLOAT16), 1.0);
        assert_eq!(round_to_format(x, FloatFormat::BFLOAT16).to_bits(), x.to_bits() & 0xffff_0000);
        assert!(round_to_format(f32::NAN, FloatFormat::BFLOAT12).is_nan());
        let sub = f32::from_bits(0x8000_0001);
        assert_eq!(round_to_format(sub, FloatFormat::FP32).to_bits(), 0x8000_0000);
    }

    #[test]
    fn format_widths() {
        assert_eq!(FloatFormat::FP32.width_bits(), 32);
        assert_eq!(FloatFormat::BFLOAT16.width_bits(), 16);
        assert_eq!(FloatFormat::BFLOAT12.width_bits(), 12);
        assert_eq!(FloatFormat::BFLOAT10.width_bits(), 10);
        assert!(FloatFormat::new(24).is_err());
    }

    #[test]
    fn mitchell_examples() {
        let s = MultiplierSpec::mitchell(7);
        assert_eq!(approx_multiply(2.0, 4.0, s), 8.0);
        assert_eq!(approx_multiply(3.0, 3.0, s), 8.0);
        assert_eq!(exact_multiply_accumulate(1.0, 2.0, 4.0, s), 9.0);
        assert_eq!(exact_multiply_accumulate(0.0, 1.5, 2.5, MultiplierSpec::exact(7)), 3.75);
        assert_eq!(exact_multiply_accumulate(5.0, 0.0, 3.0, MultiplierSpec::mbm(3)), 5.0);
    }

    #[test]
    fn mbm_matches_reference_exhaustively_m3() {
        let spec = MultiplierSpec::mbm(3);
        for ea in [120u32, 127, 130] {
            for eb in [125u32, 127, 140] {
                for i in 0..8u32 {
                    for j in 0..8u32 {
                        for (sa, sb) in [(0u32, 0u32), (1, 0), (1, 1)] {
                            let a = f32::from_bits((sa << 31) | (ea << 23) | (i << 20));
                            let b = f32::from_bits((sb << 31) | (eb << 23) | (j << 20));
                            let got = approx_product(a, b, spec);
                            let want = reference_log_product(a, b, 3, spec.correction);
                            assert_eq!(got.to_bits(), want.to_bits(), "{a} * {b}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn mitchell_and_mbm_match_reference_m7() {
        for spec in [MultiplierSpec::mitchell(7), MultiplierSpec::mbm(7)] {
            for i in 0..128u32 {
                for j in 0..128u32 {
                    let a = f32::from_bits((127 << 23) | (i << 16));
                    let b = f32::from_bits((128 << 23) | (j << 16));
                    let want = reference_log_product(a, b, 7, spec.correction);
                    assert_eq!(approx_product(a, b, spec).to_bits(), want.to_bits());
                }
            }
        }
    }

    #[test]
    fn exact_equals_truncated_true_product() {
        for m in 0..=4u32 {
            let spec = MultiplierSpec::exact(m as u8);
            for i in 0..(1u32 << m) {
                for j in 0..(1u32 << m) {
                    let a = f32::from_bits((126 << 23) | (i << (23 - m)));
                    let b = f32::from_bits((129 << 23) | (j << (23 - m)));
                    assert_eq!(approx_multiply(a, b, spec).to_bits(), truncated_f64_product(a, b, m).to_bits());
                }
            }
        }
    }

    #[test]
    fn overflow_saturates_and_underflow_flushes() {
        let big = f32::from_bits(250 << 23);
        for spec in [MultiplierSpec::exact(3), MultiplierSpec::mitchell(3), MultiplierSpec::mbm(3)] {
            let p = approx_product(big, -big, spec);
            assert_eq!(p, -FloatFormat::BFLOAT12.max_magnitude());
            let tiny = f32::from_bits(10 << 23);
            let z = approx_product(tiny, -tiny, spec);
            assert_eq!(z.to_bits(), 0x8000_0000);
            assert_eq!(approx_product(0.0, -3.0, spec).to_bits(), 0x8000_0000);
        }
    }

    #[test]
    fn characterize_examples() {
        let exact = characterize_error(MultiplierSpec::exact(7), 7).unwrap();
        assert_eq!((exact.mean_rel, exact.max_rel), (0.0, 0.0));
        let mitchell = characterize_error(MultiplierSpec::mitchell(7), 7).unwrap();
        assert!(mitchell.max_rel <= 0.112);
        assert!(mitchell.max_rel > 0.11);
        let mbm = characterize_error(MultiplierSpec::mbm(7), 7).unwrap();
        assert!(libm::fabs(mbm.mean_rel) < libm::fabs(mitchell.mean_rel));
        assert!(mbm.mean_abs_rel < mitchell.mean_abs_rel);
        assert!(characterize_error(MultiplierSpec::exact(9), 9).is_err());
    }

    #[test]
    fn frozen_corrections_match_calibration() {
        for (m, c) in MBM_CORRECTIONS {
            let (calibrated, _) = calibrate_correction(m).unwrap();
            assert_eq!(calibrated, c, "width {m}");
        }
    }

    #[test]
    fn spec_validation() {
        assert!(MultiplierSpec::mbm(7).validate().is_ok());
        assert!(MultiplierSpec::mbm_with_correction(7, 0.0).validate().is_err());
        let mut s = MultiplierSpec::mitchell(7);
        s.correction = 0.1;
        assert!(s.validate().is_err());
    }
}
