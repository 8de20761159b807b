//! Uniform `b`-bit quantization with per-bucket `(min, max)` metadata.
//!
//! A bucket with range `[lo, hi]` uses the level `u = (hi - lo) / (2^b - 1)`;
//! a value `x` is encoded as the integer code `(x - lo) / u` rounded either to
//! nearest (half up) or stochastically, and decoded as `code * u + lo`.
//! Codes are packed little-endian bit-wise, so with `b = 4` the first code of
//! each byte sits in the low nibble.

use rand::Rng;

use crate::error::{check_finite, Error, Result};

/// Default number of coordinates sharing one `(min, max)` pair.
pub const DEFAULT_BUCKET_SIZE: usize = 64;

/// Default bit width of the error-feedback codes.
pub const DEFAULT_BITS: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Rounding {
    /// `floor(v + 1/2)`.
    #[default]
    Nearest,
    /// `floor(v + xi)` with `xi ~ U[0, 1)`; unbiased.
    Stochastic,
}

/// Range and bit width of one quantization bucket.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantParams {
    pub lo: f64,
    pub hi: f64,
    pub bits: u32,
}

fn check_bits(bits: u32) -> Result<()> {
    if (1..=16).contains(&bits) {
        Ok(())
    } else {
        Err(Error::Bits(bits))
    }
}

/// Largest code representable in `bits` bits.
pub fn max_code(bits: u32) -> u16 {
    ((1u32 << bits) - 1) as u16
}

impl QuantParams {
    pub fn new(lo: f64, hi: f64, bits: u32) -> Result<Self> {
        check_bits(bits)?;
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(Error::OutOfRange { value: lo, lo, hi });
        }
        Ok(Self { lo, hi, bits })
    }

    /// Quantization level `u`; zero for a degenerate bucket.
    pub fn level(&self) -> f64 {
        if self.hi == self.lo {
            0.0
        } else {
            (self.hi - self.lo) / f64::from(max_code(self.bits))
        }
    }

    pub fn max_code(&self) -> u16 {
        max_code(self.bits)
    }

    fn check_in_range(&self, x: f64) -> Result<()> {
        let tol = f64::EPSILON * self.lo.abs().max(self.hi.abs());
        if x.is_finite() && x >= self.lo - tol && x <= self.hi + tol {
            Ok(())
        } else {
            Err(Error::OutOfRange {
                value: x,
                lo: self.lo,
                hi: self.hi,
            })
        }
    }

    /// Position of `x` on the code grid, `(x - lo) / u`.
    fn scaled(&self, x: f64, u: f64) -> f64 {
        if x >= self.hi {
            f64::from(self.max_code())
        } else {
            (x - self.lo) / u
        }
    }

    fn clamp_code(&self, v: f64) -> u16 {
        v.clamp(0.0, f64::from(self.max_code())) as u16
    }
}

/// `(min, max)` of a nonempty slice at the given bit width.
pub fn quant_params(x: &[f64], bits: u32) -> Result<QuantParams> {
    if x.is_empty() {
        return Err(Error::Empty);
    }
    check_finite(x)?;
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    QuantParams::new(lo, hi, bits)
}

pub fn quantize_nearest(x: &[f64], p: &QuantParams) -> Result<Vec<u16>> {
    let u = p.level();
    x.iter()
        .map(|&xi| {
            p.check_in_range(xi)?;
            if u == 0.0 {
                return Ok(0);
            }
            Ok(p.clamp_code((p.scaled(xi, u) + 0.5).floor()))
        })
        .collect()
}

/// Randomized rounding with a fresh uniform draw per coordinate.
pub fn quantize_stochastic<R: Rng + ?Sized>(
    x: &[f64],
    p: &QuantParams,
    rng: &mut R,
) -> Result<Vec<u16>> {
    let u = p.level();
    x.iter()
        .map(|&xi| {
            p.check_in_range(xi)?;
            let xi_draw: f64 = rng.random();
            if u == 0.0 {
                return Ok(0);
            }
            Ok(p.clamp_code((p.scaled(xi, u) + xi_draw).floor()))
        })
        .collect()
}

pub fn quantize<R: Rng + ?Sized>(
    x: &[f64],
    p: &QuantParams,
    rounding: Rounding,
    rng: &mut R,
) -> Result<Vec<u16>> {
    match rounding {
        Rounding::Nearest => quantize_nearest(x, p),
        Rounding::Stochastic => quantize_stochastic(x, p, rng),
    }
}

/// `code * u + lo`. The top code maps to `hi` exactly.
pub fn dequantize(codes: &[u16], p: &QuantParams) -> Result<Vec<f64>> {
    let u = p.level();
    let max = p.max_code();
    codes
        .iter()
        .map(|&c| {
            if c > max {
                Err(Error::CodeOutOfRange { code: c, max })
            } else if u == 0.0 {
                Ok(p.lo)
            } else if c == max {
                Ok(p.hi)
            } else {
                Ok(f64::from(c) * u + p.lo)
            }
        })
        .collect()
}

/// Bytes needed to hold `n` codes of `bits` bits.
pub fn packed_len(n: usize, bits: u32) -> usize {
    (n * bits as usize).div_ceil(8)
}

/// Packs codes LSB-first; unused trailing bits are zero.
pub fn pack(codes: &[u16], bits: u32) -> Result<Vec<u8>> {
    check_bits(bits)?;
    let max = max_code(bits);
    let mut out = vec![0u8; packed_len(codes.len(), bits)];
    let mut bit = 0usize;
    for &c in codes {
        if c > max {
            return Err(Error::CodeOutOfRange { code: c, max });
        }
        let mut remaining = bits as usize;
        let mut value = u32::from(c);
        while remaining > 0 {
            let byte = bit / 8;
            let offset = bit % 8;
            let take = remaining.min(8 - offset);
            out[byte] |= ((value & ((1 << take) - 1)) as u8) << offset;
            value >>= take;
            bit += take;
            remaining -= take;
        }
    }
    Ok(out)
}

/// Inverse of [`pack`] for `n` codes.
pub fn unpack(bytes: &[u8], n: usize, bits: u32) -> Result<Vec<u16>> {
    check_bits(bits)?;
    let expected = packed_len(n, bits);
    if bytes.len() != expected {
        return Err(Error::PackedLength {
            expected,
            actual: bytes.len(),
        });
    }
    let mut out = Vec::with_capacity(n);
    let mut bit = 0usize;
    for _ in 0..n {
        let mut value = 0u32;
        let mut filled = 0usize;
        while filled < bits as usize {
            let byte = bit / 8;
            let offset = bit % 8;
            let take = (bits as usize - filled).min(8 - offset);
            let chunk = (u32::from(bytes[byte]) >> offset) & ((1 << take) - 1);
            value |= chunk << filled;
            filled += take;
            bit += take;
        }
        out.push(value as u16);
    }
    Ok(out)
}

/// Largest f32-representable value `<= x`.
fn f32_floor(x: f64) -> Result<f64> {
    let y = x as f32;
    let y = if f64::from(y) > x { y.next_down() } else { y };
    if y.is_finite() {
        Ok(f64::from(y))
    } else {
        Err(Error::NonFinite { index: 0 })
    }
}

/// Smallest f32-representable value `>= x`.
fn f32_ceil(x: f64) -> Result<f64> {
    Ok(-f32_floor(-x)?)
}

/// Error-feedback vector stored as packed `b`-bit codes plus one
/// `(lo, hi)` pair per bucket of `bucket_size` coordinates.
///
/// Bucket bounds are kept as 32-bit floats, rounded outward so every stored
/// value stays inside its bucket's range.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedErrorBuffer {
    codes: Vec<u8>,
    buckets: Vec<QuantParams>,
    dim: usize,
    bits: u32,
    bucket_size: usize,
}

impl QuantizedErrorBuffer {
    /// All-zero buffer: every bucket is the degenerate range `[0, 0]`.
    pub fn zeros(dim: usize, bits: u32, bucket_size: usize) -> Result<Self> {
        check_bits(bits)?;
        if bucket_size == 0 {
            return Err(Error::Layout("bucket size must be positive".into()));
        }
        let nb = dim.div_ceil(bucket_size);
        Ok(Self {
            codes: vec![0; packed_len(dim, bits)],
            buckets: vec![
                QuantParams {
                    lo: 0.0,
                    hi: 0.0,
                    bits
                };
                nb
            ],
            dim,
            bits,
            bucket_size,
        })
    }

    /// Reassembles a buffer from its serialized parts.
    pub fn from_parts(
        codes: Vec<u8>,
        buckets: Vec<QuantParams>,
        dim: usize,
        bits: u32,
        bucket_size: usize,
    ) -> Result<Self> {
        check_bits(bits)?;
        if bucket_size == 0 || buckets.len() != dim.div_ceil(bucket_size) {
            return Err(Error::Layout(
                "bucket metadata does not match dimension".into(),
            ));
        }
        if codes.len() != packed_len(dim, bits) {
            return Err(Error::PackedLength {
                expected: packed_len(dim, bits),
                actual: codes.len(),
            });
        }
        let max = max_code(bits);
        if let Some(&code) = unpack(&codes, dim, bits)?.iter().find(|&&c| c > max) {
            return Err(Error::CodeOutOfRange { code, max });
        }
        Ok(Self {
            codes,
            buckets,
            dim,
            bits,
            bucket_size,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn bucket_size(&self) -> usize {
        self.bucket_size
    }

    pub fn buckets(&self) -> &[QuantParams] {
        &self.buckets
    }

    pub fn packed_codes(&self) -> &[u8] {
        &self.codes
    }

    /// Physical footprint: packed codes plus two 4-byte bounds per bucket.
    pub fn byte_size(&self) -> usize {
        self.codes.len() + 8 * self.buckets.len()
    }

    /// Replaces the contents with the quantized form of `x`.
    pub fn store<R: Rng + ?Sized>(
        &mut self,
        x: &[f64],
        rounding: Rounding,
        rng: &mut R,
    ) -> Result<()> {
        crate::error::check_dim(self.dim, x.len())?;
        let mut codes = Vec::with_capacity(self.dim);
        for (b, chunk) in x.chunks(self.bucket_size).enumerate() {
            let exact = quant_params(chunk, self.bits)?;
            let p = QuantParams::new(f32_floor(exact.lo)?, f32_ceil(exact.hi)?, self.bits)?;
            codes.extend(quantize(chunk, &p, rounding, rng)?);
            self.buckets[b] = p;
        }
        self.codes = pack(&codes, self.bits)?;
        Ok(())
    }

    /// Dense dequantized vector.
    pub fn decode(&self) -> Vec<f64> {
        let codes = unpack(&self.codes, self.dim, self.bits).expect("buffer length invariant");
        codes
            .chunks(self.bucket_size)
            .zip(&self.buckets)
            .flat_map(|(c, p)| dequantize(c, p).expect("codes within range"))
            .collect()
    }
}
