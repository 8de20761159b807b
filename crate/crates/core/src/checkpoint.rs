//! Binary snapshot of the practical engine's state.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic "MADM" | version u8
//! dim u64 | step u64 | params f64 x dim
//! capacity u32 | row_width u32 | head u32 | filled u32
//! filled x (stamp u64 | indices u32 x row_width | values f64 x row_width)
//! error kind u8
//!   1 (quantized): bits u8 | rounding u8 | bucket_size u32 | n_buckets u32
//!                  | n_buckets x (lo f32 | hi f32) | code bytes u64 | codes
//!   2 (dense):     f64 x dim
//! ```

use crate::error::{Error, Result};
use crate::optim::ErrorStore;
use crate::quantize::{QuantParams, QuantizedErrorBuffer, Rounding};
use crate::window::{GradientWindow, WindowRow};

pub const MAGIC: [u8; 4] = *b"MADM";
pub const VERSION: u8 = 1;

const KIND_QUANTIZED: u8 = 1;
const KIND_DENSE: u8 = 2;

/// Parameters plus the engine state needed to resume.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub params: Vec<f64>,
    pub window: GradientWindow,
    pub error: ErrorStore,
}

pub fn encode(snap: &Snapshot) -> Result<Vec<u8>> {
    let dim = snap.params.len();
    if snap.window.dim() != dim || snap.error.dim() != dim {
        return Err(Error::Checkpoint("state dimensions disagree".into()));
    }
    let to_u32 = |x: usize| {
        u32::try_from(x).map_err(|_| Error::Checkpoint(format!("{x} does not fit in u32")))
    };
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(dim as u64).to_le_bytes());
    out.extend_from_slice(&snap.window.step().to_le_bytes());
    for p in &snap.params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    let w = &snap.window;
    for x in [w.capacity(), w.row_width(), w.head(), w.filled()] {
        out.extend_from_slice(&to_u32(x)?.to_le_bytes());
    }
    for row in w.rows() {
        out.extend_from_slice(&row.stamp.to_le_bytes());
        for i in &row.indices {
            out.extend_from_slice(&i.to_le_bytes());
        }
        for v in &row.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    match &snap.error {
        ErrorStore::Quantized { buffer, rounding } => {
            out.push(KIND_QUANTIZED);
            out.push(buffer.bits() as u8);
            out.push(match rounding {
                Rounding::Nearest => 0,
                Rounding::Stochastic => 1,
            });
            out.extend_from_slice(&to_u32(buffer.bucket_size())?.to_le_bytes());
            out.extend_from_slice(&to_u32(buffer.buckets().len())?.to_le_bytes());
            for b in buffer.buckets() {
                for bound in [b.lo, b.hi] {
                    let narrow = bound as f32;
                    if f64::from(narrow) != bound {
                        return Err(Error::Checkpoint(format!(
                            "bucket bound {bound} is not a 32-bit float"
                        )));
                    }
                    out.extend_from_slice(&narrow.to_le_bytes());
                }
            }
            let codes = buffer.packed_codes();
            out.extend_from_slice(&(codes.len() as u64).to_le_bytes());
            out.extend_from_slice(codes);
        }
        ErrorStore::Dense(e) => {
            out.push(KIND_DENSE);
            for v in e {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn len(&mut self, n: u64) -> Result<usize> {
        let n = usize::try_from(n).map_err(|_| Error::Checkpoint("length overflow".into()))?;
        // every counted element takes at least one byte
        if n > self.bytes.len() - self.pos {
            return Err(Error::Checkpoint(format!("length {n} exceeds input")));
        }
        Ok(n)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

pub fn decode(bytes: &[u8]) -> Result<Snapshot> {
    let mut r = Reader { bytes, pos: 0 };
    if r.array::<4>()? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let dim = r.u64()?;
    let dim = r.len(dim)?;
    let step = r.u64()?;
    let params = r.f64s(dim)?;

    let capacity = r.u32()? as usize;
    let row_width = r.u32()? as usize;
    let head = r.u32()? as usize;
    let filled = r.u32()? as usize;
    let filled = r.len(filled as u64)?;
    let mut rows = Vec::with_capacity(filled);
    for _ in 0..filled {
        let stamp = r.u64()?;
        let indices = (0..row_width).map(|_| r.u32()).collect::<Result<_>>()?;
        let values = r.f64s(row_width)?;
        rows.push(WindowRow {
            stamp,
            indices,
            values,
        });
    }
    let window = GradientWindow::from_rows(dim, capacity, row_width, head, step, rows)?;

    let error = match r.u8()? {
        KIND_QUANTIZED => {
            let bits = u32::from(r.u8()?);
            let rounding = match r.u8()? {
                0 => Rounding::Nearest,
                1 => Rounding::Stochastic,
                other => return Err(Error::Checkpoint(format!("unknown rounding {other}"))),
            };
            let bucket_size = r.u32()? as usize;
            let n_buckets = r.u32()?;
            let n_buckets = r.len(u64::from(n_buckets))?;
            let mut buckets = Vec::with_capacity(n_buckets);
            for _ in 0..n_buckets {
                let lo = f64::from(r.f32()?);
                let hi = f64::from(r.f32()?);
                buckets.push(QuantParams::new(lo, hi, bits)?);
            }
            let n_codes = r.u64()?;
            let n_codes = r.len(n_codes)?;
            let codes = r.take(n_codes)?.to_vec();
            ErrorStore::Quantized {
                buffer: QuantizedErrorBuffer::from_parts(codes, buckets, dim, bits, bucket_size)?,
                rounding,
            }
        }
        KIND_DENSE => ErrorStore::Dense(r.f64s(dim)?),
        other => return Err(Error::Checkpoint(format!("unknown error kind {other}"))),
    };
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(Snapshot {
        params,
        window,
        error,
    })
}
