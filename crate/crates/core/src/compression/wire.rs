//! Byte layout of an offload payload.
//!
//! ```text
//! u8      kind            0 = raw, 1 = quantized
//! u32 LE  p               parameter count
//! u32 LE  nnz             mask support size
//! [u8]    mask            ceil(p / 8) bytes, bit i of the stream = coordinate i
//! raw:
//!   f32 LE × nnz          surviving values in coordinate order
//! quantized:
//!   f32 LE  norm
//!   u32 LE  s
//!   [u8]    signs         ceil(nnz / 8) bytes, set bit = negative
//!   [u8]    levels        nnz fields of ceil(log2(s + 1)) bits, ceil(nnz * w / 8) bytes
//! ```
//!
//! Bitsets and packed fields are little-endian within the stream: field `k`
//! starts at stream bit `k * w` and bit `b` of the stream is bit `b % 8` of
//! byte `b / 8`. Values travel as `f32`, so decoding returns the payload with
//! its reals rounded to single precision. `bit_count` is not transmitted; the
//! decoder recomputes it from the accounting formula.

use super::payload::{OffloadPayload, PayloadBody, PayloadKind};
use super::quantize::QuantizedVector;
use crate::error::{Error, Result};
use crate::learner::Mask;

#[derive(Default)]
struct BitWriter {
    bytes: Vec<u8>,
    bit: usize,
}

impl BitWriter {
    fn push(&mut self, value: u64, width: u32) {
        for k in 0..width {
            if self.bit.is_multiple_of(8) {
                self.bytes.push(0);
            }
            if (value >> k) & 1 == 1 {
                *self.bytes.last_mut().expect("pushed above") |= 1 << (self.bit % 8);
            }
            self.bit += 1;
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::CorruptPayload(format!("payload truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn fields(&mut self, count: usize, width: u32) -> Result<Vec<u64>> {
        let raw = self.take((count * width as usize).div_ceil(8))?;
        Ok((0..count)
            .map(|k| {
                (0..width).fold(0u64, |acc, j| {
                    let b = k * width as usize + j as usize;
                    acc | ((((raw[b / 8] >> (b % 8)) & 1) as u64) << j)
                })
            })
            .collect())
    }
}

fn level_width(s: u32) -> u32 {
    64 - (s as u64).leading_zeros()
}

pub fn encode(payload: &OffloadPayload) -> Vec<u8> {
    let mask = &payload.mask;
    let nnz = mask.kept();
    let mut out = vec![match payload.kind() {
        PayloadKind::Raw => 0u8,
        PayloadKind::Quantized => 1,
    }];
    out.extend_from_slice(&(mask.len() as u32).to_le_bytes());
    out.extend_from_slice(&(nnz as u32).to_le_bytes());
    let mut bits = BitWriter::default();
    for &b in &mask.bits {
        bits.push(b as u64, 1);
    }
    out.extend(bits.bytes);
    match &payload.body {
        PayloadBody::Raw(v) => {
            for i in mask.support() {
                out.extend_from_slice(&(v[i] as f32).to_le_bytes());
            }
        }
        PayloadBody::Quantized(q) => {
            out.extend_from_slice(&(q.norm as f32).to_le_bytes());
            out.extend_from_slice(&q.s.to_le_bytes());
            let mut signs = BitWriter::default();
            for &neg in &q.signs {
                signs.push(neg as u64, 1);
            }
            out.extend(signs.bytes);
            let mut levels = BitWriter::default();
            let w = level_width(q.s);
            for &l in &q.levels {
                levels.push(l as u64, w);
            }
            out.extend(levels.bytes);
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<OffloadPayload> {
    let mut r = Reader { bytes, pos: 0 };
    let kind = r.take(1)?[0];
    let p = r.u32()? as usize;
    let nnz = r.u32()? as usize;
    let mask = Mask {
        bits: r.fields(p, 1)?.into_iter().map(|b| b == 1).collect(),
    };
    if mask.kept() != nnz {
        return Err(Error::CorruptPayload(format!(
            "header announces {nnz} survivors, mask has {}",
            mask.kept()
        )));
    }
    let payload = match kind {
        0 => {
            let mut v = vec![0.0; p];
            for i in mask.support().collect::<Vec<_>>() {
                v[i] = r.f32()? as f64;
            }
            OffloadPayload::raw(&v, mask)
        }
        1 => {
            let norm = r.f32()? as f64;
            let s = r.u32()?;
            if s == 0 {
                return Err(Error::CorruptPayload("zero quantization levels".into()));
            }
            let signs = r.fields(nnz, 1)?.into_iter().map(|b| b == 1).collect();
            let levels = r.fields(nnz, level_width(s))?.into_iter().map(|l| l as u32).collect();
            OffloadPayload::quantized(QuantizedVector { norm, s, signs, levels }, mask)
        }
        other => return Err(Error::CorruptPayload(format!("unknown payload kind {other}"))),
    };
    if r.pos != bytes.len() {
        return Err(Error::CorruptPayload(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    payload.decode()?;
    Ok(payload)
}
