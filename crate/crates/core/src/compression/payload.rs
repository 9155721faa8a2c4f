use rand::Rng;
use serde::{Deserialize, Serialize};

use super::quantize::{decode, quantize, QuantizedVector};
use crate::error::{Error, Result};
use crate::learner::Mask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PayloadKind {
    Raw,
    Quantized,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PayloadBody {
    /// Full-length vector, zero outside the mask.
    Raw(Vec<f64>),
    Quantized(QuantizedVector),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OffloadPayload {
    pub body: PayloadBody,
    pub mask: Mask,
    pub bit_count: u64,
}

impl OffloadPayload {
    pub fn raw(d: &[f64], mask: Mask) -> Self {
        let mut v = d.to_vec();
        mask.apply(&mut v);
        let bit_count = payload_bits_nnz(PayloadKind::Raw, mask.len(), mask.kept(), 1);
        Self {
            body: PayloadBody::Raw(v),
            mask,
            bit_count,
        }
    }

    pub fn quantized(qv: QuantizedVector, mask: Mask) -> Self {
        let bit_count = payload_bits_nnz(PayloadKind::Quantized, mask.len(), mask.kept(), qv.s);
        Self {
            body: PayloadBody::Quantized(qv),
            mask,
            bit_count,
        }
    }

    pub fn kind(&self) -> PayloadKind {
        match self.body {
            PayloadBody::Raw(_) => PayloadKind::Raw,
            PayloadBody::Quantized(_) => PayloadKind::Quantized,
        }
    }

    pub fn decode(&self) -> Result<Vec<f64>> {
        match &self.body {
            PayloadBody::Raw(v) => {
                if v.len() != self.mask.len() {
                    return Err(Error::CorruptPayload("raw body length differs from mask".into()));
                }
                Ok(v.clone())
            }
            PayloadBody::Quantized(q) => decode(q, &self.mask),
        }
    }
}

/// Smallest `b` with `2^b >= s`.
pub fn ceil_log2(s: u32) -> u32 {
    if s <= 1 {
        0
    } else {
        32 - (s - 1).leading_zeros()
    }
}

/// Uplink size for `nnz` surviving coordinates out of `p`.
///
/// Raw: 33 bits per survivor (sign and 32-bit value) plus the `p`-bit mask.
/// Quantized: `1 + ceil(log2 s)` bits per survivor, a 32-bit norm and the mask.
pub fn payload_bits_nnz(kind: PayloadKind, p: usize, nnz: usize, s: u32) -> u64 {
    let (p, nnz) = (p as u64, nnz as u64);
    match kind {
        PayloadKind::Raw => nnz * 33 + p,
        PayloadKind::Quantized => nnz * (1 + ceil_log2(s) as u64) + 32 + p,
    }
}

/// [`payload_bits_nnz`] with the survivor count `p − ⌊δp⌋`.
pub fn payload_bits(kind: PayloadKind, p: usize, delta: f64, s: u32) -> u64 {
    let pruned = ((delta * p as f64) * (1.0 + 1e-12)).floor().clamp(0.0, p as f64) as usize;
    payload_bits_nnz(kind, p, p - pruned, s)
}

/// Send `d` raw with probability `q_raw`, quantized otherwise.
pub fn offload<R: Rng + ?Sized>(d: &[f64], mask: &Mask, q_raw: f64, s: u32, rng: &mut R) -> Result<OffloadPayload> {
    if !(0.0..=1.0).contains(&q_raw) {
        return Err(Error::InvalidArgument(format!(
            "raw-offload probability {q_raw} outside [0, 1]"
        )));
    }
    if rng.random::<f64>() < q_raw {
        if d.len() != mask.len() {
            return Err(Error::InvalidArgument("vector and mask lengths differ".into()));
        }
        Ok(OffloadPayload::raw(d, mask.clone()))
    } else {
        let qv = quantize(d, mask, s, rng)?;
        Ok(OffloadPayload::quantized(qv, mask.clone()))
    }
}
