use rand::Rng;

use crate::error::{Error, Result};
use crate::learner::Mask;

/// Stochastically quantized vector over the support of a mask.
///
/// `signs` and `levels` are listed in increasing coordinate order of the
/// mask support. A zero input is stored as norm 0 with all levels 0.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedVector {
    pub norm: f64,
    pub s: u32,
    /// `true` marks a negative coordinate.
    pub signs: Vec<bool>,
    pub levels: Vec<u32>,
}

impl QuantizedVector {
    pub fn zero(support: usize, s: u32) -> Self {
        Self {
            norm: 0.0,
            s,
            signs: vec![false; support],
            levels: vec![0; support],
        }
    }
}

/// Classical second-moment constant `min(p/s², √p/s)` of this quantizer.
pub fn variance_constant(p: usize, s: u32) -> f64 {
    let (p, s) = (p as f64, s as f64);
    (p / (s * s)).min(p.sqrt() / s)
}

pub fn quantize<R: Rng + ?Sized>(d: &[f64], mask: &Mask, s: u32, rng: &mut R) -> Result<QuantizedVector> {
    if s == 0 {
        return Err(Error::InvalidArgument("quantization levels must be positive".into()));
    }
    if d.len() != mask.len() {
        return Err(Error::InvalidArgument("vector and mask lengths differ".into()));
    }
    let support = mask.kept();
    let gathered: Vec<f64>;
    let kept: &[f64] = if support == d.len() {
        d
    } else {
        gathered = d.iter().zip(&mask.bits).filter(|(_, &b)| b).map(|(&x, _)| x).collect();
        &gathered
    };
    let norm = kept.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !norm.is_finite() {
        return Err(Error::NonFinite);
    }
    if norm == 0.0 {
        return Ok(QuantizedVector::zero(support, s));
    }
    let sf = s as f64;
    let scale = sf / norm;
    let levels = kept
        .iter()
        .map(|&x| {
            let scaled = (x.abs() * scale).min(sf);
            // `scaled` is non-negative, so truncation is the floor.
            let l = scaled as u32;
            l + u32::from(rng.random::<f64>() < scaled - l as f64)
        })
        .collect();
    let signs = kept.iter().map(|&x| x < 0.0).collect();
    Ok(QuantizedVector { norm, s, signs, levels })
}

/// Reconstruct `norm * sign * level / s` on the mask support.
pub fn decode(qv: &QuantizedVector, mask: &Mask) -> Result<Vec<f64>> {
    let support = mask.kept();
    if qv.levels.len() != support || qv.signs.len() != support {
        return Err(Error::CorruptPayload(format!(
            "quantized body has {} levels for a support of {support}",
            qv.levels.len()
        )));
    }
    if qv.s == 0 {
        return Err(Error::CorruptPayload("zero quantization levels".into()));
    }
    if let Some(&bad) = qv.levels.iter().find(|&&l| l > qv.s) {
        return Err(Error::CorruptPayload(format!("level {bad} exceeds s = {}", qv.s)));
    }
    let scale = qv.norm / qv.s as f64;
    let value = |neg: bool, l: u32| if neg { -scale * l as f64 } else { scale * l as f64 };
    if support == mask.len() {
        return Ok(qv
            .signs
            .iter()
            .zip(&qv.levels)
            .map(|(&neg, &l)| value(neg, l))
            .collect());
    }
    let mut out = vec![0.0; mask.len()];
    let slots = out.iter_mut().zip(&mask.bits).filter(|(_, &b)| b).map(|(o, _)| o);
    for ((o, &neg), &l) in slots.zip(&qv.signs).zip(&qv.levels) {
        *o = value(neg, l);
    }
    Ok(out)
}
