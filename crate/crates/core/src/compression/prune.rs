use crate::error::{Error, Result};
use crate::learner::{Mask, ParamVector};

#[derive(Debug, Clone, PartialEq)]
pub struct PruneResult {
    pub mask: Mask,
    /// Realized fraction of zeroed coordinates.
    pub delta: f64,
    /// The dense starting model restricted to the mask.
    pub winning_ticket: ParamVector,
}

/// Mask that zeros the `k` smallest-magnitude entries; equal magnitudes are
/// pruned lowest index first.
pub fn magnitude_mask(values: &[f64], k: usize) -> Mask {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].abs().total_cmp(&values[b].abs()).then(a.cmp(&b)));
    let mut mask = Mask::ones(values.len());
    for &i in order.iter().take(k) {
        mask.bits[i] = false;
    }
    mask
}

/// Prune on the magnitudes of `warmed`, then rewind to `w_dense`.
pub fn lottery_prune(
    w_dense: &ParamVector,
    warmed: &ParamVector,
    delta_target: f64,
    delta_max: f64,
) -> Result<PruneResult> {
    if !(0.0..=delta_max).contains(&delta_target) || delta_max > 1.0 {
        return Err(Error::InvalidArgument(format!(
            "pruning ratio {delta_target} outside [0, {delta_max}]"
        )));
    }
    if w_dense.len() != warmed.len() {
        return Err(Error::InvalidArgument(
            "dense and warmed models differ in length".into(),
        ));
    }
    let p = warmed.len();
    let k = ((delta_target * p as f64).floor() as usize).min(p);
    let mask = magnitude_mask(&warmed.values, k);
    let delta = mask.prune_fraction();
    let winning_ticket = w_dense.masked(&mask);
    Ok(PruneResult {
        mask,
        delta,
        winning_ticket,
    })
}

/// `‖w − w⊙m‖² / ‖w‖²`, zero for a zero vector.
pub fn pruning_error_ratio(w: &[f64], mask: &Mask) -> f64 {
    let total: f64 = w.iter().map(|v| v * v).sum();
    if total == 0.0 {
        return 0.0;
    }
    let dropped: f64 = w
        .iter()
        .zip(&mask.bits)
        .filter(|(_, &keep)| !keep)
        .map(|(v, _)| v * v)
        .sum();
    dropped / total
}
