use super::AlgorithmVariant;
use crate::compression::{lottery_prune, offload, OffloadPayload, PayloadKind};
use crate::datagen::Sample;
use crate::error::{Error, Result};
use crate::learner::{forward_loss, masked_sgd_steps, model_difference, Mask, ParamVector, SgdConfig};
use crate::metrics::local_compute_units;
use crate::rng::Streams;

/// What one client does in one round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalPlan {
    pub variant: AlgorithmVariant,
    pub round: usize,
    pub acv: usize,
    /// Requested pruning ratio; ignored by variants that do not prune.
    pub delta_target: f64,
    pub delta_max: f64,
    /// Raw-offload probability; `None` uses the realized pruning ratio.
    pub q_raw: Option<f64>,
    pub levels: u32,
    pub eta_tilde: f64,
    pub sgd: SgdConfig,
    pub unit_cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalStats {
    pub acv: usize,
    pub delta: f64,
    pub q_raw: f64,
    pub kind: PayloadKind,
    pub bits: u64,
    pub batch_losses: Vec<f64>,
    pub compute_units: f64,
}

/// Warm-up, pruning, masked training and offload for one client.
///
/// The warm-up, training and offload draws come from separate substreams
/// keyed by `(acv, round)`, so skipping the warm-up leaves the other draws
/// untouched.
pub fn local_round(
    w_global: &ParamVector,
    samples: &[Sample],
    plan: &LocalPlan,
    streams: &Streams,
) -> Result<(OffloadPayload, LocalStats)> {
    if !plan.variant.is_federated() {
        return Err(Error::InvalidArgument("centralized SGD has no client round".into()));
    }
    if samples.is_empty() {
        return Err(Error::InvalidArgument(format!("client {} has no data", plan.acv)));
    }
    let label = [plan.acv as u64, plan.round as u64];
    let sgd = &plan.sgd;
    let (mask, start, delta) = if plan.variant.prunes() {
        let mut rng = streams.rng("warmup", &label);
        let ones = Mask::ones(w_global.len());
        let warm = masked_sgd_steps(
            w_global,
            &ones,
            sgd.steps(sgd.rho),
            plan.eta_tilde,
            samples,
            sgd.batch_size,
            &mut rng,
        )?;
        let pr = lottery_prune(w_global, &warm.params, plan.delta_target, plan.delta_max)?;
        (pr.mask, pr.winning_ticket, pr.delta)
    } else {
        (Mask::ones(w_global.len()), w_global.clone(), 0.0)
    };
    let mut rng = streams.rng("train", &label);
    let out = masked_sgd_steps(
        &start,
        &mask,
        sgd.steps(sgd.kappa),
        plan.eta_tilde,
        samples,
        sgd.batch_size,
        &mut rng,
    )?;
    let d = model_difference(&start, &out.params, plan.eta_tilde)?;
    let q_raw = match plan.variant {
        AlgorithmVariant::Afl | AlgorithmVariant::AflPrune => 1.0,
        AlgorithmVariant::AflQuant => 0.0,
        _ => plan.q_raw.unwrap_or(delta),
    };
    let payload = offload(&d, &mask, q_raw, plan.levels, &mut streams.rng("offload", &label))?;
    let stats = LocalStats {
        acv: plan.acv,
        delta,
        q_raw,
        kind: payload.kind(),
        bits: payload.bit_count,
        batch_losses: out.batch_losses,
        compute_units: local_compute_units(plan.variant.compute_rule(), delta, sgd.kappa, sgd.rho, plan.unit_cost),
    };
    Ok((payload, stats))
}

/// One client's share of the global update.
#[derive(Debug, Clone, Copy)]
pub struct Contribution<'a> {
    pub acv: usize,
    pub alpha: f64,
    pub payload: &'a OffloadPayload,
}

/// `w − η Σ_u α_u decode(payload_u)`, summed in client-id order.
pub fn aggregate(w_global: &ParamVector, contributions: &[Contribution<'_>], eta: f64) -> Result<ParamVector> {
    let mut sorted: Vec<&Contribution<'_>> = contributions.iter().collect();
    sorted.sort_by_key(|c| c.acv);
    let mut step = vec![0.0; w_global.len()];
    for c in sorted {
        let d = c.payload.decode()?;
        if d.len() != step.len() {
            return Err(Error::CorruptPayload(format!(
                "client {} sent {} values, expected {}",
                c.acv,
                d.len(),
                step.len()
            )));
        }
        for (s, v) in step.iter_mut().zip(&d) {
            *s += c.alpha * v;
        }
    }
    let values = w_global.values.iter().zip(&step).map(|(w, s)| w - eta * s).collect();
    let next = ParamVector::from_values(w_global.arch, values)?;
    if !next.is_finite() {
        return Err(Error::NonFinite);
    }
    Ok(next)
}

/// `Σ_u α_u f(w | D_u)`.
pub fn global_loss(w: &ParamVector, datasets: &[&[Sample]], alpha: &[f64]) -> Result<f64> {
    if datasets.len() != alpha.len() {
        return Err(Error::InvalidArgument("one weight per dataset required".into()));
    }
    let mut total = 0.0;
    for (d, &a) in datasets.iter().zip(alpha) {
        if a != 0.0 {
            total += a * forward_loss(w, d)?;
        }
    }
    Ok(total)
}
