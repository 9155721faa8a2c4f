use serde::Serialize;

use crate::error::{Error, Result};

/// Quantization penalty coefficient for raw-offload probability `q_raw`.
pub fn c_u(q: f64, q_raw: f64) -> f64 {
    2.0 + 2.0 * q + (4.0 + q) * q_raw * q_raw - (3.0 * q + 4.0) * q_raw
}

/// Admissible learning rates and whether each round's configured pair obeys them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LrGuard {
    pub eta_max: f64,
    pub eta_tilde_max: f64,
    pub satisfied: Vec<bool>,
}

impl LrGuard {
    pub fn all_satisfied(&self) -> bool {
        self.satisfied.iter().all(|&s| s)
    }
}

/// `η ≤ 1/(βκ(2+q))` and `η̃ < min(1/(2√2 βκ), 1/(2√(2ρ1) βκ))`, checked per round.
pub fn learning_rate_guard(beta: f64, kappa: usize, q: f64, rho1: f64, eta: &[f64], eta_tilde: &[f64]) -> LrGuard {
    let bk = beta * kappa as f64;
    let eta_max = 1.0 / (bk * (2.0 + q));
    let a = 1.0 / (2.0 * 2f64.sqrt() * bk);
    let b = 1.0 / (2.0 * (2.0 * rho1).sqrt() * bk);
    let eta_tilde_max = a.min(b);
    let satisfied = eta
        .iter()
        .zip(eta_tilde)
        .map(|(&e, &et)| e <= eta_max && et < eta_tilde_max)
        .collect();
    LrGuard {
        eta_max,
        eta_tilde_max,
        satisfied,
    }
}

/// Per-round quantities, one entry per participating client in each vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundBoundInputs {
    pub eta: f64,
    pub eta_tilde: f64,
    pub alpha: Vec<f64>,
    pub delta: Vec<f64>,
    pub q_raw: Vec<f64>,
    pub shift: Vec<f64>,
    pub dissim: Vec<f64>,
    pub w_norm_sq: Vec<f64>,
}

/// Constants shared by every round plus the per-round trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundInputs {
    pub beta: f64,
    pub sigma2: f64,
    pub q: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub kappa: usize,
    pub rounds: Vec<RoundBoundInputs>,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.beta > 0.0) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if !(self.sigma2 >= 0.0) || !(self.q >= 0.0) || !(self.rho2 >= 0.0) {
            return bad("sigma2, q and rho2 must be nonnegative".into());
        }
        if !(self.rho1 >= 1.0) {
            return bad(format!("rho1 must be at least 1, got {}", self.rho1));
        }
        if self.kappa == 0 {
            return bad("kappa must be at least 1".into());
        }
        for (t, r) in self.rounds.iter().enumerate() {
            let n = r.alpha.len();
            if [
                r.delta.len(),
                r.q_raw.len(),
                r.shift.len(),
                r.dissim.len(),
                r.w_norm_sq.len(),
            ]
            .iter()
            .any(|&l| l != n)
            {
                return bad(format!("round {t}: per-client vectors differ in length"));
            }
            if !(r.eta > 0.0) {
                return bad(format!("round {t}: eta must be positive"));
            }
            if r.q_raw.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
                return bad(format!("round {t}: raw-offload probability outside [0, 1]"));
            }
            if t == 0 && r.shift.iter().any(|&x| x != 0.0) {
                return bad("shift must be zero in the first round".into());
            }
        }
        Ok(())
    }
}

/// The five labelled contributions of one round (or their time average).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct BoundBreakdown {
    pub descent: f64,
    pub sg_quant: f64,
    pub shift: f64,
    pub dissim: f64,
    pub prune: f64,
    pub total: f64,
}

impl BoundBreakdown {
    fn new(descent: f64, sg_quant: f64, shift: f64, dissim: f64, prune: f64) -> Self {
        Self {
            descent,
            sg_quant,
            shift,
            dissim,
            prune,
            total: descent + sg_quant + shift + dissim + prune,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub per_round: Vec<BoundBreakdown>,
    pub average: BoundBreakdown,
    pub guard: LrGuard,
}

fn weighted(alpha: &[f64], x: &[f64]) -> f64 {
    alpha.iter().zip(x).map(|(a, b)| a * b).sum()
}

/// Evaluates the right-hand side round by round.
///
/// `loss_trace[t]` is the global loss at the start of round `t`, so it has
/// one more entry than there are rounds. The average is the plain mean of
/// the per-round breakdowns. A violated learning-rate guard is recorded in
/// the report and does not stop the evaluation.
pub fn evaluate_bound(inputs: &BoundInputs, loss_trace: &[f64]) -> Result<BoundReport> {
    inputs.validate()?;
    if loss_trace.len() != inputs.rounds.len() + 1 {
        return Err(Error::InvalidArgument(format!(
            "loss trace has {} entries for {} rounds",
            loss_trace.len(),
            inputs.rounds.len()
        )));
    }
    let (beta, kappa) = (inputs.beta, inputs.kappa as f64);
    let per_round: Vec<BoundBreakdown> = inputs
        .rounds
        .iter()
        .enumerate()
        .map(|(t, r)| {
            let et2 = r.eta_tilde * r.eta_tilde;
            let descent = 2.0 * (loss_trace[t] - loss_trace[t + 1]) / (r.eta * kappa);
            let cu: f64 = r
                .alpha
                .iter()
                .zip(&r.q_raw)
                .map(|(a, &m)| a * a * c_u(inputs.q, m))
                .sum();
            let sg_quant = beta * inputs.sigma2 * (kappa * r.eta * cu + 2.0 * beta * kappa * et2);
            let common = beta * beta * kappa * kappa * et2;
            let shift = 16.0 * common * weighted(&r.alpha, &r.shift);
            let dissim = 8.0 * inputs.rho2 * common * weighted(&r.alpha, &r.dissim);
            let dw: Vec<f64> = r.delta.iter().zip(&r.w_norm_sq).map(|(d, w)| d * w).collect();
            let prune = 2.0 * beta * beta * weighted(&r.alpha, &dw);
            BoundBreakdown::new(descent, sg_quant, shift, dissim, prune)
        })
        .collect();
    let n = per_round.len().max(1) as f64;
    let mean = |f: fn(&BoundBreakdown) -> f64| per_round.iter().map(f).sum::<f64>() / n;
    let average = BoundBreakdown::new(
        mean(|b| b.descent),
        mean(|b| b.sg_quant),
        mean(|b| b.shift),
        mean(|b| b.dissim),
        mean(|b| b.prune),
    );
    let etas: Vec<f64> = inputs.rounds.iter().map(|r| r.eta).collect();
    let etts: Vec<f64> = inputs.rounds.iter().map(|r| r.eta_tilde).collect();
    let guard = learning_rate_guard(beta, inputs.kappa, inputs.q, inputs.rho1, &etas, &etts);
    Ok(BoundReport {
        per_round,
        average,
        guard,
    })
}
