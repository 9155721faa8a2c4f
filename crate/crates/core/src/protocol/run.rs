use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::round::{aggregate, global_loss, local_round, Contribution, LocalPlan};
use super::{AlgorithmVariant, Environment, RunOverrides};
use crate::error::{Error, Result};
use crate::learner::{accuracy, loss_and_gradient, masked_sgd_steps, Mask, ParamVector};
use crate::metrics::{dissimilarity, local_compute_units, masked_global_grad_norm_sq};

/// Everything logged about one global round.
///
/// Per-client vectors always have one entry per client; clients that sat the
/// round out have weight zero and zero entries elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundMetrics {
    pub variant: AlgorithmVariant,
    pub seed: u64,
    pub round: usize,
    pub test_accuracy: f64,
    /// Global loss of the broadcast model on the current data.
    pub loss_before: f64,
    /// Global loss of the aggregated model on the same data.
    pub global_loss: f64,
    pub total_bits: u64,
    pub per_acv_bits: Vec<u64>,
    pub per_acv_delta: Vec<f64>,
    pub per_acv_q_raw: Vec<f64>,
    pub per_acv_shift: Vec<f64>,
    pub per_acv_dissim: Vec<f64>,
    pub alpha: Vec<f64>,
    pub w_norm_sq: f64,
    pub masked_grad_norm_sq: f64,
    pub compute_units: f64,
    pub eta: f64,
    pub eta_tilde: f64,
    pub train_samples: usize,
    pub test_samples: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub history: Vec<RoundMetrics>,
    pub final_model: ParamVector,
}

struct Diagnostics {
    loss: f64,
    grad: Vec<f64>,
    shift: f64,
}

fn diagnostics(env: &Environment, w: &ParamVector, u: usize, t: usize) -> Result<Diagnostics> {
    let curr = env.train[u].at(t);
    let (loss, grad) = loss_and_gradient(w, curr)?;
    let prev = if t == 0 { &[][..] } else { env.train[u].at(t - 1) };
    let shift = if prev.is_empty() {
        0.0
    } else {
        let (_, g) = loss_and_gradient(w, prev)?;
        g.iter().zip(&grad).map(|(a, b)| (a - b) * (a - b)).sum()
    };
    Ok(Diagnostics { loss, grad, shift })
}

/// Runs every round of `variant` in `env`. All variants built from the same
/// environment share data, initial model, and pruning-ratio draws.
pub fn run_experiment(variant: AlgorithmVariant, env: &Environment, overrides: &RunOverrides) -> Result<RunOutput> {
    let seed = env.streams.master();
    let wrap = |round: usize| {
        move |e: Error| Error::Run {
            variant: variant.name().to_string(),
            seed,
            round,
            source: Box::new(e),
        }
    };
    let n = env.clients();
    let sgd = env.sgd;
    let mut w = env.init.clone();
    let mut history = Vec::with_capacity(env.rounds);
    for t in 0..env.rounds {
        let participants: Vec<usize> = (0..n).filter(|&u| !env.train[u].at(t).is_empty()).collect();
        if participants.is_empty() {
            return Err(wrap(t)(Error::InvalidArgument("no client holds any data".into())));
        }
        let mut alpha = vec![0.0; n];
        for &u in &participants {
            alpha[u] = 1.0 / participants.len() as f64;
        }
        let eta = sgd.global_lr.at(t);
        let eta_tilde = sgd.local_lr.at(t);

        let diags: Vec<Diagnostics> = participants
            .par_iter()
            .map(|&u| diagnostics(env, &w, u, t))
            .collect::<Result<_>>()
            .map_err(wrap(t))?;

        let mut per_acv_bits = vec![0u64; n];
        let mut per_acv_delta = vec![0.0; n];
        let mut per_acv_q_raw = vec![0.0; n];
        let masks: Vec<Mask>;
        let compute_units;
        let next = if variant.is_federated() {
            let plans: Vec<LocalPlan> = participants
                .iter()
                .map(|&u| {
                    let drawn = env
                        .streams
                        .rng("delta", &[u as u64, t as u64])
                        .random_range(env.delta_range.0..=env.delta_range.1);
                    let delta_target = if variant.prunes() {
                        overrides.delta.unwrap_or(drawn)
                    } else {
                        0.0
                    };
                    LocalPlan {
                        variant,
                        round: t,
                        acv: u,
                        delta_target,
                        delta_max: env.delta_range.1.max(delta_target),
                        q_raw: overrides.q_raw,
                        levels: env.levels,
                        eta_tilde,
                        sgd,
                        unit_cost: env.unit_cost,
                    }
                })
                .collect();
            let results: Vec<_> = plans
                .par_iter()
                .map(|p| local_round(&w, env.train[p.acv].at(t), p, &env.streams))
                .collect::<Result<_>>()
                .map_err(wrap(t))?;
            let contributions: Vec<Contribution<'_>> = results
                .iter()
                .map(|(payload, s)| Contribution {
                    acv: s.acv,
                    alpha: alpha[s.acv],
                    payload,
                })
                .collect();
            let next = aggregate(&w, &contributions, eta).map_err(wrap(t))?;
            for (_, s) in &results {
                per_acv_bits[s.acv] = s.bits;
                per_acv_delta[s.acv] = s.delta;
                per_acv_q_raw[s.acv] = s.q_raw;
            }
            compute_units = results.iter().map(|(_, s)| s.compute_units).sum::<f64>() / results.len() as f64;
            masks = results.into_iter().map(|(p, _)| p.mask).collect();
            next
        } else {
            let mut rng = env.streams.rng("centralized", &[t as u64]);
            let ones = Mask::ones(w.len());
            let out = masked_sgd_steps(
                &w,
                &ones,
                sgd.steps(sgd.kappa),
                eta_tilde,
                env.pooled_train.at(t),
                sgd.batch_size,
                &mut rng,
            )
            .map_err(wrap(t))?;
            compute_units = local_compute_units(variant.compute_rule(), 0.0, sgd.kappa, sgd.rho, env.unit_cost);
            masks = vec![ones; participants.len()];
            out.params
        };

        let grads: Vec<Vec<f64>> = diags.iter().map(|d| d.grad.clone()).collect();
        let part_alpha: Vec<f64> = participants.iter().map(|&u| alpha[u]).collect();
        let mask_refs: Vec<&Mask> = masks.iter().collect();
        let mut per_acv_shift = vec![0.0; n];
        let mut per_acv_dissim = vec![0.0; n];
        for ((&u, d), e) in participants.iter().zip(&diags).zip(dissimilarity(&grads, &part_alpha)) {
            per_acv_shift[u] = d.shift;
            per_acv_dissim[u] = e;
        }
        let datasets: Vec<&[_]> = participants.iter().map(|&u| env.train[u].at(t)).collect();
        let after = global_loss(&next, &datasets, &part_alpha).map_err(wrap(t))?;
        let test = env.test.at(t);
        history.push(RoundMetrics {
            variant,
            seed,
            round: t,
            test_accuracy: accuracy(&next, test),
            loss_before: diags.iter().zip(&part_alpha).map(|(d, a)| a * d.loss).sum(),
            global_loss: after,
            total_bits: per_acv_bits.iter().sum(),
            per_acv_bits,
            per_acv_delta,
            per_acv_q_raw,
            per_acv_shift,
            per_acv_dissim,
            alpha,
            w_norm_sq: w.norm_sq(),
            masked_grad_norm_sq: masked_global_grad_norm_sq(&grads, &mask_refs, &part_alpha),
            compute_units,
            eta,
            eta_tilde,
            train_samples: env.pooled_train.at(t).len(),
            test_samples: test.len(),
        });
        w = next;
    }
    Ok(RunOutput {
        history,
        final_model: w,
    })
}

#[cfg(test)]
mod tests {
    use super::super::tests::tiny_env;
    use super::*;

    fn comparable(h: &[RoundMetrics]) -> Vec<RoundMetrics> {
        h.iter()
            .map(|m| RoundMetrics {
                variant: AlgorithmVariant::Afl,
                compute_units: 0.0,
                ..m.clone()
            })
            .collect()
    }

    #[test]
    fn zero_rounds_give_empty_history() {
        let env = tiny_env(1, 0);
        let out = run_experiment(AlgorithmVariant::TwoCeoAfl, &env, &RunOverrides::default()).unwrap();
        assert!(out.history.is_empty());
        assert_eq!(out.final_model, env.init);
    }

    #[test]
    fn degenerate_settings_reproduce_baselines() {
        let env = tiny_env(2, 6);
        let run = |v, o: RunOverrides| run_experiment(v, &env, &o).unwrap().history;
        let afl = run(AlgorithmVariant::Afl, RunOverrides::default());
        let ours = run(
            AlgorithmVariant::TwoCeoAfl,
            RunOverrides {
                delta: Some(0.0),
                q_raw: Some(1.0),
            },
        );
        assert_eq!(comparable(&afl), comparable(&ours));
        let quant = run(AlgorithmVariant::AflQuant, RunOverrides::default());
        let ours = run(
            AlgorithmVariant::TwoCeoAfl,
            RunOverrides {
                delta: Some(0.0),
                q_raw: Some(0.0),
            },
        );
        assert_eq!(comparable(&quant), comparable(&ours));
        let prune = run(AlgorithmVariant::AflPrune, RunOverrides::default());
        let ours = run(
            AlgorithmVariant::TwoCeoAfl,
            RunOverrides {
                delta: None,
                q_raw: Some(1.0),
            },
        );
        assert_eq!(comparable(&prune), comparable(&ours));
    }

    #[test]
    fn runs_are_deterministic_across_thread_counts() {
        let env = tiny_env(4, 5);
        let go = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| run_experiment(AlgorithmVariant::TwoCeoAfl, &env, &RunOverrides::default()).unwrap())
        };
        let a = go(1);
        let b = go(4);
        assert_eq!(a.history, b.history);
        assert_eq!(a.final_model, b.final_model);
    }

    #[test]
    fn metrics_are_consistent() {
        let env = tiny_env(6, 5);
        for v in AlgorithmVariant::ALL {
            let h = run_experiment(v, &env, &RunOverrides::default()).unwrap().history;
            assert_eq!(h.len(), 5);
            for m in &h {
                assert!((m.alpha.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert_eq!(m.total_bits, m.per_acv_bits.iter().sum::<u64>());
                assert!((0.0..=1.0).contains(&m.test_accuracy));
                assert!(m.loss_before.is_finite() && m.global_loss.is_finite());
            }
            assert!(h[0].per_acv_shift.iter().all(|&s| s == 0.0));
            match v {
                AlgorithmVariant::CentralizedSgd => assert!(h.iter().all(|m| m.total_bits == 0)),
                AlgorithmVariant::Afl => assert!(h.iter().all(|m| m.compute_units == 3.0)),
                _ => assert!(h.iter().all(|m| m.total_bits > 0)),
            }
        }
        let ours = run_experiment(AlgorithmVariant::TwoCeoAfl, &env, &RunOverrides::default())
            .unwrap()
            .history;
        let afl = run_experiment(AlgorithmVariant::Afl, &env, &RunOverrides::default())
            .unwrap()
            .history;
        for (a, b) in ours.iter().zip(&afl) {
            assert!(a.total_bits <= b.total_bits);
        }
    }
}
