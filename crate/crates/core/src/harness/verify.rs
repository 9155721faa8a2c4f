use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::build::build_setup;
use super::config::ExperimentConfig;
use crate::compression::{
    decode, lottery_prune, offload, pruning_error_ratio, quantize, variance_constant, OffloadPayload,
};
use crate::error::Result;
use crate::learner::{forward_loss, gradient, Architecture, Mask, ParamVector};
use crate::protocol::{run_experiment, AlgorithmVariant, RoundMetrics, RunOverrides};
use crate::rng::{seeded, Streams};
use crate::trajectory::{check_feasibility, oracle_instance, oracle_solve, solve, OracleInstanceSpec};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteResult {
    pub suite: String,
    pub passed: bool,
    pub detail: String,
}

impl SuiteResult {
    fn new(suite: &str, passed: bool, detail: String) -> Self {
        Self {
            suite: suite.into(),
            passed,
            detail,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct VerifyReport {
    pub suites: Vec<SuiteResult>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.suites {
            writeln!(
                f,
                "{} {:<22} {}",
                if s.passed { "PASS" } else { "FAIL" },
                s.suite,
                s.detail
            )?;
        }
        Ok(())
    }
}

fn gaussian_vec<R: Rng + ?Sized>(p: usize, rng: &mut R) -> Vec<f64> {
    (0..p).map(|_| StandardNormal.sample(rng)).collect()
}

/// Per-coordinate empirical means of the decoded quantizer against the input.
///
/// Standard errors come from the exact two-point law of each coordinate.
/// Returns the largest standardized deviation seen and the number of
/// coordinates beyond `z_max` standard errors. Coordinates the quantizer
/// reproduces exactly have zero spread and must match exactly.
pub fn quantizer_bias(p: usize, s: u32, vectors: usize, draws: usize, z_max: f64, seed: u64) -> Result<(f64, usize)> {
    let streams = Streams::new(seed);
    let mask = Mask::ones(p);
    let mut worst = 0.0f64;
    let mut violations = 0usize;
    for v in 0..vectors as u64 {
        let d = gaussian_vec(p, &mut streams.rng("vector", &[v]));
        let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut sum = vec![0.0; p];
        let mut rng = streams.rng("quantize", &[v]);
        for _ in 0..draws {
            let qv = quantize(&d, &mask, s, &mut rng)?;
            for (acc, x) in sum.iter_mut().zip(decode(&qv, &mask)?) {
                *acc += x;
            }
        }
        let n = draws as f64;
        let step = norm / s as f64;
        for i in 0..p {
            let mean = sum[i] / n;
            let r = d[i].abs() / step;
            let frac = r - r.floor();
            let se = step * (frac * (1.0 - frac) / n).sqrt();
            let dev = (mean - d[i]).abs();
            let z = if se > 0.0 {
                dev / se
            } else if dev <= 1e-12 * d[i].abs().max(1.0) {
                0.0
            } else {
                f64::INFINITY
            };
            worst = worst.max(z);
            if z > z_max {
                violations += 1;
            }
        }
    }
    Ok((worst, violations))
}

/// Largest measured `E‖Q(d) − d‖² / ‖d‖²` over random vectors, and the bound it is held to.
pub fn quantizer_variance(p: usize, s: u32, vectors: usize, draws: usize, seed: u64) -> Result<(f64, f64)> {
    let streams = Streams::new(seed);
    let mask = Mask::ones(p);
    let mut worst = 0.0f64;
    for v in 0..vectors as u64 {
        let d = gaussian_vec(p, &mut streams.rng("vector", &[v]));
        let norm_sq: f64 = d.iter().map(|x| x * x).sum();
        let mut rng = streams.rng("quantize", &[v]);
        let mut total = 0.0;
        for _ in 0..draws {
            let q = decode(&quantize(&d, &mask, s, &mut rng)?, &mask)?;
            total += q.iter().zip(&d).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        worst = worst.max(total / draws as f64 / norm_sq);
    }
    Ok((worst, variance_constant(p, s)))
}

/// Counts pairs `(w, δ)` for which `prune` violates `‖w − w⊙m‖² ≤ δ‖w‖²`.
pub fn pruning_violations<F>(pairs: usize, seed: u64, prune: F) -> Result<usize>
where
    F: Fn(&ParamVector, f64) -> Result<Mask>,
{
    let mut rng = seeded(seed);
    let mut bad = 0;
    for _ in 0..pairs {
        let arch = Architecture::new(rng.random_range(1..8), rng.random_range(1..8), rng.random_range(2..5));
        let scale: f64 = rng.random_range(0.01..10.0);
        let values = (0..arch.param_count())
            .map(|_| scale * rng.random::<f64>() * if rng.random() { 1.0 } else { -1.0 })
            .collect();
        let w = ParamVector::from_values(arch, values)?;
        let delta: f64 = rng.random_range(0.0..1.0);
        let mask = prune(&w, delta)?;
        if pruning_error_ratio(&w.values, &mask) > delta {
            bad += 1;
        }
    }
    Ok(bad)
}

/// The library's pruning step applied to `w` itself.
pub fn library_prune(w: &ParamVector, delta: f64) -> Result<Mask> {
    Ok(lottery_prune(w, w, delta, 1.0)?.mask)
}

/// Counts payloads whose decoded values leave the mask support.
pub fn mask_closure_violations<F>(cases: usize, seed: u64, send: F) -> Result<usize>
where
    F: Fn(&[f64], &Mask, f64, &mut dyn rand::RngCore) -> Result<OffloadPayload>,
{
    let mut rng = seeded(seed);
    let mut bad = 0;
    for _ in 0..cases {
        let p = rng.random_range(1..200);
        let d = gaussian_vec(p, &mut rng);
        let bits = (0..p).map(|_| rng.random_bool(0.6)).collect();
        let mask = Mask { bits };
        let q_raw = if rng.random() { 1.0 } else { 0.0 };
        let payload = send(&d, &mask, q_raw, &mut rng)?;
        let out = payload.decode()?;
        if out.iter().zip(&mask.bits).any(|(&v, &keep)| !keep && v != 0.0) {
            bad += 1;
        }
    }
    Ok(bad)
}

/// The library's offload step.
pub fn library_offload(d: &[f64], mask: &Mask, q_raw: f64, rng: &mut dyn rand::RngCore) -> Result<OffloadPayload> {
    offload(d, mask, q_raw, 3, rng)
}

/// Oracle comparison over `instances` small problems: returns the number of
/// infeasible SCA answers and the worst relative shortfall against the oracle.
pub fn oracle_gap(instances: u64) -> Result<(usize, f64)> {
    let mut infeasible = 0;
    let mut worst = f64::NEG_INFINITY;
    for seed in 0..instances {
        let spec = OracleInstanceSpec {
            rounds: 2 + (seed % 3) as usize,
            clusters: 1 + (seed % 2) as usize,
            grid: 9,
        };
        let p = oracle_instance(seed, spec)?;
        let oracle = oracle_solve(&p, spec.grid)?;
        let (sca, _) = solve(&p, 10, 1e-4)?;
        if !check_feasibility(&sca, &p).is_feasible() {
            infeasible += 1;
        }
        let gap = (oracle.objective_value - sca.objective_value) / oracle.objective_value.abs().max(1e-12);
        worst = worst.max(gap);
    }
    Ok((infeasible, worst))
}

/// A metrics record with the fields that legitimately differ between
/// equivalent variants blanked out.
pub fn comparable_trace(h: &[RoundMetrics]) -> Vec<RoundMetrics> {
    h.iter()
        .map(|m| RoundMetrics {
            variant: AlgorithmVariant::Afl,
            compute_units: 0.0,
            ..m.clone()
        })
        .collect()
}

/// Runs the proposed scheme with pruning and quantization switched off next
/// to plain AFL, per seed; returns the seeds whose traces differ.
pub fn degeneration_mismatches(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<Vec<u64>> {
    let mut bad = Vec::new();
    for &seed in seeds {
        let setup = build_setup(cfg, seed)?;
        let afl = run_experiment(AlgorithmVariant::Afl, &setup.env, &RunOverrides::default())?;
        let ours = run_experiment(
            AlgorithmVariant::TwoCeoAfl,
            &setup.env,
            &RunOverrides {
                delta: Some(0.0),
                q_raw: Some(1.0),
            },
        )?;
        if comparable_trace(&afl.history) != comparable_trace(&ours.history) || afl.final_model != ours.final_model {
            bad.push(seed);
        }
    }
    Ok(bad)
}

/// Worst relative disagreement between analytic and central-difference
/// directional derivatives.
pub fn gradient_check(models: usize, directions: usize, seed: u64) -> Result<f64> {
    let streams = Streams::new(seed);
    let arch = Architecture::new(6, 5, 3);
    let mut worst = 0.0f64;
    for m in 0..models as u64 {
        let mut rng = streams.rng("model", &[m]);
        let w = ParamVector::init(arch, &mut rng);
        let data: Vec<_> = (0..20)
            .map(|i| crate::datagen::Sample {
                features: gaussian_vec(6, &mut rng),
                label: i % 3,
                arrival_round: 0,
            })
            .collect();
        let g = gradient(&w, &data)?;
        for _ in 0..directions {
            let mut v = gaussian_vec(arch.param_count(), &mut rng);
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= n);
            let h = 1e-5;
            let shift = |sign: f64| {
                let vals = w.values.iter().zip(&v).map(|(a, b)| a + sign * h * b).collect();
                ParamVector::from_values(arch, vals)
            };
            let fd = (forward_loss(&shift(1.0)?, &data)? - forward_loss(&shift(-1.0)?, &data)?) / (2.0 * h);
            let an: f64 = g.iter().zip(&v).map(|(a, b)| a * b).sum();
            worst = worst.max((fd - an).abs() / an.abs().max(fd.abs()).max(1e-6));
        }
    }
    Ok(worst)
}

/// Runs every property suite at a size suited to an interactive check.
pub fn verify(cfg: &ExperimentConfig) -> Result<VerifyReport> {
    let mut suites = Vec::new();
    let p = super::build::architecture(cfg).param_count();
    let s = cfg.compression.levels;

    let (z, n_bad) = quantizer_bias(p, s, 4, 5_000, 5.0, 11)?;
    suites.push(SuiteResult::new(
        "quantizer-unbiased",
        n_bad == 0,
        format!("p = {p}, s = {s}: max |z| = {z:.2} over 4 vectors x 5000 draws (limit 5)"),
    ));
    let (q_hat, q_bound) = quantizer_variance(p, s, 10, 500, 12)?;
    suites.push(SuiteResult::new(
        "quantizer-variance",
        q_hat <= q_bound,
        format!("measured q = {q_hat:.4} vs min(p/s^2, sqrt(p)/s) = {q_bound:.4}"),
    ));
    let bad = pruning_violations(2_000, 13, library_prune)?;
    suites.push(SuiteResult::new(
        "pruning-ratio",
        bad == 0,
        format!("{bad} of 2000 (w, delta) pairs exceed delta"),
    ));
    let bad = mask_closure_violations(500, 14, library_offload)?;
    suites.push(SuiteResult::new(
        "mask-closure",
        bad == 0,
        format!("{bad} of 500 payloads leave the mask support"),
    ));
    let (infeasible, gap) = oracle_gap(20)?;
    suites.push(SuiteResult::new(
        "trajectory-oracle",
        infeasible == 0 && gap <= 0.05,
        format!(
            "{infeasible} infeasible of 20; worst shortfall vs oracle {:.3}%",
            100.0 * gap
        ),
    ));
    let mut small = cfg.clone();
    small.protocol.rounds = cfg.protocol.rounds.min(8);
    let seeds = [cfg.seeds.master];
    let bad = degeneration_mismatches(&small, &seeds)?;
    suites.push(SuiteResult::new(
        "variant-degeneration",
        bad.is_empty(),
        format!(
            "{} rounds, seeds {seeds:?}: {} mismatching",
            small.protocol.rounds,
            bad.len()
        ),
    ));
    let err = gradient_check(5, 20, 15)?;
    suites.push(SuiteResult::new(
        "gradient-check",
        err <= 1e-5,
        format!("worst relative error {err:.2e} (limit 1e-5)"),
    ));
    Ok(VerifyReport { suites })
}
