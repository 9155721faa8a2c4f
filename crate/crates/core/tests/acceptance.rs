//! Acceptance suite: one PASS/FAIL line per criterion with the measured values.
//!
//! Runs as a plain binary so every criterion is evaluated and reported even
//! when an earlier one fails; the process exits non-zero if any failed.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use aerofl::compression::{decode, lottery_prune, payload_bits, pruning_error_ratio, quantize, PayloadKind};
use aerofl::datagen::Sample;
use aerofl::harness::{
    build_setup, execute_battery, overhead_cdf, write_outputs, BatteryResult, ExperimentConfig, Preset,
};
use aerofl::learner::{forward_loss, gradient, Architecture, Mask, ParamVector};
use aerofl::metrics::{c_u, evaluate_bound, first_order_dominates, BoundInputs, RoundBoundInputs};
use aerofl::protocol::{run_experiment, AlgorithmVariant, RunOverrides};
use aerofl::rng::{seeded, Streams};
use aerofl::trajectory::{check_feasibility, oracle_instance, oracle_solve, solve, OracleInstanceSpec};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

// Tolerances and sizes, fixed here so a run is reproducible.
const QUANT_P: usize = 874;
const QUANT_S: u32 = 3;
const QUANT_VECTORS: usize = 50;
const QUANT_DRAWS: usize = 100_000;
const QUANT_Z: f64 = 4.0;
const QUANT_BUDGET: Duration = Duration::from_secs(60);
const PRUNE_PAIRS: usize = 10_000;
const ORACLE_INSTANCES: u64 = 20;
const ORACLE_GAP: f64 = 0.05;
const ORACLE_BUDGET: Duration = Duration::from_secs(120);
const DEGEN_SEEDS: usize = 3;
const DEGEN_ROUNDS: usize = 30;
const ACC_SEEDS: usize = 5;
const ACC_GAP: f64 = 0.03;
const ACC_BUDGET: Duration = Duration::from_secs(600);
const PAYLOAD_CASES: usize = 1000;
const GRAD_MODELS: usize = 5;
const GRAD_DIRECTIONS: usize = 20;
const GRAD_TOL: f64 = 1e-5;
const CU_SAMPLES: usize = 100;
const CU_TOL: f64 = 1e-12;

type Verdict = (bool, String);
type Check = (usize, &'static str, fn() -> Verdict);

fn gaussian(p: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..p).map(|_| StandardNormal.sample(rng)).collect()
}

/// Both quantizer criteria from one pass of draws per vector.
fn quantizer_statistics() -> (Verdict, Verdict) {
    let start = Instant::now();
    let streams = Streams::new(1);
    let mask = Mask::ones(QUANT_P);
    let bound = (QUANT_P as f64 / (QUANT_S * QUANT_S) as f64).min((QUANT_P as f64).sqrt() / QUANT_S as f64);
    let mut max_z = 0.0f64;
    let mut outside = 0usize;
    let mut worst_var = 0.0f64;
    let mut var_violations = 0usize;
    for v in 0..QUANT_VECTORS as u64 {
        let d = gaussian(QUANT_P, &mut streams.rng("vector", &[v]));
        let norm_sq: f64 = d.iter().map(|x| x * x).sum();
        let norm = norm_sq.sqrt();
        let mut sum = vec![0.0; QUANT_P];
        let mut sum_sq = vec![0.0; QUANT_P];
        let mut rng = streams.rng("draws", &[v]);
        for _ in 0..QUANT_DRAWS {
            let q = decode(&quantize(&d, &mask, QUANT_S, &mut rng).unwrap(), &mask).unwrap();
            for ((a, b), &qi) in sum.iter_mut().zip(sum_sq.iter_mut()).zip(&q) {
                *a += qi;
                *b += qi * qi;
            }
        }
        let n = QUANT_DRAWS as f64;
        // Summed squared error expanded per coordinate: sum (q - d)^2 = S2 - 2 d S1 + n d^2.
        let err: f64 = (0..QUANT_P)
            .map(|i| sum_sq[i] - 2.0 * d[i] * sum[i] + n * d[i] * d[i])
            .sum();
        // Each output coordinate takes one of two adjacent levels, so its
        // standard error follows from the fractional position between them.
        let step = norm / QUANT_S as f64;
        for i in 0..QUANT_P {
            let r = d[i].abs() / step;
            let frac = r - r.floor();
            let se = step * (frac * (1.0 - frac) / n).sqrt();
            let dev = (sum[i] / n - d[i]).abs();
            let z = if se > 0.0 {
                dev / se
            } else if dev < 1e-9 {
                0.0
            } else {
                f64::INFINITY
            };
            max_z = max_z.max(z);
            if z > QUANT_Z {
                outside += 1;
            }
        }
        let ratio = err / n / norm_sq;
        worst_var = worst_var.max(ratio);
        if ratio > bound {
            var_violations += 1;
        }
    }
    let elapsed = start.elapsed();
    let coords = QUANT_VECTORS * QUANT_P;
    let c1 = (
        outside == 0 && elapsed < QUANT_BUDGET,
        format!(
            "{outside} of {coords} coordinates beyond {QUANT_Z} SE (max |z| = {max_z:.2}, {:.1} expected by chance); {:.1}s",
            coords as f64 * 6.334e-5,
            elapsed.as_secs_f64()
        ),
    );
    let c2 = (
        var_violations == 0,
        format!(
            "max E|Q(d)-d|^2/|d|^2 = {worst_var:.4} vs min(p/s^2, sqrt(p)/s) = {bound:.4}; {var_violations} violations"
        ),
    );
    (c1, c2)
}

fn pruning_ratio() -> Verdict {
    let mut rng = seeded(3);
    let mut bad = 0;
    let mut worst_slack = f64::INFINITY;
    for _ in 0..PRUNE_PAIRS {
        let arch = Architecture::new(rng.random_range(1..10), rng.random_range(1..10), rng.random_range(2..6));
        let w = ParamVector::from_values(arch, gaussian(arch.param_count(), &mut rng)).unwrap();
        let delta: f64 = rng.random_range(0.0..=0.95);
        let pr = lottery_prune(&w, &w, delta, 1.0).unwrap();
        let ratio = pruning_error_ratio(&w.values, &pr.mask);
        worst_slack = worst_slack.min(delta - ratio);
        if ratio > delta {
            bad += 1;
        }
    }
    (
        bad == 0,
        format!("{bad} violations in {PRUNE_PAIRS} pairs; min slack delta - ratio = {worst_slack:.3e}"),
    )
}

fn oracle_battery() -> Verdict {
    let start = Instant::now();
    let mut infeasible = 0;
    let mut worst = f64::NEG_INFINITY;
    let mut beats = 0;
    for i in 0..ORACLE_INSTANCES {
        let spec = OracleInstanceSpec {
            rounds: 2 + (i % 3) as usize,
            clusters: 1 + (i % 2) as usize,
            grid: 9,
        };
        let p = oracle_instance(1000 + i, spec).unwrap();
        let oracle = oracle_solve(&p, 9).unwrap();
        let (sca, _) = solve(&p, 10, 1e-4).unwrap();
        if !check_feasibility(&sca, &p).is_feasible() {
            infeasible += 1;
        }
        let gap = (oracle.objective_value - sca.objective_value) / oracle.objective_value.abs().max(1e-12);
        if gap < -1e-12 {
            beats += 1;
        }
        worst = worst.max(gap);
    }
    let elapsed = start.elapsed();
    (
        infeasible == 0 && worst <= ORACLE_GAP && elapsed < ORACLE_BUDGET,
        format!(
            "{infeasible} infeasible; worst shortfall {:.3}% (limit {}%), SCA above grid optimum on {beats}; {:.2}s",
            100.0 * worst.max(0.0),
            100.0 * ORACLE_GAP,
            elapsed.as_secs_f64()
        ),
    )
}

fn desk() -> ExperimentConfig {
    ExperimentConfig::preset(Preset::Desk)
}

fn degeneration() -> Verdict {
    let mut cfg = desk();
    cfg.protocol.rounds = DEGEN_ROUNDS;
    cfg.seeds.replications = DEGEN_SEEDS;
    let mut mismatched = Vec::new();
    for seed in cfg.seed_list() {
        let setup = build_setup(&cfg, seed).unwrap();
        let afl = run_experiment(AlgorithmVariant::Afl, &setup.env, &RunOverrides::default()).unwrap();
        let ours = run_experiment(
            AlgorithmVariant::TwoCeoAfl,
            &setup.env,
            &RunOverrides {
                delta: Some(0.0),
                q_raw: Some(1.0),
            },
        )
        .unwrap();
        let strip = |h: &[aerofl::protocol::RoundMetrics]| {
            let v: Vec<_> = h
                .iter()
                .map(|m| aerofl::protocol::RoundMetrics {
                    variant: AlgorithmVariant::Afl,
                    compute_units: 0.0,
                    ..m.clone()
                })
                .collect();
            serde_json::to_vec(&v).unwrap()
        };
        let same_model = afl.final_model.to_bytes() == ours.final_model.to_bytes();
        if strip(&afl.history) != strip(&ours.history) || !same_model || afl.history.len() != DEGEN_ROUNDS {
            mismatched.push(seed);
        }
    }
    (
        mismatched.is_empty(),
        format!(
            "{DEGEN_ROUNDS} rounds x {DEGEN_SEEDS} seeds; mismatching seeds {mismatched:?} (variant label and compute units excluded)"
        ),
    )
}

fn accuracy_ordering() -> Verdict {
    let start = Instant::now();
    let mut cfg = desk();
    cfg.seeds.replications = ACC_SEEDS;
    cfg.protocol.variants = vec![
        AlgorithmVariant::CentralizedSgd,
        AlgorithmVariant::Afl,
        AlgorithmVariant::TwoCeoAfl,
    ];
    let r = execute_battery(&cfg).unwrap();
    let m = |v| r.mean_final_accuracy(v).unwrap();
    let (sgd, afl, ours) = (
        m(AlgorithmVariant::CentralizedSgd),
        m(AlgorithmVariant::Afl),
        m(AlgorithmVariant::TwoCeoAfl),
    );
    let elapsed = start.elapsed();
    (
        sgd >= afl && afl >= ours && afl - ours <= ACC_GAP && elapsed < ACC_BUDGET,
        format!(
            "mean final accuracy over {ACC_SEEDS} seeds: SGD {:.2}%, AFL {:.2}%, 2CEOAFL {:.2}% (AFL - 2CEOAFL = {:.2} pp, limit {} pp); {:.1}s",
            100.0 * sgd,
            100.0 * afl,
            100.0 * ours,
            100.0 * (afl - ours),
            100.0 * ACC_GAP,
            elapsed.as_secs_f64()
        ),
    )
}

fn communication(r: &BatteryResult) -> Verdict {
    use AlgorithmVariant::*;
    let p = aerofl::harness::architecture(&r.config).param_count();
    let s = r.config.compression.levels;
    let mut formula_mismatch = 0;
    let mut totals: BTreeMap<(u64, usize), BTreeMap<AlgorithmVariant, u64>> = BTreeMap::new();
    for run in &r.runs {
        for m in &run.output.history {
            totals
                .entry((m.seed, m.round))
                .or_default()
                .insert(run.variant, m.total_bits);
            if run.variant.is_federated() {
                for (&b, &d) in m.per_acv_bits.iter().zip(&m.per_acv_delta) {
                    let raw = payload_bits(PayloadKind::Raw, p, d, s);
                    let quant = payload_bits(PayloadKind::Quantized, p, d, s);
                    if b != raw && b != quant {
                        formula_mismatch += 1;
                    }
                }
            }
        }
    }
    let chain = [Afl, AflPrune, TwoCeoAfl, AflQuant];
    let mut broken = [0usize; 3];
    for row in totals.values() {
        for (k, pair) in chain.windows(2).enumerate() {
            if row[&pair[0]] < row[&pair[1]] {
                broken[k] += 1;
            }
        }
    }
    let cdfs: Vec<_> = chain.iter().map(|&v| overhead_cdf(r.runs_of(v))).collect();
    let dominated: Vec<bool> = cdfs.windows(2).map(|w| first_order_dominates(&w[0], &w[1])).collect();
    let ok = broken.iter().all(|&b| b == 0) && dominated.iter().all(|&d| d) && formula_mismatch == 0;
    (
        ok,
        format!(
            "{} seed-rounds; rounds violating AFL>=Prune: {}, Prune>=2CEOAFL: {}, 2CEOAFL>=Quant: {}; \
             CDF dominance {:?}; {formula_mismatch} payloads off-formula",
            totals.len(),
            broken[0],
            broken[1],
            broken[2],
            dominated
        ),
    )
}

fn hand_bits(raw: bool, p: u64, pruned: u64, s: u64) -> u64 {
    let mut b = 0;
    while (1u64 << b) < s {
        b += 1;
    }
    let nnz = p - pruned;
    if raw {
        33 * nnz + p
    } else {
        (1 + b) * nnz + 32 + p
    }
}

fn payload_formula() -> Verdict {
    let mut rng = seeded(8);
    let mut bad = 0;
    for i in 0..PAYLOAD_CASES {
        let p: u64 = if i % 2 == 0 {
            rng.random_range(1..=10)
        } else {
            rng.random_range(11..=5000)
        };
        // Ratios on the lattice k/p hit the floor boundary exactly.
        let pruned: u64 = rng.random_range(0..=p);
        let delta = pruned as f64 / p as f64;
        let s: u64 = rng.random_range(1..=300);
        let raw = i % 3 == 0;
        let kind = if raw { PayloadKind::Raw } else { PayloadKind::Quantized };
        if payload_bits(kind, p as usize, delta, s as u32) != hand_bits(raw, p, pruned, s) {
            bad += 1;
        }
    }
    let example = payload_bits(PayloadKind::Quantized, 10, 0.5, 3);
    (
        bad == 0 && example == 57,
        format!("{bad} mismatches in {PAYLOAD_CASES} cases; p = 10, delta = 0.5, s = 3 gives {example} bits"),
    )
}

fn gradient_check() -> Verdict {
    let arch = Architecture::new(7, 6, 4);
    let mut rng = seeded(9);
    let mut worst = 0.0f64;
    for _ in 0..GRAD_MODELS {
        let w = ParamVector::from_values(
            arch,
            gaussian(arch.param_count(), &mut rng).iter().map(|x| 0.5 * x).collect(),
        )
        .unwrap();
        let data: Vec<Sample> = (0..25)
            .map(|i| Sample {
                features: gaussian(7, &mut rng),
                label: i % 4,
                arrival_round: 0,
            })
            .collect();
        let g = gradient(&w, &data).unwrap();
        for _ in 0..GRAD_DIRECTIONS {
            let v = gaussian(arch.param_count(), &mut rng);
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let h = 1e-5;
            let at = |sgn: f64| {
                let vals = w.values.iter().zip(&v).map(|(a, b)| a + sgn * h * b / n).collect();
                forward_loss(&ParamVector::from_values(arch, vals).unwrap(), &data).unwrap()
            };
            let fd = (at(1.0) - at(-1.0)) / (2.0 * h);
            let an: f64 = g.iter().zip(&v).map(|(a, b)| a * b / n).sum();
            worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-8));
        }
    }
    (
        worst <= GRAD_TOL,
        format!("{GRAD_MODELS} models x {GRAD_DIRECTIONS} directions: worst relative error {worst:.2e} (limit {GRAD_TOL:e})"),
    )
}

fn bound_algebra() -> Verdict {
    let mut rng = seeded(10);
    let worst_cu = (0..CU_SAMPLES)
        .map(|_| (c_u(rng.random_range(0.0..100.0), 1.0) - 2.0).abs())
        .fold(0.0f64, f64::max);
    let n = 3;
    let rounds = 6;
    let mut vec = |lo: f64, hi: f64| -> Vec<f64> { (0..n).map(|_| rng.random_range(lo..hi)).collect() };
    let per: Vec<RoundBoundInputs> = (0..rounds)
        .map(|t| RoundBoundInputs {
            eta: 0.05,
            eta_tilde: 0.03,
            alpha: vec![1.0 / 3.0; n],
            delta: vec(0.05, 0.6),
            q_raw: vec(0.0, 1.0),
            shift: if t == 0 { vec![0.0; n] } else { vec(0.0, 2.0) },
            dissim: vec(0.0, 2.0),
            w_norm_sq: vec(1.0, 20.0),
        })
        .collect();
    let base = BoundInputs {
        beta: 1.7,
        sigma2: 0.4,
        q: 5.0,
        rho1: 1.0,
        rho2: 1.3,
        kappa: 25,
        rounds: per,
    };
    let loss: Vec<f64> = (0..=rounds).map(|t| 2.0 - 0.1 * t as f64).collect();
    let b0 = evaluate_bound(&base, &loss).unwrap();
    let mut dbl = base.clone();
    dbl.rounds
        .iter_mut()
        .for_each(|r| r.delta.iter_mut().for_each(|d| *d *= 2.0));
    let b1 = evaluate_bound(&dbl, &loss).unwrap();
    let mut noshift = base.clone();
    noshift.rounds.iter_mut().for_each(|r| r.shift.fill(0.0));
    let b2 = evaluate_bound(&noshift, &loss).unwrap();
    let mut delta_ok = true;
    let mut shift_ok = true;
    for ((a, b), c) in b0.per_round.iter().zip(&b1.per_round).zip(&b2.per_round) {
        delta_ok &= (b.prune - 2.0 * a.prune).abs() <= 1e-12 * a.prune.abs().max(1.0)
            && (a.descent, a.sg_quant, a.shift, a.dissim) == (b.descent, b.sg_quant, b.shift, b.dissim);
        shift_ok &=
            c.shift == 0.0 && (a.descent, a.sg_quant, a.prune, a.dissim) == (c.descent, c.sg_quant, c.prune, c.dissim);
    }
    (
        worst_cu <= CU_TOL && delta_ok && shift_ok,
        format!(
            "max |c_u(q,1) - 2| = {worst_cu:.1e} over {CU_SAMPLES} q; doubling delta isolates pruning term: {delta_ok}; \
             zeroing shift isolates shift term: {shift_ok}"
        ),
    )
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let e = e.unwrap();
        out.insert(
            e.file_name().to_string_lossy().into_owned(),
            std::fs::read(e.path()).unwrap(),
        );
    }
    out
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}

fn main() {
    // Ignore the flags cargo's test runner passes to every test binary.
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    // A filter naming the target runs everything; otherwise it selects
    // criteria by substring of their names.
    let everything = filter.is_empty() || filter.iter().any(|f| "acceptance".contains(f.as_str()));
    let wanted = |name: &str| everything || filter.iter().any(|f| name.contains(f.as_str()));

    let mut results: Vec<(usize, &str, Verdict)> = Vec::new();
    if wanted("quantizer") {
        let (c1, c2) = quantizer_statistics();
        results.push((1, "quantizer unbiasedness", c1));
        results.push((2, "quantizer variance", c2));
    }
    let cheap: [Check; 7] = [
        (3, "pruning ratio bound", pruning_ratio),
        (4, "trajectory oracle battery", oracle_battery),
        (5, "variant degeneration", degeneration),
        (6, "accuracy ordering", accuracy_ordering),
        (8, "payload formula", payload_formula),
        (9, "gradient correctness", gradient_check),
        (10, "bound evaluator algebra", bound_algebra),
    ];
    for (i, name, f) in cheap {
        if wanted(name) {
            results.push((i, name, f()));
        }
    }

    // The communication and determinism criteria share one desk battery.
    if wanted("communication dominance") || wanted("determinism") {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = desk();
        let run_a = in_pool(1, || execute_battery(&cfg).unwrap());
        if wanted("communication dominance") {
            results.push((7, "communication dominance", communication(&run_a)));
        }
        if wanted("determinism") {
            write_outputs(&run_a, &tmp.path().join("a")).unwrap();
            let run_b = in_pool(4, || execute_battery(&cfg).unwrap());
            write_outputs(&run_b, &tmp.path().join("b")).unwrap();
            let (ta, tb) = (tree(&tmp.path().join("a")), tree(&tmp.path().join("b")));
            let differing: Vec<&String> = ta.keys().filter(|k| ta.get(*k) != tb.get(*k)).collect();
            results.push((
                11,
                "determinism",
                (
                    ta.keys().eq(tb.keys()) && differing.is_empty(),
                    format!(
                        "{} files compared between 1-thread and 4-thread desk batteries; differing: {differing:?}",
                        ta.len()
                    ),
                ),
            ));
        }
    }
    results.sort_by_key(|r| r.0);

    println!();
    let mut failed = 0;
    for (i, name, (ok, detail)) in &results {
        if !ok {
            failed += 1;
        }
        println!("{} {:>2} {:<26} {}", if *ok { "PASS" } else { "FAIL" }, i, name, detail);
    }
    println!("\nacceptance: {} passed, {} failed", results.len() - failed, failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
