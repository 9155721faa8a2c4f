use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::build::{build_setup, overrides_for, SeedSetup};
use super::config::{ExperimentConfig, Preset};
use super::plot::{chart, Series, Style};
use crate::compression::variance_constant;
use crate::error::{Error, Result};
use crate::metrics::{
    estimate_beta, estimate_sigma2, evaluate_bound, BoundInputs, BoundReport, EmpiricalCdf, RoundBoundInputs,
};
use crate::protocol::{run_experiment, AlgorithmVariant, RoundMetrics, RunOutput};
use crate::trajectory::Trajectory;

/// Constants estimated for one run and the bound evaluated with them.
#[derive(Debug, Clone, Serialize)]
pub struct BoundSummary {
    pub beta_hat: f64,
    pub sigma2_hat: f64,
    pub q: f64,
    pub report: BoundReport,
    pub measured_avg: f64,
}

impl BoundSummary {
    pub fn holds(&self) -> bool {
        self.measured_avg <= self.report.average.total
    }
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub variant: AlgorithmVariant,
    pub seed: u64,
    pub output: RunOutput,
    pub bound: Option<BoundSummary>,
}

impl RunRecord {
    pub fn final_accuracy(&self) -> f64 {
        self.output.history.last().map_or(f64::NAN, |m| m.test_accuracy)
    }
}

#[derive(Debug, Clone)]
pub struct BatteryResult {
    pub config: ExperimentConfig,
    pub trajectories: Vec<(u64, Vec<Trajectory>)>,
    /// Seed-major, then in the configured variant order.
    pub runs: Vec<RunRecord>,
}

impl BatteryResult {
    pub fn runs_of(&self, v: AlgorithmVariant) -> impl Iterator<Item = &RunRecord> {
        self.runs.iter().filter(move |r| r.variant == v)
    }

    pub fn mean_final_accuracy(&self, v: AlgorithmVariant) -> Option<f64> {
        let accs: Vec<f64> = self.runs_of(v).map(RunRecord::final_accuracy).collect();
        (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64)
    }
}

fn variant_index(v: AlgorithmVariant) -> u64 {
    AlgorithmVariant::ALL.iter().position(|&x| x == v).unwrap_or(0) as u64
}

/// Estimates smoothness and gradient noise at the final model and evaluates
/// the bound along the logged trace.
pub fn bound_for_run(
    cfg: &ExperimentConfig,
    setup: &SeedSetup,
    variant: AlgorithmVariant,
    out: &RunOutput,
) -> Result<Option<BoundSummary>> {
    let h = &out.history;
    if !variant.is_federated() || h.is_empty() {
        return Ok(None);
    }
    let env = &setup.env;
    let b = &cfg.bound;
    let last = env.rounds - 1;
    let vi = variant_index(variant);
    let pooled = env.pooled_train.at(last);
    let beta = b.beta_safety
        * estimate_beta(
            &out.final_model,
            pooled,
            b.beta_probes,
            b.beta_step,
            &mut env.streams.rng("beta", &[vi]),
        )?;
    let mut sigma2 = 0.0f64;
    for (u, d) in env.train.iter().enumerate() {
        let data = d.at(last);
        if data.is_empty() {
            continue;
        }
        let mut rng = env.streams.rng("sigma", &[vi, u as u64]);
        sigma2 = sigma2.max(estimate_sigma2(
            &out.final_model,
            data,
            env.sgd.batch_size,
            b.sigma_draws,
            &mut rng,
        )?);
    }
    let q = variance_constant(env.arch.param_count(), env.levels);
    let n = env.clients();
    let rounds = h
        .iter()
        .map(|m| RoundBoundInputs {
            eta: m.eta,
            eta_tilde: m.eta_tilde,
            alpha: m.alpha.clone(),
            delta: m.per_acv_delta.clone(),
            q_raw: m.per_acv_q_raw.clone(),
            shift: m.per_acv_shift.clone(),
            dissim: m.per_acv_dissim.clone(),
            w_norm_sq: vec![m.w_norm_sq; n],
        })
        .collect();
    let inputs = BoundInputs {
        beta: beta.max(f64::MIN_POSITIVE),
        sigma2,
        q,
        rho1: b.rho1,
        rho2: b.rho2,
        kappa: env.sgd.steps(env.sgd.kappa),
        rounds,
    };
    let mut loss: Vec<f64> = h.iter().map(|m| m.loss_before).collect();
    loss.push(h[h.len() - 1].global_loss);
    let report = evaluate_bound(&inputs, &loss)?;
    let measured_avg = h.iter().map(|m| m.masked_grad_norm_sq).sum::<f64>() / h.len() as f64;
    Ok(Some(BoundSummary {
        beta_hat: beta,
        sigma2_hat: sigma2,
        q,
        report,
        measured_avg,
    }))
}

/// Runs every configured variant for every seed, in memory.
pub fn execute_battery(cfg: &ExperimentConfig) -> Result<BatteryResult> {
    cfg.validate()?;
    let mut trajectories = Vec::new();
    let mut runs = Vec::new();
    for seed in cfg.seed_list() {
        let setup = build_setup(cfg, seed).map_err(|e| Error::Run {
            variant: "setup".into(),
            seed,
            round: 0,
            source: Box::new(e),
        })?;
        let recs: Vec<RunRecord> = cfg
            .protocol
            .variants
            .par_iter()
            .map(|&v| {
                let output = run_experiment(v, &setup.env, &overrides_for(cfg, v))?;
                let bound = bound_for_run(cfg, &setup, v, &output).map_err(|e| Error::Run {
                    variant: v.name().into(),
                    seed,
                    round: cfg.protocol.rounds,
                    source: Box::new(e),
                })?;
                Ok(RunRecord {
                    variant: v,
                    seed,
                    output,
                    bound,
                })
            })
            .collect::<Result<_>>()?;
        runs.extend(recs);
        trajectories.push((seed, setup.trajectories));
    }
    Ok(BatteryResult {
        config: cfg.clone(),
        trajectories,
        runs,
    })
}

/// Human-readable description of what a battery would do.
pub fn describe_plan(cfg: &ExperimentConfig, out_dir: &Path) -> String {
    let variants: Vec<&str> = cfg.protocol.variants.iter().map(|v| v.name()).collect();
    let sgd = &cfg.learner.sgd;
    format!(
        "preset: {}\nseeds: {:?}\nvariants: {}\nclients: {}  rounds: {}  clusters: {}\n\
         model: {} -> {} -> {} ({} parameters)\nlocal rounds: {} (warm-up {}), {} batches of {}\n\
         quantization levels: {}  pruning range: [{}, {}]\noutput: {}\n",
        match cfg.preset {
            Some(Preset::Paper) => "paper",
            Some(Preset::Desk) => "desk",
            None => "custom",
        },
        cfg.seed_list(),
        variants.join(", "),
        cfg.fleet.acvs,
        cfg.protocol.rounds,
        cfg.environment.clusters,
        cfg.environment.features.dim,
        cfg.learner.hidden,
        cfg.environment.clusters,
        super::build::architecture(cfg).param_count(),
        sgd.kappa,
        sgd.rho,
        sgd.batches_per_round,
        sgd.batch_size,
        cfg.compression.levels,
        cfg.compression.delta_range.0,
        cfg.compression.delta_range.1,
        out_dir.display(),
    )
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(format!("writing {}", path.display()), e)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let f = fs::File::create(path).map_err(io_err(path))?;
    Ok(csv::Writer::from_writer(f))
}

fn rounds_header(n: usize) -> Vec<String> {
    let mut h: Vec<String> = [
        "variant",
        "seed",
        "round",
        "test_accuracy",
        "loss_before",
        "global_loss",
        "total_bits",
        "compute_units",
        "eta",
        "eta_tilde",
        "w_norm_sq",
        "masked_grad_norm_sq",
        "train_samples",
        "test_samples",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for prefix in ["bits", "delta", "q_raw", "shift", "dissim", "alpha"] {
        h.extend((0..n).map(|u| format!("{prefix}_{u}")));
    }
    h
}

fn rounds_row(m: &RoundMetrics) -> Vec<String> {
    let mut r = vec![
        m.variant.key().to_string(),
        m.seed.to_string(),
        m.round.to_string(),
        m.test_accuracy.to_string(),
        m.loss_before.to_string(),
        m.global_loss.to_string(),
        m.total_bits.to_string(),
        m.compute_units.to_string(),
        m.eta.to_string(),
        m.eta_tilde.to_string(),
        m.w_norm_sq.to_string(),
        m.masked_grad_norm_sq.to_string(),
        m.train_samples.to_string(),
        m.test_samples.to_string(),
    ];
    r.extend(m.per_acv_bits.iter().map(u64::to_string));
    for v in [
        &m.per_acv_delta,
        &m.per_acv_q_raw,
        &m.per_acv_shift,
        &m.per_acv_dissim,
        &m.alpha,
    ] {
        r.extend(v.iter().map(f64::to_string));
    }
    r
}

/// Writes every artifact of `result` into `dir` and returns the written paths
/// relative to `dir`, including the manifest.
pub fn write_outputs(result: &BatteryResult, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let cfg = &result.config;
    let mut files: Vec<PathBuf> = Vec::new();

    let p = dir.join("config.json");
    cfg.save(&p)?;
    files.push("config.json".into());

    let p = dir.join("rounds.csv");
    let mut w = csv_writer(&p)?;
    w.write_record(rounds_header(cfg.fleet.acvs))?;
    for r in &result.runs {
        for m in &r.output.history {
            w.write_record(rounds_row(m))?;
        }
    }
    w.flush().map_err(io_err(&p))?;
    files.push("rounds.csv".into());

    let p = dir.join("summary.csv");
    let mut w = csv_writer(&p)?;
    w.write_record([
        "variant",
        "seed",
        "final_test_accuracy",
        "final_global_loss",
        "total_bits",
        "mean_compute_units",
        "beta_hat",
        "sigma2_hat",
        "q",
        "guard_satisfied",
        "bound_avg_total",
        "measured_avg_grad_norm_sq",
        "bound_holds",
    ])?;
    for r in &result.runs {
        let h = &r.output.history;
        let bits: u64 = h.iter().map(|m| m.total_bits).sum();
        let cu = h.iter().map(|m| m.compute_units).sum::<f64>() / h.len().max(1) as f64;
        let last_loss = h.last().map_or(f64::NAN, |m| m.global_loss);
        let mut row = vec![
            r.variant.key().to_string(),
            r.seed.to_string(),
            r.final_accuracy().to_string(),
            last_loss.to_string(),
            bits.to_string(),
            cu.to_string(),
        ];
        match &r.bound {
            Some(b) => row.extend([
                b.beta_hat.to_string(),
                b.sigma2_hat.to_string(),
                b.q.to_string(),
                b.report.guard.all_satisfied().to_string(),
                b.report.average.total.to_string(),
                b.measured_avg.to_string(),
                b.holds().to_string(),
            ]),
            None => row.extend(std::iter::repeat_n(String::new(), 7)),
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(io_err(&p))?;
    files.push("summary.csv".into());

    if result.runs.iter().any(|r| r.bound.is_some()) {
        let p = dir.join("bound.csv");
        let mut w = csv_writer(&p)?;
        w.write_record([
            "variant",
            "seed",
            "round",
            "descent",
            "sg_quant",
            "shift",
            "dissim",
            "prune",
            "total",
            "measured_grad_norm",
            "guard_satisfied",
        ])?;
        for r in &result.runs {
            let Some(b) = &r.bound else { continue };
            for ((t, br), m) in b.report.per_round.iter().enumerate().zip(&r.output.history) {
                w.write_record([
                    r.variant.key().to_string(),
                    r.seed.to_string(),
                    t.to_string(),
                    br.descent.to_string(),
                    br.sg_quant.to_string(),
                    br.shift.to_string(),
                    br.dissim.to_string(),
                    br.prune.to_string(),
                    br.total.to_string(),
                    m.masked_grad_norm_sq.to_string(),
                    b.report.guard.satisfied[t].to_string(),
                ])?;
            }
        }
        w.flush().map_err(io_err(&p))?;
        files.push("bound.csv".into());
    }

    let compresses = cfg.protocol.variants.iter().any(|v| {
        matches!(
            v,
            AlgorithmVariant::AflPrune | AlgorithmVariant::AflQuant | AlgorithmVariant::TwoCeoAfl
        )
    });
    if compresses {
        for &v in cfg.protocol.variants.iter().filter(|v| v.is_federated()) {
            let cdf = overhead_cdf(result.runs_of(v));
            let name = format!("cdf_{}.csv", v.key());
            let p = dir.join(&name);
            let mut w = csv_writer(&p)?;
            w.write_record(["bits", "cdf"])?;
            for (x, f) in cdf.steps() {
                w.write_record([x.to_string(), f.to_string()])?;
            }
            w.flush().map_err(io_err(&p))?;
            files.push(name.into());
        }
    }

    let p = dir.join("trajectories.csv");
    let mut w = csv_writer(&p)?;
    w.write_record(["seed", "acv", "round", "x", "y", "cluster"])?;
    for (seed, trajs) in &result.trajectories {
        for (u, tr) in trajs.iter().enumerate() {
            for (t, (q, a)) in tr.positions.iter().zip(tr.assignment()).enumerate() {
                w.write_record([
                    seed.to_string(),
                    u.to_string(),
                    t.to_string(),
                    q.x.to_string(),
                    q.y.to_string(),
                    a.map_or(String::new(), |c| c.to_string()),
                ])?;
            }
        }
    }
    w.flush().map_err(io_err(&p))?;
    files.push("trajectories.csv".into());

    files.extend(regenerate_plots(dir)?);
    files.sort();
    write_manifest(cfg, dir, &files, None)?;
    files.push("manifest.json".into());
    Ok(files)
}

/// Pooled per-client payload sizes of every round of every run given.
pub fn overhead_cdf<'a>(runs: impl Iterator<Item = &'a RunRecord>) -> EmpiricalCdf {
    let mut bits = Vec::new();
    for r in runs {
        for m in &r.output.history {
            bits.extend(
                m.per_acv_bits
                    .iter()
                    .zip(&m.alpha)
                    .filter(|(_, &a)| a > 0.0)
                    .map(|(&b, _)| b),
            );
        }
    }
    EmpiricalCdf::new(bits)
}

#[derive(Serialize)]
struct FileEntry {
    path: String,
    bytes: u64,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    schema_version: u32,
    generator: String,
    config_sha256: String,
    seeds: Vec<u64>,
    variants: Vec<&'a str>,
    files: Vec<FileEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    timing: Option<&'a Timing>,
}

/// Wall-clock measurements; only recorded on request since they vary between runs.
#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub wall_clock_seconds: f64,
    pub seconds_per_compute_unit: f64,
    pub threads: usize,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn write_manifest(cfg: &ExperimentConfig, dir: &Path, files: &[PathBuf], timing: Option<&Timing>) -> Result<()> {
    let mut entries = Vec::new();
    for f in files.iter().filter(|f| f.as_os_str() != "manifest.json") {
        let p = dir.join(f);
        let data = fs::read(&p).map_err(|e| Error::io(format!("reading {}", p.display()), e))?;
        entries.push(FileEntry {
            path: f.to_string_lossy().replace('\\', "/"),
            bytes: data.len() as u64,
            sha256: sha256_hex(&data),
        });
    }
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    let m = Manifest {
        schema_version: super::config::SCHEMA_VERSION,
        generator: format!("aerofl {}", env!("CARGO_PKG_VERSION")),
        config_sha256: sha256_hex(cfg.to_json().as_bytes()),
        seeds: cfg.seed_list(),
        variants: cfg.protocol.variants.iter().map(|v| v.key()).collect(),
        files: entries,
        timing,
    };
    let p = dir.join("manifest.json");
    fs::write(
        &p,
        serde_json::to_string_pretty(&m).expect("manifest serializes") + "\n",
    )
    .map_err(io_err(&p))
}

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<csv::StringRecord>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().map(str::to_string).collect();
    let rows = r.records().collect::<std::result::Result<_, _>>()?;
    Ok((header, rows))
}

fn col(header: &[String], name: &str, path: &Path) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::InvalidArgument(format!("{} has no column {name:?}", path.display())))
}

fn num(rec: &csv::StringRecord, i: usize) -> f64 {
    rec.get(i).and_then(|s| s.parse().ok()).unwrap_or(f64::NAN)
}

type Points = Vec<(f64, f64)>;

/// Rebuilds the SVG charts from the CSV tables in `dir`; returns the file names written.
pub fn regenerate_plots(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let rounds_path = dir.join("rounds.csv");
    if !rounds_path.exists() {
        return Err(Error::MissingFile(rounds_path));
    }
    let (h, rows) = read_table(&rounds_path)?;
    let (iv, ir, ia) = (
        col(&h, "variant", &rounds_path)?,
        col(&h, "round", &rounds_path)?,
        col(&h, "test_accuracy", &rounds_path)?,
    );
    // Mean accuracy across seeds, per variant and round.
    let mut acc: BTreeMap<String, BTreeMap<u64, (f64, usize)>> = BTreeMap::new();
    for r in &rows {
        let e = acc
            .entry(r[iv].to_string())
            .or_default()
            .entry(r[ir].parse().unwrap_or(0))
            .or_insert((0.0, 0));
        e.0 += num(r, ia);
        e.1 += 1;
    }
    let series: Vec<Series> = order_keys(acc.keys())
        .into_iter()
        .map(|k| Series {
            name: display_name(&k),
            points: acc[&k].iter().map(|(&t, &(s, n))| (t as f64, s / n as f64)).collect(),
        })
        .collect();
    fs::write(
        dir.join("accuracy.svg"),
        chart("Test accuracy", "round", "accuracy", &series, Style::Line),
    )
    .map_err(io_err(dir))?;
    written.push(PathBuf::from("accuracy.svg"));

    let mut cdf_series = Vec::new();
    for v in AlgorithmVariant::ALL {
        let p = dir.join(format!("cdf_{}.csv", v.key()));
        if !p.exists() {
            continue;
        }
        let (h, rows) = read_table(&p)?;
        let (ib, ic) = (col(&h, "bits", &p)?, col(&h, "cdf", &p)?);
        let mut pts = Vec::with_capacity(rows.len() + 1);
        if let Some(first) = rows.first() {
            pts.push((num(first, ib), 0.0));
        }
        pts.extend(rows.iter().map(|r| (num(r, ib), num(r, ic))));
        cdf_series.push(Series {
            name: v.name().into(),
            points: pts,
        });
    }
    if !cdf_series.is_empty() {
        fs::write(
            dir.join("cdf.svg"),
            chart("Per-client payload size", "bits", "CDF", &cdf_series, Style::Step),
        )
        .map_err(io_err(dir))?;
        written.push(PathBuf::from("cdf.svg"));
    }

    let bound_path = dir.join("bound.csv");
    if bound_path.exists() {
        let (h, rows) = read_table(&bound_path)?;
        let (iv, is, ir) = (
            col(&h, "variant", &bound_path)?,
            col(&h, "seed", &bound_path)?,
            col(&h, "round", &bound_path)?,
        );
        let (it, im) = (
            col(&h, "total", &bound_path)?,
            col(&h, "measured_grad_norm", &bound_path)?,
        );
        let first_seed = rows.first().map(|r| r[is].to_string());
        // Per variant: bound curve and measured curve.
        let mut by: BTreeMap<String, (Points, Points)> = BTreeMap::new();
        for r in rows.iter().filter(|r| Some(r[is].to_string()) == first_seed) {
            let e = by.entry(r[iv].to_string()).or_default();
            let t = num(r, ir);
            e.0.push((t, num(r, it).max(1e-300).log10()));
            e.1.push((t, num(r, im).max(1e-300).log10()));
        }
        let mut s = Vec::new();
        for k in order_keys(by.keys()) {
            let (b, m) = by.remove(&k).unwrap_or_default();
            s.push(Series {
                name: format!("{} bound", display_name(&k)),
                points: b,
            });
            s.push(Series {
                name: format!("{} measured", display_name(&k)),
                points: m,
            });
        }
        fs::write(
            dir.join("bound.svg"),
            chart("Bound vs masked gradient norm", "round", "log10 value", &s, Style::Line),
        )
        .map_err(io_err(dir))?;
        written.push(PathBuf::from("bound.svg"));
    }
    Ok(written)
}

fn display_name(key: &str) -> String {
    key.parse::<AlgorithmVariant>()
        .map_or(key.to_string(), |v| v.name().to_string())
}

fn order_keys<'a>(keys: impl Iterator<Item = &'a String>) -> Vec<String> {
    let mut k: Vec<String> = keys.cloned().collect();
    k.sort_by_key(|s| {
        s.parse::<AlgorithmVariant>()
            .map_or(usize::MAX, |v| variant_index(v) as usize)
    });
    k
}

/// Executes the battery and writes its artifacts.
pub fn run_battery(cfg: &ExperimentConfig, dir: &Path) -> Result<BatteryResult> {
    let result = execute_battery(cfg)?;
    write_outputs(&result, dir)?;
    Ok(result)
}
