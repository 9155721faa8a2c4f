use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use aerofl::error::Error;
use aerofl::harness::{
    self, build_setup, calibrate_unit_cost, describe_plan, execute_battery, load_config, regenerate_plots,
    trajectory_problem, write_manifest, write_outputs, ExperimentConfig, Preset, Timing,
};
use aerofl::trajectory::{check_feasibility, solve};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aerofl", version, about = "Online aerial federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment battery and write its artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        preset: Option<Preset>,
        /// Output directory; defaults to the config's, under $AEROFL_OUT if set.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
        /// Print the resolved plan and write nothing.
        #[arg(long)]
        dry_run: bool,
        /// Also record wall-clock measurements (makes the manifest non-reproducible).
        #[arg(long)]
        timing: bool,
    },
    /// Run the property suites and report pass/fail with measured values.
    Verify {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<Preset>,
    },
    /// Solve and export the trajectory of one ACV as CSV.
    Trajectory {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        acv: usize,
        #[arg(long)]
        preset: Option<Preset>,
        /// Seed; defaults to the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Regenerate SVG plots from the CSVs in an output directory.
    Plot {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

#[derive(Debug)]
enum Failure {
    Validation(Error),
    Runtime(Error),
    Verification,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e)
        } else {
            Failure::Runtime(e)
        }
    }
}

fn output_dir(cfg: &ExperimentConfig, out: Option<PathBuf>) -> PathBuf {
    if let Some(o) = out {
        return o;
    }
    match std::env::var_os(harness::OUTPUT_ENV) {
        Some(root) if cfg.output.dir.is_relative() => Path::new(&root).join(&cfg.output.dir),
        _ => cfg.output.dir.clone(),
    }
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, Failure> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(Failure::Validation(Error::InvalidArgument(
            "--threads must be at least 1".into(),
        ))),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(f))
            .map_err(|e| Failure::Runtime(Error::InvalidArgument(e.to_string()))),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run {
            config,
            preset,
            out,
            threads,
            dry_run,
            timing,
        } => {
            let cfg = load_config(&config, preset)?;
            let dir = output_dir(&cfg, out);
            if dry_run {
                print!("{}", describe_plan(&cfg, &dir));
                return Ok(());
            }
            let start = Instant::now();
            let result = with_threads(threads, || execute_battery(&cfg))??;
            let mut files = write_outputs(&result, &dir)?;
            if timing {
                let setup = build_setup(&cfg, cfg.seeds.master)?;
                let t = Timing {
                    wall_clock_seconds: start.elapsed().as_secs_f64(),
                    seconds_per_compute_unit: calibrate_unit_cost(&setup, 20)?,
                    threads: threads.unwrap_or_else(rayon::current_num_threads),
                };
                files.retain(|f| f.as_os_str() != "manifest.json");
                write_manifest(&cfg, &dir, &files, Some(&t))?;
            }
            for v in &cfg.protocol.variants {
                if let Some(acc) = result.mean_final_accuracy(*v) {
                    println!("{:<10} mean final accuracy {:.4}", v.name(), acc);
                }
            }
            println!("wrote {} files to {}", files.len(), dir.display());
            Ok(())
        }
        Command::Verify { config, preset } => {
            let cfg = match config {
                Some(p) => load_config(&p, preset)?,
                None => ExperimentConfig::preset(preset.unwrap_or(Preset::Desk)),
            };
            let report = harness::verify(&cfg)?;
            print!("{report}");
            if report.all_passed() {
                Ok(())
            } else {
                Err(Failure::Verification)
            }
        }
        Command::Trajectory {
            config,
            acv,
            preset,
            seed,
            out,
        } => {
            let cfg = load_config(&config, preset)?;
            let problem = trajectory_problem(&cfg, seed.unwrap_or(cfg.seeds.master), acv)?;
            let (traj, state) = solve(&problem, cfg.trajectory.max_iters, cfg.trajectory.precision)?;
            let report = check_feasibility(&traj, &problem);
            let mut text = String::from("round,x,y,cluster\n");
            for (t, (q, a)) in traj.positions.iter().zip(traj.assignment()).enumerate() {
                text.push_str(&format!(
                    "{t},{},{},{}\n",
                    q.x,
                    q.y,
                    a.map_or(String::new(), |c| c.to_string())
                ));
            }
            match out {
                Some(p) => std::fs::write(&p, text).map_err(|e| {
                    Failure::Runtime(Error::Io {
                        context: format!("writing {}", p.display()),
                        source: e,
                    })
                })?,
                None => print!("{text}"),
            }
            eprintln!(
                "objective {:.6} after {} iterations; {}",
                traj.objective_value,
                state.objective_history.len(),
                report.summary()
            );
            Ok(())
        }
        Command::Plot { input } => {
            for f in regenerate_plots(&input)? {
                println!("{}", input.join(f).display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Verification) => ExitCode::from(3),
    }
}
