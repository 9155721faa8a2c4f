//! Configuration, experiment batteries, artifact emission and self-checks.

mod battery;
mod build;
pub mod config;
pub mod plot;
pub mod verify;

use std::time::Instant;

pub use battery::{
    bound_for_run, describe_plan, execute_battery, overhead_cdf, regenerate_plots, run_battery, sha256_hex,
    write_manifest, write_outputs, BatteryResult, BoundSummary, RunRecord, Timing,
};
pub use build::{architecture, build_setup, overrides_for, trajectory_problem, SeedSetup};
pub use config::{load_config, parse_config, ExperimentConfig, Preset};
pub use verify::{verify, SuiteResult, VerifyReport};

use crate::error::Result;
use crate::learner::{masked_sgd_steps, Mask};

/// Environment variable naming the default output root.
pub const OUTPUT_ENV: &str = "AEROFL_OUT";

/// Mean wall-clock seconds of one dense local round on client 0's initial
/// data, over `repeats` timed rounds.
pub fn calibrate_unit_cost(setup: &SeedSetup, repeats: usize) -> Result<f64> {
    let env = &setup.env;
    let data = env.train[0].at(0);
    let ones = Mask::ones(env.init.len());
    let mut rng = env.streams.rng("calibration", &[]);
    let start = Instant::now();
    for _ in 0..repeats.max(1) {
        masked_sgd_steps(
            &env.init,
            &ones,
            env.sgd.steps(1),
            env.sgd.local_lr.initial,
            data,
            env.sgd.batch_size,
            &mut rng,
        )?;
    }
    Ok(start.elapsed().as_secs_f64() / repeats.max(1) as f64)
}
