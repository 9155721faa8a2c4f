use super::config::{ExperimentConfig, RawRule};
use crate::datagen::{init_dataset, FeatureModel, SensingModel, SpatialField, TemporalDistribution};
use crate::error::Result;
use crate::learner::{Architecture, ParamVector};
use crate::protocol::{AlgorithmVariant, DataTimeline, Environment, RunOverrides};
use crate::rng::Streams;
use crate::trajectory::{solve, Trajectory, TrajectoryProblem};

/// The per-seed world: field, per-client temporal models and trajectories,
/// and the environment every variant trains in.
#[derive(Debug, Clone)]
pub struct SeedSetup {
    pub seed: u64,
    pub field: SpatialField,
    pub temporal: Vec<TemporalDistribution>,
    pub trajectories: Vec<Trajectory>,
    pub env: Environment,
}

pub fn architecture(cfg: &ExperimentConfig) -> Architecture {
    Architecture::new(
        cfg.environment.features.dim,
        cfg.learner.hidden,
        cfg.environment.clusters,
    )
}

fn field_and_temporal(cfg: &ExperimentConfig, streams: &Streams) -> Result<(SpatialField, Vec<TemporalDistribution>)> {
    let env = &cfg.environment;
    let field = SpatialField::random(
        env.clusters,
        &env.roi.rect(),
        env.cluster_std,
        env.cluster_margin,
        env.cluster_min_separation,
        &mut streams.rng("field", &[]),
    )?;
    let rounds = cfg.protocol.rounds.max(1);
    let temporal = (0..cfg.fleet.acvs as u64)
        .map(|u| TemporalDistribution::random(env.clusters, rounds, &mut streams.rng("temporal", &[u])))
        .collect::<Result<_>>()?;
    Ok((field, temporal))
}

/// Planning problem of client `acv` under `seed`.
pub fn trajectory_problem(cfg: &ExperimentConfig, seed: u64, acv: usize) -> Result<TrajectoryProblem> {
    let streams = Streams::new(seed);
    let (field, temporal) = field_and_temporal(cfg, &streams)?;
    let temporal = temporal.into_iter().nth(acv).ok_or_else(|| {
        crate::error::Error::InvalidArgument(format!("ACV {acv} out of range (fleet has {})", cfg.fleet.acvs))
    })?;
    TrajectoryProblem::new(
        cfg.protocol.rounds,
        field,
        temporal,
        &cfg.trajectory,
        cfg.environment.roi.clone(),
    )
}

fn plan_trajectory(
    cfg: &ExperimentConfig,
    field: &SpatialField,
    temporal: &TemporalDistribution,
) -> Result<Trajectory> {
    if cfg.protocol.rounds == 0 {
        return Ok(Trajectory {
            positions: vec![],
            indicators: vec![],
            objective_value: 0.0,
        });
    }
    let problem = TrajectoryProblem::new(
        cfg.protocol.rounds,
        field.clone(),
        temporal.clone(),
        &cfg.trajectory,
        cfg.environment.roi.clone(),
    )?;
    Ok(solve(&problem, cfg.trajectory.max_iters, cfg.trajectory.precision)?.0)
}

/// Generates data along optimized trajectories and the shared initial model.
pub fn build_setup(cfg: &ExperimentConfig, seed: u64) -> Result<SeedSetup> {
    let streams = Streams::new(seed);
    let (field, temporal) = field_and_temporal(cfg, &streams)?;
    let e = &cfg.environment;
    let features = FeatureModel::one_hot(e.clusters, e.features.dim, e.features.separation, e.features.std)?;
    let rounds = cfg.protocol.rounds;
    let mut trajectories = Vec::with_capacity(cfg.fleet.acvs);
    let mut train = Vec::with_capacity(cfg.fleet.acvs);
    let mut test = Vec::with_capacity(cfg.fleet.acvs);
    for (u, tmp) in temporal.iter().enumerate() {
        let traj = plan_trajectory(cfg, &field, tmp)?;
        let label = [u as u64];
        for (spec, which, purpose, out) in [
            (&e.train, "init-train", "sense-train", &mut train),
            (&e.test, "init-test", "sense-test", &mut test),
        ] {
            let init = init_dataset(
                u,
                tmp,
                rounds.max(1),
                spec.init_scale,
                &features,
                &mut streams.rng(which, &label),
            )?;
            let sensing = SensingModel {
                n_max: spec.n_max,
                label_purity: e.label_purity,
            };
            out.push(DataTimeline::sensed(
                init, &traj, tmp, &field, &sensing, &features, &streams, purpose,
            ));
        }
        trajectories.push(traj);
    }
    let arch = architecture(cfg);
    let init = ParamVector::init(arch, &mut streams.rng("model-init", &[]));
    let env = Environment::new(
        arch,
        cfg.learner.sgd,
        cfg.compression.levels,
        cfg.compression.delta_range,
        train,
        DataTimeline::pool(&test)?,
        init,
        streams,
    )?;
    Ok(SeedSetup {
        seed,
        field,
        temporal,
        trajectories,
        env,
    })
}

/// Overrides implied by the config for `variant`.
pub fn overrides_for(cfg: &ExperimentConfig, variant: AlgorithmVariant) -> RunOverrides {
    match (variant, cfg.compression.raw_rule) {
        (AlgorithmVariant::TwoCeoAfl, RawRule::Fixed(q)) => RunOverrides {
            delta: None,
            q_raw: Some(q),
        },
        _ => RunOverrides::default(),
    }
}
