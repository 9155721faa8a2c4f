//! Synchronous federated rounds for the proposed scheme and its baselines.
//!
//! Each round the server broadcasts the dense global model, every client
//! trains locally according to its variant and uploads one payload, and the
//! server applies the weighted sum of decoded payloads. Clients run in
//! parallel; everything that depends on their results is reduced in client-id
//! order, so outputs do not depend on the thread count.

mod round;
mod run;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use crate::metrics::{learning_rate_guard, LrGuard};
pub use round::{aggregate, global_loss, local_round, Contribution, LocalPlan, LocalStats};
pub use run::{run_experiment, RoundMetrics, RunOutput};

use crate::datagen::{
    sense_and_update, FeatureModel, LocalDataset, Sample, SensingModel, SpatialField, TemporalDistribution,
};
use crate::error::{Error, Result};
use crate::learner::{Architecture, ParamVector, SgdConfig};
use crate::metrics::ComputeRule;
use crate::rng::Streams;
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AlgorithmVariant {
    #[serde(rename = "sgd")]
    CentralizedSgd,
    #[serde(rename = "afl")]
    Afl,
    #[serde(rename = "afl-prune")]
    AflPrune,
    #[serde(rename = "afl-quant")]
    AflQuant,
    #[serde(rename = "2ceoafl")]
    TwoCeoAfl,
}

impl AlgorithmVariant {
    pub const ALL: [AlgorithmVariant; 5] = [
        AlgorithmVariant::CentralizedSgd,
        AlgorithmVariant::Afl,
        AlgorithmVariant::AflPrune,
        AlgorithmVariant::AflQuant,
        AlgorithmVariant::TwoCeoAfl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AlgorithmVariant::CentralizedSgd => "SGD",
            AlgorithmVariant::Afl => "AFL",
            AlgorithmVariant::AflPrune => "AFL-Prune",
            AlgorithmVariant::AflQuant => "AFL-Quant",
            AlgorithmVariant::TwoCeoAfl => "2CEOAFL",
        }
    }

    /// Config and file-name spelling.
    pub fn key(self) -> &'static str {
        match self {
            AlgorithmVariant::CentralizedSgd => "sgd",
            AlgorithmVariant::Afl => "afl",
            AlgorithmVariant::AflPrune => "afl-prune",
            AlgorithmVariant::AflQuant => "afl-quant",
            AlgorithmVariant::TwoCeoAfl => "2ceoafl",
        }
    }

    /// Whether clients warm up and prune before local training.
    pub fn prunes(self) -> bool {
        matches!(self, AlgorithmVariant::AflPrune | AlgorithmVariant::TwoCeoAfl)
    }

    pub fn is_federated(self) -> bool {
        self != AlgorithmVariant::CentralizedSgd
    }

    pub fn compute_rule(self) -> ComputeRule {
        if self.prunes() {
            ComputeRule::WarmupThenPruned
        } else {
            ComputeRule::Dense
        }
    }
}

impl fmt::Display for AlgorithmVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AlgorithmVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        AlgorithmVariant::ALL
            .into_iter()
            .find(|v| v.key() == lower || v.name().to_ascii_lowercase() == lower)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown algorithm variant {s:?}")))
    }
}

/// An append-only dataset together with its size at the start of every round.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DataTimeline {
    samples: Vec<Sample>,
    prefix: Vec<usize>,
}

impl DataTimeline {
    /// Starts from `init` and calls `sense(t, dataset)` for each later round.
    pub fn build(init: LocalDataset, rounds: usize, mut sense: impl FnMut(usize, &mut LocalDataset)) -> Self {
        let mut ds = init;
        let mut prefix = Vec::with_capacity(rounds);
        for t in 0..rounds {
            if t > 0 {
                sense(t, &mut ds);
            }
            prefix.push(ds.len());
        }
        Self {
            samples: ds.samples().to_vec(),
            prefix,
        }
    }

    /// A client's dataset sensed along its trajectory.
    #[allow(clippy::too_many_arguments)]
    pub fn sensed(
        init: LocalDataset,
        trajectory: &Trajectory,
        temporal: &TemporalDistribution,
        field: &SpatialField,
        sensing: &SensingModel,
        features: &FeatureModel,
        streams: &Streams,
        purpose: &str,
    ) -> Self {
        let owner = init.owner as u64;
        Self::build(init, trajectory.rounds(), |t, ds| {
            let mut rng = streams.rng(purpose, &[owner, t as u64]);
            sense_and_update(
                ds,
                t,
                trajectory.positions[t],
                &trajectory.indicators[t],
                temporal,
                field,
                sensing,
                features,
                &mut rng,
            );
        })
    }

    /// Union of several timelines, round by round in the given order.
    pub fn pool(parts: &[DataTimeline]) -> Result<Self> {
        let rounds = parts.first().map_or(0, |p| p.rounds());
        if parts.iter().any(|p| p.rounds() != rounds) {
            return Err(Error::InvalidArgument(
                "timelines cover different numbers of rounds".into(),
            ));
        }
        let mut samples = Vec::new();
        let mut prefix = Vec::with_capacity(rounds);
        for t in 0..rounds {
            for p in parts {
                let lo = if t == 0 { 0 } else { p.prefix[t - 1] };
                samples.extend_from_slice(&p.samples[lo..p.prefix[t]]);
            }
            prefix.push(samples.len());
        }
        Ok(Self { samples, prefix })
    }

    pub fn rounds(&self) -> usize {
        self.prefix.len()
    }

    /// The dataset available in round `t`; rounds past the end see the final dataset.
    pub fn at(&self, t: usize) -> &[Sample] {
        match self.prefix.get(t).or(self.prefix.last()) {
            Some(&n) => &self.samples[..n],
            None => &[],
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.prefix
    }
}

/// Everything a run needs, shared by all variants under one seed.
#[derive(Debug, Clone)]
pub struct Environment {
    pub arch: Architecture,
    pub sgd: SgdConfig,
    /// Quantization levels `s`.
    pub levels: u32,
    /// Per-round pruning ratios are drawn uniformly from this range; its upper
    /// end is the pruning threshold.
    pub delta_range: (f64, f64),
    pub rounds: usize,
    pub train: Vec<DataTimeline>,
    pub pooled_train: DataTimeline,
    pub test: DataTimeline,
    pub init: ParamVector,
    pub streams: Streams,
    pub unit_cost: f64,
}

impl Environment {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        arch: Architecture,
        sgd: SgdConfig,
        levels: u32,
        delta_range: (f64, f64),
        train: Vec<DataTimeline>,
        test: DataTimeline,
        init: ParamVector,
        streams: Streams,
    ) -> Result<Self> {
        sgd.validate()?;
        if train.is_empty() {
            return Err(Error::InvalidConfig("at least one client is required".into()));
        }
        let (lo, hi) = delta_range;
        if !(0.0 <= lo && lo <= hi && hi < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "pruning range [{lo}, {hi}] must lie in [0, 1)"
            )));
        }
        if levels == 0 {
            return Err(Error::InvalidConfig("quantization needs at least one level".into()));
        }
        if init.arch != arch {
            return Err(Error::InvalidConfig(
                "initial model does not match the architecture".into(),
            ));
        }
        let rounds = test.rounds();
        if train.iter().any(|d| d.rounds() != rounds) {
            return Err(Error::InvalidConfig(
                "train and test timelines cover different rounds".into(),
            ));
        }
        let pooled_train = DataTimeline::pool(&train)?;
        Ok(Self {
            arch,
            sgd,
            levels,
            delta_range,
            rounds,
            train,
            pooled_train,
            test,
            init,
            streams,
            unit_cost: 1.0,
        })
    }

    pub fn clients(&self) -> usize {
        self.train.len()
    }
}

/// Forced values used to degenerate the proposed scheme into a baseline.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunOverrides {
    pub delta: Option<f64>,
    pub q_raw: Option<f64>,
}
