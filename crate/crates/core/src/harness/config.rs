use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::datagen::RoiConfig;
use crate::error::{Error, Result};
use crate::geom::Point2;
use crate::learner::{LrSchedule, SgdConfig};
use crate::protocol::AlgorithmVariant;
use crate::trajectory::TrajectoryParams;

pub const SCHEMA_VERSION: u32 = 1;

/// Named bundles of defaults that a config file is merged onto.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Full-scale setting: 10 clients, 100 rounds, 10 classes.
    Paper,
    /// Reduced setting that runs in well under two minutes.
    Desk,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            other => Err(Error::InvalidConfig(format!(
                "unknown preset {other:?} (expected paper or desk)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensingSpec {
    /// Arrival budget per round.
    pub n_max: usize,
    /// Initial samples per class are `ceil(mean psi_c * init_scale)`.
    pub init_scale: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSpec {
    pub dim: usize,
    pub separation: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentConfig {
    pub roi: RoiConfig,
    pub clusters: usize,
    pub cluster_std: (f64, f64),
    pub cluster_margin: f64,
    pub cluster_min_separation: f64,
    pub label_purity: f64,
    pub features: FeatureSpec,
    pub train: SensingSpec,
    pub test: SensingSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FleetConfig {
    pub acvs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerConfig {
    pub hidden: usize,
    pub sgd: SgdConfig,
}

/// How the raw-offload probability is chosen each round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum RawRule {
    /// Equal to the realized pruning ratio.
    Delta,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompressionConfig {
    pub levels: u32,
    pub delta_range: (f64, f64),
    pub raw_rule: RawRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    pub variants: Vec<AlgorithmVariant>,
    pub rounds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedConfig {
    pub master: u64,
    pub replications: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundConfig {
    /// Multiplier applied to the probed smoothness estimate.
    pub beta_safety: f64,
    pub beta_probes: usize,
    pub beta_step: f64,
    pub sigma_draws: usize,
    pub rho1: f64,
    pub rho2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub preset: Option<Preset>,
    pub environment: EnvironmentConfig,
    pub fleet: FleetConfig,
    pub trajectory: TrajectoryParams,
    pub learner: LearnerConfig,
    pub compression: CompressionConfig,
    pub protocol: ProtocolConfig,
    pub seeds: SeedConfig,
    pub bound: BoundConfig,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        let (acvs, rounds, clusters, hidden, replications) = match preset {
            Preset::Paper => (10, 100, 10, 32, 1),
            Preset::Desk => (4, 30, 4, 16, 3),
        };
        Self {
            version: SCHEMA_VERSION,
            preset: Some(preset),
            environment: EnvironmentConfig {
                roi: RoiConfig {
                    width: 200.0,
                    height: 200.0,
                    gbs_position: Point2::ORIGIN,
                    altitude: 50.0,
                    fov: vec![0.5],
                },
                clusters,
                cluster_std: (4.0, 12.0),
                cluster_margin: 15.0,
                cluster_min_separation: 40.0,
                label_purity: 0.8,
                features: FeatureSpec {
                    dim: 16,
                    separation: 2.0,
                    std: 1.5,
                },
                train: SensingSpec {
                    n_max: 420,
                    init_scale: 512,
                },
                test: SensingSpec {
                    n_max: 80,
                    init_scale: 128,
                },
            },
            fleet: FleetConfig { acvs },
            trajectory: TrajectoryParams::default(),
            learner: LearnerConfig {
                hidden,
                sgd: SgdConfig {
                    local_lr: LrSchedule {
                        initial: 0.1,
                        factor: 0.9,
                        every: 50,
                    },
                    global_lr: LrSchedule {
                        initial: 0.1,
                        factor: 0.9,
                        every: 20,
                    },
                    kappa: 5,
                    rho: 1,
                    batch_size: 64,
                    batches_per_round: 5,
                },
            },
            compression: CompressionConfig {
                levels: 3,
                delta_range: (0.05, 0.7),
                raw_rule: RawRule::Delta,
            },
            protocol: ProtocolConfig {
                variants: AlgorithmVariant::ALL.to_vec(),
                rounds,
            },
            seeds: SeedConfig {
                master: 2024,
                replications,
            },
            bound: BoundConfig {
                beta_safety: 2.0,
                beta_probes: 10,
                beta_step: 1e-4,
                sigma_draws: 30,
                rho1: 1.0,
                rho2: 1.0,
            },
            output: OutputConfig {
                dir: PathBuf::from("aerofl-out"),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.version != SCHEMA_VERSION {
            return bad(format!(
                "unsupported schema version {} (expected {SCHEMA_VERSION})",
                self.version
            ));
        }
        let env = &self.environment;
        env.roi.validate()?;
        if self.fleet.acvs == 0 {
            return bad("fleet.acvs must be at least 1".into());
        }
        if env.roi.fov.len() != 1 && env.roi.fov.len() != self.fleet.acvs {
            return bad("roi.fov needs one entry or one per ACV".into());
        }
        if env.clusters == 0 {
            return bad("environment.clusters must be at least 1".into());
        }
        if env.clusters > 2 * env.features.dim {
            return bad(format!(
                "{} classes need a feature dimension of at least {}",
                env.clusters,
                env.clusters.div_ceil(2)
            ));
        }
        if !(0.0..=1.0).contains(&env.label_purity) {
            return bad("label_purity must lie in [0, 1]".into());
        }
        if env.train.init_scale == 0 || env.test.init_scale == 0 {
            return bad("init_scale must be positive".into());
        }
        self.trajectory.validate()?;
        if self.learner.hidden == 0 {
            return bad("learner.hidden must be at least 1".into());
        }
        self.learner.sgd.validate()?;
        let c = &self.compression;
        if c.levels == 0 {
            return bad("compression.levels must be at least 1".into());
        }
        let (lo, hi) = c.delta_range;
        if !(0.0 <= lo && lo <= hi && hi < 1.0) {
            return bad(format!("delta_range [{lo}, {hi}] must lie in [0, 1)"));
        }
        if let RawRule::Fixed(q) = c.raw_rule {
            if !(0.0..=1.0).contains(&q) {
                return bad(format!("fixed raw probability {q} outside [0, 1]"));
            }
        }
        if self.protocol.variants.is_empty() {
            return bad("protocol.variants must not be empty".into());
        }
        let mut seen = self.protocol.variants.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.protocol.variants.len() {
            return bad("protocol.variants lists a variant twice".into());
        }
        if self.seeds.replications == 0 {
            return bad("seeds.replications must be at least 1".into());
        }
        let b = &self.bound;
        if !(b.beta_safety >= 1.0) || b.beta_probes == 0 || !(b.beta_step > 0.0) || b.sigma_draws < 30 {
            return bad("bound: need beta_safety >= 1, beta_probes >= 1, beta_step > 0, sigma_draws >= 30".into());
        }
        if !(b.rho1 >= 1.0) || !(b.rho2 >= 0.0) {
            return bad("bound: need rho1 >= 1 and rho2 >= 0".into());
        }
        Ok(())
    }

    /// Seeds of the replications, in order.
    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds.replications as u64)
            .map(|i| self.seeds.master.wrapping_add(i))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

/// Recursively overlay `patch` onto `base`; objects merge key by key, anything
/// else replaces.
pub fn deep_merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => deep_merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses `text` as a config merged over a preset.
///
/// The preset is `preset` if given, else the file's own `preset` key, else
/// the desk preset. Blank text stands for an empty object.
pub fn parse_config(text: &str, preset: Option<Preset>, source: &Path) -> Result<ExperimentConfig> {
    let parse_err = |e| Error::Parse {
        path: source.to_path_buf(),
        source: e,
    };
    let patch: Value = if text.trim().is_empty() {
        Value::Object(Default::default())
    } else {
        serde_json::from_str(text).map_err(parse_err)?
    };
    if !patch.is_object() {
        return Err(Error::InvalidConfig(format!(
            "{}: top level must be a JSON object",
            source.display()
        )));
    }
    let from_file = match patch.get("preset") {
        Some(Value::Null) | None => None,
        Some(v) => Some(serde_json::from_value::<Preset>(v.clone()).map_err(parse_err)?),
    };
    let chosen = preset.or(from_file).unwrap_or(Preset::Desk);
    let mut merged = serde_json::to_value(ExperimentConfig::preset(chosen)).expect("preset serializes");
    deep_merge(&mut merged, patch);
    merged["preset"] = serde_json::to_value(chosen).expect("preset serializes");
    let cfg: ExperimentConfig = serde_json::from_value(merged).map_err(parse_err)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path, preset: Option<Preset>) -> Result<ExperimentConfig> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_config(&text, preset, path)
}
