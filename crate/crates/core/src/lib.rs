// Validation uses `!(x > 0.0)` style checks on purpose so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops read more directly than iterator chains in the numeric kernels.
#![allow(clippy::needless_range_loop)]

pub mod compression;
pub mod datagen;
pub mod error;
pub mod geom;
pub mod harness;
pub mod learner;
pub mod metrics;
pub mod protocol;
pub mod rng;
pub mod trajectory;

pub use compression::{OffloadPayload, PayloadKind};
pub use datagen::Sample;
pub use error::{Error, Result};
pub use harness::{ExperimentConfig, Preset};
pub use learner::{Architecture, Mask, ParamVector};
pub use protocol::{AlgorithmVariant, RoundMetrics};
pub use trajectory::{Trajectory, TrajectoryProblem};
