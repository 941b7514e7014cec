//! Class-distance weighted cross-entropy for ordinal classification, with
//! cross-entropy and CORN baselines, a small MLP trained by Adam, quadratic
//! weighted kappa, and a group-aware cross-validation harness.

pub mod data;
pub mod error;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod numeric;

pub use data::{Dataset, SyntheticConfig};
pub use error::{Error, Result};
pub use harness::{DataSource, ExperimentConfig, ExperimentReport, RunOptions};
pub use losses::{ClassIndex, HeadKind, LossKind, Objective, PowerTerm};
pub use metrics::{ConfusionMatrix, MetricSummary};
pub use model::{MlpModel, TrainConfig};
pub use numeric::{Mat2, OrdinalDistribution, Vec1};
