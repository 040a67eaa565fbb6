//! Collaborative learning on top of the secret-sharing engine: a small dense
//! network stack, datasets, the four training scenarios and a
//! membership-inference harness.

pub mod attack;
pub mod backend;
pub mod data;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod protocol;
pub mod report;

pub use backend::{Backend, Plain, Secure};
pub use data::{LabeledDataset, PartSpec, SplitSpec, Splits, SyntheticParams};
pub use error::{LearnError, Result};
pub use metrics::{evaluate, Evaluation, LabelMetrics};
pub use nn::{Activation, ModelConfig, Net, NetShape, Tensor, TrainConfig};
pub use protocol::{Method, ScenarioConfig, ScenarioResult, TrainedModel};
