pub mod error;
pub mod flow;
pub mod model;
pub mod pipeline;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{HtNet, HtNetParams, ModelConfig};
pub use pipeline::{RunConfig, SpotParams};
pub use tensor::{Graph, Tensor, Var};
pub use train::{Class, ConfusionMatrix, Dataset, LosoReport, Manifest, ManifestEntry, TrainConfig};
