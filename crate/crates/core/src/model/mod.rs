//! Decoder-only transformer over lag tokens.

pub mod checkpoint;
pub mod config;
pub mod inference;
pub mod transformer;

pub use checkpoint::{Checkpoint, TrainingMeta, FORMAT_VERSION};
pub use config::ModelConfig;
pub use inference::KvCache;
pub use transformer::{param_specs, rmsnorm, Model, ParamSpec, RMS_EPS};
