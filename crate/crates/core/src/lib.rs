//! Compositional neural module networks for image captioning.

pub mod ablate;
pub mod check;
pub mod config;
pub mod controller;
pub mod corpus;
pub mod decode;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod labels;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod presets;
pub mod tensor;
pub mod trace;
pub mod train;

pub use config::{FusionStrategy, ModelConfig};
pub use error::{CnmError, Result};
pub use labels::{pos_to_module_label, ModuleKind, ModuleLabel, PosTag, WordClass};
pub use model::CnmModel;
pub use presets::Preset;
pub use tensor::{Real, Tensor};
