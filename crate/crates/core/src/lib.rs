//! Contrastive arbitrary style transfer.
//!
//! A frozen VGG backbone feeds a multi-layer style projector whose codes are
//! trained with a memory-bank InfoNCE loss. An encoder–decoder generator is
//! modulated by those codes and trained against two patch discriminators with
//! cycle consistency.

pub mod bank;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod features;
pub mod imaging;
pub mod networks;
pub mod nn;
pub mod objectives;
pub mod projector;
pub mod toy;
pub mod trainer;

pub use bank::StyleBank;
pub use config::ModelConfig;
pub use error::{Error, Result};
pub use features::{ExtractorWeights, FeatureExtractor, FeaturePyramid};
pub use imaging::{Domain, ImageTensor};
pub use networks::CastModel;
pub use projector::{StyleCode, StyleProjector};
pub use trainer::{TrainConfig, Trainer};
