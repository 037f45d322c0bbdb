//! Feature-after-feature multimodal fusion.
//!
//! Pre-extracted face, body and text feature vectors are aligned to a
//! common width, stacked into a modality-row map, optionally re-weighted per
//! modality by a learned gate, convolved, re-weighted per channel by a
//! squeeze-and-excitation block, max-pooled and classified.
//!
//! The numeric core ([`Tensor`], [`autodiff::Graph`], [`layers`],
//! [`FafModel`]) is generic over [`Scalar`]: training runs in `f32` and
//! gradient verification re-runs the same graph in `f64`.

pub mod autodiff;
pub mod checkpoint;
pub mod checks;
pub mod data;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod layers;
pub mod metrics;
pub mod modality;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use data::{Dataset, FeatureRecord, Features};
pub use error::{Error, Result};
pub use modality::{Modality, ModalitySet};
pub use model::{FafModel, ModelConfig, Prediction};
pub use scalar::Scalar;
pub use tensor::{ParamSet, Tensor};

/// Training/inference precision.
pub type Tensor32 = Tensor<f32>;
/// Gradient-check precision.
pub type Tensor64 = Tensor<f64>;
pub type Graph32 = autodiff::Graph<f32>;
pub type Graph64 = autodiff::Graph<f64>;
/// A model as trained, checkpointed and served.
pub type Model = FafModel<f32>;
/// A model re-cast for 64-bit gradient checking.
pub type Model64 = FafModel<f64>;
