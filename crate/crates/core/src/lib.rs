//! Generic event boundary detection from multi-stage per-frame features.
//!
//! The pipeline: per-stage dilated convolution branches turn each stage's
//! features into several normalized views, neighbour-frame distances of those
//! views are fused into one temporal similarity signal, a stack of dilated
//! convolutions decodes it, and a small head emits per-frame boundary
//! probabilities. Post-processing smooths the probabilities and keeps local
//! maxima; the evaluator scores detections by F1 at relative distance.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod decoder;
pub mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod postprocess;
pub mod scalar;
pub mod tape;
pub mod tensor;
pub mod tps;
pub mod train;

pub use data::{Annotation, Clip, ClipSpan, LabelVector, VideoFeatures};
pub use error::{Error, Result};
pub use eval::EvalReport;
pub use model::{ModelConfig, ModelParams};
pub use postprocess::{BoundaryScores, DetectionList};
pub use scalar::Scalar;
pub use tape::{GradTape, Gradients, Var};
pub use tensor::SeqTensor;
pub use train::{TrainConfig, TrainExample};

pub type SeqTensor32 = SeqTensor<f32>;
pub type SeqTensor64 = SeqTensor<f64>;
pub type VideoFeatures32 = VideoFeatures<f32>;
pub type VideoFeatures64 = VideoFeatures<f64>;
pub type ModelParams32 = ModelParams<f32>;
pub type ModelParams64 = ModelParams<f64>;
pub type GradTape32 = GradTape<f32>;
pub type GradTape64 = GradTape<f64>;
