//! Frame attention aggregation for video-level classification.
//!
//! Per-frame feature vectors are pooled into one video representation by
//! a self-attention weight per frame followed by a relation-attention
//! weight that compares each frame with an attention-weighted global
//! anchor. The crate provides the head with exact gradients, momentum
//! SGD training, evaluation and cross-validation, the FANF/FANP file
//! formats and a synthetic planted-peak benchmark.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the double-precision instantiation used for training.

pub mod checkpoint;
pub mod datastore;
pub mod error;
pub mod evaluator;
pub mod fanhead;
pub mod gradcheck;
pub mod numkernel;
pub mod sampler;
pub mod scalar;
pub mod trainer;

pub use error::{FanError, Result};
pub use fanhead::Mode;
pub use scalar::Scalar;

pub type Vector64 = numkernel::Vector<f64>;
pub type Matrix64 = numkernel::Matrix<f64>;
pub type FanParams64 = fanhead::FanParams<f64>;
pub type FanGradients64 = fanhead::FanGradients<f64>;
pub type AttentionTrace64 = fanhead::AttentionTrace<f64>;
pub type Dataset64 = datastore::Dataset<f64>;

pub type Vector32 = numkernel::Vector<f32>;
pub type Matrix32 = numkernel::Matrix<f32>;
pub type FanParams32 = fanhead::FanParams<f32>;
pub type Dataset32 = datastore::Dataset<f32>;
