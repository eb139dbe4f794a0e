//! Point cloud classification and part segmentation.
//!
//! A CPU implementation of a point cloud classifier/segmenter built from
//! adaptive dilated neighbor grouping, error-minimizing local feature modules
//! and a full-resolution / multi-resolution branch pair merged by a channel
//! gate. Every layer has a hand-written backward pass checked against central
//! finite differences (see [`gradsuite`]).
//!
//! Module map:
//!
//! * [`numerics`]: tensors, GEMM, RNG, parameter store, finite differences
//! * [`geometry`]: distances, candidate search, knn, FPS, feature propagation
//! * [`grouping`]: learned per-point dilation factors and dilated selection
//! * [`layers`]: MLP/BN/activations, graph encoding, back-projection, E-M module
//! * [`network`]: FR and MR branches, gated merge, task heads, losses
//! * [`trainer`]: optimizers, schedules, augmentation, voting, metrics, training
//! * [`data`]: synthetic datasets, cloud text files, binary checkpoints
//! * [`config`]: flat `key=value` run configuration

pub mod config;
pub mod data;
pub mod dump;
mod error;
pub mod geometry;
pub mod gradsuite;
pub mod grouping;
pub mod layers;
pub mod network;
pub mod numerics;
pub mod trainer;

pub use error::{Error, Result};
pub use numerics::{IndexMatrix, ParamId, ParamStore, Real, SplitMix64, Tensor};
