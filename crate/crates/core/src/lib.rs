//! Desk-scale multimodal defect classification on synthetic dot-pattern data.
//!
//! The pipeline synthesizes class-conditional Gaussian dot images with paired
//! numeric records ([`datasynth`]), recovers statistics from rasters
//! ([`perception`]), turns them into two text modalities ([`textbridge`]),
//! encodes image and text ([`model`]), aligns the encoders progressively with
//! an image-text contrastive objective ([`alignment`]), fuses the modalities
//! with gated cross-attention and evaluates with per-class and macro f1
//! ([`harness`]).
//!
//! All math is generic over [`Scalar`]; training runs in `f32` and gradient
//! checks in `f64`. The aliases below name the two concrete instantiations.

pub mod alignment;
pub mod datasynth;
pub mod error;
pub mod harness;
pub mod model;
pub mod numerics;
pub mod perception;
pub mod scalar;
pub mod textbridge;

pub use error::{Error, Result};
pub use numerics::{Graph, ParamStore, RngStream, Tensor};
pub use scalar::{DType, Scalar};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Graph32 = Graph<f32>;
pub type Graph64 = Graph<f64>;
pub type ParamStore32 = ParamStore<f32>;
pub type ParamStore64 = ParamStore<f64>;
pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;
