//! Task-based CSI compression with channel charting.
//!
//! Channels are embedded into low-dimensional chart locations by a learnable
//! charting encoder, decoded into single-user precoders by a random Fourier
//! feature network, and turned into multi-user precoding matrices with
//! classical linear precoders.
//!
//! The numeric core is generic over the real scalar ([`Scalar`], implemented
//! for `f32` and `f64`); the `*64` / `*32` aliases below name the common
//! instantiations. Gradient verification and persisted files use `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // Negated comparisons reject NaN.

pub mod charting;
pub mod datagen;
pub mod error;
pub mod evaluate;
pub mod linalg;
pub mod model;
pub mod scalar;
pub mod training;

mod binio;

pub use binio::write_atomic;
pub use error::{Error, FormatError, Result};
pub use scalar::Scalar;

pub use num_complex::Complex;

pub type Complex64 = Complex<f64>;
pub type Complex32 = Complex<f32>;

pub type ChannelSample64 = datagen::ChannelSample<f64>;
pub type Dataset64 = datagen::Dataset<f64>;
pub type Dataset32 = datagen::Dataset<f32>;
pub type Chart64 = charting::Chart<f64>;
pub type DistanceMatrix64 = charting::DistanceMatrix<f64>;
pub type Model64 = model::Model<f64>;
pub type Model32 = model::Model<f32>;
pub type EncoderParams64 = model::EncoderParams<f64>;
pub type DecoderParams64 = model::DecoderParams<f64>;
pub type GradientSet64 = training::GradientSet<f64>;
pub type PrecodingMatrix64 = evaluate::PrecodingMatrix<f64>;
pub type RhoStats64 = evaluate::RhoStats<f64>;
