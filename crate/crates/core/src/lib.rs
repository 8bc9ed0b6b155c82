//! Binary CT-scan classification by transfer learning: a frozen convolutional
//! backbone cut at an intermediate node, a small dense head trained with
//! RMSprop on binary cross-entropy, and the logging, reporting and
//! comparison around it.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision.

pub mod augment;
pub mod dataset;
pub mod error;
pub mod imaging;
pub mod io;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod report;
pub mod scalar;
pub mod synthetic;
pub mod training;

pub use error::{Error, ErrorFamily, Result};
pub use scalar::Scalar;

pub type ClassifierF32 = model::ClassifierModel<f32>;
pub type ClassifierF64 = model::ClassifierModel<f64>;
pub type BackboneF32 = model::Backbone<f32>;
pub type BackboneF64 = model::Backbone<f64>;
pub type DenseHeadF32 = model::DenseHead<f32>;
pub type DenseHeadF64 = model::DenseHead<f64>;
pub type TrainingDataF32 = training::TrainingData<f32>;
pub type TrainingDataF64 = training::TrainingData<f64>;
