//! Input-loss curvature memorization scores for small dense classifiers.
//!
//! The library is generic over the scalar type (`f32` or `f64`); the aliases
//! below fix it to `f64`, which all experiments use by default.

pub mod curvature;
pub mod datasets;
pub mod error;
pub mod experiments;
pub mod export;
pub mod metrics;
pub mod nn;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Network64 = nn::Network<f64>;
pub type Network32 = nn::Network<f32>;
pub type Dataset64 = datasets::Dataset<f64>;
pub type Dataset32 = datasets::Dataset<f32>;
pub type Ledger64 = curvature::CurvatureLedger<f64>;
pub type Normalizer64 = datasets::Normalizer<f64>;
pub type TrainingOutcome64 = experiments::TrainingOutcome<f64>;
