//! Disaggregation of rooftop PV generation from net-metered household load.
//!
//! Numerics are generic over the scalar type; the aliases below fix it to
//! `f64`, which is what the pipeline uses end to end.

pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod hi;
pub mod model;
pub mod numerics;
pub mod optim;
pub mod scalar;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix = numerics::Matrix<f64>;
pub type Graph<'a> = numerics::Graph<'a, f64>;
pub type ModelParams = model::ModelParams<f64>;
pub type HiParams = hi::HiParams<f64>;
pub type AttentionParams = attention::AttentionParams<f64>;
