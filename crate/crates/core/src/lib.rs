//! Measuring positional bias in text embedding models.

pub mod ablation;
pub mod corpus;
pub mod decomposition;
pub mod error;
pub mod harness;
pub mod numerics;
mod parallel;
pub mod providers;
pub mod rng;
pub mod toy_encoder;
pub mod truncation_model;

pub use error::{Error, Result};
