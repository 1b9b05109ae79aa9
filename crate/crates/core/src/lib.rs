//! Multilevel multiple imputation for longitudinal three-level data.

pub mod config;
pub mod data;
pub mod dgp;
pub mod error;
pub mod harness;
pub mod impute;
pub mod linalg;
pub mod lmm;
pub mod model;
pub mod pooling;
pub mod rng;
pub mod scalar;
pub mod smc;

pub use error::{Error, Result};
