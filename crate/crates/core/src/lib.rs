//! Bayesian VARs with Minnesota priors and post-estimation sparsification.

pub mod cli;
pub mod config;
pub mod data;
pub mod dgp;
pub mod error;
pub mod evaluation;
pub mod forecast;
pub mod linalg;
pub mod minnesota;
pub mod posterior;
pub mod precision;
pub mod rng;
pub mod savs;
pub mod var_core;

pub use error::{BvarError, Result};
