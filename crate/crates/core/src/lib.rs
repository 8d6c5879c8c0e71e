//! Correcting train/test class-prior mismatch in probabilistic classifiers.
//!
//! The crate bundles four correction methods (resampling, posterior
//! thresholding, cost-sensitive loss weights and bagged ensembles) with a
//! small from-scratch semi-hierarchical conversation classifier used to
//! exercise them end to end.

pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod model;
pub mod seeds;
pub mod shift;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
