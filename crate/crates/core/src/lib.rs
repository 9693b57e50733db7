//! Decorrelate-and-debias inference for confounded high-dimensional linear
//! models, with simultaneous testing at a target false discovery rate.

pub mod data;
pub mod bench;
pub mod config;
pub mod debias;
pub mod error;
pub mod mtp;
pub mod regression;
pub mod rng;
pub mod simgen;
pub mod spectral;

pub use error::{Error, ErrorClass, Result};
