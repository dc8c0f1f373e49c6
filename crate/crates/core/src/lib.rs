//! A deterministic laboratory for elastic synchronous data-parallel SGD.
//!
//! The crate trains desk-scale models under a changing number of workers and
//! compares how optimizers react when the global batch size changes mid-run,
//! chiefly linear learning-rate scaling against a momentum compensation ramp
//! ("Dynamic SGD"). A scheduler/parameter-server cluster reproduces the
//! simulation exactly, and the analysis module checks the noise and
//! convergence theory by Monte-Carlo.

pub mod analysis;
pub mod cluster;
pub mod compare;
pub mod config;
pub mod data;
pub mod engine;
pub mod error;
pub mod model;
pub mod optim;
pub mod params;
pub mod rng;
pub mod schedule;

pub use error::{Error, Result};
pub use params::ParamVector;
