//! Bayesian multi-target tracking from image sequences with trans-dimensional
//! MCMC over track sets.

pub mod birth;
pub mod dynamics;
pub mod error;
pub mod filtering;
pub mod gaussian;
pub mod io;
pub mod metrics;
pub mod model;
pub mod moves;
pub mod params;
pub mod pgibbs;
pub mod representation;
pub mod sampler;
pub mod scenario;
pub mod scene;
pub mod state;

pub use error::{Error, Result};
