//! Hybrid continuous/discrete diffusion over categorical sequences.

pub mod analytics;
pub mod cli;
pub mod denoise;
pub mod error;
pub mod frontier;
pub mod kernel;
pub mod quadrature;
pub mod rng;
pub mod sampler;
pub mod special;
pub mod toy;

pub use error::{CandiError, Result};
