//! Nesterov-accelerated gradient MCMC detection for uncoded MIMO systems.
//!
//! The crate provides the sampler ([`sampler`]), baseline detectors
//! ([`detectors`]), max-log soft output ([`softout`]), the Monte-Carlo
//! harness with multiplication counting ([`harness`]) and the command-line
//! front end ([`cli`]).

pub mod channel;
pub mod cli;
pub mod detectors;
pub mod error;
pub mod harness;
pub mod modem;
pub mod numerics;
pub mod rng;
pub mod sampler;
pub mod softout;

pub use error::{Error, Result};
pub use harness::complexity::{Algorithm, OpCounter, Phase};
pub use modem::Constellation;
pub use numerics::ComplexMatrix;
pub use sampler::{DetectionResult, SamplerParams};

/// Complex sample type used throughout.
pub type Complex = num_complex::Complex64;
