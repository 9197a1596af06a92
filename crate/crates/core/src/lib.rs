//! Hard instances for memory-constrained convex optimization, the oracle that
//! answers queries on them, reference optimizers with explicit memory
//! accounting, and the tooling used to measure their behaviour.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix `f64`, which is what the command line uses.

pub mod encoding;
pub mod game;
pub mod geometry;
pub mod instance;
pub mod instrument;
pub mod linalg;
pub mod optimizer;
pub mod oracle;
pub mod rng;
pub mod scalar;

pub use scalar::Scalar;

pub type Instance = instance::HardInstance<f64>;
pub type Instance32 = instance::HardInstance<f32>;
pub type Answer = oracle::OracleAnswer<f64>;
pub type Transcript = optimizer::Transcript<f64>;
