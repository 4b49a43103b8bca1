//! Deterministic strategic-asset-allocation engine.

pub mod cio;
pub mod cma;
pub mod error;
pub mod exec;
pub mod json;
pub mod linalg;
pub mod market;
pub mod pc;
pub mod pipeline;
pub mod regime;
pub mod review;
pub mod risk;
pub mod solver;

pub use error::{Result, SaaError};
pub use exec::Execution;
