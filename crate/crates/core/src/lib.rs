//! Topology optimization on structured grids with densities coupled to
//! piece-wise linear projection profiles.

pub mod adjoint;
pub mod config;
pub mod constraints;
pub mod continuation;
pub mod error;
pub mod filter;
pub mod grid;
pub mod mma;
pub mod optimizer;
pub mod output;
pub mod pipeline;
pub mod profile;

pub use error::{ConfigError, NumericalError, OutputError, Result};
