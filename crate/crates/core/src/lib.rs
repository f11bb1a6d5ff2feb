//! Entropy production and its decomposition into vertical coherences,
//! horizontal coherences and population convergence for degenerate open
//! quantum systems.

pub mod error;
pub mod qcore;
pub mod spectrum;
pub mod lindblad;
pub mod thermo;
pub mod collective;
pub mod thermalops;

pub use error::{Error, Result};
