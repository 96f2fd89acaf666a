//! Finite-element Kalman filtering of 2-D diffusion fields, centralized and
//! distributed over overlapping subdomains with Schwarz-type consensus.

pub mod decomposition;
pub mod error;
pub mod filter;
pub mod harness;
pub mod linalg;
pub mod mesh;
pub mod model;
pub mod stability;

pub use error::{Error, Result};
