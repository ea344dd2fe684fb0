//! Exact grid solver for two bosonic atoms interacting with a single trapped
//! ion in one dimension.

pub mod cache;
pub mod config;
pub mod eigensolve;
pub mod error;
pub mod grid;
pub mod hamiltonians;
pub mod meanfield;
pub mod observables;
pub mod pipeline;
pub mod potentials;
pub mod verify;

pub use error::{Error, Result};
