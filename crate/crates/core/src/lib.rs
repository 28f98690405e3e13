//! Correlated Monte Carlo damage ensembles over building portfolios, with a
//! mean-field phase-analysis layer.
//!
//! The crate simulates scenario shaking against a building inventory,
//! sweeps (magnitude, structural-diversity) grids to map where portfolio
//! damage switches from independent failures to collective all-or-nothing
//! behavior, and fits the resulting phase surface with a random-field
//! Ising mean-field model for susceptibility, correlation-length, and
//! free-energy diagnostics.

pub mod cli;
pub mod config;
pub mod critstats;
pub mod damage;
pub mod ensemble;
pub mod error;
pub mod hazard;
pub mod inventory;
pub mod linalg;
pub mod numeric;
pub mod output;
pub mod rfim;
pub mod rng;

pub use error::{Error, Result};
