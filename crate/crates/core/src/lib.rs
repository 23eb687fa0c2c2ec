//! Numerical lab for the spatially extended FitzHugh-Nagumo mean-field model.

pub mod error;
pub mod harness;
pub mod hopfcole;
pub mod kinetic;
pub mod macro_limit;
pub mod model;
pub mod particles;
pub mod par;
pub mod phase_grid;

pub use error::{Error, Result};
