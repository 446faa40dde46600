//! Non-Gaussian fermionic states after interaction quenches: exact dynamics,
//! correlation measurement, four-point state reconstruction and entanglement
//! spectrum diagnostics.

pub mod analysis;
pub mod config;
pub mod correlations;
pub mod error;
pub mod fock;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod measurement;
pub mod model;
pub mod reconstruction;
pub mod validate;

pub use error::{Error, Result};
