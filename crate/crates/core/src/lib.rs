//! Simulation of a two-qubit polarization Bell test in which one party may
//! secretly adapt his settings to the other's, and detection of that cheat
//! with a loop consistency check on the over-complete correlation matrix.

pub mod error;
pub mod measurement;
pub mod numerics;
pub mod simulator;
pub mod spamloop;
pub mod states;
pub mod tomography;

pub use error::{Error, Result};
