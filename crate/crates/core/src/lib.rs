//! Simulator for dipolar-coupled nuclear-spin clusters: Hamiltonians, state
//! propagation, pulse sequences, relaxation and simulated spectroscopy.

pub mod coherence;
pub mod config;
pub mod dense;
pub mod error;
pub mod experiment;
pub mod expm;
pub mod measurement;
pub mod operator;
pub mod protocol;
pub mod relaxation;
pub mod sequence;
pub mod spin_system;
pub mod state;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
