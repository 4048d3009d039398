//! Nonlocal Hele-Shaw-Cahn-Hilliard dynamics.
//!
//! The crate covers the memory kernel obtained from the transient Stokes
//! cell problem across a thin gap, fast causal convolutions against that
//! kernel, a convective Cahn-Hilliard stepper, the coupled 2D nonlocal
//! Hele-Shaw-Cahn-Hilliard solver, a thin-strip Stokes-Cahn-Hilliard model
//! used to validate the thin-film limit, and the diagnostics that go with
//! them.

pub mod config;
pub mod convolution;
pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod hsch;
pub mod kernel;
pub mod phase_field;
pub mod runner;
pub mod thin_layer;

pub use error::{Error, Result};
