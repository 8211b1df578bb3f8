//! Stochastic Kuramoto–Sivashinsky simulation on the periodic line.
//!
//! The crate is organised bottom-up: [`spectral`] holds the Fourier field
//! type, [`noise`] the additive forcing and random streams, [`phi`] the
//! shifted dissipation profile, [`integrator`] the time steppers, and
//! [`diagnostics`] and [`metrics`] the checks evaluated on simulated data.

pub mod assignment;
pub mod diagnostics;
pub mod error;
pub mod integrator;
pub mod metrics;
pub mod noise;
pub mod phi;
pub mod spectral;

pub use error::{KseError, Result};
pub use spectral::{SpectralField, TorusSpec};
