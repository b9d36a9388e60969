//! Identification of distribution-grid admittance matrices from noisy
//! smart-meter (magnitude only) and PMU (phasor) measurements.

pub mod error;
pub mod estimation;
pub mod experiment;
pub mod measurement;
pub mod metrics;
pub mod network;
pub mod powerflow;
pub mod rng;

pub use error::{GridError, Result};
