//! Quantum-jump simulation of two laser-driven three-level atoms coupled by
//! the dipole-dipole interaction on their metastable transition.
//!
//! The modules build on each other bottom-up:
//!
//! - [`hilbert`]: the 9-dimensional two-atom space and atomic operators.
//! - [`coupling`]: distance and angle dependence of the cross coefficients.
//! - [`dynamics`]: conditional generator, jump channels, single trajectories.
//! - [`oracle`]: master-equation integration used as ground truth.
//! - [`jumpstats`]: binning, bright/dark classification, flips, sweeps, fits.
//! - [`harness`]: configuration, batch execution and file output for the CLI.

pub mod coupling;
pub mod dynamics;
pub mod error;
pub mod fmt;
pub mod harness;
pub mod hilbert;
pub mod jumpstats;
pub mod oracle;
pub mod rng;

pub use error::{Error, Result};
