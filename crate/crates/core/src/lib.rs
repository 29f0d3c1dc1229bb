//! Detection of the number of signals in a signal-plus-noise matrix with a
//! heterogeneous noise variance profile, using edge-eigenvalue gap ratios.
//!
//! The crate is organized bottom-up:
//!
//! * [`spectra`]: descending eigenvalue lists of Gram and symmetric matrices.
//! * [`model`]: variance profiles, low-rank signals, noise generators and the
//!   GOE / Wishart reference ensembles.
//! * [`dyson`]: the vector Dyson equation, its density, right edge and
//!   square-root coefficient.
//! * [`freeconv`]: rectangular free convolution with the Marchenko–Pastur law.
//! * [`stats`]: the gap-ratio statistics and the sequential rank estimator.
//! * [`montecarlo`]: critical values, type-I error, power and Tracy–Widom
//!   checks.
//! * [`dbm`]: the rectangular Dyson Brownian motion.

pub mod dbm;
pub mod dyson;
pub mod error;
pub mod freeconv;
pub mod io;
pub mod model;
pub mod montecarlo;
pub mod rng;
pub mod spectra;
pub mod stats;

pub use dbm::{DbmConfig, DbmState};
pub use dyson::{DysonEdge, DysonSolver};
pub use error::{Error, Result};
pub use freeconv::{RfcEdge, RfcQuery};
pub use model::{DataMatrixSample, Provenance, SignalSpec, VarianceProfile};
pub use montecarlo::{CriticalTable, ExperimentReport, Setting};
pub use spectra::Spectrum;
pub use stats::{Statistic, Thresholds};
