//! Quantum-jump telegraph signals from atoms strongly coupled to an optical
//! cavity.
//!
//! The crate covers the full loop from a physical model to inference:
//!
//! - [`physics`]: closed-form cavity transmission for one and two atoms and
//!   the mode-displacement that maximises their contrast.
//! - [`simulate`]: exact continuous-time jump trajectories and the Poisson
//!   photon clicks they modulate.
//! - [`signal`]: binning, count histograms, g²(τ), ensemble averages and
//!   exponential fits.
//! - [`filter`]: the recursive Bayesian state estimator (predict with the rate
//!   equations, update with Bayes' rule) plus entropy diagnostics.
//! - [`estimate`]: mixture weights from histograms, rate decomposition and the
//!   iterative self-consistent two-atom rate fit.
//! - [`hmm`]: a discrete-time hidden Markov model with Poisson emissions
//!   (forward-backward, EM, model-order selection).
//!
//! All frequencies are angular (rad/s). Use [`units::mhz`] to convert the
//! customary `2π × MHz` figures.
//!
//! ```
//! use telegraph::physics::{CavityParams, DetuningPoint, transmission_one_atom};
//! use telegraph::units::mhz;
//!
//! let cavity = CavityParams::cs_high_finesse();
//! let point = DetuningPoint::new(mhz(38.0), mhz(9.0)).unwrap();
//! let t1 = transmission_one_atom(&cavity, &point).unwrap();
//! assert!((t1 - 0.0333).abs() < 1e-3);
//! ```

pub mod error;
pub mod estimate;
pub mod filter;
pub mod hmm;
pub mod lsq;
pub mod markov;
pub mod physics;
pub mod signal;
pub mod simulate;
pub mod units;

pub use error::{Error, Result};
