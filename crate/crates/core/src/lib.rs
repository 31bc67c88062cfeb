//! Modeling toolkit for real-time charge-state initialization of NV centers.
//!
//! The crate covers the chain from calibrated charge dynamics to system-level
//! readout efficiency:
//!
//! - [`charge`]: power-law photon and charge-conversion rates, steady state.
//! - [`photon`]: analytic photon-count distributions of a charge readout window.
//! - [`telegraph`]: Monte Carlo of the two-state charge process (independent oracle).
//! - [`protocol`]: threshold/delay errors, fidelity, attempts, and a discrete-event
//!   emulation of the FPGA feedback loop.
//! - [`spin`]: spin-readout observables, single-shot SNR, lifetime and coherence models.
//! - [`fit`]: maximum-likelihood histogram fits and weighted least-squares curve fits.
//! - [`optimize`]: readout efficiency, speedup, sensitivity, and protocol grid search.
//! - [`fixtures`]: seeded synthetic histograms and curves.
//! - [`config`]: JSON run configuration with explicit units, overrides and fit specs.

// `!(x > 0.0)` style guards are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod charge;
pub mod config;
pub mod error;
pub mod fit;
pub mod fixtures;
pub mod optimize;
pub mod photon;
pub mod protocol;
pub mod special;
pub mod spin;
pub mod telegraph;
pub mod units;

pub use error::{Error, Result};
