//! Auditing adaptive backtests for spurious predictability.
//!
//! The crate is organised around the life cycle of an audit:
//!
//! * [`environments`] generates induced-null return paths (and a TAR positive control).
//! * [`inference`] turns strategy returns into HAC-studentized Z statistics.
//! * [`multiplicity`] estimates the effective number of independent candidates.
//! * [`workflows`] runs candidate search with strict in-sample / walk-forward separation.
//! * [`audit`] calibrates null distributions and issues the two-stage verdict.
//! * [`harness`] runs the Monte Carlo experiment grids and writes result tables.

pub mod audit;
pub mod environments;
pub mod error;
pub mod harness;
pub mod inference;
pub mod io;
pub mod multiplicity;
pub mod rng;
pub mod stats;
pub mod workflows;

pub use error::{Error, Result};

/// Trading days per year used for every annualization.
pub const TRADING_DAYS: f64 = 252.0;
