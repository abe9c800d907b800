//! Optimal filtering of finite-state Markov jump processes observed in
//! additive white noise.
//!
//! The signal `x(t)` is a continuous-time Markov chain taking values in a
//! finite set of levels; it is observed through `dy = x dt + beta dw`. The
//! crate provides
//!
//! - [`chain`]: the jump-process model, its transition semigroup and exact
//!   path simulation,
//! - [`signalpath`]: synthesis of observation increments on a uniform grid,
//! - [`zakai`]: the unnormalized (linear) conditional-probability filter and
//!   its log-domain and interaction-picture transforms,
//! - [`wonham`]: the normalized (nonlinear) filter, the two-state telegraph
//!   specialization, point estimates and prediction,
//! - [`oracle`]: independent ground truth (discrete Bayes forward filter,
//!   path-space quadrature, Monte Carlo tower-property check),
//! - [`harness`]: experiment drivers and file formats used by the CLI.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod chain;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod oracle;
pub mod quadrature;
pub mod rng;
pub mod scheme;
pub mod signalpath;
pub mod wonham;
pub mod zakai;

pub use chain::{ChainModel, JumpPath, TransitionMatrix};
pub use error::{FilterError, Result};
pub use signalpath::ObservationGrid;
pub use wonham::{FilterState, TelegraphState};
pub use zakai::{CorrectionSign, UnnormalizedState};

/// Floor applied to probabilities and unnormalized weights that would
/// otherwise be zero or negative.
pub const PROBABILITY_FLOOR: f64 = 1e-300;

/// A run fails when more than this fraction of steps needed clamping.
pub const MAX_CLAMP_FRACTION: f64 = 1e-3;
