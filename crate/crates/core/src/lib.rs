//! Source localization from noisy range and range-difference measurements.
//!
//! The crate is organised around two majorization-minimization solvers:
//!
//! - [`solvit`] minimizes the range-difference least-squares cost using every
//!   distinct sensor pair (no reference sensor).
//! - [`sfp`] minimizes the range least-squares cost with the standard
//!   fixed-point update.
//!
//! Supporting modules build sensor geometries and synthetic measurements
//! ([`scenario`]), evaluate costs ([`objective`]), pick starting points
//! ([`initializer`]), compute the Cramér-Rao bound ([`crlb`]), turn recorded
//! signals into range differences ([`tdoa`]) and run Monte-Carlo studies
//! ([`harness`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod crlb;
pub mod error;
pub mod harness;
pub mod initializer;
pub mod objective;
pub mod scenario;
pub mod sfp;
pub mod solvit;
pub mod tdoa;
pub mod trace;

mod linalg;

pub use error::{Error, Result};
pub use scenario::{NoiseModel, Position, RangeDiff, RangeDiffSet, RangeSet, SensorArray};
pub use trace::{SolveStatus, SolveTrace, SolverConfig};
