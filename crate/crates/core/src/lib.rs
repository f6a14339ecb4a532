//! Planar proximity-operations simulator and sensor-fusion estimator.
//!
//! The crate models a small spacecraft module gliding on an air-bearing style
//! workbench: truth dynamics ([`dynamics`]), synthetic sensors ([`sensors`]),
//! a UWB/IMU/vision extended Kalman filter ([`estimator`]), a monocular
//! marker-based pose pipeline ([`vision`]), LOS and terminal docking guidance
//! ([`guidance`]) and a scenario harness that wires them together
//! ([`harness`]).

// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod error;
pub mod estimator;
pub mod geometry;
pub mod guidance;
pub mod harness;
pub mod sensors;
pub mod vision;

pub use error::{ConfigError, Error, Result};
