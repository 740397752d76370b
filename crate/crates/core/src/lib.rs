//! Human-likeness benchmark for robot posture control.
//!
//! A pseudorandom platform tilt drives a simulated double inverted pendulum
//! under a choice of balance controller. The body-sway frequency response is
//! compared with a human reference cohort through a weighted
//! precision-matrix distance.

pub mod artifact;
pub mod bench;
pub mod control;
pub mod dataset;
pub mod error;
pub mod metric;
pub mod plant;
pub mod plot;
pub mod prts;
pub mod spectral;

pub use error::{Error, Result};
