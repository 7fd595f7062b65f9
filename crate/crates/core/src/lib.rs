//! Vision-based navigation and control for autonomous drone racing.
//!
//! The pipeline runs snake gate detection on a raw camera frame, turns the
//! detected corners into a camera position by intersecting bearing rays with
//! the autopilot attitude, fuses that position with accelerometer-derived
//! body velocity in a drag-model EKF, and flies straight segments with a PD
//! alignment law and turns with a feed-forward coordinated arc. A
//! deterministic closed-loop simulator ties the pieces together.

pub mod camera;
pub mod config;
pub mod control;
pub mod corpus;
pub mod detect;
pub mod ekf;
pub mod error;
pub mod imaging;
pub mod pose;
pub mod racesim;

pub use error::{Error, Result};

/// Standard gravity (m/s^2), acting along +z of the NED earth frame.
pub const GRAVITY: f64 = 9.81;
