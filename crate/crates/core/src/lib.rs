//! Simulation of a UWB tagless gate pipeline: DS-TWR ranging, synthetic
//! channel impulse responses, LOS/NLOS classification with smoothing and
//! IMU-based device pose detection.

pub mod channel;
pub mod cirproc;
pub mod harness;
pub mod imusim;
pub mod models;
pub mod ranging;
