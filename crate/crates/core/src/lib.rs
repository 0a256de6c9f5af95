//! ECG-based pain-intensity estimation: Pan-Tompkins QRS detection, HRV
//! features, single- and multi-task dense networks, and a
//! leave-one-subject-out evaluation harness.

pub mod error;
pub mod experiments;
pub mod hrv;
pub mod models;
pub mod nn;
pub mod qrs;
pub mod signal;

pub use error::{Error, ErrorKind, Result};
