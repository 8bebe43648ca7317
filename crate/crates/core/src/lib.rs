//! Calibration of computer models from massive physical data by optimal
//! Poisson subsampling.

pub mod calibrator;
pub mod emulator;
pub mod error;
pub mod harness;
pub mod inference;
pub mod model;
pub mod optim;
pub mod rng;
pub mod subsampler;

pub use error::{Error, Result};
