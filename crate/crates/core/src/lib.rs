pub mod calibration;
pub mod cli;
pub mod config;
pub mod datasets;
pub mod error;
pub mod grad;
pub mod io;
pub mod model;
pub mod optics;
pub mod pipeline;
pub mod rng;
pub mod sensing;
pub mod tensor;
pub mod toy;

pub use error::{Error, Result};
