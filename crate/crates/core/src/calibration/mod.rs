//! Phasematching and EM-gain calibration.

mod gain;
mod phasematch_fit;

pub use gain::{fit_gain, GainFit, GainFitOptions, Histogram};
pub use phasematch_fit::{fit_phasematching, FitOptions, MeanFieldMeasurement, PhasematchFit};
