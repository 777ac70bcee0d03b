//! Coincidence analysis: correlation histograms, Gaussian peak fits and the
//! dispersion-compensation sweep.

mod fit;
mod histogram;
mod metrics;
mod sweep;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fit::{fit_gaussian, GaussianFit, MAX_ITERATIONS, RELATIVE_TOLERANCE};
pub use histogram::{build_histogram, Histogram};
pub use metrics::{coincidence_metrics, CoincidenceMetrics};
pub use sweep::{compensation_grid, jitter_floor_ps, predicted_fwhm_ps, run_dispersion_sweep, SweepPoint, SweepResult};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalysisError {
    #[error("input stream is not sorted: {0}")]
    UnsortedInput(String),
    #[error("degenerate binning: {0}")]
    DegenerateBinning(String),
    #[error("insufficient data for a fit: {0}")]
    InsufficientData(String),
    #[error("fit did not converge: {0}")]
    NonConvergence(String),
    #[error("histogram is empty")]
    EmptyHistogram,
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
    #[error("simulation failed: {0}")]
    Simulation(String),
}

/// Binning used when turning two detector streams into a histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HistogramParams {
    pub bin_ps: f64,
    pub window_ps: f64,
}

impl Default for HistogramParams {
    fn default() -> Self {
        HistogramParams {
            bin_ps: 20.0,
            window_ps: 2000.0,
        }
    }
}
