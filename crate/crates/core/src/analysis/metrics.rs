use serde::{Deserialize, Serialize};

use super::{AnalysisError, Histogram};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceMetrics {
    /// Counts in bins whose centre lies within `±peak_halfwidth` of the peak.
    pub coincidences: f64,
    /// Mean off-peak bin count scaled to the same number of bins.
    pub accidentals: f64,
    pub coincidence_rate_hz: f64,
    pub accidental_rate_hz: f64,
    /// `coincidences / accidentals`; `+inf` when no accidentals were seen.
    pub car: f64,
    pub car_infinite: bool,
    pub peak_bins: usize,
    pub off_peak_bins: usize,
}

pub fn coincidence_metrics(
    hist: &Histogram,
    center_ps: f64,
    peak_halfwidth_ps: f64,
    duration_s: f64,
) -> Result<CoincidenceMetrics, AnalysisError> {
    if hist.total() == 0 {
        return Err(AnalysisError::EmptyHistogram);
    }
    let (mut peak, mut peak_bins, mut off, mut off_bins) = (0.0, 0usize, 0.0, 0usize);
    for (i, &c) in hist.counts.iter().enumerate() {
        if (hist.bin_center(i) - center_ps).abs() <= peak_halfwidth_ps {
            peak += c as f64;
            peak_bins += 1;
        } else {
            off += c as f64;
            off_bins += 1;
        }
    }
    if peak_bins == 0 {
        return Err(AnalysisError::DegenerateBinning(
            "peak window contains no bins".into(),
        ));
    }
    let accidentals = if off_bins == 0 {
        0.0
    } else {
        off / off_bins as f64 * peak_bins as f64
    };
    let car_infinite = accidentals == 0.0;
    let car = if car_infinite {
        f64::INFINITY
    } else {
        peak / accidentals
    };
    let per_s = if duration_s > 0.0 { 1.0 / duration_s } else { f64::NAN };
    Ok(CoincidenceMetrics {
        coincidences: peak,
        accidentals,
        coincidence_rate_hz: peak * per_s,
        accidental_rate_hz: accidentals * per_s,
        car,
        car_infinite,
        peak_bins,
        off_peak_bins: off_bins,
    })
}
