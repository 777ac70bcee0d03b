use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::photonics::DetectionEvent;

/// Biphoton time-correlation histogram of `t_a − t_b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width_ps: f64,
    pub lo_ps: f64,
    pub hi_ps: f64,
    pub counts: Vec<u64>,
    /// Event pairs that fell inside the correlation window.
    pub total_pairs_examined: u64,
}

impl Histogram {
    pub fn empty(bin_width_ps: f64, window_ps: f64) -> Result<Self, AnalysisError> {
        if !(bin_width_ps > 0.0 && window_ps > 0.0) {
            return Err(AnalysisError::DegenerateBinning(
                "bin width and window must be > 0".into(),
            ));
        }
        if window_ps < bin_width_ps {
            return Err(AnalysisError::DegenerateBinning(format!(
                "window {window_ps} ps is narrower than one {bin_width_ps} ps bin"
            )));
        }
        let half_bins = (window_ps / bin_width_ps).ceil() as usize;
        Ok(Histogram {
            bin_width_ps,
            lo_ps: -(half_bins as f64) * bin_width_ps,
            hi_ps: half_bins as f64 * bin_width_ps,
            counts: vec![0; 2 * half_bins],
            total_pairs_examined: 0,
        })
    }

    pub fn bin_center(&self, i: usize) -> f64 {
        self.lo_ps + (i as f64 + 0.5) * self.bin_width_ps
    }

    pub fn bin_lo(&self, i: usize) -> f64 {
        self.lo_ps + i as f64 * self.bin_width_ps
    }

    pub fn bin_of(&self, dt_ps: f64) -> Option<usize> {
        if dt_ps < self.lo_ps || dt_ps >= self.hi_ps {
            return None;
        }
        let i = ((dt_ps - self.lo_ps) / self.bin_width_ps).floor() as usize;
        Some(i.min(self.counts.len() - 1))
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Every count multiplied by `k`.
    pub fn scaled(&self, k: u64) -> Histogram {
        Histogram {
            counts: self.counts.iter().map(|c| c * k).collect(),
            total_pairs_examined: self.total_pairs_examined * k,
            ..self.clone()
        }
    }
}

fn check_sorted(events: &[DetectionEvent], name: &str) -> Result<(), AnalysisError> {
    match events
        .windows(2)
        .position(|w| w[1].timestamp_ps < w[0].timestamp_ps)
    {
        Some(i) => Err(AnalysisError::UnsortedInput(format!(
            "{name} goes backwards at event {}",
            i + 1
        ))),
        None => Ok(()),
    }
}

/// Histogram of `t_a − t_b` over all event pairs with `|t_a − t_b| < window`.
///
/// A two-pointer sweep: for each event of `a` only the slice of `b` within
/// the window is visited, and the slice start only moves forward.
pub fn build_histogram(
    stream_a: &[DetectionEvent],
    stream_b: &[DetectionEvent],
    bin_width_ps: f64,
    window_ps: f64,
) -> Result<Histogram, AnalysisError> {
    let mut hist = Histogram::empty(bin_width_ps, window_ps)?;
    check_sorted(stream_a, "stream_a")?;
    check_sorted(stream_b, "stream_b")?;

    let mut start = 0;
    for a in stream_a {
        while start < stream_b.len() && stream_b[start].timestamp_ps <= a.timestamp_ps - window_ps {
            start += 1;
        }
        for b in &stream_b[start..] {
            let dt = a.timestamp_ps - b.timestamp_ps;
            if dt <= -window_ps {
                break;
            }
            hist.total_pairs_examined += 1;
            if let Some(i) = hist.bin_of(dt) {
                hist.counts[i] += 1;
            }
        }
    }
    Ok(hist)
}
