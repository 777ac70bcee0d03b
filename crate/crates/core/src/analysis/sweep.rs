use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{build_histogram, fit_gaussian, AnalysisError, GaussianFit, HistogramParams};
use crate::scenario::Scenario;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub compensation_ps_nm: f64,
    pub fit: Option<GaussianFit>,
    /// Why the point has no fit.
    pub error: Option<String>,
    pub coincidences: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    /// Compensation with the narrowest converged fit.
    pub argmin_compensation_ps_nm: Option<f64>,
}

impl SweepResult {
    pub fn best(&self) -> Option<&SweepPoint> {
        self.points
            .iter()
            .filter(|p| p.fit.as_ref().is_some_and(|f| f.converged))
            .min_by(|a, b| {
                let fa = a.fit.as_ref().map(|f| f.fwhm_ps).unwrap_or(f64::INFINITY);
                let fb = b.fit.as_ref().map(|f| f.fwhm_ps).unwrap_or(f64::INFINITY);
                fa.total_cmp(&fb)
            })
    }
}

/// Correlation width expected for a Gaussian spectrum of FWHM `spectral_fwhm_nm`
/// under net dispersion `net_dispersion_ps_nm` and total timing jitter `jitter_fwhm_ps`.
pub fn predicted_fwhm_ps(net_dispersion_ps_nm: f64, spectral_fwhm_nm: f64, jitter_fwhm_ps: f64) -> f64 {
    (net_dispersion_ps_nm.abs() * spectral_fwhm_nm).hypot(jitter_fwhm_ps)
}

/// Timing floor of a coincidence between two detectors, each click also
/// passing through the tagger.
pub fn jitter_floor_ps(signal_ps: f64, idler_ps: f64, tagger_ps: f64) -> f64 {
    (signal_ps.powi(2) + idler_ps.powi(2) + 2.0 * tagger_ps.powi(2)).sqrt()
}

pub const MAX_GRID_POINTS: usize = 10_000;

/// Compensation grid from `from` to `to` inclusive in steps of `step`, walking
/// in whichever direction `to` lies. `to` must sit on the grid.
pub fn compensation_grid(from: f64, to: f64, step: f64) -> Result<Vec<f64>, AnalysisError> {
    if !(from.is_finite() && to.is_finite() && step.is_finite()) || step <= 0.0 {
        return Err(AnalysisError::InvalidSweep(format!(
            "need finite bounds and a positive step, got {from} to {to} step {step}"
        )));
    }
    let span = (to - from).abs();
    let n = (span / step).round();
    if (n * step - span).abs() > 1e-9 * step.max(span) {
        return Err(AnalysisError::InvalidSweep(format!(
            "{to} is not reachable from {from} in steps of {step}"
        )));
    }
    if n as usize >= MAX_GRID_POINTS {
        return Err(AnalysisError::InvalidSweep(format!("more than {MAX_GRID_POINTS} points")));
    }
    let sign = if to < from { -1.0 } else { 1.0 };
    Ok((0..=n as usize).map(|k| from + sign * k as f64 * step).collect())
}

/// Repeats the full acquisition for each compensation applied to the signal arm.
///
/// All points share one seed: the same emitted pairs, losses and jitter draws
/// are replayed at every setting, so the curve differs between points only
/// through the compensation itself. Points run in parallel; a point whose fit
/// fails is reported, not fatal.
pub fn run_dispersion_sweep(
    scenario: &Scenario,
    histogram: &HistogramParams,
    compensations: &[f64],
    pairs_per_point: u64,
    seed: u64,
) -> Result<SweepResult, AnalysisError> {
    if compensations.is_empty() {
        return Err(AnalysisError::InvalidSweep("no compensation values".into()));
    }
    if compensations.iter().any(|c| !c.is_finite()) {
        return Err(AnalysisError::InvalidSweep(
            "compensation values must be finite".into(),
        ));
    }
    if pairs_per_point < 1000 {
        return Err(AnalysisError::InvalidSweep(format!(
            "{pairs_per_point} pairs per point, need at least 1000"
        )));
    }
    // Fail early on binning problems rather than once per point.
    super::Histogram::empty(histogram.bin_ps, histogram.window_ps)?;
    let duration_s = pairs_per_point as f64 / scenario.source.pair_rate_hz;

    let points = compensations
        .par_iter()
        .map(|&c| {
            let run = || -> Result<(super::Histogram, GaussianFit), AnalysisError> {
                let out = scenario
                    .with_signal_compensation(c)
                    .simulate(duration_s, seed)
                    .map_err(|e| AnalysisError::Simulation(e.to_string()))?;
                let hist = build_histogram(&out.signal, &out.idler, histogram.bin_ps, histogram.window_ps)?;
                let fit = fit_gaussian(&hist).map_err(|e| {
                    // keep the counts for the report even if the fit fails
                    if let AnalysisError::InsufficientData(m) = &e {
                        AnalysisError::InsufficientData(format!("{m} ({} coincidences)", hist.total()))
                    } else {
                        e
                    }
                })?;
                Ok((hist, fit))
            };
            match run() {
                Ok((hist, fit)) => SweepPoint {
                    compensation_ps_nm: c,
                    fit: Some(fit),
                    error: None,
                    coincidences: hist.total(),
                },
                Err(e) => SweepPoint {
                    compensation_ps_nm: c,
                    fit: None,
                    error: Some(e.to_string()),
                    coincidences: 0,
                },
            }
        })
        .collect::<Vec<_>>();

    let mut result = SweepResult {
        points,
        argmin_compensation_ps_nm: None,
    };
    result.argmin_compensation_ps_nm = result.best().map(|p| p.compensation_ps_nm);
    Ok(result)
}
