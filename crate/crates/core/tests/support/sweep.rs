//! Full dispersion sweep on the field-test layout against the closed-form
//! correlation width.

use qisp_core::analysis::{compensation_grid, run_dispersion_sweep, HistogramParams, SweepResult};
use qisp_core::scenario::Scenario;

pub const PAIRS_PER_POINT: u64 = 100_000;

pub fn compensations() -> Vec<f64> {
    compensation_grid(0.0, -22.0, 1.0).unwrap()
}

/// Width expected at `compensation` from the arm fibers, the source bandwidth
/// and the quadrature sum of every jitter a coincidence passes through.
pub fn closed_form_fwhm_ps(s: &Scenario, compensation: f64) -> f64 {
    let fiber = |arm: &qisp_core::scenario::DetectorArm| arm.arm.as_ref().map_or(0.0, |a| a.path.total_dispersion_ps_nm);
    let net = fiber(&s.signal) + fiber(&s.idler) + compensation;
    let spread = net.abs() * s.source.spectral_fwhm_nm;
    let jitter_sq = s.signal.detector.jitter_fwhm_ps.powi(2)
        + s.idler.detector.jitter_fwhm_ps.powi(2)
        + 2.0 * s.tagger.jitter_fwhm_ps.powi(2);
    (spread * spread + jitter_sq).sqrt()
}

pub fn jitter_floor(s: &Scenario) -> f64 {
    closed_form_fwhm_ps(s, -(s.signal.arm.as_ref().unwrap().path.total_dispersion_ps_nm
        + s.idler.arm.as_ref().unwrap().path.total_dispersion_ps_nm))
}

pub fn sweep(s: &Scenario, seed: u64) -> SweepResult {
    run_dispersion_sweep(s, &HistogramParams::default(), &compensations(), PAIRS_PER_POINT, seed).unwrap()
}

#[derive(Debug)]
pub struct SweepVerdict {
    pub argmin: Option<f64>,
    pub min_fwhm: f64,
    pub floor: f64,
    /// Largest relative deviation of a fitted width from the closed form.
    pub worst_deviation: f64,
    pub worst_at: f64,
}

impl SweepVerdict {
    pub fn argmin_ok(&self) -> bool {
        matches!(self.argmin, Some(a) if a == -19.0 || a == -20.0)
    }

    pub fn floor_ok(&self) -> bool {
        (self.min_fwhm - self.floor).abs() <= 0.05 * self.floor
    }

    pub fn shape_ok(&self) -> bool {
        self.worst_deviation <= 0.03
    }
}

pub fn judge(s: &Scenario, r: &SweepResult) -> SweepVerdict {
    let mut worst = (f64::INFINITY, 0.0);
    let mut worst_deviation = 0.0;
    for p in &r.points {
        let dev = match &p.fit {
            Some(f) if f.converged => (f.fwhm_ps / closed_form_fwhm_ps(s, p.compensation_ps_nm) - 1.0).abs(),
            _ => f64::INFINITY,
        };
        if dev >= worst_deviation {
            worst_deviation = dev;
            worst = (dev, p.compensation_ps_nm);
        }
    }
    SweepVerdict {
        argmin: r.argmin_compensation_ps_nm,
        min_fwhm: r.best().and_then(|p| p.fit.as_ref()).map_or(f64::INFINITY, |f| f.fwhm_ps),
        floor: jitter_floor(s),
        worst_deviation: worst.0,
        worst_at: worst.1,
    }
}
