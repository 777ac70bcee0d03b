//! Gaussian peak fitting by damped Gauss-Newton (Levenberg–Marquardt).
//!
//! Model: `f(t) = A·exp(−(t−μ)²/(2σ²)) + B`, fitted to bin centres with
//! Poisson weights `1/max(f, 1)` taken from the model itself. Parameter
//! standard errors come from the inverse of the weighted normal matrix at
//! convergence, scaled by the reduced chi-square.

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use super::{AnalysisError, Histogram};
use crate::photonics::fwhm_per_sigma;

pub const MAX_ITERATIONS: usize = 200;
pub const RELATIVE_TOLERANCE: f64 = 1e-8;
const MAX_REWEIGHTS: usize = 50;
const REWEIGHT_TOLERANCE: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub amplitude: f64,
    pub center_ps: f64,
    pub sigma_ps: f64,
    pub baseline: f64,
    pub fwhm_ps: f64,
    pub fwhm_uncertainty_ps: f64,
    /// Standard errors of `[amplitude, center, sigma, baseline]`.
    pub std_errors: [f64; 4],
    pub converged: bool,
    /// `sqrt(chi² / dof)` of the weighted residuals.
    pub residual_norm: f64,
    pub iterations: usize,
}

impl GaussianFit {
    pub fn evaluate(&self, t_ps: f64) -> f64 {
        gaussian(&Vector4::new(self.amplitude, self.center_ps, self.sigma_ps, self.baseline), t_ps)
    }
}

fn gaussian(p: &Vector4<f64>, t: f64) -> f64 {
    let z = (t - p[1]) / p[2];
    p[0] * (-0.5 * z * z).exp() + p[3]
}

fn weighted_cost(xs: &[f64], ys: &[f64], weights: &[f64], p: &Vector4<f64>) -> f64 {
    xs.iter()
        .zip(ys)
        .zip(weights)
        .map(|((&x, &y), &w)| w * (y - gaussian(p, x)).powi(2))
        .sum()
}

fn normal_equations(xs: &[f64], ys: &[f64], weights: &[f64], p: &Vector4<f64>) -> (Matrix4<f64>, Vector4<f64>) {
    let mut jtj = Matrix4::zeros();
    let mut jtr = Vector4::zeros();
    for ((&x, &y), &w) in xs.iter().zip(ys).zip(weights) {
        let z = (x - p[1]) / p[2];
        let g = (-0.5 * z * z).exp();
        let j = Vector4::new(g, p[0] * g * z / p[2], p[0] * g * z * z / p[2], 1.0);
        let r = y - (p[0] * g + p[3]);
        jtj += w * j * j.transpose();
        jtr += w * r * j;
    }
    (jtj, jtr)
}

fn scale(p: &Vector4<f64>) -> Vector4<f64> {
    Vector4::new(p[0].abs(), p[2].abs(), p[2].abs(), p[0].abs()).map(|s| s.max(f64::MIN_POSITIVE))
}

/// Damped Gauss-Newton with fixed weights, from `p` to a local minimum.
fn levenberg_marquardt(
    xs: &[f64],
    ys: &[f64],
    weights: &[f64],
    mut p: Vector4<f64>,
) -> Result<(Vector4<f64>, usize), AnalysisError> {
    let mut lambda = 1e-3;
    let mut current = weighted_cost(xs, ys, weights, &p);
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let (jtj, jtr) = normal_equations(xs, ys, weights, &p);
        let mut accepted = false;
        let mut small = false;
        while lambda < 1e16 {
            let mut damped = jtj;
            for k in 0..4 {
                damped[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let trial = p + step;
            let trial_cost = weighted_cost(xs, ys, weights, &trial);
            if trial_cost.is_finite() && trial_cost <= current {
                let s = scale(&trial);
                small = (0..4).all(|k| step[k].abs() <= RELATIVE_TOLERANCE * s[k]);
                p = trial;
                current = trial_cost;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                break;
            }
            lambda *= 10.0;
        }
        // no step reduces the cost: at the minimum to working precision
        if small || !accepted {
            return Ok((p, iterations));
        }
    }
    Err(AnalysisError::NonConvergence(format!(
        "no convergence within {MAX_ITERATIONS} iterations"
    )))
}

/// Fits the histogram peak. Needs at least five non-empty bins and a peak
/// that rises above the floor.
pub fn fit_gaussian(hist: &Histogram) -> Result<GaussianFit, AnalysisError> {
    let xs: Vec<f64> = (0..hist.counts.len()).map(|i| hist.bin_center(i)).collect();
    let ys: Vec<f64> = hist.counts.iter().map(|&c| c as f64).collect();
    fit_samples(&xs, &ys, hist.hi_ps - hist.lo_ps)
}

pub(crate) fn fit_samples(xs: &[f64], ys: &[f64], span: f64) -> Result<GaussianFit, AnalysisError> {
    let nonzero = ys.iter().filter(|&&y| y > 0.0).count();
    if nonzero < 5 {
        return Err(AnalysisError::InsufficientData(format!(
            "{nonzero} non-empty bins, need at least 5"
        )));
    }
    let max = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = ys.iter().copied().fold(f64::INFINITY, f64::min);
    if max <= min {
        return Err(AnalysisError::InsufficientData("histogram is flat".into()));
    }

    // moments of the counts above the floor
    let mass: f64 = ys.iter().map(|y| y - min).sum();
    let mean = xs.iter().zip(ys).map(|(x, y)| x * (y - min)).sum::<f64>() / mass;
    let var = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (x - mean).powi(2) * (y - min))
        .sum::<f64>()
        / mass;
    let bin = if xs.len() > 1 { (xs[1] - xs[0]).abs() } else { 1.0 };
    let p = Vector4::new(max - min, mean, var.sqrt().max(bin / 2.0), min);

    // First pass weighted by the observed counts, then reweighted by the
    // model until the weights stop moving. The fixed point of the
    // reweighting solves the Poisson likelihood equations, so low-count bins
    // do not drag the baseline down.
    let mut weights: Vec<f64> = ys.iter().map(|&y| 1.0 / y.max(1.0)).collect();
    let (mut p, mut iterations) = levenberg_marquardt(xs, ys, &weights, p)?;
    let mut settled = false;
    for _ in 0..MAX_REWEIGHTS {
        weights = xs.iter().map(|&x| 1.0 / gaussian(&p, x).max(1.0)).collect();
        let (next, n) = levenberg_marquardt(xs, ys, &weights, p)?;
        iterations += n;
        let s = scale(&next);
        let moved = (0..4).any(|k| (next[k] - p[k]).abs() > REWEIGHT_TOLERANCE * s[k]);
        p = next;
        if !moved {
            settled = true;
            break;
        }
    }
    if !settled {
        return Err(AnalysisError::NonConvergence(format!(
            "weights still changing after {MAX_REWEIGHTS} passes"
        )));
    }
    p[2] = p[2].abs();
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(p.iter().all(|v| v.is_finite()) && p[0] > 0.0 && p[2] > 0.0 && p[2] < span && p[1] >= lo && p[1] <= hi)
    {
        return Err(AnalysisError::NonConvergence(format!(
            "fit left the physical region (A={:.3e}, μ={:.3e}, σ={:.3e})",
            p[0], p[1], p[2]
        )));
    }

    let dof = xs.len().saturating_sub(4).max(1) as f64;
    let chi2 = weighted_cost(xs, ys, &weights, &p);
    let (jtj, _) = normal_equations(xs, ys, &weights, &p);
    let cov = jtj
        .try_inverse()
        .ok_or_else(|| AnalysisError::NonConvergence("singular normal matrix".into()))?
        * (chi2 / dof);
    let std_errors = [0, 1, 2, 3].map(|k| cov[(k, k)].max(0.0).sqrt());
    Ok(GaussianFit {
        amplitude: p[0],
        center_ps: p[1],
        sigma_ps: p[2],
        baseline: p[3],
        fwhm_ps: fwhm_per_sigma() * p[2],
        fwhm_uncertainty_ps: fwhm_per_sigma() * std_errors[2],
        std_errors,
        converged: true,
        residual_norm: (chi2 / dof).sqrt(),
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Poisson};

    fn synthetic(sigma: f64, amplitude: f64, baseline: f64) -> Histogram {
        let bin = sigma / 5.0;
        let mut h = Histogram::empty(bin, 10.0 * sigma).unwrap();
        for i in 0..h.counts.len() {
            let t = h.bin_center(i) - 0.3 * sigma;
            h.counts[i] = (amplitude * (-0.5 * (t / sigma).powi(2)).exp() + baseline).round() as u64;
        }
        h
    }

    #[test]
    fn fwhm_identity() {
        assert!((fwhm_per_sigma() * 100.0 - 235.482_004_503_094_9).abs() < 1e-9);
    }

    #[test]
    fn noiseless_gaussians_are_recovered() {
        for sigma in [10.0, 100.0, 1000.0] {
            // exact (non-rounded) samples
            let h = synthetic(sigma, 1e6, 0.0);
            let xs: Vec<f64> = (0..h.counts.len()).map(|i| h.bin_center(i)).collect();
            let ys: Vec<f64> = xs
                .iter()
                .map(|x| 1e3 * (-0.5 * ((x - 0.3 * sigma) / sigma).powi(2)).exp() + 2.0)
                .collect();
            let fit = fit_samples(&xs, &ys, h.hi_ps - h.lo_ps).unwrap();
            assert!((fit.sigma_ps / sigma - 1.0).abs() < 1e-3, "{sigma}: {fit:?}");
            assert!((fit.center_ps - 0.3 * sigma).abs() < 1e-3 * sigma);
            assert!((fit.fwhm_ps / fit.sigma_ps - fwhm_per_sigma()).abs() < 1e-12);
            assert!(fit.converged);
        }
        let fit = {
            let xs: Vec<f64> = (-50..50).map(|i| i as f64 * 20.0 + 10.0).collect();
            let ys: Vec<f64> = xs.iter().map(|x| 500.0 * (-0.5 * (x / 100.0f64).powi(2)).exp()).collect();
            fit_samples(&xs, &ys, 2000.0).unwrap()
        };
        assert!((fit.fwhm_ps - 235.482).abs() < 0.2355);
    }

    #[test]
    fn rounded_histogram_fits() {
        let h = synthetic(100.0, 1e4, 3.0);
        let fit = fit_gaussian(&h).unwrap();
        assert!((fit.sigma_ps / 100.0 - 1.0).abs() < 1e-3);
    }

    #[test]
    fn poisson_noise_is_covered_by_reported_errors() {
        let (sigma, amplitude, baseline, center) = (100.0, 1e3, 5.0, 37.0);
        let mut covered = 0;
        for seed in 0..100u64 {
            let mut rng = crate::rng::stream(seed, 77);
            let mut h = Histogram::empty(20.0, 1000.0).unwrap();
            for i in 0..h.counts.len() {
                let t = h.bin_center(i);
                let mu = amplitude * (-0.5 * ((t - center) / sigma).powi(2)).exp() + baseline;
                h.counts[i] = Poisson::new(mu).unwrap().sample(&mut rng) as u64;
            }
            let fit = fit_gaussian(&h).unwrap();
            let truth = [amplitude, center, sigma, baseline];
            let got = [fit.amplitude, fit.center_ps, fit.sigma_ps, fit.baseline];
            if (0..4).all(|k| (got[k] - truth[k]).abs() <= 3.0 * fit.std_errors[k]) {
                covered += 1;
            }
        }
        assert!(covered >= 95, "{covered}/100");
    }

    #[test]
    fn degenerate_inputs_fail_loudly() {
        let mut flat = Histogram::empty(10.0, 500.0).unwrap();
        flat.counts.iter_mut().for_each(|c| *c = 7);
        assert!(matches!(fit_gaussian(&flat), Err(AnalysisError::InsufficientData(_))));

        let mut sparse = Histogram::empty(10.0, 500.0).unwrap();
        sparse.counts[10] = 100;
        sparse.counts[11] = 50;
        assert!(matches!(fit_gaussian(&sparse), Err(AnalysisError::InsufficientData(_))));

        let empty = Histogram::empty(10.0, 500.0).unwrap();
        assert!(fit_gaussian(&empty).is_err());
    }

    #[test]
    fn noisy_flat_histogram_is_not_a_peak() {
        let mut ok = 0;
        for seed in 0..20 {
            let mut rng = crate::rng::stream(seed, 5);
            let mut h = Histogram::empty(10.0, 500.0).unwrap();
            for c in h.counts.iter_mut() {
                *c = Poisson::new(50.0).unwrap().sample(&mut rng) as u64;
            }
            match fit_gaussian(&h) {
                Err(_) => ok += 1,
                // A noise spike may be fit, but it must stay a small feature, never a
                // wide bogus peak spanning the histogram.
                Ok(fit) => {
                    if fit.amplitude < 40.0 {
                        ok += 1
                    }
                }
            }
        }
        assert_eq!(ok, 20);
    }
}
