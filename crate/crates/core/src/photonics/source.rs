use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};

use super::{fwhm_per_sigma, PairEvent, SimError, SourceModel, SpectralShape};
use crate::fabric::EpsChannel;

/// Emits SPDC pairs into a correlated channel pair.
///
/// Emission times form a homogeneous Poisson process at the source pair
/// rate. Signal detunings are i.i.d.: a Gaussian spectrum is sampled as the
/// soft passband profile itself, a uniform spectrum is cut hard at the
/// channel passband.
pub fn generate_pairs(
    source: &SourceModel,
    signal: &EpsChannel,
    idler: &EpsChannel,
    duration_s: f64,
    seed: u64,
) -> Result<Vec<PairEvent>, SimError> {
    if signal.partner != Some(idler.index) || idler.partner != Some(signal.index) {
        return Err(SimError::InvalidChannelPair(signal.index, idler.index));
    }
    source.validate()?;
    if !(duration_s >= 0.0 && duration_s.is_finite()) {
        return Err(SimError::InvalidParameter(format!(
            "duration must be finite and >= 0, got {duration_s}"
        )));
    }

    let duration_ps = duration_s * 1e12;
    let gaps = Exp::new(source.pair_rate_hz * 1e-12).expect("rate validated");
    let mut clock = crate::rng::stream(seed, 0);
    let mut spectrum = crate::rng::stream(seed, 1);

    let sigma = source.spectral_fwhm_nm / fwhm_per_sigma();
    let gaussian = Normal::new(0.0, sigma).expect("width validated");
    let half_width = 0.5 * source.spectral_fwhm_nm.min(signal.bandwidth_nm);

    let expected = (source.pair_rate_hz * duration_s).ceil() as usize;
    let mut pairs = Vec::with_capacity(expected + expected / 8 + 8);
    let mut t = 0.0;
    loop {
        t += gaps.sample(&mut clock);
        if t >= duration_ps {
            break;
        }
        let detuning_nm = match source.spectral_shape {
            SpectralShape::Gaussian => gaussian.sample(&mut spectrum),
            SpectralShape::Uniform => spectrum.random_range(-half_width..half_width),
        };
        pairs.push(PairEvent {
            emit_time_ps: t,
            detuning_nm,
            signal_channel: signal.index,
            idler_channel: idler.index,
        });
    }
    Ok(pairs)
}
