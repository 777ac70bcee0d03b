//! Physical-layer simulation: photon-pair emission, fiber propagation,
//! detection and time tagging.
//!
//! Every stage is a pure function of its inputs and an explicit seed. Random
//! draws are taken per photon in emission order, so two runs that differ only
//! in a deterministic parameter (a dispersion setting, say) see the same
//! photons, the same losses and the same jitter.

mod detector;
mod source;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::OpticalPath;

pub use detector::{detect, time_tag, TaggedStream};
pub use source::generate_pairs;

/// `2·sqrt(2·ln 2)`: FWHM of a Gaussian in units of its standard deviation.
pub fn fwhm_per_sigma() -> f64 {
    (8.0 * std::f64::consts::LN_2).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectralShape {
    Gaussian,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntanglementKind {
    TimeEnergy,
    Polarization,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceModel {
    pub pair_rate_hz: f64,
    #[serde(skip)]
    pub degeneracy_nm: f64,
    pub spectral_shape: SpectralShape,
    /// Width of the detuning distribution within one channel.
    pub spectral_fwhm_nm: f64,
    pub kind: EntanglementKind,
}

impl Default for SourceModel {
    fn default() -> Self {
        SourceModel {
            pair_rate_hz: 1e6,
            degeneracy_nm: 1560.0,
            spectral_shape: SpectralShape::Gaussian,
            spectral_fwhm_nm: 16.0,
            kind: EntanglementKind::TimeEnergy,
        }
    }
}

impl SourceModel {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.pair_rate_hz > 0.0 && self.pair_rate_hz.is_finite()) {
            return Err(SimError::InvalidParameter(
                "physics.source.pair_rate_hz must be > 0".into(),
            ));
        }
        if !(self.spectral_fwhm_nm > 0.0 && self.spectral_fwhm_nm.is_finite()) {
            return Err(SimError::InvalidParameter(
                "physics.source.spectral_fwhm_nm must be > 0".into(),
            ));
        }
        Ok(())
    }
}

/// One SPDC emission. The idler detuning is exactly the negative of the signal's.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairEvent {
    pub emit_time_ps: f64,
    /// Offset of the signal photon from its channel centre.
    pub detuning_nm: f64,
    pub signal_channel: u8,
    pub idler_channel: u8,
}

impl PairEvent {
    pub fn idler_detuning_nm(&self) -> f64 {
        -self.detuning_nm
    }
}

/// One arm of the distribution: the fiber route plus a tunable dispersion
/// compensator and any extra insertion loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmConfig {
    pub path: OpticalPath,
    /// Negative values cancel the normal dispersion of the fiber.
    pub compensation_ps_nm: f64,
    pub extra_loss_db: f64,
}

impl ArmConfig {
    pub fn new(path: OpticalPath) -> Self {
        ArmConfig {
            path,
            compensation_ps_nm: 0.0,
            extra_loss_db: 0.0,
        }
    }

    pub fn total_dispersion_ps_nm(&self) -> f64 {
        self.path.total_dispersion_ps_nm + self.compensation_ps_nm
    }

    pub fn transmission(&self) -> f64 {
        10f64.powf(-(self.path.total_loss_db + self.extra_loss_db) / 10.0)
    }
}

/// A photon reaching the end of an arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arrival {
    pub time_ps: f64,
    /// Index of the originating pair.
    pub pair: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Photon,
    Dark,
}

impl Origin {
    pub fn code(self) -> u8 {
        match self {
            Origin::Photon => 0,
            Origin::Dark => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Origin> {
        match code {
            0 => Some(Origin::Photon),
            1 => Some(Origin::Dark),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub channel: u8,
    pub timestamp_ps: f64,
    pub origin: Origin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaggerModel {
    pub resolution_ps: f64,
    pub jitter_fwhm_ps: f64,
    pub max_rate_hz: f64,
    /// Sliding window over which the rate limit is enforced.
    pub rate_window_ps: f64,
}

impl Default for TaggerModel {
    fn default() -> Self {
        TaggerModel {
            resolution_ps: 1.0,
            jitter_fwhm_ps: 80.0,
            max_rate_hz: 8.5e6,
            rate_window_ps: 1e9,
        }
    }
}

impl TaggerModel {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.resolution_ps.is_nan() || self.resolution_ps <= 0.0 {
            return Err(SimError::InvalidParameter(
                "physics.tagger.resolution_ps must be > 0".into(),
            ));
        }
        if self.jitter_fwhm_ps.is_nan() || self.jitter_fwhm_ps < 0.0 {
            return Err(SimError::InvalidParameter(
                "physics.tagger.jitter_fwhm_ps must be >= 0".into(),
            ));
        }
        if !(self.max_rate_hz > 0.0 && self.rate_window_ps > 0.0) {
            return Err(SimError::InvalidParameter(
                "physics.tagger.max_rate_hz and rate_window_ps must be > 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("channels {0} and {1} are not a correlated pair")]
    InvalidChannelPair(u8, u8),
    #[error("invalid simulation parameter: {0}")]
    InvalidParameter(String),
}

/// Sends each photon of each pair down its arm.
///
/// A photon survives with the arm transmission and arrives at
/// `emit + delay + D·δλ`, where `D` is fiber plus compensator dispersion and
/// `δλ` is the photon's own detuning (`+δ` for the signal, `−δ` for the idler).
pub fn propagate(
    pairs: &[PairEvent],
    signal_arm: &ArmConfig,
    idler_arm: &ArmConfig,
    seed: u64,
) -> (Vec<Arrival>, Vec<Arrival>) {
    use rand::Rng;

    let run = |arm: &ArmConfig, stream: u64, detuning: &dyn Fn(&PairEvent) -> f64| {
        let mut rng = crate::rng::stream(seed, stream);
        let keep = arm.transmission();
        let delay = arm.path.total_delay_ps;
        let dispersion = arm.total_dispersion_ps_nm();
        pairs
            .iter()
            .enumerate()
            .filter_map(|(i, p)| {
                let u: f64 = rng.random();
                (u < keep).then(|| Arrival {
                    time_ps: p.emit_time_ps + delay + dispersion * detuning(p),
                    pair: i,
                })
            })
            .collect::<Vec<_>>()
    };
    let signal = run(signal_arm, 0, &|p| p.detuning_nm);
    let idler = run(idler_arm, 1, &|p| p.idler_detuning_nm());
    (signal, idler)
}
