//! Binds the simulated physical layer to a concrete network: which channel
//! pair is emitted, which user each photon is routed to and which detector
//! channel it lands on.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::QispConfig;
use crate::fabric::{ChannelKind, EpsChannel, FabricState, SpdChannel, UserGroup, UserId};
use crate::photonics::{
    detect, generate_pairs, propagate, time_tag, ArmConfig, DetectionEvent, SimError, SourceModel,
    TaggerModel,
};
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("scenario references unknown {0}")]
    UnknownChannel(String),
    #[error("scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Simulation(#[from] SimError),
}

/// One photon's journey: fiber route to a user (if the switches deliver it
/// anywhere) and the detector channel that records it.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorArm {
    /// `None` when the channel is not routed: only dark counts are recorded.
    pub arm: Option<ArmConfig>,
    pub detector: SpdChannel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub source: SourceModel,
    pub signal_channel: EpsChannel,
    pub idler_channel: EpsChannel,
    pub signal: DetectorArm,
    pub idler: DetectorArm,
    pub tagger: TaggerModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOutput {
    pub pairs: usize,
    pub signal: Vec<DetectionEvent>,
    pub idler: Vec<DetectionEvent>,
    pub saturated: bool,
}

impl SimulationOutput {
    /// Both streams merged in time order (ties broken by channel).
    pub fn merged(&self) -> Vec<DetectionEvent> {
        let mut all: Vec<DetectionEvent> = self.signal.iter().chain(&self.idler).copied().collect();
        all.sort_by(|a, b| {
            a.timestamp_ps
                .total_cmp(&b.timestamp_ps)
                .then(a.channel.cmp(&b.channel))
        });
        all
    }
}

impl Scenario {
    /// Runs emission → propagation → detection → tagging for `duration_s`.
    pub fn simulate(&self, duration_s: f64, seed: u64) -> Result<SimulationOutput, SimError> {
        let pairs = generate_pairs(
            &self.source,
            &self.signal_channel,
            &self.idler_channel,
            duration_s,
            derive_seed(seed, 1),
        )?;
        let unrouted = ArmConfig::new(crate::topology::OpticalPath::direct());
        let (signal_arrivals, idler_arrivals) = propagate(
            &pairs,
            self.signal.arm.as_ref().unwrap_or(&unrouted),
            self.idler.arm.as_ref().unwrap_or(&unrouted),
            derive_seed(seed, 2),
        );
        let signal_arrivals = if self.signal.arm.is_some() { signal_arrivals } else { Vec::new() };
        let idler_arrivals = if self.idler.arm.is_some() { idler_arrivals } else { Vec::new() };

        let signal = detect(&signal_arrivals, &self.signal.detector, duration_s, derive_seed(seed, 3));
        let idler = detect(&idler_arrivals, &self.idler.detector, duration_s, derive_seed(seed, 4));

        let mut clicks = signal;
        clicks.extend(idler);
        clicks.sort_by(|a, b| {
            a.timestamp_ps
                .total_cmp(&b.timestamp_ps)
                .then(a.channel.cmp(&b.channel))
        });
        let tagged = time_tag(&clicks, &self.tagger, derive_seed(seed, 5));
        let (signal, idler) = tagged
            .events
            .into_iter()
            .partition(|e| e.channel == self.signal.detector.index);
        Ok(SimulationOutput {
            pairs: pairs.len(),
            signal,
            idler,
            saturated: tagged.saturated,
        })
    }

    pub fn with_signal_compensation(&self, compensation_ps_nm: f64) -> Scenario {
        let mut s = self.clone();
        if let Some(arm) = s.signal.arm.as_mut() {
            arm.compensation_ps_nm = compensation_ps_nm;
        }
        s
    }

    /// Field-test layout: the 1550/1570 nm pair both delivered to `user`,
    /// signal on detector 1 (or 5), idler on detector 2 (or 6).
    pub fn field_test(config: &QispConfig, user: UserId) -> Result<Scenario, ScenarioError> {
        let (s, i) = match user.group() {
            UserGroup::Low => (1, 2),
            UserGroup::High => (5, 6),
        };
        build_scenario(
            config,
            &ArmSpec::routed(2, s, user),
            &ArmSpec::routed(3, i, user),
        )
    }
}

/// Scenario-file description of one arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmSpec {
    pub eps: u8,
    pub spd: u8,
    /// Destination user; `null` means the EPS channel is not routed.
    #[serde(default)]
    pub user: Option<UserId>,
    #[serde(default)]
    pub compensation_ps_nm: f64,
    #[serde(default)]
    pub extra_loss_db: f64,
}

impl ArmSpec {
    pub fn routed(eps: u8, spd: u8, user: UserId) -> Self {
        ArmSpec {
            eps,
            spd,
            user: Some(user),
            compensation_ps_nm: 0.0,
            extra_loss_db: 0.0,
        }
    }

    /// Takes the destination from the live fabric: photons reach the detector
    /// only when the EPS channel and the SPD channel are switched to the same user.
    pub fn from_fabric(fabric: &FabricState, eps: u8, spd: u8) -> Self {
        let to = fabric.route(ChannelKind::Eps, eps).ok().flatten();
        let from = fabric.route(ChannelKind::Spd, spd).ok().flatten();
        ArmSpec {
            eps,
            spd,
            user: if to.is_some() && to == from { to } else { None },
            compensation_ps_nm: 0.0,
            extra_loss_db: 0.0,
        }
    }
}

/// Scenario file for offline simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDoc {
    pub signal: ArmSpec,
    pub idler: ArmSpec,
    #[serde(default)]
    pub pair_rate_hz: Option<f64>,
}

impl ScenarioDoc {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        serde_json::from_str(text).map_err(|e| ScenarioError::Invalid(e.to_string()))
    }

    pub fn resolve(&self, config: &QispConfig) -> Result<Scenario, ScenarioError> {
        let mut scenario = build_scenario(config, &self.signal, &self.idler)?;
        if let Some(rate) = self.pair_rate_hz {
            scenario.source.pair_rate_hz = rate;
            scenario.source.validate()?;
        }
        Ok(scenario)
    }
}

pub fn build_scenario(
    config: &QispConfig,
    signal: &ArmSpec,
    idler: &ArmSpec,
) -> Result<Scenario, ScenarioError> {
    let eps = |i: u8| {
        config
            .fabric
            .eps(i)
            .cloned()
            .ok_or_else(|| ScenarioError::UnknownChannel(format!("EPS channel {i}")))
    };
    let spd = |i: u8| {
        config
            .fabric
            .spd(i)
            .cloned()
            .ok_or_else(|| ScenarioError::UnknownChannel(format!("SPD channel {i}")))
    };
    let signal_channel = eps(signal.eps)?;
    let idler_channel = eps(idler.eps)?;
    if signal_channel.partner != Some(idler.eps) {
        return Err(SimError::InvalidChannelPair(signal.eps, idler.eps).into());
    }
    if signal.spd == idler.spd {
        return Err(ScenarioError::Invalid(
            "signal and idler must use different detector channels".into(),
        ));
    }
    let arm = |spec: &ArmSpec| -> Result<DetectorArm, ScenarioError> {
        let detector = spd(spec.spd)?;
        let arm = match spec.user {
            None => None,
            Some(user) => {
                if !detector.group.contains(user) {
                    return Err(ScenarioError::Invalid(format!(
                        "SPD channel {} cannot reach {user}",
                        spec.spd
                    )));
                }
                let path = config
                    .topology
                    .path_to_user(user)
                    .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
                Some(ArmConfig {
                    path,
                    compensation_ps_nm: spec.compensation_ps_nm,
                    extra_loss_db: spec.extra_loss_db,
                })
            }
        };
        Ok(DetectorArm { arm, detector })
    };
    Ok(Scenario {
        source: config.source.clone(),
        signal_channel,
        idler_channel,
        signal: arm(signal)?,
        idler: arm(idler)?,
        tagger: config.tagger.clone(),
    })
}
