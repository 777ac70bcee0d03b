//! Optical switch fabric acting as bandwidth-unlimited quantum routers.
//!
//! Five 1×16 switches each carry one entangled-photon-source (EPS) channel to
//! any of the 16 user ports, and eight 1×8 switches each connect one
//! single-photon-detector (SPD) channel to one half of the users. A switch
//! selects exactly one output at a time, so a channel is never shared.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const EPS_CHANNELS: u8 = 5;
pub const SPD_CHANNELS: u8 = 8;
pub const MAX_USERS: u8 = 16;

/// A user port on the switch fabric, `1..=16`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct UserId(u8);

impl UserId {
    pub fn new(raw: u8) -> Result<Self, FabricError> {
        if (1..=MAX_USERS).contains(&raw) {
            Ok(UserId(raw))
        } else {
            Err(FabricError::UnknownUser(raw))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn group(self) -> UserGroup {
        if self.0 <= 8 {
            UserGroup::Low
        } else {
            UserGroup::High
        }
    }

    pub fn all() -> impl Iterator<Item = UserId> {
        (1..=MAX_USERS).map(UserId)
    }
}

impl TryFrom<u8> for UserId {
    type Error = FabricError;

    fn try_from(raw: u8) -> Result<Self, Self::Error> {
        UserId::new(raw)
    }
}

impl From<UserId> for u8 {
    fn from(u: UserId) -> u8 {
        u.0
    }
}

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "user{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    Eps,
    Spd,
}

impl ChannelKind {
    pub fn channel_count(self) -> u8 {
        match self {
            ChannelKind::Eps => EPS_CHANNELS,
            ChannelKind::Spd => SPD_CHANNELS,
        }
    }
}

impl fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChannelKind::Eps => f.write_str("EPS"),
            ChannelKind::Spd => f.write_str("SPD"),
        }
    }
}

/// Half of the user ports served by a 1×8 detector switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UserGroup {
    /// Users 1–8.
    Low,
    /// Users 9–16.
    High,
}

impl UserGroup {
    /// Fixed assignment: detector channels 1–4 serve the low half, 5–8 the high half.
    pub fn for_spd_channel(channel: u8) -> Option<UserGroup> {
        match channel {
            1..=4 => Some(UserGroup::Low),
            5..=8 => Some(UserGroup::High),
            _ => None,
        }
    }

    pub fn contains(self, user: UserId) -> bool {
        user.group() == self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsChannel {
    pub index: u8,
    pub center_nm: f64,
    pub bandwidth_nm: f64,
    /// Index of the correlated partner channel, if this port carries one half of a pair.
    pub partner: Option<u8>,
    /// The 1×16 switch this channel exits through. Channels sharing a switch
    /// are always delivered to the same user.
    pub switch: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpdChannel {
    pub index: u8,
    pub group: UserGroup,
    pub efficiency: f64,
    pub jitter_fwhm_ps: f64,
    pub dead_time_ps: f64,
    pub dark_rate_hz: f64,
}

impl SpdChannel {
    /// A detector with the configured defaults for the given channel.
    pub fn with_defaults(index: u8) -> Self {
        SpdChannel {
            index,
            group: UserGroup::for_spd_channel(index).unwrap_or(UserGroup::Low),
            efficiency: 0.8,
            jitter_fwhm_ps: 80.0,
            dead_time_ps: 50_000.0,
            dark_rate_hz: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FabricSpec {
    pub degeneracy_nm: f64,
    pub eps_channels: Vec<EpsChannel>,
    pub spd_channels: Vec<SpdChannel>,
    pub switch_latency_ms: u64,
}

impl FabricSpec {
    pub fn eps(&self, index: u8) -> Option<&EpsChannel> {
        self.eps_channels.iter().find(|c| c.index == index)
    }

    pub fn spd(&self, index: u8) -> Option<&SpdChannel> {
        self.spd_channels.iter().find(|c| c.index == index)
    }

    /// Unordered correlated channel pairs `(a, b)` with `a < b`.
    pub fn correlated_pairs(&self) -> Vec<(u8, u8)> {
        let mut pairs: Vec<(u8, u8)> = self
            .eps_channels
            .iter()
            .filter_map(|c| c.partner.map(|p| (c.index.min(p), c.index.max(p))))
            .collect();
        pairs.sort_unstable();
        pairs.dedup();
        pairs
    }

    /// EPS channels delivered through the same 1×16 switch as `index`, itself included.
    pub fn switch_mates(&self, index: u8) -> Vec<u8> {
        match self.eps(index) {
            Some(ch) => self
                .eps_channels
                .iter()
                .filter(|c| c.switch == ch.switch)
                .map(|c| c.index)
                .collect(),
            None => vec![index],
        }
    }

    pub fn remove_correlations(&mut self) {
        for ch in &mut self.eps_channels {
            ch.partner = None;
        }
    }

    pub fn validate(&self) -> Result<(), FabricError> {
        let mut seen = BTreeSet::new();
        for ch in &self.eps_channels {
            if !(1..=EPS_CHANNELS).contains(&ch.index) || !seen.insert(ch.index) {
                return Err(FabricError::InvalidSpec(format!(
                    "fabric.eps_channels: index {} is out of range or repeated",
                    ch.index
                )));
            }
            if !(ch.bandwidth_nm > 0.0 && ch.center_nm.is_finite()) {
                return Err(FabricError::InvalidSpec(format!(
                    "fabric.eps_channels[{}]: bandwidth_nm must be > 0",
                    ch.index
                )));
            }
            if !(1..=EPS_CHANNELS).contains(&ch.switch) {
                return Err(FabricError::InvalidSpec(format!(
                    "fabric.eps_channels[{}].switch: {} is not one of the 1x16 switches",
                    ch.index, ch.switch
                )));
            }
        }
        for ch in &self.eps_channels {
            let Some(p) = ch.partner else { continue };
            if p == ch.index {
                return Err(FabricError::InvalidSpec(format!(
                    "fabric.eps_channels[{}].partner: a channel cannot partner itself",
                    ch.index
                )));
            }
            let Some(other) = self.eps(p) else {
                return Err(FabricError::InvalidSpec(format!(
                    "fabric.eps_channels[{}].partner: channel {p} does not exist",
                    ch.index
                )));
            };
            if other.partner != Some(ch.index) {
                return Err(FabricError::InvalidSpec(format!(
                    "fabric.eps_channels[{}].partner: relation with channel {p} is not symmetric",
                    ch.index
                )));
            }
            let asymmetry = (ch.center_nm + other.center_nm) / 2.0 - self.degeneracy_nm;
            if asymmetry.abs() > 1.0 {
                return Err(FabricError::InvalidSpec(format!(
                    "fabric.eps_channels[{}].center_nm: pair ({}, {p}) is not centred on the {} nm degeneracy",
                    ch.index, ch.index, self.degeneracy_nm
                )));
            }
        }

        let mut seen = BTreeSet::new();
        for ch in &self.spd_channels {
            let Some(group) = UserGroup::for_spd_channel(ch.index) else {
                return Err(FabricError::InvalidSpec(format!(
                    "fabric.spd_channels: index {} is out of range",
                    ch.index
                )));
            };
            if !seen.insert(ch.index) {
                return Err(FabricError::InvalidSpec(format!(
                    "fabric.spd_channels: index {} is repeated",
                    ch.index
                )));
            }
            if ch.group != group {
                return Err(FabricError::GroupViolation {
                    channel: ch.index,
                    detail: format!(
                        "fabric.spd_channels[{}].group must be {:?}",
                        ch.index, group
                    ),
                });
            }
            if !(0.0..=1.0).contains(&ch.efficiency) {
                return Err(FabricError::InvalidSpec(format!(
                    "fabric.spd_channels[{}].efficiency must lie in [0, 1]",
                    ch.index
                )));
            }
            if ch.jitter_fwhm_ps < 0.0 || ch.dead_time_ps < 0.0 || ch.dark_rate_hz < 0.0 {
                return Err(FabricError::InvalidSpec(format!(
                    "fabric.spd_channels[{}]: jitter, dead time and dark rate must be >= 0",
                    ch.index
                )));
            }
        }
        Ok(())
    }
}

impl Default for FabricSpec {
    fn default() -> Self {
        let eps = |index, center_nm, partner| EpsChannel {
            index,
            center_nm,
            bandwidth_nm: 16.0,
            partner,
            switch: index,
        };
        FabricSpec {
            degeneracy_nm: 1560.0,
            eps_channels: vec![
                eps(1, 1560.0, None),
                eps(2, 1550.0, Some(3)),
                eps(3, 1570.0, Some(2)),
                eps(4, 1530.0, Some(5)),
                eps(5, 1590.0, Some(4)),
            ],
            spd_channels: (1..=SPD_CHANNELS).map(SpdChannel::with_defaults).collect(),
            switch_latency_ms: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FabricError {
    #[error("unknown {kind} channel {channel}")]
    UnknownChannel { kind: ChannelKind, channel: u8 },
    #[error("unknown user {0}")]
    UnknownUser(u8),
    #[error("SPD channel {channel} cannot reach that user: {detail}")]
    GroupViolation { channel: u8, detail: String },
    #[error("{kind} channel {channel} is occupied by {holder}")]
    ChannelOccupied {
        kind: ChannelKind,
        channel: u8,
        holder: UserId,
    },
    #[error("invalid fabric spec: {0}")]
    InvalidSpec(String),
}

/// Routing state of every switch. A value type: operations return the new state.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FabricState {
    eps: [Option<UserId>; EPS_CHANNELS as usize],
    spd: [Option<UserId>; SPD_CHANNELS as usize],
    eps_switch: [u8; EPS_CHANNELS as usize],
}

impl Default for FabricState {
    fn default() -> Self {
        FabricState {
            eps: [None; EPS_CHANNELS as usize],
            spd: [None; SPD_CHANNELS as usize],
            eps_switch: [1, 2, 3, 4, 5],
        }
    }
}

impl FabricState {
    /// Empty routing state honouring the switch assignment of `spec`.
    pub fn new(spec: &FabricSpec) -> Self {
        let mut state = FabricState::default();
        for ch in &spec.eps_channels {
            if let Some(slot) = state.eps_switch.get_mut(ch.index as usize - 1) {
                *slot = ch.switch;
            }
        }
        state
    }

    fn slot(&self, kind: ChannelKind, channel: u8) -> Result<usize, FabricError> {
        if (1..=kind.channel_count()).contains(&channel) {
            Ok(channel as usize - 1)
        } else {
            Err(FabricError::UnknownChannel { kind, channel })
        }
    }

    pub fn route(&self, kind: ChannelKind, channel: u8) -> Result<Option<UserId>, FabricError> {
        let i = self.slot(kind, channel)?;
        Ok(match kind {
            ChannelKind::Eps => self.eps[i],
            ChannelKind::Spd => self.spd[i],
        })
    }

    pub fn set_route(
        &self,
        kind: ChannelKind,
        channel: u8,
        user: UserId,
    ) -> Result<FabricState, FabricError> {
        let i = self.slot(kind, channel)?;
        let mut next = self.clone();
        match kind {
            ChannelKind::Eps => {
                let switch = self.eps_switch[i];
                for (j, holder) in self.eps.iter().enumerate() {
                    if self.eps_switch[j] != switch {
                        continue;
                    }
                    if let Some(holder) = *holder {
                        if holder != user {
                            return Err(FabricError::ChannelOccupied {
                                kind,
                                channel: j as u8 + 1,
                                holder,
                            });
                        }
                    }
                }
                next.eps[i] = Some(user);
            }
            ChannelKind::Spd => {
                let group = UserGroup::for_spd_channel(channel).expect("index checked");
                if !group.contains(user) {
                    return Err(FabricError::GroupViolation {
                        channel,
                        detail: format!("{user} is outside the {group:?} group"),
                    });
                }
                if let Some(holder) = self.spd[i] {
                    if holder != user {
                        return Err(FabricError::ChannelOccupied {
                            kind,
                            channel,
                            holder,
                        });
                    }
                }
                next.spd[i] = Some(user);
            }
        }
        Ok(next)
    }

    pub fn release_route(&self, kind: ChannelKind, channel: u8) -> Result<FabricState, FabricError> {
        let i = self.slot(kind, channel)?;
        let mut next = self.clone();
        match kind {
            ChannelKind::Eps => next.eps[i] = None,
            ChannelKind::Spd => next.spd[i] = None,
        }
        Ok(next)
    }

    /// All `(kind, channel, user)` routes currently set.
    pub fn routes(&self) -> impl Iterator<Item = (ChannelKind, u8, UserId)> + '_ {
        let eps = self
            .eps
            .iter()
            .enumerate()
            .filter_map(|(i, u)| u.map(|u| (ChannelKind::Eps, i as u8 + 1, u)));
        let spd = self
            .spd
            .iter()
            .enumerate()
            .filter_map(|(i, u)| u.map(|u| (ChannelKind::Spd, i as u8 + 1, u)));
        eps.chain(spd)
    }

    pub fn snapshot(&self) -> FabricSnapshot {
        let map = |routes: &[Option<UserId>]| {
            routes
                .iter()
                .enumerate()
                .map(|(i, u)| (i as u8 + 1, *u))
                .collect()
        };
        FabricSnapshot {
            eps_routes: map(&self.eps),
            spd_routes: map(&self.spd),
        }
    }
}

/// Serializable view of a [`FabricState`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FabricSnapshot {
    pub eps_routes: BTreeMap<u8, Option<UserId>>,
    pub spd_routes: BTreeMap<u8, Option<UserId>>,
}

/// Channels a user port can be switched to: all five EPS channels and the
/// four SPD channels of the user's group.
pub fn reachable_channels(user: UserId) -> (BTreeSet<u8>, BTreeSet<u8>) {
    let eps = (1..=EPS_CHANNELS).collect();
    let spd = (1..=SPD_CHANNELS)
        .filter(|&c| UserGroup::for_spd_channel(c) == Some(user.group()))
        .collect();
    (eps, spd)
}

pub fn is_reachable(user: UserId, kind: ChannelKind, channel: u8) -> bool {
    match kind {
        ChannelKind::Eps => (1..=EPS_CHANNELS).contains(&channel),
        ChannelKind::Spd => UserGroup::for_spd_channel(channel) == Some(user.group()),
    }
}
