//! The service configuration file: network layout, switch fabric, physics
//! defaults, scheduler limits and user accounts in one JSON document.

use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::HistogramParams;
use crate::fabric::{EpsChannel, FabricError, FabricSpec, SpdChannel, UserGroup, UserId};
use crate::photonics::{SimError, SourceModel, TaggerModel};
use crate::scheduler::SchedulerPolicy;
use crate::topology::{LinkDoc, NodeDoc, Topology, TopologyDoc, TopologyError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Fabric(#[from] FabricError),
    #[error(transparent)]
    Physics(#[from] SimError),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Admin,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserAccount {
    pub user: UserId,
    #[serde(rename = "name")]
    pub display_name: String,
    #[serde(rename = "token")]
    pub api_token: String,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EpsDoc {
    index: u8,
    center_nm: f64,
    bandwidth_nm: f64,
    #[serde(default)]
    partner: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    switch: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpdDoc {
    index: u8,
    group: UserGroup,
    efficiency: f64,
    jitter_fwhm_ps: f64,
    dead_time_ps: f64,
    dark_rate_hz: f64,
}

fn default_degeneracy() -> f64 {
    1560.0
}
fn default_latency() -> u64 {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FabricDoc {
    #[serde(default = "default_degeneracy")]
    degeneracy_nm: f64,
    #[serde(default = "default_latency")]
    switch_latency_ms: u64,
    eps_channels: Vec<EpsDoc>,
    spd_channels: Vec<SpdDoc>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct PhysicsDoc {
    source: SourceModel,
    tagger: TaggerModel,
    analysis: HistogramParams,
}

fn default_port() -> u16 {
    8080
}
fn default_tick() -> u64 {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigDoc {
    #[serde(default = "default_port")]
    port: u16,
    #[serde(default = "default_tick")]
    tick_ms: u64,
    #[serde(default)]
    journal_path: Option<PathBuf>,
    nodes: Vec<NodeDoc>,
    #[serde(default)]
    links: Vec<LinkDoc>,
    fabric: FabricDoc,
    #[serde(default)]
    physics: PhysicsDoc,
    #[serde(default)]
    scheduler: SchedulerPolicy,
    #[serde(default)]
    users: Vec<UserAccount>,
}

/// A fully validated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct QispConfig {
    pub port: u16,
    pub tick_ms: u64,
    pub journal_path: Option<PathBuf>,
    pub topology: Topology,
    pub fabric: FabricSpec,
    pub source: SourceModel,
    pub tagger: TaggerModel,
    pub analysis: HistogramParams,
    pub scheduler: SchedulerPolicy,
    pub users: Vec<UserAccount>,
}

impl QispConfig {
    pub fn parse(text: &str) -> Result<QispConfig, ConfigError> {
        let doc: ConfigDoc =
            serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;

        let topology = Topology::from_doc(&TopologyDoc {
            nodes: doc.nodes,
            links: doc.links,
        })?;

        let fabric = FabricSpec {
            degeneracy_nm: doc.fabric.degeneracy_nm,
            switch_latency_ms: doc.fabric.switch_latency_ms,
            eps_channels: doc
                .fabric
                .eps_channels
                .iter()
                .map(|e| EpsChannel {
                    index: e.index,
                    center_nm: e.center_nm,
                    bandwidth_nm: e.bandwidth_nm,
                    partner: e.partner,
                    switch: e.switch.unwrap_or(e.index),
                })
                .collect(),
            spd_channels: doc
                .fabric
                .spd_channels
                .iter()
                .map(|s| SpdChannel {
                    index: s.index,
                    group: s.group,
                    efficiency: s.efficiency,
                    jitter_fwhm_ps: s.jitter_fwhm_ps,
                    dead_time_ps: s.dead_time_ps,
                    dark_rate_hz: s.dark_rate_hz,
                })
                .collect(),
        };
        fabric.validate()?;

        let mut source = doc.physics.source;
        source.degeneracy_nm = fabric.degeneracy_nm;
        source.validate()?;
        doc.physics.tagger.validate()?;
        let analysis = doc.physics.analysis;
        if !(analysis.bin_ps > 0.0 && analysis.window_ps >= analysis.bin_ps) {
            return Err(ConfigError::Invalid(
                "physics.analysis: need bin_ps > 0 and window_ps >= bin_ps".into(),
            ));
        }
        if doc.tick_ms == 0 {
            return Err(ConfigError::Invalid("tick_ms must be > 0".into()));
        }

        let mut tokens = BTreeSet::new();
        for (i, u) in doc.users.iter().enumerate() {
            if u.api_token.is_empty() || !tokens.insert(u.api_token.as_str()) {
                return Err(ConfigError::Invalid(format!(
                    "users[{i}].token must be non-empty and unique"
                )));
            }
        }

        Ok(QispConfig {
            port: doc.port,
            tick_ms: doc.tick_ms,
            journal_path: doc.journal_path,
            topology,
            fabric,
            source,
            tagger: doc.physics.tagger,
            analysis,
            scheduler: doc.scheduler,
            users: doc.users,
        })
    }

    pub fn default_inquire() -> QispConfig {
        QispConfig::parse(crate::DEFAULT_CONFIG).expect("bundled config is valid")
    }

    pub fn account_for_token(&self, token: &str) -> Option<&UserAccount> {
        self.users.iter().find(|u| u.api_token == token)
    }

    /// Serializes back to the document format.
    pub fn to_json(&self) -> String {
        let TopologyDoc { nodes, links } = self.topology.to_doc();
        let doc = ConfigDoc {
            port: self.port,
            tick_ms: self.tick_ms,
            journal_path: self.journal_path.clone(),
            nodes,
            links,
            fabric: FabricDoc {
                degeneracy_nm: self.fabric.degeneracy_nm,
                switch_latency_ms: self.fabric.switch_latency_ms,
                eps_channels: self
                    .fabric
                    .eps_channels
                    .iter()
                    .map(|e| EpsDoc {
                        index: e.index,
                        center_nm: e.center_nm,
                        bandwidth_nm: e.bandwidth_nm,
                        partner: e.partner,
                        switch: (e.switch != e.index).then_some(e.switch),
                    })
                    .collect(),
                spd_channels: self
                    .fabric
                    .spd_channels
                    .iter()
                    .map(|s| SpdDoc {
                        index: s.index,
                        group: s.group,
                        efficiency: s.efficiency,
                        jitter_fwhm_ps: s.jitter_fwhm_ps,
                        dead_time_ps: s.dead_time_ps,
                        dark_rate_hz: s.dark_rate_hz,
                    })
                    .collect(),
            },
            physics: PhysicsDoc {
                source: self.source.clone(),
                tagger: self.tagger.clone(),
                analysis: self.analysis.clone(),
            },
            scheduler: self.scheduler.clone(),
            users: self.users.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_config_parses() {
        let cfg = QispConfig::default_inquire();
        assert_eq!(cfg.port, 8080);
        assert_eq!(cfg.tick_ms, 100);
        assert_eq!(cfg.fabric, FabricSpec::default());
        assert_eq!(cfg.source, SourceModel::default());
        assert_eq!(cfg.tagger, TaggerModel::default());
        assert_eq!(cfg.users.len(), 14);
        assert_eq!(
            cfg.account_for_token("demo-token-admin").map(|u| u.role),
            Some(Role::Admin)
        );
    }

    #[test]
    fn round_trip() {
        let cfg = QispConfig::default_inquire();
        assert_eq!(QispConfig::parse(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn errors_name_the_key() {
        let text = crate::DEFAULT_CONFIG.replacen("\"tick_ms\"", "\"tick_msec\"", 1);
        let err = QispConfig::parse(&text).unwrap_err().to_string();
        assert!(err.contains("tick_msec"), "{err}");

        let text = crate::DEFAULT_CONFIG.replacen("\"efficiency\": 0.8", "\"efficiency\": 1.8", 1);
        let err = QispConfig::parse(&text).unwrap_err().to_string();
        assert!(err.contains("efficiency"), "{err}");
    }

    #[test]
    fn duplicate_tokens_rejected() {
        let text = crate::DEFAULT_CONFIG.replace("demo-token-user-2\"", "demo-token-user-1\"");
        assert!(matches!(QispConfig::parse(&text), Err(ConfigError::Invalid(_))));
    }
}
