//! Live network status: which users hold channels right now and which photon
//! streams are flowing where.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::fabric::{ChannelKind, FabricSnapshot, FabricState, UserId};
use crate::scheduler::{Calendar, ReservationId, ReservationStatus};
use crate::topology::{NodeKind, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeState {
    ActiveEps,
    ActiveSpd,
    ActiveBoth,
    Inactive,
    Hub,
}

impl NodeState {
    fn from_holdings(eps: bool, spd: bool) -> Self {
        match (eps, spd) {
            (true, true) => NodeState::ActiveBoth,
            (true, false) => NodeState::ActiveEps,
            (false, true) => NodeState::ActiveSpd,
            (false, false) => NodeState::Inactive,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowKind {
    /// Source at the central hub to a user.
    EntangledPhotons,
    /// A user's photons back to the detectors at the central hub.
    SinglePhotonsToDetector,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeStatus {
    pub id: String,
    pub user: Option<UserId>,
    pub state: NodeState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flow {
    pub source: String,
    pub dest: String,
    pub kind: FlowKind,
    pub channel: u8,
    pub reservation: ReservationId,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReservationCounts {
    pub pending: usize,
    pub active: usize,
    pub completed: usize,
    pub cancelled: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusFrame {
    pub timestamp_ms: u64,
    pub nodes: Vec<NodeStatus>,
    /// State of every user port, including spares with no terminal attached.
    pub ports: BTreeMap<u8, NodeState>,
    pub flows: Vec<Flow>,
    pub fabric: FabricSnapshot,
    pub reservations: ReservationCounts,
}

impl StatusFrame {
    pub fn node(&self, id: &str) -> Option<&NodeStatus> {
        self.nodes.iter().find(|n| n.id == id)
    }
}

pub fn status_frame(topology: &Topology, calendar: &Calendar, fabric: &FabricState, now_ms: u64) -> StatusFrame {
    let mut holdings: BTreeMap<UserId, (bool, bool)> = BTreeMap::new();
    let hub = topology.central_hub().id.to_string();
    let port_name = |user: UserId| {
        topology
            .terminal_for(user)
            .map(|n| n.id.to_string())
            .unwrap_or_else(|| format!("port-{}", user.get()))
    };
    let mut flows = Vec::new();
    for res in calendar.active() {
        let h = holdings.entry(res.user).or_default();
        for r in &res.resources {
            let node = port_name(res.user);
            let flow = match r.kind {
                ChannelKind::Eps => {
                    h.0 = true;
                    Flow {
                        source: hub.clone(),
                        dest: node,
                        kind: FlowKind::EntangledPhotons,
                        channel: r.channel,
                        reservation: res.id,
                    }
                }
                ChannelKind::Spd => {
                    h.1 = true;
                    Flow {
                        source: node,
                        dest: hub.clone(),
                        kind: FlowKind::SinglePhotonsToDetector,
                        channel: r.channel,
                        reservation: res.id,
                    }
                }
            };
            flows.push(flow);
        }
    }
    let state_of = |user: UserId| {
        let (e, s) = holdings.get(&user).copied().unwrap_or_default();
        NodeState::from_holdings(e, s)
    };

    let nodes = topology
        .nodes()
        .iter()
        .map(|n| NodeStatus {
            id: n.id.to_string(),
            user: n.user,
            state: match (n.kind, n.user) {
                (NodeKind::Terminal, Some(u)) => state_of(u),
                (NodeKind::Terminal, None) => NodeState::Inactive,
                _ => NodeState::Hub,
            },
        })
        .collect();

    let mut counts = ReservationCounts::default();
    for r in calendar.reservations() {
        match r.status {
            ReservationStatus::Pending => counts.pending += 1,
            ReservationStatus::Active => counts.active += 1,
            ReservationStatus::Completed => counts.completed += 1,
            ReservationStatus::Cancelled => counts.cancelled += 1,
        }
    }

    StatusFrame {
        timestamp_ms: now_ms,
        nodes,
        ports: UserId::all().map(|u| (u.get(), state_of(u))).collect(),
        flows,
        fabric: fabric.snapshot(),
        reservations: counts,
    }
}
