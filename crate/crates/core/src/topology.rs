//! Physical fiber network: a two-level star rooted at the central hub.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fabric::{ChannelKind, FabricSpec, FabricState, UserId};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Result<Self, TopologyError> {
        let id = id.into();
        if id.trim().is_empty() {
            return Err(TopologyError::Validation("node id must be non-empty".into()));
        }
        Ok(NodeId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    CentralHub,
    BuildingHub,
    Terminal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub kind: NodeKind,
    pub building: String,
    pub display_position: [f64; 2],
    /// Switch-fabric port of a terminal.
    pub user: Option<UserId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiberLink {
    pub endpoint_a: NodeId,
    pub endpoint_b: NodeId,
    pub length_km: f64,
    pub loss_db_per_km: f64,
    pub dispersion_ps_nm_km: f64,
    pub delay_ps_per_km: f64,
}

impl FiberLink {
    pub fn loss_db(&self) -> f64 {
        self.loss_db_per_km * self.length_km
    }

    pub fn dispersion_ps_nm(&self) -> f64 {
        self.dispersion_ps_nm_km * self.length_km
    }

    pub fn delay_ps(&self) -> f64 {
        self.delay_ps_per_km * self.length_km
    }

    fn other_end(&self, id: &NodeId) -> Option<&NodeId> {
        if &self.endpoint_a == id {
            Some(&self.endpoint_b)
        } else if &self.endpoint_b == id {
            Some(&self.endpoint_a)
        } else {
            None
        }
    }
}

/// Hub-to-node route with accumulated optical properties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpticalPath {
    pub links: Vec<FiberLink>,
    pub total_loss_db: f64,
    pub total_dispersion_ps_nm: f64,
    pub total_delay_ps: f64,
}

impl OpticalPath {
    pub fn from_links(links: Vec<FiberLink>) -> Self {
        let total_loss_db = links.iter().map(FiberLink::loss_db).sum();
        let total_dispersion_ps_nm = links.iter().map(FiberLink::dispersion_ps_nm).sum();
        let total_delay_ps = links.iter().map(FiberLink::delay_ps).sum();
        OpticalPath {
            links,
            total_loss_db,
            total_dispersion_ps_nm,
            total_delay_ps,
        }
    }

    /// Zero-length path: no loss, dispersion or delay.
    pub fn direct() -> Self {
        OpticalPath::from_links(Vec::new())
    }

    /// Transmission probability of the path, `10^(-loss/10)`.
    pub fn transmission(&self) -> f64 {
        10f64.powf(-self.total_loss_db / 10.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopologyError {
    #[error("cannot parse topology document: {0}")]
    Parse(String),
    #[error("invalid topology: {0}")]
    Validation(String),
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("no path from the central hub to {0}")]
    NoPath(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDoc {
    pub id: String,
    pub kind: NodeKind,
    pub building: String,
    pub position: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user: Option<u8>,
}

fn default_loss() -> f64 {
    0.2
}
fn default_dispersion() -> f64 {
    17.0
}
fn default_delay() -> f64 {
    4900.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkDoc {
    pub a: String,
    pub b: String,
    pub length_km: f64,
    #[serde(default = "default_loss")]
    pub loss_db_per_km: f64,
    #[serde(default = "default_dispersion")]
    pub dispersion_ps_nm_km: f64,
    #[serde(default = "default_delay")]
    pub delay_ps_per_km: f64,
}

/// The `nodes` / `links` part of a configuration document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyDoc {
    pub nodes: Vec<NodeDoc>,
    #[serde(default)]
    pub links: Vec<LinkDoc>,
}

/// A validated star network. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    nodes: Vec<Node>,
    links: Vec<FiberLink>,
    index: BTreeMap<NodeId, usize>,
    central: usize,
    /// For every node reachable from the hub (except the hub), the link towards the hub.
    parent: BTreeMap<NodeId, usize>,
}

/// Parses the `nodes` and `links` keys of a configuration document.
pub fn load_topology(config_text: &str) -> Result<Topology, TopologyError> {
    let doc: TopologyDoc =
        serde_json::from_str(config_text).map_err(|e| TopologyError::Parse(e.to_string()))?;
    Topology::from_doc(&doc)
}

impl Topology {
    pub fn from_doc(doc: &TopologyDoc) -> Result<Topology, TopologyError> {
        let mut nodes = Vec::with_capacity(doc.nodes.len());
        let mut index = BTreeMap::new();
        for (i, n) in doc.nodes.iter().enumerate() {
            let id = NodeId::new(n.id.clone())
                .map_err(|_| TopologyError::Validation(format!("nodes[{i}].id is empty")))?;
            if index.insert(id.clone(), i).is_some() {
                return Err(TopologyError::Validation(format!(
                    "nodes[{i}].id: duplicate id {id:?}"
                )));
            }
            if !n.position.iter().all(|v| v.is_finite()) {
                return Err(TopologyError::Validation(format!(
                    "nodes[{i}].position must be finite"
                )));
            }
            let user = match (n.kind, n.user) {
                (_, None) => None,
                (NodeKind::Terminal, Some(u)) => Some(UserId::new(u).map_err(|_| {
                    TopologyError::Validation(format!("nodes[{i}].user: {u} is not in 1..=16"))
                })?),
                (_, Some(_)) => {
                    return Err(TopologyError::Validation(format!(
                        "nodes[{i}].user: only terminals attach to user ports"
                    )))
                }
            };
            nodes.push(Node {
                id,
                kind: n.kind,
                building: n.building.clone(),
                display_position: n.position,
                user,
            });
        }
        assign_user_ports(&mut nodes)?;

        let hubs: Vec<usize> = nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.kind == NodeKind::CentralHub)
            .map(|(i, _)| i)
            .collect();
        let central = match hubs.as_slice() {
            [one] => *one,
            [] => return Err(TopologyError::Validation("no central_hub node".into())),
            _ => {
                return Err(TopologyError::Validation(
                    "more than one central_hub node".into(),
                ))
            }
        };

        let mut links = Vec::with_capacity(doc.links.len());
        let mut pairs = BTreeSet::new();
        for (i, l) in doc.links.iter().enumerate() {
            for end in [&l.a, &l.b] {
                if !index.contains_key(&NodeId(end.clone())) {
                    return Err(TopologyError::Validation(format!(
                        "links[{i}]: endpoint {end:?} is not a declared node"
                    )));
                }
            }
            if l.a == l.b {
                return Err(TopologyError::Validation(format!(
                    "links[{i}]: endpoints must be distinct"
                )));
            }
            if !(l.length_km > 0.0 && l.length_km.is_finite()) {
                return Err(TopologyError::Validation(format!(
                    "links[{i}].length_km must be > 0"
                )));
            }
            if !(l.loss_db_per_km >= 0.0 && l.loss_db_per_km.is_finite()) {
                return Err(TopologyError::Validation(format!(
                    "links[{i}].loss_db_per_km must be finite and >= 0"
                )));
            }
            if !l.dispersion_ps_nm_km.is_finite() {
                return Err(TopologyError::Validation(format!(
                    "links[{i}].dispersion_ps_nm_km must be finite"
                )));
            }
            if !(l.delay_ps_per_km > 0.0 && l.delay_ps_per_km.is_finite()) {
                return Err(TopologyError::Validation(format!(
                    "links[{i}].delay_ps_per_km must be > 0"
                )));
            }
            let key = if l.a < l.b {
                (l.a.clone(), l.b.clone())
            } else {
                (l.b.clone(), l.a.clone())
            };
            if !pairs.insert(key) {
                return Err(TopologyError::Validation(format!(
                    "links[{i}]: {} and {} are already linked",
                    l.a, l.b
                )));
            }
            links.push(FiberLink {
                endpoint_a: NodeId(l.a.clone()),
                endpoint_b: NodeId(l.b.clone()),
                length_km: l.length_km,
                loss_db_per_km: l.loss_db_per_km,
                dispersion_ps_nm_km: l.dispersion_ps_nm_km,
                delay_ps_per_km: l.delay_ps_per_km,
            });
        }

        let parent = spanning_parents(&nodes, &links, central)?;
        for n in &nodes {
            if n.kind == NodeKind::Terminal && !parent.contains_key(&n.id) {
                return Err(TopologyError::Validation(format!(
                    "terminal {} is unreachable from the central hub",
                    n.id
                )));
            }
        }

        Ok(Topology {
            nodes,
            links,
            index,
            central,
            parent,
        })
    }

    pub fn to_doc(&self) -> TopologyDoc {
        TopologyDoc {
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeDoc {
                    id: n.id.0.clone(),
                    kind: n.kind,
                    building: n.building.clone(),
                    position: n.display_position,
                    user: n.user.map(UserId::get),
                })
                .collect(),
            links: self
                .links
                .iter()
                .map(|l| LinkDoc {
                    a: l.endpoint_a.0.clone(),
                    b: l.endpoint_b.0.clone(),
                    length_km: l.length_km,
                    loss_db_per_km: l.loss_db_per_km,
                    dispersion_ps_nm_km: l.dispersion_ps_nm_km,
                    delay_ps_per_km: l.delay_ps_per_km,
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_doc()).expect("topology serializes")
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn links(&self) -> &[FiberLink] {
        &self.links
    }

    pub fn central_hub(&self) -> &Node {
        &self.nodes[self.central]
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.index.get(&NodeId(id.to_string())).map(|&i| &self.nodes[i])
    }

    pub fn terminals(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| n.kind == NodeKind::Terminal)
    }

    pub fn hub_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| n.kind != NodeKind::Terminal)
            .count()
    }

    pub fn terminal_for(&self, user: UserId) -> Option<&Node> {
        self.terminals().find(|n| n.user == Some(user))
    }

    pub fn terminal_users(&self) -> BTreeSet<UserId> {
        self.terminals().filter_map(|n| n.user).collect()
    }

    /// The unique route from the central hub to `node`.
    pub fn path_to(&self, node: &str) -> Result<OpticalPath, TopologyError> {
        let id = NodeId(node.to_string());
        let Some(&i) = self.index.get(&id) else {
            return Err(TopologyError::UnknownNode(node.to_string()));
        };
        if i == self.central {
            return Err(TopologyError::UnknownNode(format!(
                "{node} (the central hub has no path to itself)"
            )));
        }
        let mut links = Vec::new();
        let mut cur = id;
        while let Some(&li) = self.parent.get(&cur) {
            let link = &self.links[li];
            cur = link.other_end(&cur).expect("parent link touches node").clone();
            links.push(link.clone());
        }
        if cur != self.nodes[self.central].id {
            return Err(TopologyError::NoPath(node.to_string()));
        }
        links.reverse();
        Ok(OpticalPath::from_links(links))
    }

    pub fn path_to_user(&self, user: UserId) -> Result<OpticalPath, TopologyError> {
        let node = self
            .terminal_for(user)
            .ok_or_else(|| TopologyError::UnknownNode(user.to_string()))?;
        self.path_to(node.id.as_str())
    }
}

/// Terminals either all declare a `user` port or none does; in the latter
/// case ports are handed out in declaration order.
fn assign_user_ports(nodes: &mut [Node]) -> Result<(), TopologyError> {
    let terminals: Vec<usize> = nodes
        .iter()
        .enumerate()
        .filter(|(_, n)| n.kind == NodeKind::Terminal)
        .map(|(i, _)| i)
        .collect();
    let declared = terminals.iter().filter(|&&i| nodes[i].user.is_some()).count();
    if declared == 0 {
        if terminals.len() > crate::fabric::MAX_USERS as usize {
            return Err(TopologyError::Validation(format!(
                "{} terminals exceed the {} switch ports",
                terminals.len(),
                crate::fabric::MAX_USERS
            )));
        }
        for (port, &i) in terminals.iter().enumerate() {
            nodes[i].user = Some(UserId::new(port as u8 + 1).expect("port in range"));
        }
        return Ok(());
    }
    if declared != terminals.len() {
        return Err(TopologyError::Validation(
            "either every terminal declares a user port or none does".into(),
        ));
    }
    let mut seen = BTreeSet::new();
    for &i in &terminals {
        let u = nodes[i].user.expect("declared");
        if !seen.insert(u) {
            return Err(TopologyError::Validation(format!(
                "nodes[{i}].user: port {} is used twice",
                u.get()
            )));
        }
    }
    Ok(())
}

/// BFS from the hub. Fails on cycles so that every path stays unique.
fn spanning_parents(
    nodes: &[Node],
    links: &[FiberLink],
    central: usize,
) -> Result<BTreeMap<NodeId, usize>, TopologyError> {
    let mut adjacency: BTreeMap<&NodeId, Vec<usize>> = BTreeMap::new();
    for (i, l) in links.iter().enumerate() {
        adjacency.entry(&l.endpoint_a).or_default().push(i);
        adjacency.entry(&l.endpoint_b).or_default().push(i);
    }
    let root = &nodes[central].id;
    let mut parent = BTreeMap::new();
    let mut visited = BTreeSet::from([root.clone()]);
    let mut queue = VecDeque::from([root.clone()]);
    while let Some(cur) = queue.pop_front() {
        for &li in adjacency.get(&cur).map(Vec::as_slice).unwrap_or_default() {
            if parent.get(&cur) == Some(&li) {
                continue;
            }
            let next = links[li].other_end(&cur).expect("adjacent").clone();
            if !visited.insert(next.clone()) {
                return Err(TopologyError::Validation(format!(
                    "link {}-{} closes a cycle; the network must be a star",
                    links[li].endpoint_a, links[li].endpoint_b
                )));
            }
            parent.insert(next.clone(), li);
            queue.push_back(next);
        }
    }
    Ok(parent)
}

/// Every unordered pair of terminal users that can be handed the two halves
/// of some correlated EPS channel pair at the same time.
///
/// Decided by trying both routings on an empty fabric for every correlated
/// pair and every ordered user pair.
pub fn logical_graph(topology: &Topology, fabric: &FabricSpec) -> BTreeSet<(UserId, UserId)> {
    let users: Vec<UserId> = topology.terminal_users().into_iter().collect();
    let empty = FabricState::new(fabric);
    let mut edges = BTreeSet::new();
    for (a, b) in fabric.correlated_pairs() {
        for &u in &users {
            for &v in &users {
                if u == v || edges.contains(&(u.min(v), u.max(v))) {
                    continue;
                }
                let routed = empty
                    .set_route(ChannelKind::Eps, a, u)
                    .and_then(|s| s.set_route(ChannelKind::Eps, b, v));
                if routed.is_ok() {
                    edges.insert((u.min(v), u.max(v)));
                }
            }
        }
    }
    edges
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(nodes: &str, links: &str) -> String {
        format!(r#"{{"nodes": [{nodes}], "links": [{links}]}}"#)
    }

    const HUB: &str = r#"{"id":"ECE","kind":"central_hub","building":"ECE","position":[0,0]}"#;

    #[test]
    fn default_config_shape() {
        let t = load_topology(crate::DEFAULT_CONFIG).unwrap();
        assert_eq!(t.hub_count(), 5);
        assert_eq!(t.terminals().count(), 13);
        assert_eq!(t.central_hub().id.as_str(), "ECE");
        let buildings: BTreeSet<_> = t.nodes().iter().map(|n| n.building.as_str()).collect();
        assert_eq!(
            buildings,
            BTreeSet::from(["BIO", "ECE", "MSE", "OSC", "PAS"])
        );
    }

    #[test]
    fn default_paths_carry_measured_dispersion() {
        let t = load_topology(crate::DEFAULT_CONFIG).unwrap();
        for n in t.terminals() {
            let p = t.path_to(n.id.as_str()).unwrap();
            assert!((p.total_dispersion_ps_nm - 9.7).abs() < 1e-9, "{}", n.id);
            assert_eq!(p.links.len(), 2);
        }
    }

    #[test]
    fn hub_only_topology_is_valid() {
        let t = load_topology(&doc(HUB, "")).unwrap();
        assert_eq!(t.nodes().len(), 1);
        assert!(logical_graph(&t, &FabricSpec::default()).is_empty());
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let n = r#"{"id":"PAS-1","kind":"terminal","building":"PAS","position":[1,1]}"#;
        let err = load_topology(&doc(&format!("{HUB},{n},{n}"), "")).unwrap_err();
        assert!(matches!(err, TopologyError::Validation(m) if m.contains("duplicate")));
    }

    #[test]
    fn structural_errors() {
        let t1 = r#"{"id":"T1","kind":"terminal","building":"X","position":[1,1]}"#;
        assert!(matches!(
            load_topology("{ nodes: ]"),
            Err(TopologyError::Parse(_))
        ));
        assert!(matches!(
            load_topology(&doc(t1, "")),
            Err(TopologyError::Validation(m)) if m.contains("central_hub")
        ));
        assert!(matches!(
            load_topology(&doc(&format!("{HUB},{t1}"), "")),
            Err(TopologyError::Validation(m)) if m.contains("unreachable")
        ));
        assert!(matches!(
            load_topology(&doc(HUB, r#"{"a":"ECE","b":"NOPE","length_km":1}"#)),
            Err(TopologyError::Validation(m)) if m.contains("NOPE")
        ));
    }

    #[test]
    fn two_link_path_sums_dispersion() {
        let nodes = format!(
            r#"{HUB},{{"id":"B","kind":"building_hub","building":"B","position":[1,0]}},
               {{"id":"T","kind":"terminal","building":"B","position":[2,0]}}"#
        );
        let links = r#"{"a":"ECE","b":"B","length_km":0.30},{"a":"B","b":"T","length_km":0.27}"#;
        let t = load_topology(&doc(&nodes, links)).unwrap();
        let p = t.path_to("T").unwrap();
        // 17 ps/nm/km × (0.30 + 0.27) km
        assert!((p.total_dispersion_ps_nm - 9.69).abs() < 1e-12);
        assert!((p.total_loss_db - 0.2 * 0.57).abs() < 1e-12);
        assert!((p.total_delay_ps - 4900.0 * 0.57).abs() < 1e-9);
        assert_eq!(p.links[0].endpoint_a.as_str(), "ECE");
    }

    #[test]
    fn zero_coefficient_link() {
        let nodes = format!(r#"{HUB},{{"id":"T","kind":"terminal","building":"E","position":[1,0]}}"#);
        let links = r#"{"a":"T","b":"ECE","length_km":2,"loss_db_per_km":0,"dispersion_ps_nm_km":0}"#;
        let t = load_topology(&doc(&nodes, links)).unwrap();
        let p = t.path_to("T").unwrap();
        assert_eq!(p.total_loss_db, 0.0);
        assert_eq!(p.total_dispersion_ps_nm, 0.0);
        assert_eq!(p.transmission(), 1.0);
    }

    #[test]
    fn path_errors() {
        let nodes = format!(
            r#"{HUB},{{"id":"B","kind":"building_hub","building":"B","position":[1,0]}}"#
        );
        let t = load_topology(&doc(&nodes, "")).unwrap();
        assert!(matches!(t.path_to("B"), Err(TopologyError::NoPath(_))));
        assert!(matches!(t.path_to("Z"), Err(TopologyError::UnknownNode(_))));
        assert!(matches!(t.path_to("ECE"), Err(TopologyError::UnknownNode(_))));
    }

    #[test]
    fn cycles_are_rejected() {
        let nodes = format!(
            r#"{HUB},{{"id":"A","kind":"building_hub","building":"A","position":[1,0]}},
               {{"id":"B","kind":"building_hub","building":"B","position":[0,1]}}"#
        );
        let links = r#"{"a":"ECE","b":"A","length_km":1},{"a":"A","b":"B","length_km":1},{"a":"B","b":"ECE","length_km":1}"#;
        assert!(matches!(
            load_topology(&doc(&nodes, links)),
            Err(TopologyError::Validation(m)) if m.contains("cycle")
        ));
    }

    #[test]
    fn round_trip_is_identical() {
        let t = load_topology(crate::DEFAULT_CONFIG).unwrap();
        let again = load_topology(&t.to_json()).unwrap();
        assert_eq!(t, again);
    }

    #[test]
    fn logical_graph_cases() {
        let t = load_topology(crate::DEFAULT_CONFIG).unwrap();
        let full = logical_graph(&t, &FabricSpec::default());
        assert_eq!(full.len(), 78);

        let mut none = FabricSpec::default();
        none.remove_correlations();
        assert!(logical_graph(&t, &none).is_empty());

        // Only correlated pair exits through one switch.
        let mut shared = FabricSpec::default();
        shared.eps_channels[3].partner = None;
        shared.eps_channels[4].partner = None;
        shared.eps_channels[2].switch = 2;
        assert!(logical_graph(&t, &shared).is_empty());
    }
}
