//! Multilayer intermodal network: walking, cycling, AMoD road, public transit,
//! plus origin and destination layers joined by mode-switching arcs.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::FORMAT_VERSION;

pub type NodeId = u64;
/// Position of an arc in [`Network::arcs`].
pub type ArcId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    Walk,
    Bike,
    Road,
    Transit,
    Origin,
    Destination,
}

impl Layer {
    pub fn as_str(self) -> &'static str {
        match self {
            Layer::Walk => "walk",
            Layer::Bike => "bike",
            Layer::Road => "road",
            Layer::Transit => "transit",
            Layer::Origin => "origin",
            Layer::Destination => "destination",
        }
    }

    /// Intra-layer arc kind, if the layer has internal arcs at all.
    pub fn arc_kind(self) -> Option<ArcKind> {
        match self {
            Layer::Walk => Some(ArcKind::Walk),
            Layer::Bike => Some(ArcKind::Bike),
            Layer::Road => Some(ArcKind::Road),
            Layer::Transit => Some(ArcKind::Transit),
            Layer::Origin | Layer::Destination => None,
        }
    }

    fn is_mode(self) -> bool {
        matches!(self, Layer::Walk | Layer::Bike | Layer::Road | Layer::Transit)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArcKind {
    Walk,
    Bike,
    Road,
    Transit,
    Switch,
}

impl ArcKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ArcKind::Walk => "walk",
            ArcKind::Bike => "bike",
            ArcKind::Road => "road",
            ArcKind::Transit => "transit",
            ArcKind::Switch => "switch",
        }
    }
}

impl fmt::Display for ArcKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Admissible mode-switching layer pairs.
pub fn switch_allowed(from: Layer, to: Layer) -> bool {
    match (from, to) {
        (Layer::Origin, to) => to.is_mode(),
        (from, Layer::Destination) => from.is_mode(),
        (from, to) => from.is_mode() && to.is_mode() && from != to,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Node {
    pub id: NodeId,
    pub layer: Layer,
    pub x: f64,
    pub y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arc {
    pub tail: NodeId,
    pub head: NodeId,
    pub kind: ArcKind,
    pub time_min: f64,
    pub cost: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unsafety: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity_users_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow_cap_veh_min: Option<f64>,
}

impl Arc {
    pub fn new(tail: NodeId, head: NodeId, kind: ArcKind, time_min: f64, cost: f64) -> Self {
        Arc {
            tail,
            head,
            kind,
            time_min,
            cost,
            unsafety: None,
            capacity_users_min: None,
            flow_cap_veh_min: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("network schema error: {0}")]
    Schema(String),
    #[error("node {0} does not exist")]
    UnknownNode(NodeId),
    #[error("node {node} is a {found} node, expected {expected}")]
    WrongLayer {
        node: NodeId,
        found: &'static str,
        expected: &'static str,
    },
    #[error("no path from origin {origin} to destination {destination} in the allowed arc set")]
    DisconnectedDemand { origin: NodeId, destination: NodeId },
}

/// Serialized form; `safety_threshold: null` stands for an unbounded threshold.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    #[serde(default)]
    format: Option<String>,
    safety_threshold: Option<f64>,
    nodes: Vec<Node>,
    arcs: Vec<Arc>,
}

/// Directed multilayer graph. Adjacency is derived on construction; arcs are
/// addressed by their position in `arcs`.
#[derive(Debug, Clone)]
pub struct Network {
    pub safety_threshold: f64,
    nodes: Vec<Node>,
    arcs: Vec<Arc>,
    position: HashMap<NodeId, usize>,
    out_arcs: Vec<Vec<ArcId>>,
    in_arcs: Vec<Vec<ArcId>>,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.safety_threshold == other.safety_threshold
            && self.nodes == other.nodes
            && self.arcs == other.arcs
    }
}

impl Network {
    /// Builds the adjacency index. Arcs referencing unknown nodes are kept but
    /// left out of the adjacency lists; `validate_network` reports them.
    pub fn new(safety_threshold: f64, nodes: Vec<Node>, arcs: Vec<Arc>) -> Self {
        let mut position = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            position.entry(n.id).or_insert(i);
        }
        let mut out_arcs = vec![Vec::new(); nodes.len()];
        let mut in_arcs = vec![Vec::new(); nodes.len()];
        for (a, arc) in arcs.iter().enumerate() {
            if let (Some(&t), Some(&h)) = (position.get(&arc.tail), position.get(&arc.head)) {
                out_arcs[t].push(a);
                in_arcs[h].push(a);
            }
        }
        Network {
            safety_threshold,
            nodes,
            arcs,
            position,
            out_arcs,
            in_arcs,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, NetError> {
        let file: NetworkFile =
            serde_json::from_str(text).map_err(|e| NetError::Schema(e.to_string()))?;
        if let Some(fmt) = &file.format {
            if fmt != FORMAT_VERSION {
                return Err(NetError::Schema(format!("unsupported format {fmt:?}")));
            }
        }
        let threshold = file.safety_threshold.unwrap_or(f64::INFINITY);
        Ok(Network::new(threshold, file.nodes, file.arcs))
    }

    pub fn to_json(&self) -> String {
        let file = NetworkFile {
            format: Some(FORMAT_VERSION.to_string()),
            safety_threshold: self
                .safety_threshold
                .is_finite()
                .then_some(self.safety_threshold),
            nodes: self.nodes.clone(),
            arcs: self.arcs.clone(),
        };
        serde_json::to_string_pretty(&file).expect("network serializes")
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn arcs(&self) -> &[Arc] {
        &self.arcs
    }

    pub fn arc(&self, a: ArcId) -> &Arc {
        &self.arcs[a]
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.position.get(&id).map(|&i| &self.nodes[i])
    }

    pub fn layer(&self, id: NodeId) -> Option<Layer> {
        self.node(id).map(|n| n.layer)
    }

    pub fn out_arcs(&self, id: NodeId) -> &[ArcId] {
        self.position
            .get(&id)
            .map(|&i| self.out_arcs[i].as_slice())
            .unwrap_or(&[])
    }

    pub fn in_arcs(&self, id: NodeId) -> &[ArcId] {
        self.position
            .get(&id)
            .map(|&i| self.in_arcs[i].as_slice())
            .unwrap_or(&[])
    }

    pub fn arcs_of_kind(&self, kind: ArcKind) -> impl Iterator<Item = ArcId> + '_ {
        self.arcs
            .iter()
            .enumerate()
            .filter(move |(_, a)| a.kind == kind)
            .map(|(i, _)| i)
    }

    pub fn nodes_in_layer(&self, layer: Layer) -> impl Iterator<Item = &Node> + '_ {
        self.nodes.iter().filter(move |n| n.layer == layer)
    }

    /// Returns a copy with the arc list replaced, keeping nodes and threshold.
    pub fn with_arcs(&self, arcs: Vec<Arc>) -> Network {
        Network::new(self.safety_threshold, self.nodes.clone(), arcs)
    }

    pub fn with_safety_threshold(&self, threshold: f64) -> Network {
        let mut net = self.clone();
        net.safety_threshold = threshold;
        net
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Rule {
    DuplicateNodeId,
    NonFiniteCoordinate,
    OriginWithoutRegion,
    UnknownEndpoint,
    SelfLoop,
    KindLayerMismatch,
    SwitchPairNotAdmissible,
    IncomingToOrigin,
    OutgoingFromDestination,
    NegativeTravelTime,
    NegativeCost,
    BadUnsafety,
    MisplacedAttribute,
    NegativeCapacity,
    DuplicateArc,
}

impl Rule {
    pub fn describe(self) -> &'static str {
        match self {
            Rule::DuplicateNodeId => "duplicate node id",
            Rule::NonFiniteCoordinate => "non-finite coordinate",
            Rule::OriginWithoutRegion => "origin node without region",
            Rule::UnknownEndpoint => "arc endpoint does not exist",
            Rule::SelfLoop => "self-loop arc",
            Rule::KindLayerMismatch => "arc kind does not match endpoint layers",
            Rule::SwitchPairNotAdmissible => "layer pair not in A_S",
            Rule::IncomingToOrigin => "origin nodes admit no incoming arcs",
            Rule::OutgoingFromDestination => "destination nodes admit no outgoing arcs",
            Rule::NegativeTravelTime => "negative travel time",
            Rule::NegativeCost => "negative cost",
            Rule::BadUnsafety => "bike arc needs a finite unsafety >= 0",
            Rule::MisplacedAttribute => "attribute not valid for this arc kind",
            Rule::NegativeCapacity => "capacity must be >= 0",
            Rule::DuplicateArc => "duplicate (tail, head, kind) arc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subject {
    Node(NodeId),
    Arc(ArcId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub subject: Subject,
    pub rule: Rule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.subject {
            Subject::Node(id) => write!(f, "node {id}: {}", self.rule.describe()),
            Subject::Arc(a) => write!(f, "arc #{a}: {}", self.rule.describe()),
        }
    }
}

/// Checks every structural rule of the multilayer graph. An empty result
/// means the network is valid.
pub fn validate_network(net: &Network) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for n in &net.nodes {
        if !seen.insert(n.id) {
            out.push(Violation { subject: Subject::Node(n.id), rule: Rule::DuplicateNodeId });
        }
        if !(n.x.is_finite() && n.y.is_finite()) {
            out.push(Violation { subject: Subject::Node(n.id), rule: Rule::NonFiniteCoordinate });
        }
        if n.layer == Layer::Origin && n.region.is_none() {
            out.push(Violation { subject: Subject::Node(n.id), rule: Rule::OriginWithoutRegion });
        }
    }

    let mut triples = HashSet::new();
    for (a, arc) in net.arcs.iter().enumerate() {
        let mut flag = |rule| out.push(Violation { subject: Subject::Arc(a), rule });
        if !(arc.time_min >= 0.0 && arc.time_min.is_finite()) {
            flag(Rule::NegativeTravelTime);
        }
        if !(arc.cost >= 0.0 && arc.cost.is_finite()) {
            flag(Rule::NegativeCost);
        }
        match (arc.kind, arc.unsafety) {
            (ArcKind::Bike, Some(s)) if s >= 0.0 && s.is_finite() => {}
            (ArcKind::Bike, _) => flag(Rule::BadUnsafety),
            (_, Some(_)) => flag(Rule::MisplacedAttribute),
            _ => {}
        }
        match (arc.kind, arc.capacity_users_min) {
            (ArcKind::Transit, Some(k)) if !(k >= 0.0) => flag(Rule::NegativeCapacity),
            (ArcKind::Transit, _) | (_, None) => {}
            (_, Some(_)) => flag(Rule::MisplacedAttribute),
        }
        match (arc.kind, arc.flow_cap_veh_min) {
            (ArcKind::Road, Some(f)) if !(f >= 0.0) => flag(Rule::NegativeCapacity),
            (ArcKind::Road, _) | (_, None) => {}
            (_, Some(_)) => flag(Rule::MisplacedAttribute),
        }
        if !triples.insert((arc.tail, arc.head, arc.kind)) {
            flag(Rule::DuplicateArc);
        }
        let (Some(tl), Some(hl)) = (net.layer(arc.tail), net.layer(arc.head)) else {
            flag(Rule::UnknownEndpoint);
            continue;
        };
        if arc.tail == arc.head {
            flag(Rule::SelfLoop);
        }
        if hl == Layer::Origin {
            flag(Rule::IncomingToOrigin);
        }
        if tl == Layer::Destination {
            flag(Rule::OutgoingFromDestination);
        }
        if tl == hl {
            if tl.arc_kind() != Some(arc.kind) && tl.arc_kind().is_some() {
                flag(Rule::KindLayerMismatch);
            }
        } else if arc.kind != ArcKind::Switch {
            flag(Rule::KindLayerMismatch);
        } else if !switch_allowed(tl, hl)
            && !matches!(hl, Layer::Origin)
            && !matches!(tl, Layer::Destination)
        {
            flag(Rule::SwitchPairNotAdmissible);
        }
    }
    out
}

/// Drops bike arcs whose unsafety exceeds the network's threshold.
pub fn prune_unsafe_bike_arcs(net: &Network) -> Network {
    let threshold = net.safety_threshold;
    let arcs = net
        .arcs
        .iter()
        .filter(|a| a.kind != ArcKind::Bike || a.unsafety.unwrap_or(0.0) <= threshold)
        .cloned()
        .collect();
    net.with_arcs(arcs)
}

/// Arcs that lie on some origin→destination walk, sorted by id.
///
/// Arcs leaving other origins or entering other destinations are excluded.
/// With `allow_bike == false`, every arc touching the bike layer is excluded.
pub fn reachable_arc_set(
    net: &Network,
    origin: NodeId,
    destination: NodeId,
    allow_bike: bool,
) -> Result<Vec<ArcId>, NetError> {
    expect_layer(net, origin, Layer::Origin)?;
    expect_layer(net, destination, Layer::Destination)?;

    let usable = |a: ArcId| -> bool {
        let arc = &net.arcs[a];
        let (Some(tl), Some(hl)) = (net.layer(arc.tail), net.layer(arc.head)) else {
            return false;
        };
        if tl == Layer::Origin && arc.tail != origin {
            return false;
        }
        if hl == Layer::Destination && arc.head != destination {
            return false;
        }
        allow_bike || (tl != Layer::Bike && hl != Layer::Bike)
    };

    let forward = sweep(net, origin, &usable, true);
    if !forward.contains(&destination) {
        return Err(NetError::DisconnectedDemand { origin, destination });
    }
    let backward = sweep(net, destination, &usable, false);

    let mut arcs: Vec<ArcId> = (0..net.arcs.len())
        .filter(|&a| {
            usable(a) && forward.contains(&net.arcs[a].tail) && backward.contains(&net.arcs[a].head)
        })
        .collect();
    arcs.sort_unstable();
    Ok(arcs)
}

fn expect_layer(net: &Network, id: NodeId, expected: Layer) -> Result<(), NetError> {
    match net.layer(id) {
        None => Err(NetError::UnknownNode(id)),
        Some(l) if l != expected => Err(NetError::WrongLayer {
            node: id,
            found: l.as_str(),
            expected: expected.as_str(),
        }),
        Some(_) => Ok(()),
    }
}

fn sweep(
    net: &Network,
    start: NodeId,
    usable: &dyn Fn(ArcId) -> bool,
    forward: bool,
) -> BTreeSet<NodeId> {
    let mut seen = BTreeSet::from([start]);
    let mut queue = VecDeque::from([start]);
    while let Some(v) = queue.pop_front() {
        let adj = if forward { net.out_arcs(v) } else { net.in_arcs(v) };
        for &a in adj {
            if !usable(a) {
                continue;
            }
            let next = if forward { net.arcs[a].head } else { net.arcs[a].tail };
            if seen.insert(next) {
                queue.push_back(next);
            }
        }
    }
    seen
}
