//! Builds the sparse convex program for one scenario.
//!
//! Columns are, in order: per-demand arc flows (demand-major, arcs sorted by
//! id within a demand), one rebalancing flow per road arc, then one
//! insufficiency slack per demand for the sufficiency objective.
//!
//! Rows: per-demand conservation at every node the demand can touch, AMoD
//! vehicle balance at every road node, the fleet-size bound, per-demand
//! budgets, road and transit capacities, and the sufficiency slack rows.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::demand::DemandSet;
use crate::netmodel::{reachable_arc_set, ArcId, ArcKind, Layer, NetError, Network, NodeId};
use crate::scenarios::{FarePolicy, ScenarioConfig};
use crate::solver::sparse::CsrMatrix;
use crate::FORMAT_VERSION;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveKind {
    UtilEff,
    CommSuff,
}

impl ObjectiveKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ObjectiveKind::UtilEff => "util-eff",
            ObjectiveKind::CommSuff => "comm-suff",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintFamily {
    Conservation,
    AmodBalance,
    Fleet,
    Budget,
    RoadCap,
    TransitCap,
    Slack,
}

impl ConstraintFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            ConstraintFamily::Conservation => "conservation",
            ConstraintFamily::AmodBalance => "amod-balance",
            ConstraintFamily::Fleet => "fleet",
            ConstraintFamily::Budget => "budget",
            ConstraintFamily::RoadCap => "road-cap",
            ConstraintFamily::TransitCap => "transit-cap",
            ConstraintFamily::Slack => "slack",
        }
    }
}

impl fmt::Display for ConstraintFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowTag {
    pub family: ConstraintFamily,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub demand: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub node: Option<NodeId>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub arc: Option<ArcId>,
}

impl RowTag {
    fn new(family: ConstraintFamily) -> Self {
        RowTag { family, demand: None, node: None, arc: None }
    }
}

impl fmt::Display for RowTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.family)?;
        if let Some(m) = self.demand {
            write!(f, " demand={m}")?;
        }
        if let Some(n) = self.node {
            write!(f, " node={n}")?;
        }
        if let Some(a) = self.arc {
            write!(f, " arc={a}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "var", rename_all = "snake_case")]
pub enum Variable {
    Flow { demand: usize, arc: ArcId },
    Rebalance { arc: ArcId },
    Slack { demand: usize },
}

/// Bijection between model variables and columns.
#[derive(Debug, Clone, PartialEq)]
pub struct VariableIndex {
    demand_arcs: Vec<Vec<ArcId>>,
    demand_offset: Vec<usize>,
    road_arcs: Vec<ArcId>,
    rebalance_offset: usize,
    slack_offset: Option<usize>,
    n: usize,
}

impl VariableIndex {
    fn new(demand_arcs: Vec<Vec<ArcId>>, road_arcs: Vec<ArcId>, with_slacks: bool) -> Self {
        let mut demand_offset = Vec::with_capacity(demand_arcs.len() + 1);
        let mut n = 0;
        for arcs in &demand_arcs {
            demand_offset.push(n);
            n += arcs.len();
        }
        demand_offset.push(n);
        let rebalance_offset = n;
        n += road_arcs.len();
        let slack_offset = with_slacks.then_some(n);
        if with_slacks {
            n += demand_arcs.len();
        }
        VariableIndex {
            demand_arcs,
            demand_offset,
            road_arcs,
            rebalance_offset,
            slack_offset,
            n,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn n_demands(&self) -> usize {
        self.demand_arcs.len()
    }

    /// Arcs carrying a flow variable for demand `m`, sorted.
    pub fn demand_arcs(&self, m: usize) -> &[ArcId] {
        &self.demand_arcs[m]
    }

    pub fn demand_columns(&self, m: usize) -> std::ops::Range<usize> {
        self.demand_offset[m]..self.demand_offset[m + 1]
    }

    pub fn road_arcs(&self) -> &[ArcId] {
        &self.road_arcs
    }

    pub fn flow(&self, m: usize, a: ArcId) -> Option<usize> {
        self.demand_arcs
            .get(m)?
            .binary_search(&a)
            .ok()
            .map(|k| self.demand_offset[m] + k)
    }

    pub fn rebalance(&self, a: ArcId) -> Option<usize> {
        self.road_arcs.binary_search(&a).ok().map(|k| self.rebalance_offset + k)
    }

    pub fn slack(&self, m: usize) -> Option<usize> {
        let off = self.slack_offset?;
        (m < self.demand_arcs.len()).then_some(off + m)
    }

    pub fn variable(&self, col: usize) -> Option<Variable> {
        if col >= self.n {
            return None;
        }
        if col < self.rebalance_offset {
            let m = self.demand_offset.partition_point(|&o| o <= col) - 1;
            let arc = self.demand_arcs[m][col - self.demand_offset[m]];
            return Some(Variable::Flow { demand: m, arc });
        }
        if col < self.rebalance_offset + self.road_arcs.len() {
            return Some(Variable::Rebalance { arc: self.road_arcs[col - self.rebalance_offset] });
        }
        Some(Variable::Slack { demand: col - self.slack_offset? })
    }

    pub fn column(&self, v: Variable) -> Option<usize> {
        match v {
            Variable::Flow { demand, arc } => self.flow(demand, arc),
            Variable::Rebalance { arc } => self.rebalance(arc),
            Variable::Slack { demand } => self.slack(demand),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConstraintBlock {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub tags: Vec<RowTag>,
}

impl ConstraintBlock {
    pub fn count(&self, family: ConstraintFamily) -> usize {
        self.tags.iter().filter(|t| t.family == family).count()
    }
}

/// `min ½ xᵀ diag(q_diag) x + qᵀx  s.t.  eq: A x = b,  ineq: A x <= b,  x >= 0`.
#[derive(Debug, Clone)]
pub struct StandardProblem {
    pub q_diag: Vec<f64>,
    pub q: Vec<f64>,
    pub eq: ConstraintBlock,
    pub ineq: ConstraintBlock,
    pub index: VariableIndex,
    pub kind: ObjectiveKind,
}

impl StandardProblem {
    pub fn n_vars(&self) -> usize {
        self.index.len()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.q_diag)
            .zip(&self.q)
            .map(|((xi, qd), qi)| 0.5 * qd * xi * xi + qi * xi)
            .sum()
    }

    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = x.iter().fold(0.0f64, |m, v| m.max(-v));
        let mut ax = vec![0.0; self.eq.matrix.nrows()];
        self.eq.matrix.mul_vec(x, &mut ax);
        for (v, b) in ax.iter().zip(&self.eq.rhs) {
            worst = worst.max((v - b).abs());
        }
        let mut ax = vec![0.0; self.ineq.matrix.nrows()];
        self.ineq.matrix.mul_vec(x, &mut ax);
        for (v, b) in ax.iter().zip(&self.ineq.rhs) {
            worst = worst.max(v - b);
        }
        worst
    }

    /// Residuals `A x - b` of the equality rows of one family.
    pub fn equality_residuals(&self, x: &[f64], family: ConstraintFamily) -> Vec<(RowTag, f64)> {
        let mut ax = vec![0.0; self.eq.matrix.nrows()];
        self.eq.matrix.mul_vec(x, &mut ax);
        (0..ax.len())
            .filter(|&r| self.eq.tags[r].family == family)
            .map(|r| (self.eq.tags[r].clone(), ax[r] - self.eq.rhs[r]))
            .collect()
    }

    /// Slacks `b - A x` of the inequality rows of one family.
    pub fn inequality_slacks(&self, x: &[f64], family: ConstraintFamily) -> Vec<(RowTag, f64)> {
        let mut ax = vec![0.0; self.ineq.matrix.nrows()];
        self.ineq.matrix.mul_vec(x, &mut ax);
        (0..ax.len())
            .filter(|&r| self.ineq.tags[r].family == family)
            .map(|r| (self.ineq.tags[r].clone(), self.ineq.rhs[r] - ax[r]))
            .collect()
    }

    /// Copy without the inequality rows of `family`.
    pub fn without_family(&self, family: ConstraintFamily) -> StandardProblem {
        let keep: Vec<usize> = (0..self.ineq.tags.len())
            .filter(|&r| self.ineq.tags[r].family != family)
            .collect();
        let mut p = self.clone();
        p.ineq = ConstraintBlock {
            matrix: self.ineq.matrix.select_rows(&keep),
            rhs: keep.iter().map(|&r| self.ineq.rhs[r]).collect(),
            tags: keep.iter().map(|&r| self.ineq.tags[r].clone()).collect(),
        };
        p
    }

    /// Writes the problem as sectioned sparse triplets: a `# <name> rows cols`
    /// header followed by one `row col value` line per nonzero. Vectors are
    /// written as single-column matrices.
    pub fn write_triplets(&self, out: &mut dyn Write) -> io::Result<()> {
        let n = self.n_vars();
        writeln!(out, "# {FORMAT_VERSION} {} n={n}", self.kind.as_str())?;
        let vec_section = |out: &mut dyn Write, name: &str, v: &[f64]| -> io::Result<()> {
            writeln!(out, "# {name} {} 1", v.len())?;
            for (i, &x) in v.iter().enumerate() {
                if x != 0.0 {
                    writeln!(out, "{i} 0 {x:e}")?;
                }
            }
            Ok(())
        };
        writeln!(out, "# Q {n} {n}")?;
        for (j, &v) in self.q_diag.iter().enumerate() {
            if v != 0.0 {
                writeln!(out, "{j} {j} {v:e}")?;
            }
        }
        vec_section(out, "q", &self.q)?;
        for (name, block) in [("A_eq", &self.eq), ("A_in", &self.ineq)] {
            writeln!(out, "# {name} {} {n}", block.matrix.nrows())?;
            for (r, c, v) in block.matrix.triplets() {
                writeln!(out, "{r} {c} {v:e}")?;
            }
        }
        vec_section(out, "b_eq", &self.eq.rhs)?;
        vec_section(out, "b_in", &self.ineq.rhs)?;
        Ok(())
    }

    /// Sidecar describing every column and row.
    pub fn index_json(&self) -> serde_json::Value {
        let columns: Vec<Variable> = (0..self.n_vars())
            .map(|c| self.index.variable(c).expect("column in range"))
            .collect();
        serde_json::json!({
            "format": FORMAT_VERSION,
            "objective": self.kind.as_str(),
            "columns": columns,
            "eq_rows": self.eq.tags,
            "in_rows": self.ineq.tags,
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AssembleError {
    #[error("demand {demand} has no usable route: {source}")]
    InfeasibleStructure {
        demand: usize,
        #[source]
        source: NetError,
    },
    #[error("configuration error: {0}")]
    Config(String),
}

/// Zeroes fares according to the policy.
pub fn apply_fare_policy(net: &Network, policy: FarePolicy) -> Network {
    match policy {
        FarePolicy::Nominal => net.clone(),
        FarePolicy::FreeAll => {
            let arcs = net.arcs().iter().map(|a| crate::netmodel::Arc { cost: 0.0, ..a.clone() }).collect();
            net.with_arcs(arcs)
        }
        FarePolicy::FreeTransit => {
            let arcs = net
                .arcs()
                .iter()
                .map(|a| {
                    let boarding = a.kind == ArcKind::Switch && net.layer(a.head) == Some(Layer::Transit);
                    if a.kind == ArcKind::Transit || boarding {
                        crate::netmodel::Arc { cost: 0.0, ..a.clone() }
                    } else {
                        a.clone()
                    }
                })
                .collect();
            net.with_arcs(arcs)
        }
    }
}

struct Rows {
    triplets: Vec<(usize, usize, f64)>,
    rhs: Vec<f64>,
    tags: Vec<RowTag>,
}

impl Rows {
    fn new() -> Self {
        Rows { triplets: Vec::new(), rhs: Vec::new(), tags: Vec::new() }
    }

    fn push(&mut self, tag: RowTag, rhs: f64, coeffs: impl IntoIterator<Item = (usize, f64)>) {
        let r = self.rhs.len();
        self.triplets
            .extend(coeffs.into_iter().filter(|&(_, v)| v != 0.0).map(|(c, v)| (r, c, v)));
        self.rhs.push(rhs);
        self.tags.push(tag);
    }

    fn finish(self, ncols: usize) -> ConstraintBlock {
        ConstraintBlock {
            matrix: CsrMatrix::from_triplets(self.rhs.len(), ncols, &self.triplets),
            rhs: self.rhs,
            tags: self.tags,
        }
    }
}

/// Assembles the program for `kind`. The network is used as given: fare
/// policy and safety pruning are the caller's job.
pub fn assemble(
    net: &Network,
    dem: &DemandSet,
    cfg: &ScenarioConfig,
    kind: ObjectiveKind,
) -> Result<StandardProblem, AssembleError> {
    cfg.validate().map_err(AssembleError::Config)?;

    let mut demand_arcs = Vec::with_capacity(dem.demands.len());
    for (m, d) in dem.demands.iter().enumerate() {
        if !(d.rate > 0.0) {
            return Err(AssembleError::Config(format!("demand {m} has non-positive rate")));
        }
        let arcs = reachable_arc_set(net, d.origin, d.destination, d.bike_capable)
            .map_err(|source| AssembleError::InfeasibleStructure { demand: m, source })?;
        demand_arcs.push(arcs);
    }
    let road_arcs: Vec<ArcId> = net.arcs_of_kind(ArcKind::Road).collect();
    let index = VariableIndex::new(demand_arcs, road_arcs, kind == ObjectiveKind::CommSuff);
    let n = index.len();
    let arc = |a: ArcId| net.arc(a);

    // Occupied plus empty vehicle columns per road arc.
    let mut road_cols: HashMap<ArcId, Vec<usize>> = HashMap::new();
    let mut transit_cols: HashMap<ArcId, Vec<usize>> = HashMap::new();
    for m in 0..index.n_demands() {
        for (k, &a) in index.demand_arcs(m).iter().enumerate() {
            let col = index.demand_columns(m).start + k;
            match arc(a).kind {
                ArcKind::Road => road_cols.entry(a).or_default().push(col),
                ArcKind::Transit => transit_cols.entry(a).or_default().push(col),
                _ => {}
            }
        }
    }
    for &a in index.road_arcs() {
        road_cols.entry(a).or_default().push(index.rebalance(a).expect("road arc column"));
    }

    let mut eq = Rows::new();
    for (m, d) in dem.demands.iter().enumerate() {
        let cols = index.demand_columns(m);
        let arcs = index.demand_arcs(m);
        let nodes: BTreeSet<NodeId> = arcs.iter().flat_map(|&a| [arc(a).tail, arc(a).head]).collect();
        let mut coeffs: HashMap<NodeId, Vec<(usize, f64)>> = HashMap::new();
        for (k, &a) in arcs.iter().enumerate() {
            coeffs.entry(arc(a).head).or_default().push((cols.start + k, 1.0));
            coeffs.entry(arc(a).tail).or_default().push((cols.start + k, -1.0));
        }
        for node in nodes {
            let mut rhs = 0.0;
            if node == d.destination {
                rhs += d.rate;
            }
            if node == d.origin {
                rhs -= d.rate;
            }
            let tag = RowTag { demand: Some(m), node: Some(node), ..RowTag::new(ConstraintFamily::Conservation) };
            eq.push(tag, rhs, coeffs.remove(&node).unwrap_or_default());
        }
    }
    for node in net.nodes_in_layer(Layer::Road) {
        let mut coeffs = Vec::new();
        for &a in net.in_arcs(node.id) {
            if arc(a).kind == ArcKind::Road {
                coeffs.extend(road_cols.get(&a).into_iter().flatten().map(|&c| (c, 1.0)));
            }
        }
        for &a in net.out_arcs(node.id) {
            if arc(a).kind == ArcKind::Road {
                coeffs.extend(road_cols.get(&a).into_iter().flatten().map(|&c| (c, -1.0)));
            }
        }
        let tag = RowTag { node: Some(node.id), ..RowTag::new(ConstraintFamily::AmodBalance) };
        eq.push(tag, 0.0, coeffs);
    }

    let mut ineq = Rows::new();
    let mut fleet = Vec::new();
    for &a in index.road_arcs() {
        let t = arc(a).time_min;
        fleet.extend(road_cols[&a].iter().map(|&c| (c, t)));
    }
    ineq.push(RowTag::new(ConstraintFamily::Fleet), cfg.n_amod_max, fleet);

    if cfg.budget_enabled {
        for (m, d) in dem.demands.iter().enumerate() {
            let region = dem.region(d.region).ok_or_else(|| {
                AssembleError::Config(format!("demand {m} references unknown region {}", d.region))
            })?;
            let cols = index.demand_columns(m);
            let coeffs = index.demand_arcs(m).iter().enumerate().map(|(k, &a)| (cols.start + k, arc(a).cost));
            let tag = RowTag { demand: Some(m), ..RowTag::new(ConstraintFamily::Budget) };
            ineq.push(tag, region.budget * d.rate, coeffs);
        }
    }
    for &a in index.road_arcs() {
        if let Some(cap) = arc(a).flow_cap_veh_min {
            let tag = RowTag { arc: Some(a), ..RowTag::new(ConstraintFamily::RoadCap) };
            ineq.push(tag, cap, road_cols[&a].iter().map(|&c| (c, 1.0)));
        }
    }
    for a in net.arcs_of_kind(ArcKind::Transit) {
        if let Some(cap) = arc(a).capacity_users_min {
            let tag = RowTag { arc: Some(a), ..RowTag::new(ConstraintFamily::TransitCap) };
            let cols = transit_cols.get(&a).cloned().unwrap_or_default();
            ineq.push(tag, cap, cols.into_iter().map(|c| (c, 1.0)));
        }
    }

    // Utilitarian linear term.
    let mut q = vec![0.0; n];
    for m in 0..index.n_demands() {
        let cols = index.demand_columns(m);
        for (k, &a) in index.demand_arcs(m).iter().enumerate() {
            q[cols.start + k] = arc(a).time_min;
        }
    }
    for &a in index.road_arcs() {
        q[index.rebalance(a).unwrap()] = cfg.gamma_r * arc(a).time_min;
    }
    let mut q_diag = vec![0.0; n];

    if kind == ObjectiveKind::CommSuff {
        q.iter_mut().for_each(|v| *v *= cfg.gamma_time);
        let n_pop = dem.total_population();
        if !(n_pop > 0.0) {
            return Err(AssembleError::Config("total population must be > 0".into()));
        }
        let region_rates = dem.region_rates();
        for (m, d) in dem.demands.iter().enumerate() {
            let eps = index.slack(m).unwrap();
            let cols = index.demand_columns(m);
            let mut coeffs: Vec<(usize, f64)> = index
                .demand_arcs(m)
                .iter()
                .enumerate()
                .map(|(k, &a)| (cols.start + k, arc(a).time_min / d.rate))
                .collect();
            coeffs.push((eps, -1.0));
            let tag = RowTag { demand: Some(m), ..RowTag::new(ConstraintFamily::Slack) };
            ineq.push(tag, cfg.t_suff, coeffs);

            let population = dem.region(d.region).map(|r| r.population).unwrap_or(0.0);
            if !(population > 0.0) {
                return Err(AssembleError::Config(format!(
                    "region {} carries demand but has zero population",
                    d.region
                )));
            }
            q_diag[eps] = 2.0 * population * d.rate / (n_pop * region_rates[&d.region]);
        }
    }

    Ok(StandardProblem {
        q_diag,
        q,
        eq: eq.finish(n),
        ineq: ineq.finish(n),
        index,
        kind,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::{Demand, Region};
    use crate::netmodel::{Arc, Node};

    fn node(id: NodeId, layer: Layer) -> Node {
        Node { id, layer, x: 0.0, y: 0.0, region: (layer == Layer::Origin).then_some(0) }
    }

    fn chain() -> (Network, DemandSet) {
        let net = Network::new(
            1.0,
            vec![node(0, Layer::Origin), node(1, Layer::Walk), node(2, Layer::Walk), node(3, Layer::Destination)],
            vec![
                Arc::new(0, 1, ArcKind::Switch, 1.0, 0.0),
                Arc::new(1, 2, ArcKind::Walk, 10.0, 0.0),
                Arc::new(2, 3, ArcKind::Switch, 1.0, 0.0),
            ],
        );
        let dem = DemandSet {
            regions: vec![Region { id: 0, population: 5.0, budget: 1.0 }],
            demands: vec![Demand { id: 0, origin: 0, destination: 3, rate: 2.0, region: 0, bike_capable: true }],
            operating_window_min: 1440.0,
        };
        (net, dem)
    }

    #[test]
    fn util_eff_structure() {
        let (net, dem) = chain();
        let p = assemble(&net, &dem, &ScenarioConfig::default(), ObjectiveKind::UtilEff).unwrap();
        assert_eq!(p.n_vars(), 3);
        assert_eq!(p.eq.count(ConstraintFamily::Conservation), 4);
        assert!(p.q_diag.iter().all(|&v| v == 0.0));
        assert_eq!(p.q, vec![1.0, 10.0, 1.0]);
        assert_eq!(p.ineq.count(ConstraintFamily::Fleet), 1);
        assert_eq!(p.ineq.count(ConstraintFamily::Budget), 1);
    }

    #[test]
    fn comm_suff_structure() {
        let (net, dem) = chain();
        let cfg = ScenarioConfig::default();
        let util = assemble(&net, &dem, &cfg, ObjectiveKind::UtilEff).unwrap();
        let p = assemble(&net, &dem, &cfg, ObjectiveKind::CommSuff).unwrap();
        assert_eq!(p.n_vars(), 4);
        assert_eq!(p.ineq.tags.len(), util.ineq.tags.len() + 1);
        let quad: Vec<usize> = (0..4).filter(|&j| p.q_diag[j] != 0.0).collect();
        assert_eq!(quad, vec![3]);
        // Single region, single demand: weight 2·n·α/(n·α) = 2.
        assert!((p.q_diag[3] - 2.0).abs() < 1e-15);
        assert_eq!(p.index.variable(3), Some(Variable::Slack { demand: 0 }));
        let slack_row: Vec<(usize, f64)> = p.ineq.matrix.row(p.ineq.tags.len() - 1).collect();
        assert_eq!(slack_row, vec![(0, 0.5), (1, 5.0), (2, 0.5), (3, -1.0)]);
    }

    #[test]
    fn budget_rows_vanish_when_disabled() {
        let (net, dem) = chain();
        let cfg = ScenarioConfig { budget_enabled: false, ..ScenarioConfig::default() };
        let p = assemble(&net, &dem, &cfg, ObjectiveKind::UtilEff).unwrap();
        assert_eq!(p.ineq.count(ConstraintFamily::Budget), 0);
    }

    #[test]
    fn index_is_bijective() {
        let (net, dem) = chain();
        let p = assemble(&net, &dem, &ScenarioConfig::default(), ObjectiveKind::CommSuff).unwrap();
        for c in 0..p.n_vars() {
            let v = p.index.variable(c).unwrap();
            assert_eq!(p.index.column(v), Some(c));
        }
        assert_eq!(p.index.variable(p.n_vars()), None);
    }

    #[test]
    fn fare_policies() {
        let net = Network::new(
            1.0,
            vec![node(1, Layer::Walk), node(2, Layer::Transit), node(3, Layer::Transit), node(4, Layer::Road), node(5, Layer::Road)],
            vec![
                Arc::new(1, 2, ArcKind::Switch, 2.0, 2.90),
                Arc::new(2, 3, ArcKind::Transit, 5.0, 0.5),
                Arc::new(4, 5, ArcKind::Road, 3.0, 5.0),
                Arc::new(3, 1, ArcKind::Switch, 1.0, 0.3),
            ],
        );
        let free_transit = apply_fare_policy(&net, FarePolicy::FreeTransit);
        let costs: Vec<f64> = free_transit.arcs().iter().map(|a| a.cost).collect();
        assert_eq!(costs, vec![0.0, 0.0, 5.0, 0.3]);
        assert!(apply_fare_policy(&net, FarePolicy::FreeAll).arcs().iter().all(|a| a.cost == 0.0));
        assert_eq!(apply_fare_policy(&net, FarePolicy::Nominal), net);
    }

    #[test]
    fn disconnected_demand_is_structural_error() {
        let (net, mut dem) = chain();
        dem.demands[0].destination = 1;
        assert!(matches!(
            assemble(&net, &dem, &ScenarioConfig::default(), ObjectiveKind::UtilEff),
            Err(AssembleError::InfeasibleStructure { .. })
        ));
    }

    #[test]
    fn triplet_export_lists_every_nonzero() {
        let (net, dem) = chain();
        let p = assemble(&net, &dem, &ScenarioConfig::default(), ObjectiveKind::CommSuff).unwrap();
        let mut buf = Vec::new();
        p.write_triplets(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let data_lines = text.lines().filter(|l| !l.starts_with('#')).count();
        let expected = 1 + 3 + p.eq.matrix.nnz() + p.ineq.matrix.nnz() + 2 + p.ineq.rhs.iter().filter(|v| **v != 0.0).count();
        assert_eq!(data_lines, expected);
        assert_eq!(p.index_json()["columns"].as_array().unwrap().len(), 4);
    }
}
