//! Flow decomposition: per-demand arc flows into origin-destination paths
//! plus residual cycles.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::io;

use serde::Serialize;

use crate::demand::DemandSet;
use crate::netmodel::{ArcId, ArcKind, Network, NodeId};
use crate::round_sig;
use crate::solution::FlowSolution;

/// Flows below this are treated as zero before decomposition.
pub const DUST: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathFlow {
    pub nodes: Vec<NodeId>,
    pub arcs: Vec<ArcId>,
    /// users/min
    pub share: f64,
    pub time_min: f64,
    pub cost: f64,
    /// Non-switch arc kinds traversed.
    pub modes: BTreeSet<ArcKind>,
    /// Kind with the largest in-path time; `None` when only switch arcs are used.
    pub dominant: Option<ArcKind>,
}

impl PathFlow {
    pub fn mode_set_label(&self) -> String {
        mode_set_label(&self.modes)
    }

    pub fn dominant_label(&self) -> &'static str {
        self.dominant.map_or("none", ArcKind::as_str)
    }
}

pub fn mode_set_label(modes: &BTreeSet<ArcKind>) -> String {
    if modes.is_empty() {
        return "none".into();
    }
    let mut names: Vec<&str> = modes.iter().map(|k| k.as_str()).collect();
    names.sort_unstable();
    names.join("+")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleFlow {
    /// Closed: first node repeated at the end.
    pub nodes: Vec<NodeId>,
    pub arcs: Vec<ArcId>,
    pub flow: f64,
    pub time_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemandPaths {
    pub demand: usize,
    pub paths: Vec<PathFlow>,
    pub cycles: Vec<CycleFlow>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct PathAssignment {
    pub demands: Vec<DemandPaths>,
}

#[derive(Debug, thiserror::Error)]
pub enum PathError {
    #[error("demand {demand}: flow imbalance {residual:.3e} at node {node}")]
    ConservationViolation { demand: usize, node: NodeId, residual: f64 },
    #[error("solution has {found} demands, instance has {expected}")]
    Mismatch { found: usize, expected: usize },
}

#[derive(Clone, Copy, PartialEq)]
struct Time(f64);

impl Eq for Time {}

impl Ord for Time {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl PartialOrd for Time {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Minimum-time `origin -> destination` path over the given arcs, ties broken
/// by the lexicographically smallest node sequence. Returns the arc sequence.
pub fn path_extraction_rule(net: &Network, arcs: &[ArcId], origin: NodeId, destination: NodeId) -> Option<Vec<ArcId>> {
    let mut out: HashMap<NodeId, Vec<ArcId>> = HashMap::new();
    for &a in arcs {
        out.entry(net.arc(a).tail).or_default().push(a);
    }
    // Labels are (time, node sequence); the heap pops the smallest.
    type Label = (Time, Vec<NodeId>, Vec<ArcId>);
    let mut best: HashMap<NodeId, (Time, Vec<NodeId>)> = HashMap::new();
    let mut done: BTreeSet<NodeId> = BTreeSet::new();
    let mut heap: BinaryHeap<std::cmp::Reverse<Label>> = BinaryHeap::new();
    best.insert(origin, (Time(0.0), vec![origin]));
    heap.push(std::cmp::Reverse((Time(0.0), vec![origin], Vec::new())));
    while let Some(std::cmp::Reverse((t, nodes, path))) = heap.pop() {
        let v = *nodes.last().expect("nonempty label");
        if !done.insert(v) {
            continue;
        }
        if v == destination {
            return Some(path);
        }
        for &a in out.get(&v).into_iter().flatten() {
            let head = net.arc(a).head;
            if done.contains(&head) {
                continue;
            }
            let nt = Time(t.0 + net.arc(a).time_min);
            let mut nn = nodes.clone();
            nn.push(head);
            let better = match best.get(&head) {
                None => true,
                Some((bt, bn)) => (nt, &nn) < (*bt, bn),
            };
            if better {
                best.insert(head, (nt, nn.clone()));
                let mut np = path.clone();
                np.push(a);
                heap.push(std::cmp::Reverse((nt, nn, np)));
            }
        }
    }
    None
}

fn path_flow(net: &Network, arcs: Vec<ArcId>, share: f64) -> PathFlow {
    let mut nodes = Vec::with_capacity(arcs.len() + 1);
    let mut time = 0.0;
    let mut cost = 0.0;
    let mut by_kind: BTreeMap<ArcKind, f64> = BTreeMap::new();
    for (k, &a) in arcs.iter().enumerate() {
        let arc = net.arc(a);
        if k == 0 {
            nodes.push(arc.tail);
        }
        nodes.push(arc.head);
        time += arc.time_min;
        cost += arc.cost;
        if arc.kind != ArcKind::Switch {
            *by_kind.entry(arc.kind).or_insert(0.0) += arc.time_min;
        }
    }
    let dominant = by_kind
        .iter()
        .fold(None, |acc: Option<(ArcKind, f64)>, (&k, &t)| match acc {
            Some((_, bt)) if bt >= t => acc,
            _ => Some((k, t)),
        })
        .map(|(k, _)| k);
    PathFlow {
        nodes,
        modes: by_kind.keys().copied().collect(),
        dominant,
        arcs,
        share,
        time_min: time,
        cost,
    }
}

/// Decomposes every demand's flow. `tol` is the solver feasibility tolerance;
/// node imbalances beyond `1e3 * tol` are rejected.
pub fn decompose(sol: &FlowSolution, net: &Network, dem: &DemandSet, tol: f64) -> Result<PathAssignment, PathError> {
    if sol.flows.len() != dem.demands.len() {
        return Err(PathError::Mismatch { found: sol.flows.len(), expected: dem.demands.len() });
    }
    let mut out = PathAssignment::default();
    for (m, d) in dem.demands.iter().enumerate() {
        let mut residual: BTreeMap<ArcId, f64> = sol.flows[m]
            .iter()
            .filter(|f| f.value >= DUST)
            .map(|f| (f.arc, f.value))
            .collect();

        let mut balance: BTreeMap<NodeId, f64> = BTreeMap::new();
        for f in &sol.flows[m] {
            let arc = net.arc(f.arc);
            *balance.entry(arc.head).or_insert(0.0) += f.value;
            *balance.entry(arc.tail).or_insert(0.0) -= f.value;
        }
        *balance.entry(d.destination).or_insert(0.0) -= d.rate;
        *balance.entry(d.origin).or_insert(0.0) += d.rate;
        if let Some((&node, &r)) = balance.iter().find(|(_, r)| r.abs() > 1e3 * tol) {
            return Err(PathError::ConservationViolation { demand: m, node, residual: r });
        }

        let mut paths = Vec::new();
        let mut remaining = d.rate;
        while remaining >= DUST {
            let arcs: Vec<ArcId> = residual.keys().copied().collect();
            let Some(p) = path_extraction_rule(net, &arcs, d.origin, d.destination) else {
                break;
            };
            let bottleneck = p.iter().map(|a| residual[a]).fold(f64::INFINITY, f64::min);
            for a in &p {
                let r = residual.get_mut(a).unwrap();
                *r -= bottleneck;
                if *r < DUST || *r == 0.0 {
                    residual.remove(a);
                }
            }
            remaining -= bottleneck;
            paths.push(path_flow(net, p, bottleneck));
        }
        // Dust zeroed above leaves the shares short of the rate; spread the
        // deficit proportionally. The balance check bounds it by 1e3 * tol.
        let total: f64 = paths.iter().map(|p| p.share).sum();
        if total > 0.0 && (d.rate - total).abs() <= 1e3 * tol.max(DUST) {
            let scale = d.rate / total;
            for p in &mut paths {
                p.share *= scale;
            }
        }
        let cycles = extract_cycles(net, &mut residual);
        out.demands.push(DemandPaths { demand: m, paths, cycles });
    }
    Ok(out)
}

/// Peels cycles off the remaining flow. Flow that does not close into a
/// cycle is solver-level imbalance and is discarded.
fn extract_cycles(net: &Network, residual: &mut BTreeMap<ArcId, f64>) -> Vec<CycleFlow> {
    let mut cycles = Vec::new();
    while let Some((&start, _)) = residual.iter().next() {
        let mut out: BTreeMap<NodeId, ArcId> = BTreeMap::new();
        for &a in residual.keys() {
            out.entry(net.arc(a).tail).or_insert(a);
        }
        let mut order: Vec<ArcId> = vec![start];
        let mut seen: HashMap<NodeId, usize> = HashMap::from([(net.arc(start).tail, 0)]);
        let mut v = net.arc(start).head;
        let closed = loop {
            if let Some(&pos) = seen.get(&v) {
                break Some(pos);
            }
            seen.insert(v, order.len());
            match out.get(&v) {
                Some(&a) => {
                    order.push(a);
                    v = net.arc(a).head;
                }
                None => break None,
            }
        };
        match closed {
            None => {
                // Dead end: the last arc carries unbalanced flow.
                residual.remove(order.last().unwrap());
            }
            Some(pos) => {
                let arcs: Vec<ArcId> = order[pos..].to_vec();
                let flow = arcs.iter().map(|a| residual[a]).fold(f64::INFINITY, f64::min);
                for a in &arcs {
                    let r = residual.get_mut(a).unwrap();
                    *r -= flow;
                    if *r < DUST {
                        residual.remove(a);
                    }
                }
                let mut nodes: Vec<NodeId> = arcs.iter().map(|&a| net.arc(a).tail).collect();
                nodes.push(nodes[0]);
                let time_min = arcs.iter().map(|&a| net.arc(a).time_min).sum();
                cycles.push(CycleFlow { nodes, arcs, flow, time_min });
            }
        }
    }
    cycles
}

impl PathAssignment {
    /// Arc flows implied by paths and cycles of demand `m`.
    pub fn reconstruct(&self, m: usize) -> BTreeMap<ArcId, f64> {
        let mut flows = BTreeMap::new();
        let dp = &self.demands[m];
        for p in &dp.paths {
            for &a in &p.arcs {
                *flows.entry(a).or_insert(0.0) += p.share;
            }
        }
        for c in &dp.cycles {
            for &a in &c.arcs {
                *flows.entry(a).or_insert(0.0) += c.flow;
            }
        }
        flows
    }

    pub fn write_paths_csv<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["demand", "path", "share", "time_min", "cost", "mode_set", "nodes", "dominant_mode"])?;
        for dp in &self.demands {
            for (k, p) in dp.paths.iter().enumerate() {
                w.write_record([
                    dp.demand.to_string(),
                    k.to_string(),
                    round_sig(p.share).to_string(),
                    round_sig(p.time_min).to_string(),
                    round_sig(p.cost).to_string(),
                    p.mode_set_label(),
                    join_nodes(&p.nodes),
                    p.dominant_label().to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_cycles_csv<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["demand", "cycle", "flow", "time_min", "nodes"])?;
        for dp in &self.demands {
            for (k, c) in dp.cycles.iter().enumerate() {
                w.write_record([
                    dp.demand.to_string(),
                    k.to_string(),
                    round_sig(c.flow).to_string(),
                    round_sig(c.time_min).to_string(),
                    join_nodes(&c.nodes),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn join_nodes(nodes: &[NodeId]) -> String {
    nodes.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(">")
}
