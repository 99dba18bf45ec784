//! Exhaustive reference solver for tiny instances.
//!
//! The program is rewritten over path flows: one variable per simple
//! origin-destination path of each demand plus one rebalancing variable per
//! road arc. The LP is solved with a dense two-phase simplex. For the
//! sufficiency objective each `ε_m²` is replaced by an epigraph variable that
//! is cut from below by tangent lines until the bound gap closes.
//!
//! Nothing here shares code with the assembler or the interior-point solver.

use std::collections::BTreeMap;

use crate::assembler::ObjectiveKind;
use crate::demand::DemandSet;
use crate::netmodel::{ArcId, ArcKind, Layer, Network, NodeId};
use crate::scenarios::ScenarioConfig;

pub const MAX_PATHS_PER_DEMAND: usize = 12;
pub const MAX_ROAD_ARCS: usize = 8;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum OracleError {
    #[error("instance too large for enumeration: {0}")]
    TooLarge(String),
    #[error("instance is infeasible")]
    Infeasible,
    #[error("instance is unbounded")]
    Unbounded,
    #[error("cut refinement did not converge (gap {0:.3e})")]
    NoConvergence(f64),
}

/// All simple `origin -> destination` paths as arc lists, in depth-first
/// order. Fails once more than `limit` are found.
pub fn simple_paths(
    net: &Network,
    origin: NodeId,
    destination: NodeId,
    allow_bike: bool,
    limit: usize,
) -> Result<Vec<Vec<ArcId>>, OracleError> {
    fn dfs(
        net: &Network,
        v: NodeId,
        destination: NodeId,
        allow_bike: bool,
        limit: usize,
        on_path: &mut Vec<NodeId>,
        arcs: &mut Vec<ArcId>,
        out: &mut Vec<Vec<ArcId>>,
    ) -> bool {
        if v == destination {
            out.push(arcs.clone());
            return out.len() <= limit;
        }
        for &a in net.out_arcs(v) {
            let head = net.arc(a).head;
            if on_path.contains(&head) {
                continue;
            }
            if !allow_bike && net.layer(head) == Some(Layer::Bike) {
                continue;
            }
            if net.layer(head) == Some(Layer::Destination) && head != destination {
                continue;
            }
            on_path.push(head);
            arcs.push(a);
            let ok = dfs(net, head, destination, allow_bike, limit, on_path, arcs, out);
            arcs.pop();
            on_path.pop();
            if !ok {
                return false;
            }
        }
        true
    }
    let mut out = Vec::new();
    let ok = dfs(net, origin, destination, allow_bike, limit, &mut vec![origin], &mut Vec::new(), &mut out);
    if ok {
        Ok(out)
    } else {
        Err(OracleError::TooLarge(format!("more than {limit} paths from {origin} to {destination}")))
    }
}

/// Optimal objective of the instance, computed by path enumeration.
pub fn brute_force_oracle(
    net: &Network,
    dem: &DemandSet,
    cfg: &ScenarioConfig,
    kind: ObjectiveKind,
) -> Result<f64, OracleError> {
    let road: Vec<ArcId> = (0..net.arcs().len()).filter(|&a| net.arc(a).kind == ArcKind::Road).collect();
    if road.len() > MAX_ROAD_ARCS {
        return Err(OracleError::TooLarge(format!("{} road arcs", road.len())));
    }
    let mut paths = Vec::new();
    for d in &dem.demands {
        let p = simple_paths(net, d.origin, d.destination, d.bike_capable, MAX_PATHS_PER_DEMAND)?;
        if p.is_empty() {
            return Err(OracleError::Infeasible);
        }
        paths.push(p);
    }

    // Column layout: path flows, road rebalancing, then (QP) ε and θ per demand.
    let mut col = 0;
    let mut path_col: Vec<Vec<usize>> = Vec::new();
    for p in &paths {
        path_col.push((col..col + p.len()).collect());
        col += p.len();
    }
    let reb_col: BTreeMap<ArcId, usize> = road.iter().enumerate().map(|(k, &a)| (a, col + k)).collect();
    col += road.len();
    let qp = kind == ObjectiveKind::CommSuff;
    let nd = dem.demands.len();
    let eps_col: Vec<usize> = if qp { (col..col + nd).collect() } else { Vec::new() };
    let theta_col: Vec<usize> = if qp { (col + nd..col + 2 * nd).collect() } else { Vec::new() };
    let n = if qp { col + 2 * nd } else { col };

    let time = |p: &[ArcId]| p.iter().map(|&a| net.arc(a).time_min).sum::<f64>();
    let cost = |p: &[ArcId]| p.iter().map(|&a| net.arc(a).cost).sum::<f64>();
    // Occupied flow on arc a as a sparse row over path columns.
    let mut uses: BTreeMap<ArcId, Vec<usize>> = BTreeMap::new();
    for (m, ps) in paths.iter().enumerate() {
        for (k, p) in ps.iter().enumerate() {
            for &a in p {
                uses.entry(a).or_default().push(path_col[m][k]);
            }
        }
    }

    let mut lp = DenseLp::new(n);
    for (m, d) in dem.demands.iter().enumerate() {
        let mut row = vec![0.0; n];
        path_col[m].iter().for_each(|&c| row[c] = 1.0);
        lp.eq(row, d.rate);
    }
    for v in net.nodes().iter().filter(|v| v.layer == Layer::Road) {
        let mut row = vec![0.0; n];
        for &a in net.in_arcs(v.id).iter().filter(|&&a| net.arc(a).kind == ArcKind::Road) {
            row[reb_col[&a]] += 1.0;
            uses.get(&a).into_iter().flatten().for_each(|&c| row[c] += 1.0);
        }
        for &a in net.out_arcs(v.id).iter().filter(|&&a| net.arc(a).kind == ArcKind::Road) {
            row[reb_col[&a]] -= 1.0;
            uses.get(&a).into_iter().flatten().for_each(|&c| row[c] -= 1.0);
        }
        lp.eq(row, 0.0);
    }
    let mut fleet = vec![0.0; n];
    for &a in &road {
        let t = net.arc(a).time_min;
        fleet[reb_col[&a]] += t;
        uses.get(&a).into_iter().flatten().for_each(|&c| fleet[c] += t);
    }
    lp.le(fleet, cfg.n_amod_max);
    if cfg.budget_enabled {
        for (m, d) in dem.demands.iter().enumerate() {
            let budget = dem.region(d.region).map(|r| r.budget).unwrap_or(0.0);
            let mut row = vec![0.0; n];
            for (k, p) in paths[m].iter().enumerate() {
                row[path_col[m][k]] = cost(p);
            }
            lp.le(row, budget * d.rate);
        }
    }
    for (a, arc) in net.arcs().iter().enumerate() {
        let cap = match arc.kind {
            ArcKind::Road => arc.flow_cap_veh_min,
            ArcKind::Transit => arc.capacity_users_min,
            _ => None,
        };
        if let Some(cap) = cap {
            let mut row = vec![0.0; n];
            uses.get(&a).into_iter().flatten().for_each(|&c| row[c] += 1.0);
            if let Some(&r) = reb_col.get(&a) {
                row[r] += 1.0;
            }
            lp.le(row, cap);
        }
    }

    let mut linear = vec![0.0; n];
    for (m, ps) in paths.iter().enumerate() {
        for (k, p) in ps.iter().enumerate() {
            linear[path_col[m][k]] = time(p);
        }
    }
    for &a in &road {
        linear[reb_col[&a]] = cfg.gamma_r * net.arc(a).time_min;
    }
    if !qp {
        return lp.minimize(&linear).map(|(v, _)| v);
    }

    linear.iter_mut().for_each(|v| *v *= cfg.gamma_time);
    let n_pop = dem.total_population();
    let rates = dem.region_rates();
    let weight: Vec<f64> = dem
        .demands
        .iter()
        .map(|d| {
            let pop = dem.region(d.region).map(|r| r.population).unwrap_or(0.0);
            pop * d.rate / (n_pop * rates[&d.region])
        })
        .collect();
    for (m, d) in dem.demands.iter().enumerate() {
        let mut row = vec![0.0; n];
        for (k, p) in paths[m].iter().enumerate() {
            row[path_col[m][k]] = time(p) / d.rate;
        }
        row[eps_col[m]] = -1.0;
        lp.le(row, cfg.t_suff);
        linear[theta_col[m]] = weight[m];
    }
    // Objective Σ w_m ε_m² + γ·lin, with θ_m >= ε_m² enforced by tangents.
    let mut points: Vec<Vec<f64>> = vec![vec![0.0]; nd];
    for _ in 0..500 {
        let mut cut_lp = lp.clone();
        for m in 0..nd {
            for &e in &points[m] {
                let mut row = vec![0.0; n];
                row[eps_col[m]] = 2.0 * e;
                row[theta_col[m]] = -1.0;
                cut_lp.le(row, e * e);
            }
        }
        let (lower, x) = cut_lp.minimize(&linear)?;
        let upper = lower
            + (0..nd)
                .map(|m| weight[m] * (x[eps_col[m]].powi(2) - x[theta_col[m]]))
                .sum::<f64>();
        if upper - lower <= 1e-10 * (1.0 + upper.abs()) {
            return Ok(upper);
        }
        for m in 0..nd {
            let e = x[eps_col[m]];
            if e * e - x[theta_col[m]] > 1e-14 {
                points[m].push(e);
            }
        }
    }
    Err(OracleError::NoConvergence(f64::NAN))
}

/// Dense LP `min cᵀx, rows, x >= 0` solved by two-phase tableau simplex with
/// Bland's rule.
#[derive(Clone)]
struct DenseLp {
    n: usize,
    rows: Vec<(Vec<f64>, f64, bool)>,
}

const PIVOT_EPS: f64 = 1e-11;

impl DenseLp {
    fn new(n: usize) -> Self {
        DenseLp { n, rows: Vec::new() }
    }

    fn eq(&mut self, row: Vec<f64>, rhs: f64) {
        self.rows.push((row, rhs, true));
    }

    fn le(&mut self, row: Vec<f64>, rhs: f64) {
        self.rows.push((row, rhs, false));
    }

    fn minimize(&self, c: &[f64]) -> Result<(f64, Vec<f64>), OracleError> {
        let m = self.rows.len();
        let n_slack = self.rows.iter().filter(|r| !r.2).count();
        // Columns: x, slacks, artificials, rhs.
        let ns = self.n + n_slack;
        let width = ns + m + 1;
        let mut t = vec![vec![0.0; width]; m];
        let mut basis = vec![0usize; m];
        let mut s = self.n;
        for (i, (row, rhs, is_eq)) in self.rows.iter().enumerate() {
            t[i][..self.n].copy_from_slice(row);
            if !is_eq {
                t[i][s] = 1.0;
                s += 1;
            }
            t[i][width - 1] = *rhs;
            if *rhs < 0.0 {
                t[i].iter_mut().for_each(|v| *v = -*v);
            }
            t[i][ns + i] = 1.0;
            basis[i] = ns + i;
        }

        let mut phase1 = vec![0.0; width - 1];
        phase1[ns..].iter_mut().for_each(|v| *v = 1.0);
        pivot_loop(&mut t, &mut basis, &phase1, width - 1)?;
        let infeas: f64 = (0..m).filter(|&i| basis[i] >= ns).map(|i| t[i][width - 1]).sum();
        let scale = 1.0 + self.rows.iter().map(|r| r.1.abs()).fold(0.0, f64::max);
        if infeas > 1e-9 * scale {
            return Err(OracleError::Infeasible);
        }
        // Drive remaining artificials out of the basis where possible.
        for i in 0..m {
            if basis[i] >= ns {
                if let Some(j) = (0..ns).find(|&j| t[i][j].abs() > 1e-9) {
                    pivot(&mut t, &mut basis, i, j);
                }
            }
        }
        let mut cost = c.to_vec();
        cost.resize(ns, 0.0);
        // Artificial columns are barred from re-entering.
        pivot_loop(&mut t, &mut basis, &cost, ns)?;
        let mut x = vec![0.0; self.n];
        for i in 0..m {
            if basis[i] < self.n {
                x[basis[i]] = t[i][width - 1];
            }
        }
        let obj = c.iter().zip(&x).map(|(a, b)| a * b).sum();
        Ok((obj, x))
    }
}

fn pivot(t: &mut [Vec<f64>], basis: &mut [usize], r: usize, c: usize) {
    let p = t[r][c];
    t[r].iter_mut().for_each(|v| *v /= p);
    let pivot_row = t[r].clone();
    for (i, row) in t.iter_mut().enumerate() {
        if i != r {
            let f = row[c];
            if f != 0.0 {
                row.iter_mut().zip(&pivot_row).for_each(|(v, p)| *v -= f * p);
            }
        }
    }
    basis[r] = c;
}

/// Bland's rule over columns `0..active`.
fn pivot_loop(t: &mut [Vec<f64>], basis: &mut [usize], cost: &[f64], active: usize) -> Result<(), OracleError> {
    let rhs = t.first().map_or(0, |r| r.len() - 1);
    for _ in 0..100_000 {
        let mut entering = None;
        for j in 0..active {
            if basis.contains(&j) {
                continue;
            }
            let reduced = cost.get(j).copied().unwrap_or(0.0)
                - (0..t.len()).map(|i| cost.get(basis[i]).copied().unwrap_or(0.0) * t[i][j]).sum::<f64>();
            if reduced < -1e-12 {
                entering = Some(j);
                break;
            }
        }
        let Some(j) = entering else {
            return Ok(());
        };
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..t.len() {
            if t[i][j] > PIVOT_EPS {
                let ratio = t[i][rhs] / t[i][j];
                match leave {
                    Some((li, lr)) if ratio > lr + 1e-15 || (ratio >= lr - 1e-15 && basis[i] > basis[li]) => {}
                    _ => leave = Some((i, ratio)),
                }
            }
        }
        let Some((i, _)) = leave else {
            return Err(OracleError::Unbounded);
        };
        pivot(t, basis, i, j);
    }
    Err(OracleError::NoConvergence(f64::NAN))
}
