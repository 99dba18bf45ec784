//! Solver-independent scoring of a flow: insufficiency per demand and region,
//! population-weighted insufficiency, travel times, mode shares, histogram and
//! heatmap tables.

use std::collections::BTreeMap;
use std::io;

use serde::Serialize;

use crate::demand::{DemandSet, RegionId};
use crate::netmodel::{ArcKind, Layer, Network};
use crate::paths::PathAssignment;
use crate::solution::FlowSolution;
use crate::{round_sig, FORMAT_VERSION};

pub const DEFAULT_BIN_WIDTH_MIN: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemandMetrics {
    pub demand: usize,
    pub region: RegionId,
    pub rate: f64,
    pub mean_time: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionMetrics {
    pub region: RegionId,
    pub population: f64,
    pub demand_rate: f64,
    /// Rate-weighted mean of squared insufficiency, min².
    pub u: f64,
    pub centroid: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub t_suff: f64,
    pub total_rate: f64,
    /// `Σ_a t_a Σ_m x_a^m`, user-minutes per minute.
    pub total_travel_time: f64,
    pub rebalancing_time: f64,
    pub avg_travel_time: f64,
    /// Population-weighted mean of regional `u`.
    pub commute_insufficiency: f64,
    pub regions: Vec<RegionMetrics>,
    pub demands: Vec<DemandMetrics>,
    /// users/min by dominant mode and by mode set; empty until paths are attached.
    pub mode_share_dominant: BTreeMap<String, f64>,
    pub mode_share_set: BTreeMap<String, f64>,
}

impl MetricsReport {
    /// `J_UtilEff` including the rebalancing regularizer.
    pub fn util_eff_objective(&self, gamma_r: f64) -> f64 {
        self.total_travel_time + gamma_r * self.rebalancing_time
    }

    /// Fills the mode-share tables from a decomposition.
    pub fn attach_paths(&mut self, paths: &PathAssignment) {
        self.mode_share_dominant.clear();
        self.mode_share_set.clear();
        for dp in &paths.demands {
            for p in &dp.paths {
                *self.mode_share_dominant.entry(p.dominant_label().to_string()).or_insert(0.0) += p.share;
                *self.mode_share_set.entry(p.mode_set_label()).or_insert(0.0) += p.share;
            }
        }
    }

    pub fn to_json(&self, gamma_r: f64, gamma_time: f64) -> String {
        let fractions = |m: &BTreeMap<String, f64>| -> serde_json::Value {
            m.iter()
                .map(|(k, v)| {
                    let frac = if self.total_rate > 0.0 { v / self.total_rate } else { 0.0 };
                    (k.clone(), serde_json::json!({"users_per_min": v, "fraction": frac}))
                })
                .collect::<serde_json::Map<_, _>>()
                .into()
        };
        let util = self.util_eff_objective(gamma_r);
        let mut v = serde_json::json!({
            "format": FORMAT_VERSION,
            "t_suff": self.t_suff,
            "total_rate": self.total_rate,
            "avg_travel_time": self.avg_travel_time,
            "total_travel_time": self.total_travel_time,
            "rebalancing_time": self.rebalancing_time,
            "util_eff_objective": util,
            "commute_insufficiency": self.commute_insufficiency,
            "comm_suff_objective": self.commute_insufficiency + gamma_time * util,
            "regions": self.regions.iter().map(|r| serde_json::json!({
                "region": r.region,
                "population": r.population,
                "demand_rate": r.demand_rate,
                "u": r.u,
                "centroid_x": r.centroid.map(|c| c.0),
                "centroid_y": r.centroid.map(|c| c.1),
            })).collect::<Vec<_>>(),
            "demands": self.demands,
            "mode_share": {
                "dominant": fractions(&self.mode_share_dominant),
                "mode_set": fractions(&self.mode_share_set),
            },
        });
        round_json(&mut v);
        serde_json::to_string_pretty(&v).expect("metrics serialize")
    }

    pub fn write_heatmap_csv<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["region", "x", "y", "u_r"])?;
        for r in &self.regions {
            if let Some((x, y)) = r.centroid {
                w.write_record([
                    r.region.to_string(),
                    round_sig(x).to_string(),
                    round_sig(y).to_string(),
                    round_sig(r.u).to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Rounds every float in a JSON tree to 12 significant digits.
pub fn round_json(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Number(n) if n.is_f64() => {
            if let Some(x) = n.as_f64() {
                if let Some(r) = serde_json::Number::from_f64(round_sig(x)) {
                    *n = r;
                }
            }
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(round_json),
        serde_json::Value::Object(map) => map.values_mut().for_each(round_json),
        _ => {}
    }
}

/// Scores `sol` on its own: slacks are recomputed from the flows.
pub fn evaluate(sol: &FlowSolution, dem: &DemandSet, net: &Network, t_suff: f64) -> MetricsReport {
    let mut demands = Vec::with_capacity(dem.demands.len());
    let mut total_time = 0.0;
    for (m, d) in dem.demands.iter().enumerate() {
        let tm = sol.total_time(m, net);
        total_time += tm;
        let mean_time = tm / d.rate;
        demands.push(DemandMetrics {
            demand: m,
            region: d.region,
            rate: d.rate,
            mean_time,
            epsilon: (mean_time - t_suff).max(0.0),
        });
    }
    let rebalancing_time = sol.rebalancing.iter().map(|f| net.arc(f.arc).time_min * f.value).sum();

    let mut regions = Vec::with_capacity(dem.regions.len());
    for r in &dem.regions {
        let mine: Vec<&DemandMetrics> = demands.iter().filter(|d| d.region == r.id).collect();
        let rate: f64 = mine.iter().map(|d| d.rate).sum();
        let u = if rate > 0.0 {
            mine.iter().map(|d| d.rate * d.epsilon * d.epsilon).sum::<f64>() / rate
        } else {
            0.0
        };
        regions.push(RegionMetrics {
            region: r.id,
            population: r.population,
            demand_rate: rate,
            u,
            centroid: centroid(r.id, dem, net),
        });
    }
    let pop: f64 = regions.iter().map(|r| r.population).sum();
    let commute_insufficiency = if pop > 0.0 {
        regions.iter().map(|r| r.population * r.u).sum::<f64>() / pop
    } else {
        0.0
    };
    let total_rate = dem.total_rate();
    MetricsReport {
        t_suff,
        total_rate,
        total_travel_time: total_time,
        rebalancing_time,
        avg_travel_time: if total_rate > 0.0 { total_time / total_rate } else { 0.0 },
        commute_insufficiency,
        regions,
        demands,
        mode_share_dominant: BTreeMap::new(),
        mode_share_set: BTreeMap::new(),
    }
}

/// Rate-weighted mean of the region's demand origins; falls back to the plain
/// mean of the region's origin nodes when it has no demand.
fn centroid(region: RegionId, dem: &DemandSet, net: &Network) -> Option<(f64, f64)> {
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut w = 0.0;
    for d in dem.demands.iter().filter(|d| d.region == region) {
        if let Some(n) = net.node(d.origin) {
            sx += d.rate * n.x;
            sy += d.rate * n.y;
            w += d.rate;
        }
    }
    if w == 0.0 {
        for n in net.nodes_in_layer(Layer::Origin).filter(|n| n.region == Some(region)) {
            sx += n.x;
            sy += n.y;
            w += 1.0;
        }
    }
    (w > 0.0).then(|| (sx / w, sy / w))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramRow {
    pub bin_start: f64,
    pub bin_end: f64,
    pub mode: String,
    pub users_per_min: f64,
}

fn bins(entries: impl Iterator<Item = (f64, String, f64)>, bin_width: f64) -> Vec<HistogramRow> {
    let mut acc: BTreeMap<(i64, String), f64> = BTreeMap::new();
    for (time, mode, users) in entries {
        let b = (time / bin_width).floor() as i64;
        *acc.entry((b, mode)).or_insert(0.0) += users;
    }
    acc.into_iter()
        .map(|((b, mode), users)| HistogramRow {
            bin_start: b as f64 * bin_width,
            bin_end: (b + 1) as f64 * bin_width,
            mode,
            users_per_min: users,
        })
        .collect()
}

/// User rate per (path-time bin, dominant mode).
pub fn histogram(paths: &PathAssignment, bin_width: f64) -> Vec<HistogramRow> {
    bins(
        paths
            .demands
            .iter()
            .flat_map(|dp| dp.paths.iter().map(|p| (p.time_min, p.dominant_label().to_string(), p.share))),
        bin_width,
    )
}

/// User rate per (demand mean-time bin, demand-level dominant mode), where
/// the dominant mode is taken over the demand's whole flow.
pub fn histogram_of_means(report: &MetricsReport, sol: &FlowSolution, net: &Network, bin_width: f64) -> Vec<HistogramRow> {
    bins(
        report.demands.iter().map(|d| {
            let mut by_kind: BTreeMap<ArcKind, f64> = BTreeMap::new();
            for f in &sol.flows[d.demand] {
                let arc = net.arc(f.arc);
                if arc.kind != ArcKind::Switch {
                    *by_kind.entry(arc.kind).or_insert(0.0) += arc.time_min * f.value;
                }
            }
            let mode = by_kind
                .iter()
                .fold(None, |acc: Option<(ArcKind, f64)>, (&k, &t)| match acc {
                    Some((_, bt)) if bt >= t => acc,
                    _ => Some((k, t)),
                })
                .map_or("none", |(k, _)| k.as_str());
            (d.mean_time, mode.to_string(), d.rate)
        }),
        bin_width,
    )
}

pub fn write_histogram_csv<W: io::Write>(rows: &[HistogramRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bin_start", "bin_end", "mode", "users_per_min"])?;
    for r in rows {
        w.write_record([
            round_sig(r.bin_start).to_string(),
            round_sig(r.bin_end).to_string(),
            r.mode.clone(),
            round_sig(r.users_per_min).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembler::ObjectiveKind;
    use crate::demand::{Demand, Region};
    use crate::netmodel::{Arc, Node, NodeId};
    use crate::paths::{DemandPaths, PathFlow};
    use crate::solution::ArcFlow;
    use crate::solver::SolveStatus;

    fn origin(id: NodeId, region: u32, x: f64) -> Node {
        Node { id, layer: Layer::Origin, x, y: 0.0, region: Some(region) }
    }

    /// Origins 0 (region 0) and 1 (region 1), destination 2, one walk arc of
    /// `t` minutes per origin via walk nodes 10/11.
    fn instance(t: [f64; 2], pops: [f64; 2]) -> (Network, DemandSet) {
        let walk = |id| Node { id, layer: Layer::Walk, x: 0.0, y: 0.0, region: None };
        let net = Network::new(
            f64::INFINITY,
            vec![
                origin(0, 0, 1.0),
                origin(1, 1, 3.0),
                Node { id: 2, layer: Layer::Destination, x: 0.0, y: 0.0, region: None },
                walk(10),
                walk(11),
                walk(12),
            ],
            vec![
                Arc::new(0, 10, ArcKind::Switch, 0.0, 0.0),
                Arc::new(10, 12, ArcKind::Walk, t[0], 0.0),
                Arc::new(1, 11, ArcKind::Switch, 0.0, 0.0),
                Arc::new(11, 12, ArcKind::Walk, t[1], 0.0),
                Arc::new(12, 2, ArcKind::Switch, 0.0, 0.0),
            ],
        );
        let dem = DemandSet {
            regions: vec![
                Region { id: 0, population: pops[0], budget: 0.0 },
                Region { id: 1, population: pops[1], budget: 0.0 },
            ],
            demands: vec![
                Demand { id: 0, origin: 0, destination: 2, rate: 1.0, region: 0, bike_capable: true },
                Demand { id: 1, origin: 1, destination: 2, rate: 1.0, region: 1, bike_capable: true },
            ],
            operating_window_min: 1440.0,
        };
        (net, dem)
    }

    fn flows() -> FlowSolution {
        let f = |arc| ArcFlow { arc, value: 1.0 };
        FlowSolution {
            format: None,
            objective_kind: ObjectiveKind::UtilEff,
            status: SolveStatus::Optimal,
            objective: 0.0,
            duality_gap: 0.0,
            iterations: 0,
            max_violation: 0.0,
            flows: vec![vec![f(0), f(1), f(4)], vec![f(2), f(3), ArcFlow { arc: 4, value: 1.0 }]],
            rebalancing: vec![],
            slack: vec![],
        }
    }

    #[test]
    fn insufficiency_above_and_below_threshold() {
        let (net, dem) = instance([30.0, 14.0], [1.0, 1.0]);
        let r = evaluate(&flows(), &dem, &net, 20.0);
        assert_eq!(r.demands[0].epsilon, 10.0);
        assert_eq!(r.regions[0].u, 100.0);
        assert_eq!(r.demands[1].epsilon, 0.0);
        assert_eq!(r.regions[1].u, 0.0);
        assert_eq!(r.avg_travel_time, 22.0);
        assert_eq!(r.regions[1].centroid, Some((3.0, 0.0)));
    }

    #[test]
    fn population_weighted_aggregate() {
        // u = {8, 0} with populations {1, 3} gives 2.
        let (net, dem) = instance([20.0 + 8f64.sqrt(), 10.0], [1.0, 3.0]);
        let r = evaluate(&flows(), &dem, &net, 20.0);
        assert!((r.regions[0].u - 8.0).abs() < 1e-12);
        assert!((r.commute_insufficiency - 2.0).abs() < 1e-12);
    }

    fn path(time: f64, share: f64) -> PathFlow {
        PathFlow {
            nodes: vec![],
            arcs: vec![],
            share,
            time_min: time,
            cost: 0.0,
            modes: [ArcKind::Walk].into(),
            dominant: Some(ArcKind::Walk),
        }
    }

    #[test]
    fn histogram_bins() {
        let one = PathAssignment { demands: vec![DemandPaths { demand: 0, paths: vec![path(14.2, 1.0)], cycles: vec![] }] };
        let h = histogram(&one, 1.0);
        assert_eq!(h.len(), 1);
        assert_eq!((h[0].bin_start, h[0].bin_end, h[0].users_per_min), (14.0, 15.0, 1.0));

        let two = PathAssignment {
            demands: vec![DemandPaths { demand: 0, paths: vec![path(10.0, 0.5), path(30.0, 0.5)], cycles: vec![] }],
        };
        let h = histogram(&two, 1.0);
        assert_eq!(h.iter().map(|r| r.users_per_min).collect::<Vec<_>>(), vec![0.5, 0.5]);
        assert_eq!(h[1].bin_start, 30.0);

        assert!(histogram(&PathAssignment::default(), 1.0).is_empty());
    }

    #[test]
    fn metrics_json_is_rounded_and_tagged() {
        let (net, dem) = instance([30.0, 14.0], [1.0, 1.0]);
        let text = evaluate(&flows(), &dem, &net, 20.0).to_json(1e-3, 1e-3);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["format"], FORMAT_VERSION);
        assert_eq!(v["commute_insufficiency"], 50.0);
    }
}
