//! Scenario configuration, the end-to-end pipeline, and a seeded synthetic
//! grid-city generator.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assembler::{apply_fare_policy, assemble, AssembleError, ConstraintFamily, ObjectiveKind};
use crate::demand::{split_by_bike_share, Demand, DemandError, DemandSet, Region, RegionId};
use crate::metrics::{self, evaluate, MetricsReport};
use crate::netmodel::{prune_unsafe_bike_arcs, validate_network, Arc, ArcKind, Layer, Network, Node, NodeId, Violation};
use crate::paths::{decompose, PathAssignment, PathError};
use crate::solution::FlowSolution;
use crate::solver::{solve, SolveSettings, SolveStatus};
use crate::FORMAT_VERSION;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FarePolicy {
    #[default]
    Nominal,
    FreeTransit,
    FreeAll,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<String>,
    /// Overrides the network's bike unsafety threshold when set.
    pub safety_threshold: Option<f64>,
    pub n_amod_max: f64,
    pub t_suff: f64,
    pub gamma_r: f64,
    pub gamma_time: f64,
    pub budget_enabled: bool,
    pub fare_policy: FarePolicy,
    /// Rescales demand rates to this window when set.
    pub operating_window_min: Option<f64>,
    pub histogram_bin_min: f64,
    pub solver: SolveSettings,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            format: None,
            safety_threshold: None,
            n_amod_max: 240.0,
            t_suff: 20.0,
            gamma_r: 1e-3,
            gamma_time: 1e-3,
            budget_enabled: true,
            fare_policy: FarePolicy::Nominal,
            operating_window_min: None,
            histogram_bin_min: metrics::DEFAULT_BIN_WIDTH_MIN,
            solver: SolveSettings::default(),
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), String> {
        let nonneg = [
            ("n_amod_max", self.n_amod_max),
            ("gamma_r", self.gamma_r),
            ("gamma_time", self.gamma_time),
            ("safety_threshold", self.safety_threshold.unwrap_or(0.0)),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) {
                return Err(format!("{name} must be >= 0"));
            }
        }
        if !(self.t_suff > 0.0 && self.t_suff.is_finite()) {
            return Err("t_suff must be > 0".into());
        }
        if !(self.histogram_bin_min > 0.0) {
            return Err("histogram_bin_min must be > 0".into());
        }
        if let Some(w) = self.operating_window_min {
            if !(w > 0.0 && w.is_finite()) {
                return Err("operating_window_min must be > 0".into());
            }
        }
        if let Some(fmt) = &self.format {
            if fmt != FORMAT_VERSION {
                return Err(format!("unsupported format {fmt:?}"));
            }
        }
        self.solver.validate()
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let cfg: ScenarioConfig = serde_json::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        let mut copy = self.clone();
        copy.format = Some(FORMAT_VERSION.into());
        serde_json::to_string_pretty(&copy).expect("config serializes")
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid network: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Network(Vec<Violation>),
    #[error(transparent)]
    Demand(#[from] DemandError),
    #[error(transparent)]
    Assemble(#[from] AssembleError),
    #[error("solver returned {}{}{}", .status.as_str(), .suspect.as_ref().map(|s| format!(" (suspect constraint: {s})")).unwrap_or_default(), .message.as_ref().map(|m| format!(": {m}")).unwrap_or_default())]
    NotOptimal {
        status: SolveStatus,
        suspect: Option<String>,
        message: Option<String>,
        log: String,
    },
    #[error(transparent)]
    Paths(#[from] PathError),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// Applies the fare policy, the configured safety threshold and the bike
/// pruning.
pub fn prepare_network(net: &Network, cfg: &ScenarioConfig) -> Network {
    let mut out = apply_fare_policy(net, cfg.fare_policy);
    if let Some(s) = cfg.safety_threshold {
        out = out.with_safety_threshold(s);
    }
    prune_unsafe_bike_arcs(&out)
}

/// Rescales rates when the configuration fixes a different operating window.
pub fn apply_window(dem: &DemandSet, cfg: &ScenarioConfig) -> DemandSet {
    match cfg.operating_window_min {
        Some(w) if w != dem.operating_window_min => {
            let mut out = dem.clone();
            let k = dem.operating_window_min / w;
            out.demands.iter_mut().for_each(|d| d.rate *= k);
            out.operating_window_min = w;
            out
        }
        _ => dem.clone(),
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    /// Network after fare policy and pruning; arc ids in the solution refer to it.
    pub network: Network,
    pub demand: DemandSet,
    pub solution: FlowSolution,
    pub metrics: MetricsReport,
    pub paths: PathAssignment,
    pub log: String,
}

/// fare policy → safety pruning → assemble → solve → decompose → evaluate.
pub fn run_scenario(
    net: &Network,
    dem: &DemandSet,
    cfg: &ScenarioConfig,
    kind: ObjectiveKind,
) -> Result<ScenarioOutcome, ScenarioError> {
    cfg.validate().map_err(ScenarioError::Config)?;
    let violations = validate_network(net);
    if !violations.is_empty() {
        return Err(ScenarioError::Network(violations));
    }
    let network = prepare_network(net, cfg);
    let demand = apply_window(dem, cfg);
    demand.check_against(&network)?;

    let p = assemble(&network, &demand, cfg, kind)?;
    let mut log = String::new();
    let _ = writeln!(log, "format {FORMAT_VERSION}");
    let _ = writeln!(log, "objective {}", kind.as_str());
    let _ = writeln!(log, "columns {}", p.n_vars());
    for family in [
        ConstraintFamily::Conservation,
        ConstraintFamily::AmodBalance,
        ConstraintFamily::Fleet,
        ConstraintFamily::Budget,
        ConstraintFamily::RoadCap,
        ConstraintFamily::TransitCap,
        ConstraintFamily::Slack,
    ] {
        let n = p.eq.count(family) + p.ineq.count(family);
        let _ = writeln!(log, "rows {family} {n}");
    }
    let result = solve(&p, &cfg.solver);
    let _ = writeln!(log, "status {}", result.status.as_str());
    let _ = writeln!(log, "iterations {}", result.iterations);
    let _ = writeln!(log, "objective {:.12e}", result.objective);
    let _ = writeln!(log, "duality_gap {:.3e}", result.duality_gap);
    let _ = writeln!(log, "max_violation {:.3e}", result.max_violation);
    let _ = writeln!(log, "wall_time_s {:.3}", result.wall_time_s);
    if let Some(msg) = &result.message {
        let _ = writeln!(log, "message {msg}");
    }
    if result.status != SolveStatus::Optimal {
        if let Some(tag) = &result.suspect_row {
            let _ = writeln!(log, "suspect {tag}");
        }
        return Err(ScenarioError::NotOptimal {
            status: result.status,
            suspect: result.suspect_row.as_ref().map(|t| t.to_string()),
            message: result.message.clone(),
            log,
        });
    }
    let solution = FlowSolution::from_result(&p, &result, &network, &demand, cfg.t_suff).rounded();
    let (metrics, paths) = analyse(&solution, &network, &demand, cfg)?;
    Ok(ScenarioOutcome { network, demand, solution, metrics, paths, log })
}

/// Decomposition plus evaluation of an existing solution.
pub fn analyse(
    solution: &FlowSolution,
    net: &Network,
    dem: &DemandSet,
    cfg: &ScenarioConfig,
) -> Result<(MetricsReport, PathAssignment), ScenarioError> {
    let paths = decompose(solution, net, dem, cfg.solver.feasibility_tol)?;
    let mut report = evaluate(solution, dem, net, cfg.t_suff);
    report.attach_paths(&paths);
    Ok((report, paths))
}

/// Writes every derived artifact of a solved scenario.
pub fn write_outputs(dir: &Path, cfg: &ScenarioConfig, outcome: &ScenarioOutcome) -> Result<(), ScenarioError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.json"), cfg.to_json())?;
    fs::write(dir.join("network.json"), outcome.network.to_json())?;
    fs::write(dir.join("demand.json"), outcome.demand.to_json())?;
    fs::write(dir.join("solution.json"), outcome.solution.to_json())?;
    fs::write(dir.join("solve_log.txt"), &outcome.log)?;
    write_reports(dir, cfg, &outcome.network, &outcome.solution, &outcome.metrics, &outcome.paths)
}

/// Files derived from a solution: metrics, histograms, heatmap, paths, cycles.
pub fn write_reports(
    dir: &Path,
    cfg: &ScenarioConfig,
    net: &Network,
    solution: &FlowSolution,
    report: &MetricsReport,
    paths: &PathAssignment,
) -> Result<(), ScenarioError> {
    fs::write(dir.join("metrics.json"), report.to_json(cfg.gamma_r, cfg.gamma_time))?;
    let csv_err = |e: csv::Error| ScenarioError::Io(io::Error::other(e));
    let hist = metrics::histogram(paths, cfg.histogram_bin_min);
    metrics::write_histogram_csv(&hist, fs::File::create(dir.join("histogram.csv"))?).map_err(csv_err)?;
    let hist_mean = metrics::histogram_of_means(report, solution, net, cfg.histogram_bin_min);
    metrics::write_histogram_csv(&hist_mean, fs::File::create(dir.join("histogram_mean.csv"))?).map_err(csv_err)?;
    report.write_heatmap_csv(fs::File::create(dir.join("heatmap.csv"))?).map_err(csv_err)?;
    write_path_files(dir, paths)
}

pub fn write_path_files(dir: &Path, paths: &PathAssignment) -> Result<(), ScenarioError> {
    let csv_err = |e: csv::Error| ScenarioError::Io(io::Error::other(e));
    paths.write_paths_csv(fs::File::create(dir.join("paths.csv"))?).map_err(csv_err)?;
    paths.write_cycles_csv(fs::File::create(dir.join("cycles.csv"))?).map_err(csv_err)?;
    Ok(())
}

/// Everything a scenario directory holds, loaded back.
pub struct SavedScenario {
    pub config: ScenarioConfig,
    pub network: Network,
    pub demand: DemandSet,
    pub solution: FlowSolution,
}

pub fn load_saved(dir: &Path) -> Result<SavedScenario, ScenarioError> {
    let read = |name: &str| fs::read_to_string(dir.join(name));
    let config = ScenarioConfig::from_json(&read("config.json")?).map_err(ScenarioError::Config)?;
    let network = Network::from_json(&read("network.json")?)
        .map_err(|e| ScenarioError::Config(format!("network.json: {e}")))?;
    let demand = crate::demand::load_demand(&read("demand.json")?)?;
    let solution = FlowSolution::from_json(&read("solution.json")?)
        .map_err(|e| ScenarioError::Config(format!("solution.json: {e}")))?;
    Ok(SavedScenario { config, network, demand, solution })
}

// ---------------------------------------------------------------------------
// Grid city

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridCitySpec {
    pub nx: usize,
    pub ny: usize,
    pub spacing_m: f64,
    /// Minutes per block, sampled uniformly per directed arc.
    pub walk_time: [f64; 2],
    pub bike_time: [f64; 2],
    pub road_time: [f64; 2],
    pub transit_time: [f64; 2],
    pub bike_unsafety: [f64; 2],
    pub safety_threshold: Option<f64>,
    /// A transit line runs along every `transit_every`-th row and column; 0 disables transit.
    pub transit_every: usize,
    pub transit_fare: f64,
    pub transit_wait_min: f64,
    pub transit_capacity: Option<f64>,
    pub amod_base_fare: f64,
    pub amod_fare_per_min: f64,
    pub amod_wait_min: f64,
    pub road_flow_cap: Option<f64>,
    pub bike_fare: f64,
    pub bike_unlock_min: f64,
    /// Probability that a cell gets mode-to-mode interchange arcs.
    pub interchange_prob: f64,
    pub regions_x: usize,
    pub regions_y: usize,
    pub population: [f64; 2],
    pub budget: [f64; 2],
    pub bike_incapable_share: f64,
    pub demands: usize,
    pub daily_users: [f64; 2],
    pub operating_window_min: f64,
}

impl Default for GridCitySpec {
    fn default() -> Self {
        GridCitySpec {
            nx: 6,
            ny: 6,
            spacing_m: 250.0,
            walk_time: [3.0, 4.0],
            bike_time: [1.0, 1.5],
            road_time: [0.6, 1.2],
            transit_time: [0.5, 0.8],
            bike_unsafety: [0.0, 1.0],
            safety_threshold: Some(0.8),
            transit_every: 3,
            transit_fare: 2.9,
            transit_wait_min: 4.0,
            transit_capacity: None,
            amod_base_fare: 2.5,
            amod_fare_per_min: 0.7,
            amod_wait_min: 3.0,
            road_flow_cap: None,
            bike_fare: 0.0,
            bike_unlock_min: 1.0,
            interchange_prob: 1.0,
            regions_x: 2,
            regions_y: 2,
            population: [500.0, 2000.0],
            budget: [3.0, 8.0],
            bike_incapable_share: 0.3,
            demands: 20,
            daily_users: [40.0, 140.0],
            operating_window_min: 1440.0,
        }
    }
}

impl GridCitySpec {
    /// 2×2 cities whose demands have few enough simple paths for exhaustive
    /// enumeration.
    pub fn tiny() -> Self {
        GridCitySpec {
            nx: 2,
            ny: 2,
            transit_every: 2,
            interchange_prob: 0.15,
            regions_x: 2,
            regions_y: 1,
            demands: 2,
            bike_incapable_share: 0.0,
            ..GridCitySpec::default()
        }
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        let bad = |m: &str| Err(SpecError(m.to_string()));
        if self.nx == 0 || self.ny == 0 || self.nx * self.ny < 2 {
            return bad("grid needs at least two cells");
        }
        if self.regions_x == 0 || self.regions_y == 0 || self.regions_x > self.nx || self.regions_y > self.ny {
            return bad("region blocks must fit the grid");
        }
        for (name, r) in [
            ("walk_time", self.walk_time),
            ("bike_time", self.bike_time),
            ("road_time", self.road_time),
            ("transit_time", self.transit_time),
            ("bike_unsafety", self.bike_unsafety),
            ("population", self.population),
            ("budget", self.budget),
            ("daily_users", self.daily_users),
        ] {
            if !(r[0] >= 0.0 && r[1] >= r[0] && r[1].is_finite()) {
                return Err(SpecError(format!("{name} must be an ordered nonnegative range")));
            }
        }
        if !(self.daily_users[0] > 0.0) || !(self.population[0] > 0.0) {
            return bad("daily_users and population must be positive");
        }
        let scalars = [
            self.spacing_m,
            self.transit_fare,
            self.transit_wait_min,
            self.amod_base_fare,
            self.amod_fare_per_min,
            self.amod_wait_min,
            self.bike_fare,
            self.bike_unlock_min,
        ];
        if scalars.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return bad("times, fares and spacing must be finite and >= 0");
        }
        if !(0.0..=1.0).contains(&self.interchange_prob) || !(0.0..=1.0).contains(&self.bike_incapable_share) {
            return bad("probabilities must lie in [0, 1]");
        }
        if !(self.operating_window_min > 0.0) {
            return bad("operating_window_min must be > 0");
        }
        if self.demands == 0 {
            return bad("need at least one demand");
        }
        let cells = self.nx * self.ny;
        if self.demands > cells * (cells - 1) {
            return bad("more demands than distinct cell pairs");
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("grid spec error: {0}")]
pub struct SpecError(pub String);

/// RNG stream per entity class, so that changing one class's parameters does
/// not reshuffle the others.
#[derive(Clone, Copy)]
enum Stream {
    ArcTimes = 1,
    Unsafety = 2,
    Interchange = 3,
    Regions = 4,
    Demands = 5,
}

fn rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream as u64);
    r
}

fn sample(rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        rng.random_range(range[0]..range[1])
    } else {
        range[0]
    }
}

struct Builder {
    nodes: Vec<Node>,
    arcs: Vec<Arc>,
}

impl Builder {
    fn node(&mut self, layer: Layer, x: f64, y: f64, region: Option<RegionId>) -> NodeId {
        let id = self.nodes.len() as NodeId;
        self.nodes.push(Node { id, layer, x, y, region });
        id
    }

    fn arc(&mut self, tail: NodeId, head: NodeId, kind: ArcKind, time: f64, cost: f64) -> usize {
        self.arcs.push(Arc::new(tail, head, kind, time, cost));
        self.arcs.len() - 1
    }
}

/// Deterministic in `(spec, seed)`.
pub fn generate_grid_city(spec: &GridCitySpec, seed: u64) -> Result<(Network, DemandSet), SpecError> {
    spec.validate()?;
    let (nx, ny) = (spec.nx, spec.ny);
    let cells = nx * ny;
    let pos = |c: usize| ((c % nx) as f64 * spec.spacing_m, (c / nx) as f64 * spec.spacing_m);
    let region_of = |c: usize| -> RegionId {
        let bx = (c % nx) * spec.regions_x / nx;
        let by = (c / nx) * spec.regions_y / ny;
        (by * spec.regions_x + bx) as RegionId
    };
    let neighbours = |c: usize| -> Vec<usize> {
        let (i, j) = (c % nx, c / nx);
        let mut v = Vec::new();
        if i + 1 < nx {
            v.push(c + 1);
        }
        if j + 1 < ny {
            v.push(c + nx);
        }
        v
    };

    let mut b = Builder { nodes: Vec::new(), arcs: Vec::new() };
    let mut times = rng(seed, Stream::ArcTimes);
    let mut unsafety = rng(seed, Stream::Unsafety);

    let layer_nodes = |b: &mut Builder, layer: Layer| -> Vec<NodeId> {
        (0..cells).map(|c| { let (x, y) = pos(c); b.node(layer, x, y, None) }).collect()
    };
    let walk = layer_nodes(&mut b, Layer::Walk);
    let bike = layer_nodes(&mut b, Layer::Bike);
    let road = layer_nodes(&mut b, Layer::Road);

    for c in 0..cells {
        for n in neighbours(c) {
            for (u, v) in [(c, n), (n, c)] {
                b.arc(walk[u], walk[v], ArcKind::Walk, sample(&mut times, spec.walk_time), 0.0);
                let a = b.arc(bike[u], bike[v], ArcKind::Bike, sample(&mut times, spec.bike_time), 0.0);
                b.arcs[a].unsafety = Some(sample(&mut unsafety, spec.bike_unsafety));
                let t = sample(&mut times, spec.road_time);
                let a = b.arc(road[u], road[v], ArcKind::Road, t, spec.amod_fare_per_min * t);
                b.arcs[a].flow_cap_veh_min = spec.road_flow_cap;
            }
        }
    }

    // Transit lines: one node per served cell and line, so parallel lines stay distinct.
    let mut stations: BTreeMap<usize, Vec<NodeId>> = BTreeMap::new();
    if spec.transit_every > 0 {
        let mut lines: Vec<Vec<usize>> = Vec::new();
        for j in (0..ny).step_by(spec.transit_every) {
            if nx > 1 {
                lines.push((0..nx).map(|i| j * nx + i).collect());
            }
        }
        for i in (0..nx).step_by(spec.transit_every) {
            if ny > 1 {
                lines.push((0..ny).map(|j| j * nx + i).collect());
            }
        }
        for line in lines {
            let ids: Vec<NodeId> = line.iter().map(|&c| { let (x, y) = pos(c); b.node(Layer::Transit, x, y, None) }).collect();
            for k in 0..ids.len() - 1 {
                for (u, v) in [(ids[k], ids[k + 1]), (ids[k + 1], ids[k])] {
                    let a = b.arc(u, v, ArcKind::Transit, sample(&mut times, spec.transit_time), 0.0);
                    b.arcs[a].capacity_users_min = spec.transit_capacity;
                }
            }
            for (&c, &id) in line.iter().zip(&ids) {
                stations.entry(c).or_default().push(id);
            }
        }
    }

    // Interchanges between modes at a cell.
    let mut inter = rng(seed, Stream::Interchange);
    for c in 0..cells {
        if !(inter.random::<f64>() < spec.interchange_prob) {
            continue;
        }
        b.arc(walk[c], road[c], ArcKind::Switch, spec.amod_wait_min, spec.amod_base_fare);
        b.arc(road[c], walk[c], ArcKind::Switch, 0.0, 0.0);
        b.arc(walk[c], bike[c], ArcKind::Switch, spec.bike_unlock_min, spec.bike_fare);
        b.arc(bike[c], walk[c], ArcKind::Switch, 0.0, 0.0);
        for &s in stations.get(&c).into_iter().flatten() {
            b.arc(walk[c], s, ArcKind::Switch, spec.transit_wait_min, spec.transit_fare);
            b.arc(s, walk[c], ArcKind::Switch, 0.0, 0.0);
        }
    }

    // Regions.
    let n_regions = spec.regions_x * spec.regions_y;
    let mut reg_rng = rng(seed, Stream::Regions);
    let regions: Vec<Region> = (0..n_regions)
        .map(|r| Region {
            id: r as RegionId,
            population: sample(&mut reg_rng, spec.population).round().max(1.0),
            budget: sample(&mut reg_rng, spec.budget),
        })
        .collect();

    // Demands between distinct cells.
    let mut dem_rng = rng(seed, Stream::Demands);
    let mut pairs: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut chosen = Vec::new();
    let mut attempts = 0;
    while chosen.len() < spec.demands {
        attempts += 1;
        if attempts > 1000 * spec.demands {
            return Err(SpecError("could not draw enough distinct demand pairs".into()));
        }
        let o = dem_rng.random_range(0..cells);
        let d = dem_rng.random_range(0..cells);
        if o == d || !pairs.insert((o, d)) {
            continue;
        }
        let users = sample(&mut dem_rng, spec.daily_users);
        chosen.push((o, d, users));
    }

    let mut origin_node: BTreeMap<usize, NodeId> = BTreeMap::new();
    let mut dest_node: BTreeMap<usize, NodeId> = BTreeMap::new();
    let mut demands = Vec::new();
    for &(o, d, users) in &chosen {
        let on = *origin_node.entry(o).or_insert_with(|| {
            let (x, y) = pos(o);
            let id = b.node(Layer::Origin, x, y, Some(region_of(o)));
            b.arc(id, walk[o], ArcKind::Switch, 0.0, 0.0);
            b.arc(id, bike[o], ArcKind::Switch, spec.bike_unlock_min, spec.bike_fare);
            b.arc(id, road[o], ArcKind::Switch, spec.amod_wait_min, spec.amod_base_fare);
            for &s in stations.get(&o).into_iter().flatten() {
                b.arc(id, s, ArcKind::Switch, spec.transit_wait_min, spec.transit_fare);
            }
            id
        });
        let dn = *dest_node.entry(d).or_insert_with(|| {
            let (x, y) = pos(d);
            let id = b.node(Layer::Destination, x, y, None);
            b.arc(walk[d], id, ArcKind::Switch, 0.0, 0.0);
            b.arc(bike[d], id, ArcKind::Switch, 0.0, 0.0);
            b.arc(road[d], id, ArcKind::Switch, 0.0, 0.0);
            for &s in stations.get(&d).into_iter().flatten() {
                b.arc(s, id, ArcKind::Switch, 0.0, 0.0);
            }
            id
        });
        demands.push(Demand {
            id: demands.len(),
            origin: on,
            destination: dn,
            rate: users / spec.operating_window_min,
            region: region_of(o),
            bike_capable: true,
        });
    }

    let threshold = spec.safety_threshold.unwrap_or(f64::INFINITY);
    let net = Network::new(threshold, b.nodes, b.arcs);
    let dem = DemandSet { regions, demands, operating_window_min: spec.operating_window_min };
    let shares: BTreeMap<RegionId, f64> =
        (0..n_regions).map(|r| (r as RegionId, spec.bike_incapable_share)).collect();
    Ok((net, split_by_bike_share(&dem, &shares)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::reachable_arc_set;

    #[test]
    fn smallest_city_is_valid_and_connected() {
        let spec = GridCitySpec { nx: 2, ny: 2, regions_x: 1, regions_y: 1, demands: 1, ..GridCitySpec::default() };
        let (net, dem) = generate_grid_city(&spec, 3).unwrap();
        assert!(validate_network(&net).is_empty());
        dem.check_against(&net).unwrap();
        for d in &dem.demands {
            assert!(!reachable_arc_set(&net, d.origin, d.destination, d.bike_capable).unwrap().is_empty());
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = GridCitySpec::default();
        let (n1, d1) = generate_grid_city(&spec, 11).unwrap();
        let (n2, d2) = generate_grid_city(&spec, 11).unwrap();
        assert_eq!(n1.to_json(), n2.to_json());
        assert_eq!(d1.to_json(), d2.to_json());
        let (n3, _) = generate_grid_city(&spec, 12).unwrap();
        assert_ne!(n1.to_json(), n3.to_json());
    }

    #[test]
    fn default_cities_validate() {
        for seed in 0..5 {
            let (net, dem) = generate_grid_city(&GridCitySpec::default(), seed).unwrap();
            assert!(validate_network(&net).is_empty(), "seed {seed}");
            dem.check_against(&net).unwrap();
        }
    }

    #[test]
    fn bad_spec_is_rejected() {
        let spec = GridCitySpec { nx: 1, ny: 1, ..GridCitySpec::default() };
        assert!(generate_grid_city(&spec, 0).is_err());
        let spec = GridCitySpec { walk_time: [5.0, 1.0], ..GridCitySpec::default() };
        assert!(generate_grid_city(&spec, 0).is_err());
    }

    #[test]
    fn config_round_trip_and_validation() {
        let cfg = ScenarioConfig { fare_policy: FarePolicy::FreeTransit, ..ScenarioConfig::default() };
        assert_eq!(ScenarioConfig::from_json(&cfg.to_json()).unwrap().fare_policy, FarePolicy::FreeTransit);
        assert!(ScenarioConfig::from_json(r#"{"t_suff": 0}"#).is_err());
        assert!(ScenarioConfig::from_json(r#"{"bogus": 1}"#).is_err());
        assert!(ScenarioConfig::from_json(r#"{"fare_policy": "free-all"}"#).is_ok());
    }

    #[test]
    fn window_rescaling() {
        let (_, dem) = generate_grid_city(&GridCitySpec::tiny(), 0).unwrap();
        let cfg = ScenarioConfig { operating_window_min: Some(720.0), ..ScenarioConfig::default() };
        let out = apply_window(&dem, &cfg);
        assert!((out.total_rate() - 2.0 * dem.total_rate()).abs() < 1e-12);
    }
}
