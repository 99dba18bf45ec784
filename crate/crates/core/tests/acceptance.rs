//! Acceptance suite. Runs every criterion in sequence (the scale timing must
//! not share the machine with other solves) and writes one PASS/FAIL line per
//! criterion straight to stderr, bypassing the test harness capture.

mod common;

use std::fs;
use std::io::Write as _;
use std::process::Command;
use std::time::Instant;

use equiflow::assembler::{assemble, ConstraintFamily, ObjectiveKind, StandardProblem};
use equiflow::demand::DemandSet;
use equiflow::metrics::{evaluate, MetricsReport};
use equiflow::netmodel::Network;
use equiflow::oracle::{brute_force_oracle, OracleError};
use equiflow::paths::decompose;
use equiflow::scenarios::{
    apply_window, generate_grid_city, prepare_network, run_scenario, FarePolicy, GridCitySpec, ScenarioConfig,
};
use equiflow::solution::FlowSolution;
use equiflow::solver::{solve, SolveStatus};

const KINDS: [ObjectiveKind; 2] = [ObjectiveKind::UtilEff, ObjectiveKind::CommSuff];

fn report(ok: bool, name: &str, detail: String) -> bool {
    let line = format!("{} {name}: {detail}\n", if ok { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    ok
}

/// Small cities with binding capacities, budgets and a mix of sufficient and
/// insufficient trips.
fn small_spec() -> GridCitySpec {
    GridCitySpec {
        nx: 4,
        ny: 4,
        demands: 6,
        road_flow_cap: Some(0.08),
        transit_capacity: Some(0.12),
        budget: [2.0, 6.0],
        ..GridCitySpec::default()
    }
}

fn small_config() -> ScenarioConfig {
    ScenarioConfig { t_suff: 9.0, n_amod_max: 6.0, ..ScenarioConfig::default() }
}

struct Solved {
    net: Network,
    dem: DemandSet,
    problem: StandardProblem,
    x: Vec<f64>,
    solution: FlowSolution,
    metrics: MetricsReport,
}

/// Worst-case bookkeeping over every optimal solve in the suite.
#[derive(Default)]
struct Audit {
    solves: usize,
    non_optimal: Vec<String>,
    conservation: f64,
    inequality: f64,
    reconstruction: f64,
    shares: f64,
    decomposition_errors: Vec<String>,
}

impl Audit {
    fn solve(&mut self, net: &Network, dem: &DemandSet, cfg: &ScenarioConfig, kind: ObjectiveKind, label: &str) -> Option<Solved> {
        let net = prepare_network(net, cfg);
        let dem = apply_window(dem, cfg);
        let problem = assemble(&net, &dem, cfg, kind).expect("assembles");
        let result = solve(&problem, &cfg.solver);
        self.solves += 1;
        if result.status != SolveStatus::Optimal {
            self.non_optimal.push(format!("{label} {}: {}", kind.as_str(), result.status.as_str()));
            return None;
        }
        for family in [ConstraintFamily::Conservation, ConstraintFamily::AmodBalance] {
            for (_, r) in problem.equality_residuals(&result.x, family) {
                self.conservation = self.conservation.max(r.abs());
            }
        }
        for family in [ConstraintFamily::Fleet, ConstraintFamily::RoadCap, ConstraintFamily::TransitCap] {
            for (_, s) in problem.inequality_slacks(&result.x, family) {
                self.inequality = self.inequality.max(-s);
            }
        }
        let solution = FlowSolution::from_result(&problem, &result, &net, &dem, cfg.t_suff).rounded();
        match decompose(&solution, &net, &dem, cfg.solver.feasibility_tol) {
            Ok(paths) => {
                for (m, d) in dem.demands.iter().enumerate() {
                    let rebuilt = paths.reconstruct(m);
                    for f in &solution.flows[m] {
                        let r = rebuilt.get(&f.arc).copied().unwrap_or(0.0);
                        self.reconstruction = self.reconstruction.max((r - f.value).abs());
                    }
                    for (a, r) in &rebuilt {
                        if !solution.flows[m].iter().any(|f| f.arc == *a) {
                            self.reconstruction = self.reconstruction.max(r.abs());
                        }
                    }
                    let total: f64 = paths.demands[m].paths.iter().map(|p| p.share).sum();
                    self.shares = self.shares.max((total - d.rate).abs());
                }
            }
            Err(e) => self.decomposition_errors.push(format!("{label}: {e}")),
        }
        let metrics = evaluate(&solution, &dem, &net, cfg.t_suff);
        Some(Solved { net, dem, problem, x: result.x, solution, metrics })
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + b.abs())
}

fn oracle_equivalence() -> bool {
    let start = Instant::now();
    // A short threshold so that the quadratic part is active on tiny trips.
    let cfgs = [
        (ObjectiveKind::UtilEff, ScenarioConfig::default()),
        (ObjectiveKind::CommSuff, ScenarioConfig { t_suff: 4.0, ..ScenarioConfig::default() }),
    ];
    let (mut instances, mut active, mut worst) = (0, 0, 0.0f64);
    let mut failures = Vec::new();
    for seed in 0..400u64 {
        if instances >= 40 {
            break;
        }
        let (net, dem) = generate_grid_city(&GridCitySpec::tiny(), seed).unwrap();
        let mut values = Vec::new();
        for (kind, cfg) in &cfgs {
            let net = prepare_network(&net, cfg);
            match brute_force_oracle(&net, &dem, cfg, *kind) {
                Ok(v) => values.push((*kind, cfg, net, v)),
                Err(OracleError::TooLarge(_)) => break,
                Err(e) => panic!("seed {seed}: {e}"),
            }
        }
        if values.len() != cfgs.len() {
            continue;
        }
        instances += 1;
        for (kind, cfg, net, oracle) in values {
            let p = assemble(&net, &dem, cfg, kind).unwrap();
            let r = solve(&p, &cfg.solver);
            if r.status != SolveStatus::Optimal {
                failures.push(format!("seed {seed} {}: {}", kind.as_str(), r.status.as_str()));
                continue;
            }
            if kind == ObjectiveKind::CommSuff && (0..p.index.n_demands()).any(|m| p.index.slack(m).is_some_and(|c| r.x[c] > 1e-6)) {
                active += 1;
            }
            worst = worst.max(rel(r.objective, oracle));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = instances >= 25 && failures.is_empty() && worst <= 1e-5 && secs < 10.0;
    report(
        ok,
        "oracle equivalence",
        format!(
            "{instances} instances x 2 objectives ({active} with active insufficiency), worst rel diff {worst:.2e} (<= 1e-5), {secs:.2} s (< 10 s){}",
            if failures.is_empty() { String::new() } else { format!(", failures {failures:?}") }
        ),
    )
}

/// Checks the reported slacks against the flows, and that moving the raw
/// interior-point slacks onto `max(0, mean - T)` neither breaks a slack row
/// nor changes the optimum: the relaxation loses nothing.
fn losslessness(pool: &[(u64, Solved)], cfg: &ScenarioConfig) -> bool {
    let (mut worst, mut raw_dev, mut below, mut objective_shift) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let (mut checked, mut positive) = (0, 0);
    for (_, s) in pool.iter().filter(|(_, s)| s.problem.kind == ObjectiveKind::CommSuff) {
        let idx = &s.problem.index;
        let mut polished = s.x.clone();
        for m in 0..idx.n_demands() {
            let rate = s.dem.demands[m].rate;
            let time: f64 = s.solution.flows[m].iter().map(|f| s.net.arc(f.arc).time_min * f.value).sum();
            let exact = (time / rate - cfg.t_suff).max(0.0);
            worst = worst.max((s.solution.slack[m] - exact).abs());

            let col = idx.slack(m).unwrap();
            let raw_time: f64 = idx.demand_columns(m).zip(idx.demand_arcs(m)).map(|(c, &a)| s.net.arc(a).time_min * s.x[c]).sum();
            let raw_exact = (raw_time / rate - cfg.t_suff).max(0.0);
            raw_dev = raw_dev.max((s.x[col] - raw_exact).abs());
            below = below.max(raw_exact - s.x[col]);
            polished[col] = raw_exact;
            checked += 1;
            positive += (exact > 1e-6) as usize;
        }
        objective_shift = objective_shift.max(rel(s.problem.objective(&polished), s.problem.objective(&s.x)));
    }
    report(
        worst <= 1e-6 && below <= 1e-6 && objective_shift <= 1e-6 && positive > 0,
        "losslessness",
        format!(
            "{checked} demands ({positive} insufficient), worst |eps - max(0, mean - T)| {worst:.2e} min (<= 1e-6); \
             raw iterate: deviation {raw_dev:.2e}, shortfall {below:.2e} (<= 1e-6), objective shift {objective_shift:.2e} (<= 1e-6)"
        ),
    )
}

fn trade_off(pool: &[(u64, Solved)]) -> bool {
    let (mut time_gap, mut j_gap, mut pairs) = (f64::NEG_INFINITY, f64::NEG_INFINITY, 0);
    for (seed, eff) in pool.iter().filter(|(_, s)| s.problem.kind == ObjectiveKind::UtilEff) {
        let Some((_, suff)) = pool.iter().find(|(s2, s)| s2 == seed && s.problem.kind == ObjectiveKind::CommSuff) else {
            continue;
        };
        time_gap = time_gap.max(eff.metrics.avg_travel_time - suff.metrics.avg_travel_time);
        j_gap = j_gap.max(suff.metrics.commute_insufficiency - eff.metrics.commute_insufficiency);
        pairs += 1;
    }
    report(
        time_gap <= 1e-6 && j_gap <= 1e-6 && pairs > 0,
        "objective trade-off direction",
        format!(
            "{pairs} instances, max avg_time(eff) - avg_time(suff) {time_gap:.2e}, max J(suff) - J(eff) {j_gap:.2e} (both <= 1e-6)"
        ),
    )
}

fn policy_ordering(audit: &mut Audit, pool: &[(u64, Solved)], seeds: &[u64]) -> bool {
    let mut worst = f64::NEG_INFINITY;
    let mut checked = 0;
    let mut violations = Vec::new();
    for &seed in seeds {
        let (net, dem) = generate_grid_city(&small_spec(), seed).unwrap();
        let nominal = pool
            .iter()
            .find(|(s, x)| *s == seed && x.problem.kind == ObjectiveKind::CommSuff)
            .map(|(_, x)| x.metrics.commute_insufficiency);
        let mut j = |policy: FarePolicy| {
            let cfg = ScenarioConfig { fare_policy: policy, ..small_config() };
            audit.solve(&net, &dem, &cfg, ObjectiveKind::CommSuff, &format!("seed {seed} {policy:?}"))
                .map(|s| s.metrics.commute_insufficiency)
        };
        let (Some(free_all), Some(free_transit), Some(nominal)) = (j(FarePolicy::FreeAll), j(FarePolicy::FreeTransit), nominal) else {
            continue;
        };
        let gap = (free_all - free_transit).max(free_transit - nominal);
        if gap > 1e-6 {
            violations.push(format!("seed {seed}: {free_all:.9} / {free_transit:.9} / {nominal:.9}"));
        }
        worst = worst.max(gap);
        checked += 1;
    }
    report(
        checked >= 20 && worst <= 1e-6,
        "policy ordering",
        format!(
            "{checked} seeds, worst ordering gap {worst:.2e} (<= 1e-6){}",
            if violations.is_empty() { String::new() } else { format!("; violations (FreeAll / FreeTransit / Nominal) {violations:?}") }
        ),
    )
}

fn monotonicity(audit: &mut Audit, seeds: &[u64]) -> bool {
    let mut worst = f64::NEG_INFINITY;
    let mut comparisons = 0;
    for &seed in seeds {
        let (net, dem) = generate_grid_city(&small_spec(), seed).unwrap();
        for kind in KINDS {
            let mut objective = |cfg: ScenarioConfig, label: &str| {
                audit.solve(&net, &dem, &cfg, kind, &format!("seed {seed} {label}")).map(|s| s.solution.objective)
            };
            let base = objective(small_config(), "base");
            let free = objective(ScenarioConfig { budget_enabled: false, ..small_config() }, "no budget");
            if let (Some(b), Some(f)) = (base, free) {
                worst = worst.max((f - b) / (1.0 + b.abs()));
                comparisons += 1;
            }
            let mut previous: Option<f64> = None;
            for n in [0.0, 1.0, 3.0, 6.0, 240.0] {
                let v = objective(ScenarioConfig { n_amod_max: n, ..small_config() }, &format!("fleet {n}"));
                if let (Some(p), Some(v)) = (previous, v) {
                    worst = worst.max((v - p) / (1.0 + p.abs()));
                    comparisons += 1;
                }
                previous = v.or(previous);
            }
        }
    }
    report(
        worst <= 1e-6 && comparisons > 0,
        "constraint monotonicity",
        format!("{comparisons} relaxations (budget off, fleet 0 -> 240), worst relative increase {worst:.2e} (<= 1e-6)"),
    )
}

fn conservation(audit: &Audit) -> bool {
    let ok = audit.non_optimal.is_empty() && audit.conservation <= 1e-7 && audit.inequality <= 1e-7;
    report(
        ok,
        "conservation suite",
        format!(
            "{} solves, worst node residual {:.2e} (<= 1e-7), worst fleet/capacity slack deficit {:.2e} (<= 1e-7){}",
            audit.solves,
            audit.conservation,
            audit.inequality.max(0.0),
            if audit.non_optimal.is_empty() { String::new() } else { format!(", non-optimal {:?}", audit.non_optimal) }
        ),
    )
}

fn reconstruction(audit: &Audit) -> bool {
    let ok = audit.decomposition_errors.is_empty() && audit.reconstruction <= 1e-8 && audit.shares <= 1e-9;
    report(
        ok,
        "decomposition reconstruction",
        format!(
            "worst arc error {:.2e} (<= 1e-8), worst |sum shares - rate| {:.2e} (<= 1e-9){}",
            audit.reconstruction,
            audit.shares,
            if audit.decomposition_errors.is_empty() { String::new() } else { format!(", errors {:?}", audit.decomposition_errors) }
        ),
    )
}

fn hand_instance() -> bool {
    let (net, dem) = common::two_route(1.5);
    let mut values = Vec::new();
    for budget_enabled in [true, false] {
        let cfg = ScenarioConfig { t_suff: 20.0, budget_enabled, ..ScenarioConfig::default() };
        let eff = run_scenario(&net, &dem, &cfg, ObjectiveKind::UtilEff).expect("efficiency solve");
        let suff = run_scenario(&net, &dem, &cfg, ObjectiveKind::CommSuff).expect("sufficiency solve");
        values.push((eff.metrics.avg_travel_time, suff.metrics.commute_insufficiency));
    }
    let round2 = |v: f64| format!("{v:.2}");
    let ok = round2(values[0].0) == "20.00"
        && round2(values[0].1) == "0.00"
        && round2(values[1].0) == "10.00"
        && round2(values[1].1) == "0.00";
    report(
        ok,
        "hand-derived instance",
        format!(
            "budget: avg {:.2} min, insufficiency {:.2} min^2 (expect 20.00, 0.00); no budget: avg {:.2} min, insufficiency {:.2} min^2 (expect 10.00, 0.00)",
            values[0].0, values[0].1, values[1].0, values[1].1
        ),
    )
}

fn determinism() -> bool {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let bin = env!("CARGO_BIN_EXE_equiflow");
    let run = |args: &[&str]| Command::new(bin).args(args).current_dir(dir).output().expect("binary runs");
    assert!(run(&["generate", "--seed", "5", "--out", "."]).status.success());
    let mut same = true;
    let mut detail = Vec::new();
    for objective in ["util-eff", "comm-suff"] {
        let mut outputs = Vec::new();
        for out in ["first", "second"] {
            let target = format!("{out}-{objective}");
            let o = run(&["solve", "--network", "network.json", "--demand", "demand.json", "--objective", objective, "--out", &target]);
            if !o.status.success() {
                same = false;
                detail.push(format!("{objective} exit {:?}", o.status.code()));
                continue;
            }
            outputs.push(fs::read(dir.join(&target).join("metrics.json")).unwrap());
        }
        let equal = outputs.len() == 2 && outputs[0] == outputs[1];
        same &= equal;
        detail.push(format!("{objective} {}", if equal { "identical" } else { "differs" }));
    }
    report(same, "determinism", format!("metrics.json from two solve runs: {}", detail.join(", ")))
}

fn scale() -> bool {
    let spec = GridCitySpec { nx: 20, ny: 20, demands: 50, regions_x: 4, regions_y: 4, ..GridCitySpec::default() };
    let (net, dem) = generate_grid_city(&spec, 1).unwrap();
    let cfg = ScenarioConfig::default();
    let start = Instant::now();
    let mut detail = Vec::new();
    let mut optimal = true;
    for kind in KINDS {
        let t = Instant::now();
        let outcome = run_scenario(&net, &dem, &cfg, kind);
        optimal &= outcome.is_ok();
        detail.push(format!(
            "{} {} in {:.1} s",
            kind.as_str(),
            match &outcome {
                Ok(o) => format!("optimal ({} iterations)", o.solution.iterations),
                Err(e) => e.to_string(),
            },
            t.elapsed().as_secs_f64()
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    report(
        optimal && secs < 60.0,
        "scale check",
        format!(
            "20x20 grid, {} demands ({} commodities after the bike split): {}; total {secs:.1} s (< 60 s) on {threads} hardware thread(s)",
            spec.demands,
            split_count(&net, &dem, &cfg),
            detail.join(", ")
        ),
    )
}

fn split_count(net: &Network, dem: &DemandSet, cfg: &ScenarioConfig) -> usize {
    let net = prepare_network(net, cfg);
    assemble(&net, dem, cfg, ObjectiveKind::UtilEff).map(|p| p.index.n_demands()).unwrap_or(0)
}

#[test]
fn acceptance() {
    let mut results = Vec::new();
    results.push(("oracle equivalence", oracle_equivalence()));

    let cfg = small_config();
    let seeds: Vec<u64> = (0..20).collect();
    let mut audit = Audit::default();
    let mut pool = Vec::new();
    for &seed in &seeds {
        let (net, dem) = generate_grid_city(&small_spec(), seed).unwrap();
        for kind in KINDS {
            if let Some(s) = audit.solve(&net, &dem, &cfg, kind, &format!("seed {seed}")) {
                pool.push((seed, s));
            }
        }
    }
    results.push(("losslessness", losslessness(&pool, &cfg)));
    results.push(("objective trade-off direction", trade_off(&pool)));
    results.push(("policy ordering", policy_ordering(&mut audit, &pool, &seeds)));
    results.push(("constraint monotonicity", monotonicity(&mut audit, &seeds[..5])));
    results.push(("conservation suite", conservation(&audit)));
    results.push(("decomposition reconstruction", reconstruction(&audit)));
    results.push(("hand-derived instance", hand_instance()));
    results.push(("determinism", determinism()));
    results.push(("scale check", scale()));

    let failed: Vec<&str> = results.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
