use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use equiflow::assembler::{AssembleError, ObjectiveKind};
use equiflow::demand::{load_demand, DemandError, DemandSet};
use equiflow::netmodel::{reachable_arc_set, validate_network, Network};
use equiflow::scenarios::{
    analyse, generate_grid_city, load_saved, prepare_network, run_scenario, write_outputs, write_path_files,
    write_reports, FarePolicy, GridCitySpec, ScenarioConfig, ScenarioError,
};
use equiflow::solver::SolveStatus;

/// Intermodal mobility-on-demand planning under efficiency and
/// commute-sufficiency objectives.
///
/// Every JSON artifact carries "format": "equiflow/1". Every flag can also be
/// set through an EQUIFLOW_<FLAG> environment variable; a flag beats the
/// environment, which beats the config file, which beats the defaults.
///
/// Exit codes: 0 success, 1 invalid input or infeasible problem, 2 usage or
/// schema error, 3 internal failure.
#[derive(Parser)]
#[command(name = "equiflow", version, long_version = concat!(env!("CARGO_PKG_VERSION"), " (file format equiflow/1)"))]
struct Cli {
    /// Print solver progress on standard error.
    #[arg(short, long, global = true, env = "EQUIFLOW_VERBOSE")]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a network (and optionally a demand file) and list violations.
    Validate {
        #[arg(long, env = "EQUIFLOW_NETWORK")]
        network: PathBuf,
        #[arg(long, env = "EQUIFLOW_DEMAND")]
        demand: Option<PathBuf>,
    },
    /// Write a synthetic grid city: network.json, demand.json and spec.json.
    Generate {
        /// Grid spec JSON; omitted fields take their defaults.
        #[arg(long, env = "EQUIFLOW_SPEC")]
        spec: Option<PathBuf>,
        #[arg(long, env = "EQUIFLOW_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long, env = "EQUIFLOW_OUT")]
        out: PathBuf,
    },
    /// Solve one scenario and write all artifacts to --out.
    Solve {
        #[arg(long, env = "EQUIFLOW_NETWORK")]
        network: PathBuf,
        #[arg(long, env = "EQUIFLOW_DEMAND")]
        demand: PathBuf,
        #[arg(long, env = "EQUIFLOW_CONFIG")]
        config: Option<PathBuf>,
        #[arg(long, env = "EQUIFLOW_OBJECTIVE", value_enum)]
        objective: Objective,
        #[arg(long, env = "EQUIFLOW_OUT")]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Rewrite paths.csv and cycles.csv of a solved scenario directory.
    Decompose {
        #[arg(long, env = "EQUIFLOW_SOLUTION")]
        solution: PathBuf,
    },
    /// Regenerate every derived file of a solved scenario directory.
    Report {
        #[arg(long, env = "EQUIFLOW_SOLUTION")]
        solution: PathBuf,
    },
    /// Solve every config in --config-dir under each objective and write
    /// <out>/<config>/<objective>/ plus <out>/summary.csv.
    Batch {
        /// Directory of ScenarioConfig JSON files. network.json and
        /// demand.json found there are used unless --network/--demand are given.
        #[arg(long, env = "EQUIFLOW_CONFIG_DIR")]
        config_dir: PathBuf,
        #[arg(long, env = "EQUIFLOW_NETWORK")]
        network: Option<PathBuf>,
        #[arg(long, env = "EQUIFLOW_DEMAND")]
        demand: Option<PathBuf>,
        #[arg(long, env = "EQUIFLOW_OUT")]
        out: PathBuf,
        /// Worker threads; defaults to the number of logical cores.
        #[arg(long, env = "EQUIFLOW_JOBS")]
        jobs: Option<usize>,
        /// Objectives to run; both by default.
        #[arg(long, env = "EQUIFLOW_OBJECTIVE", value_enum, value_delimiter = ',')]
        objective: Vec<Objective>,
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Objective {
    UtilEff,
    CommSuff,
}

impl From<Objective> for ObjectiveKind {
    fn from(o: Objective) -> Self {
        match o {
            Objective::UtilEff => ObjectiveKind::UtilEff,
            Objective::CommSuff => ObjectiveKind::CommSuff,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Fares {
    Nominal,
    FreeTransit,
    FreeAll,
}

/// Config fields that can be set from the command line.
#[derive(Args, Clone)]
struct Overrides {
    #[arg(long, env = "EQUIFLOW_T_SUFF")]
    t_suff: Option<f64>,
    #[arg(long, env = "EQUIFLOW_N_AMOD_MAX")]
    n_amod_max: Option<f64>,
    #[arg(long, env = "EQUIFLOW_GAMMA_R")]
    gamma_r: Option<f64>,
    #[arg(long, env = "EQUIFLOW_GAMMA_TIME")]
    gamma_time: Option<f64>,
    #[arg(long, env = "EQUIFLOW_SAFETY_THRESHOLD")]
    safety_threshold: Option<f64>,
    #[arg(long, env = "EQUIFLOW_BUDGET_ENABLED")]
    budget_enabled: Option<bool>,
    #[arg(long, env = "EQUIFLOW_FARE_POLICY", value_enum)]
    fare_policy: Option<Fares>,
    #[arg(long, env = "EQUIFLOW_OPERATING_WINDOW_MIN")]
    operating_window_min: Option<f64>,
}

impl Overrides {
    fn apply(&self, cfg: &mut ScenarioConfig) {
        if let Some(v) = self.t_suff {
            cfg.t_suff = v;
        }
        if let Some(v) = self.n_amod_max {
            cfg.n_amod_max = v;
        }
        if let Some(v) = self.gamma_r {
            cfg.gamma_r = v;
        }
        if let Some(v) = self.gamma_time {
            cfg.gamma_time = v;
        }
        if let Some(v) = self.safety_threshold {
            cfg.safety_threshold = Some(v);
        }
        if let Some(v) = self.budget_enabled {
            cfg.budget_enabled = v;
        }
        if let Some(v) = self.fare_policy {
            cfg.fare_policy = match v {
                Fares::Nominal => FarePolicy::Nominal,
                Fares::FreeTransit => FarePolicy::FreeTransit,
                Fares::FreeAll => FarePolicy::FreeAll,
            };
        }
        if let Some(v) = self.operating_window_min {
            cfg.operating_window_min = Some(v);
        }
    }
}

/// A failure with its exit code.
#[derive(Debug)]
enum Failure {
    Invalid(String),
    Usage(String),
    Internal(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Internal(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Invalid(m) | Failure::Usage(m) | Failure::Internal(m) => m,
        }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        let msg = e.to_string();
        match e {
            ScenarioError::Config(_) | ScenarioError::Demand(DemandError::Schema(_)) => Failure::Usage(msg),
            ScenarioError::Assemble(AssembleError::Config(_)) => Failure::Usage(msg),
            ScenarioError::Network(_) | ScenarioError::Demand(_) | ScenarioError::Assemble(_) => {
                Failure::Invalid(msg)
            }
            ScenarioError::NotOptimal { status, .. } => match status {
                SolveStatus::Infeasible | SolveStatus::Unbounded => Failure::Invalid(msg),
                _ => Failure::Internal(msg),
            },
            ScenarioError::Paths(_) => Failure::Invalid(msg),
            ScenarioError::Io(_) => Failure::Internal(msg),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { log::LevelFilter::Debug } else { log::LevelFilter::Warn };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Validate { network, demand } => validate(&network, demand.as_deref()),
        Command::Generate { spec, seed, out } => generate(spec.as_deref(), seed, &out),
        Command::Solve { network, demand, config, objective, out, overrides } => {
            let net = read_network(&network)?;
            let dem = read_demand(&demand)?;
            let cfg = read_config(config.as_deref(), &overrides)?;
            solve_one(&net, &dem, &cfg, objective.into(), &out)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Decompose { solution } => {
            let saved = load_saved(&solution)?;
            let (_, paths) = analyse(&saved.solution, &saved.network, &saved.demand, &saved.config)?;
            write_path_files(&solution, &paths)?;
            let n_paths: usize = paths.demands.iter().map(|d| d.paths.len()).sum();
            let n_cycles: usize = paths.demands.iter().map(|d| d.cycles.len()).sum();
            println!("{n_paths} paths, {n_cycles} cycles");
            Ok(())
        }
        Command::Report { solution } => {
            let saved = load_saved(&solution)?;
            let (report, paths) = analyse(&saved.solution, &saved.network, &saved.demand, &saved.config)?;
            write_reports(&solution, &saved.config, &saved.network, &saved.solution, &report, &paths)?;
            println!(
                "avg_travel_time {} commute_insufficiency {}",
                equiflow::round_sig(report.avg_travel_time),
                equiflow::round_sig(report.commute_insufficiency)
            );
            Ok(())
        }
        Command::Batch { config_dir, network, demand, out, jobs, objective, overrides } => {
            batch(&config_dir, network, demand, &out, jobs, objective, &overrides)
        }
    }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn read_network(path: &Path) -> Result<Network, Failure> {
    Network::from_json(&read_text(path)?).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn read_demand(path: &Path) -> Result<DemandSet, Failure> {
    load_demand(&read_text(path)?).map_err(|e| match e {
        DemandError::Schema(_) => Failure::Usage(format!("{}: {e}", path.display())),
        _ => Failure::Invalid(format!("{}: {e}", path.display())),
    })
}

fn read_config(path: Option<&Path>, overrides: &Overrides) -> Result<ScenarioConfig, Failure> {
    let mut cfg = match path {
        Some(p) => ScenarioConfig::from_json(&read_text(p)?)
            .map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?,
        None => ScenarioConfig::default(),
    };
    overrides.apply(&mut cfg);
    cfg.validate().map_err(Failure::Usage)?;
    Ok(cfg)
}

fn validate(network: &Path, demand: Option<&Path>) -> Result<(), Failure> {
    let net = read_network(network)?;
    let mut problems: Vec<String> = validate_network(&net).iter().map(|v| v.to_string()).collect();
    if let Some(path) = demand {
        let dem = read_demand(path)?;
        if problems.is_empty() {
            let pruned = prepare_network(&net, &ScenarioConfig::default());
            match dem.check_against(&pruned) {
                Err(e) => problems.push(e.to_string()),
                Ok(()) => {
                    for d in &dem.demands {
                        if let Err(e) = reachable_arc_set(&pruned, d.origin, d.destination, d.bike_capable) {
                            problems.push(format!("demand {}: {e}", d.id));
                        }
                    }
                }
            }
        }
    }
    for p in &problems {
        println!("{p}");
    }
    if problems.is_empty() {
        println!("ok");
        Ok(())
    } else {
        Err(Failure::Invalid(format!("{} violation(s)", problems.len())))
    }
}

fn generate(spec: Option<&Path>, seed: u64, out: &Path) -> Result<(), Failure> {
    let spec: GridCitySpec = match spec {
        Some(p) => serde_json::from_str(&read_text(p)?).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?,
        None => GridCitySpec::default(),
    };
    let (net, dem) = generate_grid_city(&spec, seed).map_err(|e| Failure::Usage(e.to_string()))?;
    let write = |name: &str, text: String| {
        fs::write(out.join(name), text).map_err(|e| Failure::Internal(format!("{name}: {e}")))
    };
    fs::create_dir_all(out).map_err(|e| Failure::Internal(format!("{}: {e}", out.display())))?;
    write("network.json", net.to_json())?;
    write("demand.json", dem.to_json())?;
    write("spec.json", serde_json::to_string_pretty(&spec).expect("spec serializes"))?;
    println!("{} nodes, {} arcs, {} demands", net.nodes().len(), net.arcs().len(), dem.demands.len());
    Ok(())
}

/// Runs one scenario. On a solver failure the log is still written so the
/// directory records what happened.
fn solve_one(net: &Network, dem: &DemandSet, cfg: &ScenarioConfig, kind: ObjectiveKind, out: &Path) -> Result<(), Failure> {
    match run_scenario(net, dem, cfg, kind) {
        Ok(outcome) => Ok(write_outputs(out, cfg, &outcome)?),
        Err(e) => {
            if let ScenarioError::NotOptimal { log, .. } = &e {
                let _ = fs::create_dir_all(out).and_then(|_| fs::write(out.join("solve_log.txt"), log));
            }
            Err(e.into())
        }
    }
}

struct Job {
    name: String,
    config: ScenarioConfig,
    kind: ObjectiveKind,
}

fn batch(
    config_dir: &Path,
    network: Option<PathBuf>,
    demand: Option<PathBuf>,
    out: &Path,
    jobs: Option<usize>,
    objectives: Vec<Objective>,
    overrides: &Overrides,
) -> Result<(), Failure> {
    let net = read_network(&network.unwrap_or_else(|| config_dir.join("network.json")))?;
    let dem = read_demand(&demand.unwrap_or_else(|| config_dir.join("demand.json")))?;
    let kinds: Vec<ObjectiveKind> = if objectives.is_empty() {
        vec![ObjectiveKind::UtilEff, ObjectiveKind::CommSuff]
    } else {
        objectives.into_iter().map(Into::into).collect()
    };

    let entries = fs::read_dir(config_dir).map_err(|e| Failure::Usage(format!("{}: {e}", config_dir.display())))?;
    let mut configs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .filter(|p| !matches!(p.file_name().and_then(|n| n.to_str()), Some("network.json" | "demand.json")))
        .collect();
    configs.sort();
    if configs.is_empty() {
        return Err(Failure::Usage(format!("no config files in {}", config_dir.display())));
    }
    let mut work = Vec::new();
    for path in &configs {
        let config = read_config(Some(path), overrides)?;
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("scenario").to_string();
        for &kind in &kinds {
            work.push(Job { name: name.clone(), config: config.clone(), kind });
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Failure::Internal(e.to_string()))?;
    let results: Vec<Result<equiflow::metrics::MetricsReport, Failure>> = pool.install(|| {
        work.par_iter()
            .map(|job| {
                let dir = out.join(&job.name).join(job.kind.as_str());
                let outcome = run_scenario(&net, &dem, &job.config, job.kind).map_err(Failure::from);
                match outcome {
                    Ok(o) => {
                        write_outputs(&dir, &job.config, &o)?;
                        Ok(o.metrics)
                    }
                    Err(f) => {
                        let _ = fs::create_dir_all(&dir).and_then(|_| fs::write(dir.join("error.txt"), f.message()));
                        Err(f)
                    }
                }
            })
            .collect()
    });

    fs::create_dir_all(out).map_err(|e| Failure::Internal(format!("{}: {e}", out.display())))?;
    let mut summary = csv::Writer::from_path(out.join("summary.csv")).map_err(|e| Failure::Internal(e.to_string()))?;
    let csv_err = |e: csv::Error| Failure::Internal(e.to_string());
    summary
        .write_record(["scenario", "objective", "status", "avg_travel_time", "commute_insufficiency", "util_eff_objective"])
        .map_err(csv_err)?;
    let mut worst: Option<Failure> = None;
    for (job, result) in work.iter().zip(results) {
        let row = match &result {
            Ok(m) => vec![
                job.name.clone(),
                job.kind.as_str().to_string(),
                "optimal".to_string(),
                equiflow::round_sig(m.avg_travel_time).to_string(),
                equiflow::round_sig(m.commute_insufficiency).to_string(),
                equiflow::round_sig(m.util_eff_objective(job.config.gamma_r)).to_string(),
            ],
            Err(f) => vec![
                job.name.clone(),
                job.kind.as_str().to_string(),
                format!("failed ({})", f.message()),
                String::new(),
                String::new(),
                String::new(),
            ],
        };
        summary.write_record(&row).map_err(csv_err)?;
        if let Err(f) = result {
            eprintln!("{} {}: {}", job.name, job.kind.as_str(), f.message());
            if worst.as_ref().is_none_or(|w| f.code() > w.code()) {
                worst = Some(f);
            }
        }
    }
    summary.flush().map_err(|e| Failure::Internal(e.to_string()))?;
    println!("{} scenario run(s), summary in {}", work.len(), out.join("summary.csv").display());
    match worst {
        None => Ok(()),
        Some(f) => Err(f),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn version_names_the_file_format() {
        let cmd = Cli::command();
        assert!(cmd.get_long_version().unwrap().contains(equiflow::FORMAT_VERSION));
    }
}
