//! Command-line front end: validate a network case, search for sensor
//! placements, evaluate a placement's outage detection performance, and
//! sweep sensor budgets.
//!
//! Conventions:
//! - machine-readable results go to standard out or `--out*` files; progress
//!   and warnings go to standard error;
//! - a single `--seed` drives every random choice, and a rerun with
//!   identical flags produces byte-identical outputs at any `--jobs`
//!   setting;
//! - exit codes: 0 success, 1 usage error, 2 input error, 3 numerical
//!   failure.

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use pmuopt_core::{
    branch_label, bridge_lines, evaluate_placement, exhaustive_search, ga_optimize, heatmap_csv,
    heatmap_json, is_connected, parse_case, sample_angle_prior, sig6, sig6_string,
    strategy_degree, strategy_scattered, strategy_tree, sweep_json, sweep_pmu_count, EvalConfig,
    EvalError, GaConfig, Network, OperatingPoint, Placement, PlacementError, RandomStream,
    DEFAULT_SAMPLE_COUNT,
};
use serde::Serialize;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

/// Substream ids reserved by the front end. The evaluation harness draws its
/// Monte Carlo replications from substream 10 internally, and the sensor-count
/// sweep samples its objective prior from substream 30; `optimize` reuses 30
/// so that `optimize --pmus K` and the count-K entry of `sweep` agree for the
/// same seed.
const STREAM_OBJECTIVE_SAMPLES: u64 = 30;
const STREAM_SCATTERED: u64 = 40;
const STREAM_TREE: u64 = 41;

/// Sensor placement and line-outage detection for power transmission networks.
#[derive(Parser)]
#[command(name = "pmuopt", version, arg_required_else_help = true)]
struct RunConfig {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse a case file and summarize the network
    Validate(ValidateArgs),
    /// Search for a sensor placement minimizing the observability objective
    Optimize(OptimizeArgs),
    /// Monte Carlo evaluation of a placement's outage detection performance
    Evaluate(EvaluateArgs),
    /// Optimize at several sensor budgets and report the objective trend
    Sweep(SweepArgs),
}

#[derive(Args)]
struct Common {
    /// Network case file
    #[arg(long, env = "PMUOPT_CASE", value_name = "PATH")]
    case: PathBuf,
    /// Master seed behind every random choice
    #[arg(long, env = "PMUOPT_SEED", default_value_t = 0)]
    seed: u64,
    /// Worker thread count (0 means all available cores)
    #[arg(long, env = "PMUOPT_JOBS", default_value_t = 0)]
    jobs: usize,
}

#[derive(Args)]
struct ValidateArgs {
    /// Network case file
    #[arg(long, env = "PMUOPT_CASE", value_name = "PATH")]
    case: PathBuf,
}

#[derive(Args)]
struct GaArgs {
    /// Genetic search generations
    #[arg(long, env = "PMUOPT_GENERATIONS", default_value_t = GaConfig::default().generations)]
    generations: usize,
    /// Population size (the initial population matches it)
    #[arg(long, env = "PMUOPT_POPULATION", default_value_t = GaConfig::default().population)]
    population: usize,
    /// Per-individual mutation probability
    #[arg(long, env = "PMUOPT_MUTATE_PROB", default_value_t = GaConfig::default().mutate_prob)]
    mutate_prob: f64,
    /// Per-pair swap probability within one mutation
    #[arg(long, env = "PMUOPT_SHUFFLE_PROB", default_value_t = GaConfig::default().shuffle_prob)]
    shuffle_prob: f64,
    /// Tournament size for parent selection
    #[arg(long, env = "PMUOPT_TOURNAMENT", default_value_t = GaConfig::default().tournament_size)]
    tournament: usize,
    /// Probability that a parent pair is recombined (0 keeps the search mutation-only)
    #[arg(long, env = "PMUOPT_CROSSOVER_PROB", default_value_t = GaConfig::default().crossover_prob)]
    crossover_prob: f64,
}

impl GaArgs {
    fn validate(&self) -> Result<(), Failure> {
        if self.generations < 1 {
            return Err(Failure::Usage("--generations must be at least 1".into()));
        }
        if self.population < 1 {
            return Err(Failure::Usage("--population must be at least 1".into()));
        }
        if self.tournament < 1 {
            return Err(Failure::Usage("--tournament must be at least 1".into()));
        }
        for (name, p) in [
            ("--mutate-prob", self.mutate_prob),
            ("--shuffle-prob", self.shuffle_prob),
            ("--crossover-prob", self.crossover_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Failure::Usage(format!("{name} must lie in [0, 1]")));
            }
        }
        Ok(())
    }

    fn to_config(&self, seed: u64) -> GaConfig {
        GaConfig {
            generations: self.generations,
            population: self.population,
            initial_count: self.population,
            mutate_prob: self.mutate_prob,
            shuffle_prob: self.shuffle_prob,
            tournament_size: self.tournament,
            crossover_prob: self.crossover_prob,
            seed,
        }
    }
}

#[derive(Args)]
struct OptimizeArgs {
    #[command(flatten)]
    common: Common,
    /// Sensor budget
    #[arg(long, env = "PMUOPT_PMUS")]
    pmus: usize,
    /// Angular spread (radians) of the objective's operating-point prior
    #[arg(long, env = "PMUOPT_SPREAD", default_value_t = EvalConfig::default().spread)]
    spread: f64,
    /// Operating-point samples behind the objective
    #[arg(long, env = "PMUOPT_SAMPLES", default_value_t = DEFAULT_SAMPLE_COUNT)]
    samples: usize,
    #[command(flatten)]
    ga: GaArgs,
    /// Also run the exhaustive-search oracle and report agreement
    #[arg(long)]
    exhaustive: bool,
    /// Write the JSON result here instead of standard out
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Strategy {
    Scattered,
    Tree,
    Degree,
    Ga,
    Full,
}

#[derive(Args)]
#[command(group(clap::ArgGroup::new("target").required(true).args(["placement", "strategy"])))]
struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated bus ids hosting sensors
    #[arg(long, value_delimiter = ',', value_name = "IDS", conflicts_with = "pmus")]
    placement: Option<Vec<u32>>,
    /// Named placement strategy
    #[arg(long, value_enum, value_name = "NAME")]
    strategy: Option<Strategy>,
    /// Sensor budget for --strategy (full ignores it)
    #[arg(long, env = "PMUOPT_PMUS")]
    pmus: Option<usize>,
    /// Monte Carlo replications per outage line
    #[arg(long, env = "PMUOPT_REPLICATIONS", default_value_t = EvalConfig::default().replications)]
    replications: usize,
    /// Pre-outage samples per replication
    #[arg(long, env = "PMUOPT_PRE", default_value_t = EvalConfig::default().pre_outage_samples)]
    pre: usize,
    /// Post-outage samples per replication
    #[arg(long, env = "PMUOPT_HORIZON", default_value_t = EvalConfig::default().post_outage_horizon)]
    horizon: usize,
    /// Per-unit scale sigma of the steady-state angle fluctuations
    #[arg(long, env = "PMUOPT_SIGMA", default_value_t = EvalConfig::default().sigma)]
    sigma: f64,
    /// Sampling interval in seconds
    #[arg(long, env = "PMUOPT_DT", default_value_t = EvalConfig::default().dt)]
    dt: f64,
    /// Target average run length to a false alarm
    #[arg(long, env = "PMUOPT_ARL0", default_value_t = EvalConfig::default().arl0)]
    arl0: f64,
    /// Angular spread (radians) of the objective's prior (ga strategy only)
    #[arg(long, env = "PMUOPT_SPREAD", default_value_t = EvalConfig::default().spread)]
    spread: f64,
    /// Operating-point samples behind the objective (ga strategy only)
    #[arg(long, env = "PMUOPT_SAMPLES", default_value_t = DEFAULT_SAMPLE_COUNT)]
    samples: usize,
    #[command(flatten)]
    ga: GaArgs,
    /// Write the JSON report here instead of standard out
    #[arg(long, value_name = "PATH")]
    out_json: Option<PathBuf>,
    /// Also write the top-3 heatmap as CSV here
    #[arg(long, value_name = "PATH")]
    out_csv: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Sensor counts to sweep
    #[arg(long, value_delimiter = ',', env = "PMUOPT_COUNTS",
          default_values_t = [10_usize, 15, 20, 25, 30])]
    counts: Vec<usize>,
    /// Angular spread (radians) of the objective's operating-point prior
    #[arg(long, env = "PMUOPT_SPREAD", default_value_t = EvalConfig::default().spread)]
    spread: f64,
    #[command(flatten)]
    ga: GaArgs,
    /// Write the JSON result here instead of standard out
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

/// A failed run, classified for the exit code.
#[derive(Debug)]
enum Failure {
    /// Parameter combinations the flags themselves rule out (exit 1).
    Usage(String),
    /// Unreadable, unparsable, or out-of-range inputs (exit 2).
    Input(String),
    /// Numerical breakdown during computation (exit 3).
    Numerical(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Input(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Input(m) | Failure::Numerical(m) => m,
        }
    }
}

impl From<PlacementError> for Failure {
    fn from(e: PlacementError) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Placement(p) => Failure::Input(p.to_string()),
            other => Failure::Numerical(other.to_string()),
        }
    }
}

#[derive(Serialize)]
struct ExhaustiveOutput {
    bus_ids: Vec<u32>,
    delta: f64,
    agrees: bool,
}

#[derive(Serialize)]
struct OptimizeOutput {
    buses: usize,
    pmus: usize,
    bus_ids: Vec<u32>,
    delta: f64,
    history: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    exhaustive: Option<ExhaustiveOutput>,
}

fn main() -> ExitCode {
    let cli = match RunConfig::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let requested = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let _ = e.print();
            return if requested { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    let result = match cli.command {
        Cmd::Validate(a) => cmd_validate(a),
        Cmd::Optimize(a) => cmd_optimize(a),
        Cmd::Evaluate(a) => cmd_evaluate(a),
        Cmd::Sweep(a) => cmd_sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}

fn cmd_validate(a: ValidateArgs) -> Result<(), Failure> {
    let net = load_case(&a.case)?;
    let connected = is_connected(&net);
    let bridges = bridge_lines(&net);
    let mut out = String::new();
    writeln!(out, "{} buses, {} branches", net.n_buses(), net.n_branches()).unwrap();
    writeln!(out, "slack bus {}", net.reference).unwrap();
    writeln!(out, "connected: {}", if connected { "yes" } else { "no" }).unwrap();
    if bridges.is_empty() {
        writeln!(out, "bridge lines: none").unwrap();
    } else {
        let labels: Vec<String> = bridges.iter().map(|&l| branch_label(&net, l)).collect();
        writeln!(out, "bridge lines: {}", labels.join(" ")).unwrap();
    }
    if !connected {
        eprintln!("warning: the network is not connected");
    }
    emit(None, &out)
}

fn cmd_optimize(a: OptimizeArgs) -> Result<(), Failure> {
    a.ga.validate()?;
    check_prior(a.spread, a.samples)?;
    init_jobs(a.common.jobs)?;
    let net = load_case(&a.common.case)?;
    check_budget(&net, a.pmus)?;
    let base = net.base_point();
    let samples = sample_angle_prior(
        &net,
        &base,
        a.spread,
        a.samples,
        RandomStream::new(a.common.seed).substream(STREAM_OBJECTIVE_SAMPLES),
    );
    let ga_cfg = a.ga.to_config(a.common.seed);
    eprintln!(
        "optimizing a {}-sensor placement on {} buses: {} generations, population {}, {} samples",
        a.pmus,
        net.n_buses(),
        ga_cfg.generations,
        ga_cfg.population,
        a.samples
    );
    let run = ga_optimize(&net, &base, &samples, a.pmus, &ga_cfg);
    eprintln!(
        "best objective {} at buses {:?}",
        sig6_string(run.delta),
        run.best.to_bus_ids(&net)
    );
    let exhaustive = if a.exhaustive {
        let (placement, delta) = exhaustive_search(&net, &base, &samples, a.pmus)?;
        let agrees = sig6(run.delta) == sig6(delta);
        eprintln!(
            "exhaustive optimum {}; the genetic search {} it",
            sig6_string(delta),
            if agrees { "matches" } else { "does NOT match" }
        );
        Some(ExhaustiveOutput {
            bus_ids: placement.to_bus_ids(&net),
            delta: sig6(delta),
            agrees,
        })
    } else {
        None
    };
    let out = OptimizeOutput {
        buses: net.n_buses(),
        pmus: a.pmus,
        bus_ids: run.best.to_bus_ids(&net),
        delta: sig6(run.delta),
        history: run.history.iter().map(|&v| sig6(v)).collect(),
        exhaustive,
    };
    emit(a.out.as_ref(), &to_pretty_json(&out))
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<(), Failure> {
    if a.replications < 1 {
        return Err(Failure::Usage("--replications must be at least 1".into()));
    }
    if a.pre < 1 || a.horizon < 1 {
        return Err(Failure::Usage("--pre and --horizon must be at least 1".into()));
    }
    check_positive(a.sigma, "--sigma")?;
    check_positive(a.dt, "--dt")?;
    check_positive(a.arl0, "--arl0")?;
    check_prior(a.spread, a.samples)?;
    a.ga.validate()?;
    init_jobs(a.common.jobs)?;
    let net = load_case(&a.common.case)?;
    let base = net.base_point();
    let placement = resolve_target(&a, &net, &base)?;
    eprintln!(
        "sensors at buses {:?}",
        placement.to_bus_ids(&net)
    );
    let cfg = EvalConfig {
        replications: a.replications,
        pre_outage_samples: a.pre,
        post_outage_horizon: a.horizon,
        sigma: a.sigma,
        dt: a.dt,
        arl0: a.arl0,
        spread: a.spread,
        seed: a.common.seed,
    };
    eprintln!(
        "evaluating {} sensors on {} buses: {} replications per outage line",
        placement.n_p(),
        net.n_buses(),
        cfg.replications
    );
    let report = evaluate_placement(&net, &base, &placement, &cfg)?;
    if report.lines.is_empty() {
        eprintln!("warning: no evaluable outage scenarios (every line is a bridge)");
    } else {
        eprintln!(
            "{} scenario lines, threshold {:.4}: mean detection rate {:.3}, mean top-3 accuracy {:.3}",
            report.lines.len(),
            report.threshold,
            mean(&report.detection_rate),
            mean(&report.top3_accuracy)
        );
    }
    if let Some(path) = &a.out_csv {
        write_file(path, &heatmap_csv(&report))?;
    }
    emit(a.out_json.as_ref(), &heatmap_json(&report))
}

fn cmd_sweep(a: SweepArgs) -> Result<(), Failure> {
    if a.counts.is_empty() {
        return Err(Failure::Usage("--counts needs at least one sensor count".into()));
    }
    if a.spread < 0.0 {
        return Err(Failure::Usage("--spread must be non-negative".into()));
    }
    a.ga.validate()?;
    init_jobs(a.common.jobs)?;
    let net = load_case(&a.common.case)?;
    for &count in &a.counts {
        check_budget(&net, count)?;
    }
    let base = net.base_point();
    let cfg = EvalConfig {
        spread: a.spread,
        seed: a.common.seed,
        ..EvalConfig::default()
    };
    eprintln!(
        "sweeping sensor counts {:?} on {} buses: {} generations, population {}",
        a.counts,
        net.n_buses(),
        a.ga.generations,
        a.ga.population
    );
    let report = sweep_pmu_count(&net, &base, &a.counts, &cfg, &a.ga.to_config(a.common.seed))?;
    for (i, &count) in report.counts.iter().enumerate() {
        eprintln!(
            "  {} sensors: best objective {}",
            count,
            sig6_string(report.best_delta[i])
        );
    }
    emit(a.out.as_ref(), &sweep_json(&report))
}

/// Turn `--placement`/`--strategy` into a concrete placement. clap's argument
/// group guarantees exactly one of the two is present.
fn resolve_target(
    a: &EvaluateArgs,
    net: &Network,
    base: &OperatingPoint,
) -> Result<Placement, Failure> {
    if let Some(ids) = &a.placement {
        return Ok(Placement::from_bus_ids(net, ids)?);
    }
    let strategy = a.strategy.expect("clap guarantees one placement target");
    let budget = || -> Result<usize, Failure> {
        let n_p = a.pmus.ok_or_else(|| {
            Failure::Usage("--pmus is required with --strategy scattered|tree|degree|ga".into())
        })?;
        check_budget(net, n_p)?;
        Ok(n_p)
    };
    let placement = match strategy {
        Strategy::Full => Placement::all_ones(net.n_buses()),
        Strategy::Scattered => strategy_scattered(
            net,
            budget()?,
            RandomStream::new(a.common.seed).substream(STREAM_SCATTERED),
        ),
        Strategy::Tree => strategy_tree(
            net,
            budget()?,
            RandomStream::new(a.common.seed).substream(STREAM_TREE),
        )?,
        Strategy::Degree => strategy_degree(net, budget()?),
        Strategy::Ga => {
            let n_p = budget()?;
            let samples = sample_angle_prior(
                net,
                base,
                a.spread,
                a.samples,
                RandomStream::new(a.common.seed).substream(STREAM_OBJECTIVE_SAMPLES),
            );
            let run = ga_optimize(net, base, &samples, n_p, &a.ga.to_config(a.common.seed));
            eprintln!("genetic search objective {}", sig6_string(run.delta));
            run.best
        }
    };
    Ok(placement)
}

fn load_case(path: &PathBuf) -> Result<Network, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Input(format!("cannot read {}: {e}", path.display())))?;
    parse_case(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn check_budget(net: &Network, n_p: usize) -> Result<(), Failure> {
    if n_p == 0 {
        return Err(PlacementError::Empty.into());
    }
    if n_p > net.n_buses() {
        return Err(PlacementError::TooMany {
            n_p,
            n: net.n_buses(),
        }
        .into());
    }
    Ok(())
}

fn check_prior(spread: f64, samples: usize) -> Result<(), Failure> {
    if spread < 0.0 {
        return Err(Failure::Usage("--spread must be non-negative".into()));
    }
    if samples < 1 {
        return Err(Failure::Usage("--samples must be at least 1".into()));
    }
    Ok(())
}

fn check_positive(x: f64, flag: &str) -> Result<(), Failure> {
    if !(x > 0.0) {
        return Err(Failure::Usage(format!("{flag} must be positive")));
    }
    Ok(())
}

fn init_jobs(jobs: usize) -> Result<(), Failure> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
        .map_err(|e| Failure::Input(format!("cannot initialize worker threads (--jobs {jobs}): {e}")))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn to_pretty_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output serializes");
    s.push('\n');
    s
}

fn write_file(path: &PathBuf, content: &str) -> Result<(), Failure> {
    fs::write(path, content)
        .map_err(|e| Failure::Input(format!("cannot write {}: {e}", path.display())))
}

fn emit(path: Option<&PathBuf>, content: &str) -> Result<(), Failure> {
    match path {
        Some(p) => write_file(p, content),
        None => std::io::stdout()
            .write_all(content.as_bytes())
            .map_err(|e| Failure::Input(format!("cannot write to standard out: {e}"))),
    }
}
