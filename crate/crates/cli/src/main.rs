use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use p2p_trade::index::DecisionIndex;
use p2p_trade::io::{self, SolverDefaults};
use p2p_trade::model::constraint_residuals;
use p2p_trade::oracle::solve_centralized;
use p2p_trade::pricing::{build_price_problem, default_price_config, solve_no_trade_baseline, solve_prices, PricingOptions};
use p2p_trade::problem::SplitProblem;
use p2p_trade::scenario::CommunityScenario;
use p2p_trade::solver::{
    default_learning_rate, estimate_eta, iteration_bound, run, InnerSchedule, SolverConfig,
};
use p2p_trade::synth::perturb;
use p2p_trade::Error;

#[derive(Parser)]
#[command(name = "p2p-trade", version, about = "Decentralized scheduling and pricing for peer-to-peer energy communities")]
struct Cli {
    /// Repeat for more log output on stderr.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stage 1: decentralized social-cost minimization.
    Solve(SolveArgs),
    /// Like `solve`, always against the oracle, with per-round inner residuals.
    Trace(SolveArgs),
    /// Optimal schedule with peer trading disabled, and each prosumer's cost.
    Baseline(ScenarioArgs),
    /// Stage 2: peer prices for a stage-1 schedule.
    Price(PriceArgs),
    /// Checks a solution file against every constraint of the scenario.
    Validate(ValidateArgs),
    /// Worst-case iteration counts for given constants.
    Bound(BoundArgs),
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario document path or bundled name (`ieee13_p2p`).
    #[arg(long, default_value = "ieee13_p2p")]
    scenario: String,
    /// Perturb device parameters with this seed before solving.
    #[arg(long)]
    seed: Option<u64>,
    /// Relative half-width of the seeded perturbation.
    #[arg(long, default_value_t = 0.5, requires = "seed")]
    perturb: f64,
    #[arg(long, env = "P2P_TRADE_OUT_DIR", default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Reference {
    None,
    Oracle,
}

#[derive(Args)]
struct RunArgs {
    /// Learning-rate constant L; the step is 1/L. Defaults to the scenario's
    /// solver block, else four times the largest quadratic coefficient.
    #[arg(long, value_parser = positive)]
    learning_rate: Option<f64>,
    /// Inner averaging rounds per outer iteration [default: 100].
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    n_inner: Option<u64>,
    /// Outer gradient iterations [default: 100].
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    n_outer: Option<u64>,
    /// Grow the inner rounds as n_inner + ceil(c ln(k + 2)).
    #[arg(long, value_parser = nonnegative)]
    inner_log_c: Option<f64>,
    /// Stop early once max |X[k+1] - X[k]| falls to this (kW).
    #[arg(long, value_parser = positive)]
    outer_tol: Option<f64>,
    /// Settings of the published case study: 1/L = 100, 100 inner and 100
    /// outer iterations, zero start.
    #[arg(long, conflicts_with_all = ["learning_rate", "n_inner", "n_outer", "inner_log_c", "outer_tol"])]
    reproduce_paper: bool,
    /// Threads for the per-agent projections; output does not depend on it.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    workers: u64,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    run: RunArgs,
    /// Also solve centrally and report errors against that optimum.
    #[arg(long, value_enum, default_value_t = Reference::None)]
    reference: Reference,
    /// Write every delivered message to messages.log.
    #[arg(long)]
    message_log: bool,
}

#[derive(Args)]
struct PriceArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    run: RunArgs,
    /// Stage-1 schedule (solution CSV); the central optimum when omitted.
    #[arg(long)]
    solution: Option<PathBuf>,
    /// Drop benefit rows that no price in the band can satisfy.
    #[arg(long)]
    relax_benefit: bool,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long, default_value = "ieee13_p2p")]
    scenario: String,
    #[arg(long)]
    solution: PathBuf,
    /// Largest tolerated violation (kW or kWh).
    #[arg(long, default_value_t = 1e-6, value_parser = positive)]
    tol: f64,
}

#[derive(Args)]
struct BoundArgs {
    #[arg(long = "L", value_parser = positive)]
    l: f64,
    #[arg(long = "R0", value_parser = positive)]
    r0: f64,
    #[arg(long, value_parser = positive)]
    eps: f64,
    #[arg(long, default_value_t = 0.5)]
    eta: f64,
}

fn positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("`{s}` is not a positive number")),
    }
}

fn nonnegative(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("`{s}` is not a nonnegative number")),
    }
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: exit_code(&e),
            message: e.to_string(),
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Infeasible { .. } | Error::BenefitInfeasible { .. } => 4,
        Error::Round { source, .. } => exit_code(source),
        Error::IterationLimit { .. } | Error::Diverged { .. } | Error::Locality { .. } | Error::Oracle(_) => 3,
        _ => 2,
    }
}

type CliResult = Result<(), Failure>;

fn load(args: &ScenarioArgs) -> Result<(CommunityScenario, SolverDefaults), Failure> {
    let (mut sc, defaults) = io::load_named_or_path(&args.scenario)?;
    if let Some(seed) = args.seed {
        sc = perturb(&sc, args.perturb, seed);
        sc.validate()?;
        info!("perturbed device parameters by up to {} with seed {seed}", args.perturb);
    }
    Ok((sc, defaults))
}

fn out_dir(args: &ScenarioArgs) -> Result<&Path, Failure> {
    fs::create_dir_all(&args.out_dir).map_err(|e| Failure {
        code: 2,
        message: format!("cannot create {}: {e}", args.out_dir.display()),
    })?;
    Ok(&args.out_dir)
}

fn solver_config(run: &RunArgs, defaults: &SolverDefaults, sc: &CommunityScenario) -> SolverConfig {
    let base = SolverConfig {
        workers: run.workers as usize,
        ..SolverConfig::default()
    };
    if run.reproduce_paper {
        return SolverConfig {
            lipschitz: 0.01,
            inner: InnerSchedule::Constant(100),
            n_outer: 100,
            ..base
        };
    }
    let lipschitz = run
        .learning_rate
        .or(defaults.learning_rate_inv.map(|inv| 1.0 / inv))
        .unwrap_or_else(|| default_learning_rate(sc, false));
    let n0 = run.n_inner.map(|n| n as usize).or(defaults.n_inner).unwrap_or(100);
    SolverConfig {
        lipschitz,
        inner: match run.inner_log_c {
            Some(c) => InnerSchedule::Logarithmic { n0, c },
            None => InnerSchedule::Constant(n0),
        },
        n_outer: run.n_outer.map(|n| n as usize).or(defaults.n_outer).unwrap_or(100),
        outer_tol: run.outer_tol,
        ..base
    }
}

fn solve(args: &SolveArgs, with_residuals: bool) -> CliResult {
    let (sc, defaults) = load(&args.scenario)?;
    let idx = DecisionIndex::new(&sc)?;
    let problem = SplitProblem::stage1(&sc, &idx)?;
    let mut config = solver_config(&args.run, &defaults, &sc);
    config.record_messages = args.message_log;
    let dir = out_dir(&args.scenario)?;
    let reference = if args.reference == Reference::Oracle || with_residuals {
        let oracle = solve_centralized(&problem)?;
        info!("oracle objective {} (KKT residual {:e})", oracle.objective, oracle.kkt_residual);
        io::write_solution_csv(&dir.join("reference_solution.csv"), &oracle.x_star, &idx)?;
        Some(oracle.x_star)
    } else {
        None
    };
    info!(
        "solving {} offsets with L = {}, {:?} inner rounds, {} outer steps",
        idx.total_len(),
        config.lipschitz,
        config.inner,
        config.n_outer
    );
    let out = run(&problem, &config, reference.as_deref())?;
    let baseline = solve_no_trade_baseline(&sc, &idx)?;
    io::write_trace_csv(&dir.join("trace.csv"), &out.trace)?;
    io::write_solution_csv(&dir.join("solution.csv"), &out.solution, &idx)?;
    io::write_trading_csv(&dir.join("trading.csv"), &out.solution, &idx)?;
    io::write_supply_demand_csv(&dir.join("supply_demand.csv"), &out.solution, &baseline.x0, &idx)?;
    if args.message_log {
        io::write_message_log(&dir.join("messages.log"), &out.messages)?;
    }
    if with_residuals {
        io::write_inner_residuals_csv(&dir.join("inner_residuals.csv"), &out.trace)?;
    }
    let last = out.trace.last().expect("trace has a starting row");
    println!("objective {:.6} $ after {} outer steps", last.objective, last.k);
    println!("max constraint violation {:.3e}", last.max_violation);
    println!("messages {} ({} bytes)", out.trace.total_messages(), out.trace.rows.iter().map(|r| r.bytes).sum::<u64>());
    if let (Some(gap), Some(mse), Some(fs)) = (last.objective_gap, last.mse_vs_ref, out.trace.reference_objective) {
        println!("oracle objective {fs:.6} $, gap {:.4}%, mse {mse:.4e} kW^2", 100.0 * gap);
    }
    if with_residuals {
        let etas: Vec<f64> = out
            .trace
            .inner_residuals
            .iter()
            .filter_map(|r| estimate_eta(r).ok())
            .map(|f| f.eta)
            .collect();
        if etas.is_empty() {
            println!("inner rate: residuals too short to fit");
        } else {
            let lo = etas.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = etas.iter().cloned().fold(0.0, f64::max);
            println!("inner rate eta in [{lo:.4}, {hi:.4}] over {} outer steps", etas.len());
        }
    }
    println!("wrote results to {}", dir.display());
    Ok(())
}

fn baseline(args: &ScenarioArgs) -> CliResult {
    let (sc, _) = load(args)?;
    let idx = DecisionIndex::new(&sc)?;
    let b = solve_no_trade_baseline(&sc, &idx)?;
    let dir = out_dir(args)?;
    io::write_baseline_csv(&dir.join("baseline.csv"), &b.costs)?;
    io::write_solution_csv(&dir.join("solution.csv"), &b.x0, &idx)?;
    io::write_trading_csv(&dir.join("trading.csv"), &b.x0, &idx)?;
    for (i, c) in b.costs.iter().enumerate() {
        println!("prosumer {i}: {c:.6} $");
    }
    println!("total {:.6} $", b.costs.iter().sum::<f64>());
    Ok(())
}

fn price(args: &PriceArgs) -> CliResult {
    let (sc, _) = load(&args.scenario)?;
    let idx = DecisionIndex::new(&sc)?;
    let stage1 = match &args.solution {
        Some(path) => io::read_solution_csv(path, &idx)?,
        None => solve_centralized(&SplitProblem::stage1(&sc, &idx)?)?.x_star,
    };
    let b = solve_no_trade_baseline(&sc, &idx)?;
    let options = PricingOptions {
        relax_benefit: args.relax_benefit,
        ..PricingOptions::default()
    };
    let pp = build_price_problem(&sc, &idx, &stage1, &b.costs, options)?;
    let mut config = default_price_config(&pp.problem);
    if let Some(l) = args.run.learning_rate {
        config.lipschitz = l;
    }
    if let Some(n) = args.run.n_inner {
        config.inner = InnerSchedule::Constant(n as usize);
    }
    if let Some(n) = args.run.n_outer {
        config.n_outer = n as usize;
    }
    config.workers = args.run.workers as usize;
    let sol = solve_prices(&sc, &idx, &stage1, &b.costs, Some(&config), options)?;
    let dir = out_dir(&args.scenario)?;
    io::write_prices_csv(&dir.join("prices.csv"), &sol)?;
    io::write_baseline_csv(&dir.join("baseline.csv"), &b.costs)?;
    io::write_trace_csv(&dir.join("price_trace.csv"), &sol.trace)?;
    println!("{} active prices", sol.values.len());
    for i in 0..sc.num_prosumers() {
        let with = sol.prosumer_cost(&sc, &idx, &stage1, i);
        let tag = if sol.relaxed.contains(&i) { " (benefit row relaxed)" } else { "" };
        println!(
            "prosumer {i}: {with:.6} $ with trading, {:.6} $ without{tag}",
            b.costs[i]
        );
    }
    println!("wrote results to {}", dir.display());
    Ok(())
}

fn validate(args: &ValidateArgs) -> CliResult {
    let (sc, _) = io::load_named_or_path(&args.scenario)?;
    let idx = DecisionIndex::new(&sc)?;
    let x = io::read_solution_csv(&args.solution, &idx)?;
    let report = constraint_residuals(&x, &sc, &idx);
    let worst = report.max_violation();
    match report.worst() {
        Some(e) if worst > args.tol => Err(Failure {
            code: 2,
            message: format!(
                "violation {worst:.3e} exceeds {:e} at prosumer {} {}{}{}",
                args.tol,
                e.prosumer,
                e.family.name(),
                e.t.map(|t| format!("[t={t}]")).unwrap_or_default(),
                if e.detail.is_empty() { String::new() } else { format!("({})", e.detail) }
            ),
        }),
        _ => {
            println!("ok: max violation {worst:.3e} over {} constraints", report.entries.len());
            Ok(())
        }
    }
}

fn bound(args: &BoundArgs) -> CliResult {
    let b = iteration_bound(args.l, args.r0, args.eps, args.eta)?;
    println!("k_bar = {}", b.k_bar);
    println!("n_bar = {}", b.n_bar);
    println!("n_max = {}", b.n_max);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    let result = match &cli.command {
        Command::Solve(a) => solve(a, false),
        Command::Trace(a) => solve(a, true),
        Command::Baseline(a) => baseline(a),
        Command::Price(a) => price(a),
        Command::Validate(a) => validate(a),
        Command::Bound(a) => bound(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
