mod report;

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use qre_core::experiments::{
    self, allocation, allocation_svg, bilevel_sweep_csv, sdp_sweep_csv, sweep_bilevel_rho,
    sweep_sdp_epsilon, tradeoff_svg, AreaGraph, SweepOptions, DEFAULT_EPS_GRID, DEFAULT_RHO_GRID,
};
use qre_core::gumbel::total_variation;
use qre_core::objective::{PotentialDelay, DEFAULT_KL_SMOOTHING};
use qre_core::response::softmax_blocks;
use qre_core::nalgebra::DVector;
use qre_core::{
    check_assumption, kl_objective, pure_to_strategy, run_projected_gradient, simulate_gumbel_choice,
    solve_equilibrium, solve_min_norm_design, stationarity_residual, BilevelConfig, FeasibleSetParams,
    Game, PerformanceObjective, PlayerDims, PureTarget, QreError, SdpConfig, SolverConfig,
};
use serde::Serialize;

use report::{BilevelReport, CheckReport, SdpReport, SimulateReport, SimulationBlock, SolveReport};

#[derive(Parser)]
#[command(name = "qre", version, about = "Quantal response equilibria and cost-matrix design")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Seed for any randomness; echoed into JSON outputs.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GameArgs {
    /// Game description in JSON.
    #[arg(long)]
    game: PathBuf,
    /// Override the game's lambda.
    #[arg(long, allow_hyphen_values = true)]
    lambda: Option<f64>,
}

#[derive(Args)]
struct SolverArgs {
    /// Stop once the squared residual falls to this value.
    #[arg(long, default_value_t = 1e-10)]
    residual_tol: f64,
    #[arg(long, default_value_t = 200)]
    max_iters: usize,
}

impl SolverArgs {
    fn config(&self) -> SolverConfig {
        SolverConfig {
            residual_tol: self.residual_tol,
            max_iters: self.max_iters,
            ..SolverConfig::default()
        }
    }
}

#[derive(Args)]
struct GeometryArgs {
    /// Area graph as JSON `{"names": [...], "adjacency": [[...], ...]}`.
    #[arg(long)]
    adjacency: Option<PathBuf>,
    /// Home areas by name or zero-based index.
    #[arg(long, value_delimiter = ',')]
    homes: Option<Vec<String>>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveKind {
    Kl,
    PotentialDelay,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Sdp,
    Bilevel,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioKind {
    Collision,
    Fair,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the equilibrium of a game.
    Solve {
        #[command(flatten)]
        game: GameArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Report the uniqueness certificate; exits 0 only if it holds.
    Check {
        #[command(flatten)]
        game: GameArgs,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Min-norm cost matrix that makes a pure target the best response by a margin.
    DesignSdp {
        #[command(flatten)]
        game: GameArgs,
        /// One-based target action per player.
        #[arg(long, value_delimiter = ',', required = true)]
        target: Vec<usize>,
        #[arg(long, default_value_t = 3.0)]
        epsilon: f64,
        #[arg(long, default_value_t = 1e-8)]
        dykstra_tol: f64,
        #[arg(long, default_value_t = 50_000)]
        max_sweeps: usize,
        /// Smoothing of the target in the reported KL divergence.
        #[arg(long, default_value_t = 1e-12)]
        delta: f64,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Projected-gradient design of the cost matrix for a performance objective.
    DesignBilevel {
        #[command(flatten)]
        game: GameArgs,
        #[arg(long, value_enum)]
        objective: ObjectiveKind,
        /// One-based target action per player (KL objective).
        #[arg(long, value_delimiter = ',')]
        target: Option<Vec<usize>>,
        #[arg(long, default_value_t = DEFAULT_KL_SMOOTHING)]
        delta: f64,
        /// Frobenius-norm bound on the designed matrix.
        #[arg(long)]
        rho: f64,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        #[arg(long, default_value_t = 1e-6)]
        stop_eps: f64,
        #[arg(long, default_value_t = 5000)]
        max_outer_iters: usize,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Monte Carlo choice frequencies under Gumbel noise versus the logit response.
    Simulate {
        /// Cost vector of a single player.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "game")]
        cost: Option<Vec<f64>>,
        /// Simulate every player at the game's equilibrium instead.
        #[arg(long)]
        game: Option<PathBuf>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Parameter sweeps for the two built-in scenarios; writes CSV.
    Experiment {
        #[command(subcommand)]
        which: Experiment,
    },
    /// Write a built-in scenario game as JSON.
    Scenario {
        #[arg(value_enum)]
        which: ScenarioKind,
        #[command(flatten)]
        geometry: GeometryArgs,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct SweepArgs {
    /// Parallel sweep rows (cold starts only).
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Solve each radius from the uncoupled game instead of continuing from the previous one.
    #[arg(long)]
    cold_start: bool,
    /// Also write an SVG plot here.
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Experiment {
    /// Four rovers crossing an intersection.
    Collision {
        #[arg(long, value_enum, default_value = "sdp")]
        method: Method,
        #[arg(long, value_delimiter = ',')]
        eps_grid: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        rho_grid: Option<Vec<f64>>,
        #[arg(long)]
        alpha: Option<f64>,
        /// KL smoothing; defaults to 1e-12 for sdp and 1e-3 for bilevel.
        #[arg(long)]
        delta: Option<f64>,
        #[command(flatten)]
        sweep: SweepArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Three delivery companies sharing nine areas.
    Fair {
        #[arg(long, value_delimiter = ',')]
        rho_grid: Option<Vec<f64>>,
        #[arg(long)]
        alpha: Option<f64>,
        #[command(flatten)]
        geometry: GeometryArgs,
        #[command(flatten)]
        sweep: SweepArgs,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug)]
enum CliError {
    Core(QreError),
    Read(PathBuf, io::Error),
    Write(Option<PathBuf>, io::Error),
    Usage(String),
}

impl From<QreError> for CliError {
    fn from(e: QreError) -> Self {
        CliError::Core(e)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Read(p, e) => write!(f, "cannot read {}: {e}", p.display()),
            CliError::Write(Some(p), e) => write!(f, "cannot write {}: {e}", p.display()),
            CliError::Write(None, e) => write!(f, "cannot write output: {e}"),
            CliError::Usage(m) => f.write_str(m),
        }
    }
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Read(..) => "read",
            CliError::Write(..) => "write",
            CliError::Usage(_) => "usage",
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_input_error() => 2,
            CliError::Core(QreError::InfeasibleDetected { .. } | QreError::InnerSolveFailure { .. }) => 3,
            CliError::Core(_) => 1,
            CliError::Read(..) | CliError::Usage(_) => 2,
            CliError::Write(..) => 1,
        }
    }
}

/// What a successful run reports beyond its artifact.
enum Status {
    Ok,
    NotConverged,
    CheckFailed,
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let text = e.to_string();
            let text = text.trim_start_matches("error: ");
            eprint!("error:usage: {text}");
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::CheckFailed) => ExitCode::from(2),
        Ok(Status::NotConverged) => {
            eprintln!("error:not-converged: artifact written with converged=false");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error:{}: {e}", e.kind());
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(command: Command) -> CliResult<Status> {
    match command {
        Command::Solve { game, solver, common } => {
            let g = load_game(&game)?;
            let out = solve_equilibrium(&g, &solver.config(), None)?;
            let stationarity = stationarity_residual(&g, &out.x).ok();
            emit_json(&common, &SolveReport::new(common.seed, &out, stationarity))?;
            Ok(status(out.converged))
        }
        Command::Check { game, tol, common } => {
            let g = load_game(&game)?;
            if !(tol >= 0.0) {
                return Err(CliError::Usage(format!("tolerance {tol} must be nonnegative")));
            }
            let report = check_assumption(&g, tol)?;
            emit_json(&common, &CheckReport { seed: common.seed, report: &report })?;
            Ok(if report.passed { Status::Ok } else { Status::CheckFailed })
        }
        Command::DesignSdp {
            game,
            target,
            epsilon,
            dykstra_tol,
            max_sweeps,
            delta,
            solver,
            common,
        } => {
            let g = load_game(&game)?;
            let t = PureTarget::from_one_based(&target)?;
            let cfg = SdpConfig {
                epsilon,
                dykstra_tol,
                max_sweeps,
                kl_delta: delta,
                inner: solver.config(),
            };
            let d = solve_min_norm_design(&g, &t, &cfg)?;
            emit_json(&common, &SdpReport::new(common.seed, target, &d))?;
            Ok(status(d.converged && d.equilibrium_converged))
        }
        Command::DesignBilevel {
            game,
            objective,
            target,
            delta,
            rho,
            alpha,
            stop_eps,
            max_outer_iters,
            solver,
            common,
        } => {
            let g = load_game(&game)?;
            let obj = build_objective(&g, objective, target.as_deref(), delta)?;
            let p = FeasibleSetParams::new(rho)?;
            let cfg = BilevelConfig {
                step_alpha: alpha,
                stop_eps,
                max_outer_iters,
                inner: solver.config(),
            };
            let d = run_projected_gradient(&g, obj.as_ref(), &p, &cfg)?;
            emit_json(&common, &BilevelReport::new(common.seed, obj.name(), rho, alpha, stop_eps, &d))?;
            Ok(status(d.converged))
        }
        Command::Simulate {
            cost,
            game,
            lambda,
            samples,
            common,
        } => simulate(cost, game, lambda, samples, &common),
        Command::Experiment { which } => match which {
            Experiment::Collision {
                method,
                eps_grid,
                rho_grid,
                alpha,
                delta,
                sweep,
                common,
            } => match method {
                Method::Sdp => collision_sdp(eps_grid, delta, &sweep, &common),
                Method::Bilevel => collision_bilevel(rho_grid, alpha, delta, &sweep, &common),
            },
            Experiment::Fair {
                rho_grid,
                alpha,
                geometry,
                sweep,
                common,
            } => fair(rho_grid, alpha, &geometry, &sweep, &common),
        },
        Command::Scenario { which, geometry, common } => {
            let g = match which {
                ScenarioKind::Collision => experiments::build_collision_game().0,
                ScenarioKind::Fair => {
                    let (graph, homes) = load_geometry(&geometry)?;
                    experiments::build_fair_game(&graph, &homes)?
                }
            };
            emit(&common.out, &g.to_json())?;
            Ok(Status::Ok)
        }
    }
}

fn status(converged: bool) -> Status {
    if converged {
        Status::Ok
    } else {
        Status::NotConverged
    }
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Read(path.to_path_buf(), e))
}

fn load_game(args: &GameArgs) -> CliResult<Game> {
    let g = Game::from_json(&read(&args.game)?)?;
    match args.lambda {
        Some(l) => Ok(g.with_lambda(l)?),
        None => Ok(g),
    }
}

fn emit(out: &Option<PathBuf>, text: &str) -> CliResult<()> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| CliError::Write(Some(path.clone()), e)),
        None => io::stdout()
            .lock()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Write(None, e)),
    }
}

fn emit_json<T: Serialize>(common: &Common, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
    text.push('\n');
    emit(&common.out, &text)
}

fn write_plot(path: &Option<PathBuf>, svg: impl FnOnce() -> String) -> CliResult<()> {
    match path {
        Some(p) => fs::write(p, svg()).map_err(|e| CliError::Write(Some(p.clone()), e)),
        None => Ok(()),
    }
}

fn build_objective(
    g: &Game,
    kind: ObjectiveKind,
    target: Option<&[usize]>,
    delta: f64,
) -> CliResult<Box<dyn PerformanceObjective>> {
    match kind {
        ObjectiveKind::Kl => {
            let target = target.ok_or_else(|| CliError::Usage("the kl objective needs --target".into()))?;
            let t = PureTarget::from_one_based(target)?;
            let x = pure_to_strategy(&t, g.dims())?;
            Ok(Box::new(kl_objective(g.dims(), &x, delta)?))
        }
        ObjectiveKind::PotentialDelay => Ok(Box::new(PotentialDelay::new(g.dims())?)),
    }
}

fn simulate(
    cost: Option<Vec<f64>>,
    game: Option<PathBuf>,
    lambda: Option<f64>,
    samples: usize,
    common: &Common,
) -> CliResult<Status> {
    let blocks: Vec<Vec<f64>>;
    let lam;
    match (cost, game) {
        (Some(c), None) => {
            lam = lambda.ok_or_else(|| CliError::Usage("--cost needs --lambda".into()))?;
            blocks = vec![c];
        }
        (None, Some(path)) => {
            let g = load_game(&GameArgs { game: path, lambda })?;
            let cfg = SolverConfig::default().with_residual_tol(experiments::EXPERIMENT_RESIDUAL_TOL);
            let eq = solve_equilibrium(&g, &cfg, None)?;
            if !eq.converged {
                return Err(CliError::Core(QreError::InnerSolveFailure {
                    iteration: 0,
                    residual_sq: eq.residual_sq,
                }));
            }
            let costs = g.action_costs(eq.x.as_vector());
            lam = g.lambda();
            blocks = g.dims().split(costs.as_slice()).into_iter().map(<[f64]>::to_vec).collect();
        }
        _ => return Err(CliError::Usage("give exactly one of --cost or --game".into())),
    }
    let mut players = Vec::with_capacity(blocks.len());
    for (i, c) in blocks.into_iter().enumerate() {
        // each player gets its own stream
        let frequencies = simulate_gumbel_choice(&c, lam, samples, common.seed.wrapping_add(i as u64))?;
        let dims = PlayerDims::new(vec![c.len()])?;
        let u = DVector::from_iterator(c.len(), c.iter().map(|v| -v / lam));
        let logit: Vec<f64> = softmax_blocks(&dims, &u)?.iter().copied().collect();
        players.push(SimulationBlock {
            player: i,
            total_variation: total_variation(&frequencies, &logit),
            cost: c,
            frequencies,
            logit,
        });
    }
    emit_json(
        common,
        &SimulateReport {
            seed: common.seed,
            lambda: lam,
            samples,
            players,
        },
    )?;
    Ok(Status::Ok)
}

fn check_grid(grid: &[f64], what: &str) -> CliResult<()> {
    if grid.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Usage(format!("{what} contains a non-finite value")));
    }
    Ok(())
}

fn sweep_options(sweep: &SweepArgs, report_totals: bool) -> CliResult<SweepOptions> {
    if sweep.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    Ok(SweepOptions {
        warm_start: !sweep.cold_start,
        jobs: sweep.jobs,
        report_totals,
    })
}

fn collision_sdp(eps_grid: Option<Vec<f64>>, delta: Option<f64>, sweep: &SweepArgs, common: &Common) -> CliResult<Status> {
    let grid = eps_grid.unwrap_or_else(|| DEFAULT_EPS_GRID.to_vec());
    check_grid(&grid, "--eps-grid")?;
    let mut cfg = experiments::experiment_sdp_config();
    if let Some(d) = delta {
        cfg.kl_delta = d;
    }
    cfg.validate()?;
    let jobs = sweep_options(sweep, false)?.jobs;
    let rows = sweep_sdp_epsilon(&grid, &cfg, jobs)?;
    emit(&common.out, &sdp_sweep_csv(&rows))?;
    write_plot(&sweep.plot, || {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter_map(|r| r.outcome.as_ref().ok().map(|d| (d.c_norm, d.kl_to_target)))
            .collect();
        tradeoff_svg(&pts, "Frobenius norm of C", "KL to target")
    })?;
    let all_ok = rows
        .iter()
        .all(|r| matches!(&r.outcome, Ok(d) if d.converged && d.equilibrium_converged));
    Ok(status(all_ok))
}

fn collision_bilevel(
    rho_grid: Option<Vec<f64>>,
    alpha: Option<f64>,
    delta: Option<f64>,
    sweep: &SweepArgs,
    common: &Common,
) -> CliResult<Status> {
    let grid = rho_grid.unwrap_or_else(|| DEFAULT_RHO_GRID.to_vec());
    check_grid(&grid, "--rho-grid")?;
    let (g, _) = experiments::build_collision_game();
    let obj = experiments::collision_kl_objective(delta.unwrap_or(DEFAULT_KL_SMOOTHING))?;
    let mut cfg = experiments::collision_bilevel_config();
    if let Some(a) = alpha {
        cfg.step_alpha = a;
    }
    let rows = sweep_bilevel_rho(&grid, &obj, &g, &cfg, Some(&obj), &sweep_options(sweep, false)?)?;
    emit(&common.out, &bilevel_sweep_csv(&rows, None))?;
    write_plot(&sweep.plot, || {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter_map(|r| r.outcome.as_ref().ok().map(|d| (d.c_norm, d.psi_value)))
            .collect();
        tradeoff_svg(&pts, "Frobenius norm of C", "KL to target")
    })?;
    Ok(status(rows.iter().all(|r| matches!(&r.outcome, Ok(d) if d.converged))))
}

fn fair(
    rho_grid: Option<Vec<f64>>,
    alpha: Option<f64>,
    geometry: &GeometryArgs,
    sweep: &SweepArgs,
    common: &Common,
) -> CliResult<Status> {
    let grid = rho_grid.unwrap_or_else(|| DEFAULT_RHO_GRID.to_vec());
    check_grid(&grid, "--rho-grid")?;
    let (graph, homes) = load_geometry(geometry)?;
    let g = experiments::build_fair_game(&graph, &homes)?;
    let obj = PotentialDelay::new(g.dims())?;
    let mut cfg = experiments::fair_bilevel_config();
    if let Some(a) = alpha {
        cfg.step_alpha = a;
    }
    let rows = sweep_bilevel_rho(&grid, &obj, &g, &cfg, None, &sweep_options(sweep, true)?)?;
    emit(&common.out, &bilevel_sweep_csv(&rows, Some(&graph.names)))?;
    write_plot(&sweep.plot, || {
        let groups: Vec<(String, Vec<Vec<f64>>)> = rows
            .iter()
            .filter_map(|r| {
                r.outcome
                    .as_ref()
                    .ok()
                    .map(|d| (format!("rho={}", r.rho), allocation(g.dims(), &d.x)))
            })
            .collect();
        allocation_svg(&groups, &graph.names)
    })?;
    Ok(status(rows.iter().all(|r| matches!(&r.outcome, Ok(d) if d.converged))))
}

fn load_geometry(args: &GeometryArgs) -> CliResult<(AreaGraph, Vec<usize>)> {
    let graph = match &args.adjacency {
        Some(path) => serde_json::from_str::<AreaGraph>(&read(path)?)
            .map_err(|e| QreError::MalformedInput(format!("area graph JSON: {e}")))?,
        None => AreaGraph::grid3x3(),
    };
    let homes = match &args.homes {
        None => {
            let defaults = ["SW", "SE", "E"];
            defaults
                .iter()
                .map(|n| {
                    graph.index_of(n).ok_or_else(|| {
                        QreError::InvalidGeometry(format!("graph has no area {n}; pass --homes"))
                    })
                })
                .collect::<Result<Vec<_>, _>>()?
        }
        Some(names) => names
            .iter()
            .map(|n| {
                graph
                    .index_of(n)
                    .or_else(|| n.parse::<usize>().ok())
                    .ok_or_else(|| QreError::InvalidGeometry(format!("unknown area {n}")))
            })
            .collect::<Result<Vec<_>, _>>()?,
    };
    Ok((graph, homes))
}
