//! Scenario builders and parameter sweeps: the four-rover collision-avoidance
//! game and the three-company fair-allocation game.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::bilevel::{run_projected_gradient, BilevelConfig, DesignResult, FeasibleSetParams};
use crate::error::{QreError, Result};
use crate::game::{pure_to_strategy, Game, JointStrategy, PlayerDims, PureTarget};
use crate::objective::{area_totals, kl_objective, KlObjective, PerformanceObjective};
use crate::response::stationarity_residual;
use crate::sdp::{solve_min_norm_design, MinNormDesign, SdpConfig};
use crate::solver::SolverConfig;

pub const COLLISION_LAMBDA: f64 = 0.1;
pub const FAIR_LAMBDA: f64 = 0.1;

pub const HOME_COST: f64 = 1.0;
pub const ADJACENT_COST: f64 = 1.5;
pub const FAR_COST: f64 = 1.8;

/// Step size for the collision design.
pub const COLLISION_STEP_ALPHA: f64 = 0.1;
/// The potential-delay gradients near the uncoupled equilibrium reach 1e6,
/// so the fair design takes much shorter steps.
pub const FAIR_STEP_ALPHA: f64 = 1e-3;
/// Squared residual for inner solves in the experiments. Small entries of
/// `x` need this to meet a 1e-6 stationarity check.
pub const EXPERIMENT_RESIDUAL_TOL: f64 = 1e-20;

pub const DEFAULT_EPS_GRID: [f64; 10] = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0];
pub const DEFAULT_RHO_GRID: [f64; 8] = [0.01, 0.1, 0.5, 1.0, 2.0, 4.0, 7.0, 10.0];

/// Four rovers, each choosing between a beeline (length 2) and two
/// semicircles (length pi); the target sends everyone counterclockwise.
pub fn build_collision_game() -> (Game, PureTarget) {
    let dims = PlayerDims::uniform(4, 3).expect("static dims");
    let b: Vec<f64> = (0..4).flat_map(|_| [2.0, PI, PI]).collect();
    let g = Game::without_coupling(dims, COLLISION_LAMBDA, DVector::from_vec(b)).expect("static game");
    (g, PureTarget::new(vec![2; 4]))
}

pub fn collision_bilevel_config() -> BilevelConfig {
    BilevelConfig {
        step_alpha: COLLISION_STEP_ALPHA,
        inner: SolverConfig::default().with_residual_tol(EXPERIMENT_RESIDUAL_TOL),
        ..BilevelConfig::default()
    }
}

pub fn fair_bilevel_config() -> BilevelConfig {
    BilevelConfig {
        step_alpha: FAIR_STEP_ALPHA,
        inner: SolverConfig::default().with_residual_tol(EXPERIMENT_RESIDUAL_TOL),
        ..BilevelConfig::default()
    }
}

pub fn experiment_sdp_config() -> SdpConfig {
    SdpConfig {
        inner: SolverConfig::default().with_residual_tol(EXPERIMENT_RESIDUAL_TOL),
        ..SdpConfig::default()
    }
}

/// Areas and their neighbor lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AreaGraph {
    pub names: Vec<String>,
    pub adjacency: Vec<Vec<usize>>,
}

impl AreaGraph {
    /// 3x3 grid (NW, N, NE, W, C, E, SW, S, SE) with 4-neighborhoods.
    pub fn grid3x3() -> Self {
        let names = ["NW", "N", "NE", "W", "C", "E", "SW", "S", "SE"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let adjacency = (0..9)
            .map(|a| {
                let (r, c) = (a / 3, a % 3);
                let mut n = Vec::new();
                if r > 0 {
                    n.push(a - 3);
                }
                if r < 2 {
                    n.push(a + 3);
                }
                if c > 0 {
                    n.push(a - 1);
                }
                if c < 2 {
                    n.push(a + 1);
                }
                n
            })
            .collect();
        Self { names, adjacency }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n.eq_ignore_ascii_case(name))
    }

    pub fn is_adjacent(&self, a: usize, b: usize) -> bool {
        self.adjacency[a].contains(&b) || self.adjacency[b].contains(&a)
    }
}

/// The default company homes: southwest, southeast and east.
pub fn default_homes(graph: &AreaGraph) -> Vec<usize> {
    ["SW", "SE", "E"]
        .iter()
        .map(|n| graph.index_of(n).expect("grid has compass names"))
        .collect()
}

/// Operating cost per company and area: 1.0 at home, 1.5 next to home, 1.8 elsewhere.
pub fn fair_costs(graph: &AreaGraph, homes: &[usize]) -> Result<Vec<Vec<f64>>> {
    if graph.names.len() != 9 || graph.adjacency.len() != 9 {
        return Err(QreError::InvalidGeometry(format!(
            "expected 9 areas, got {}",
            graph.names.len()
        )));
    }
    if graph.adjacency.iter().flatten().any(|&a| a >= 9) {
        return Err(QreError::InvalidGeometry("adjacency refers to a missing area".into()));
    }
    if homes.len() != 3 {
        return Err(QreError::InvalidGeometry(format!("expected 3 homes, got {}", homes.len())));
    }
    if homes.iter().any(|&h| h >= 9) {
        return Err(QreError::InvalidGeometry("home outside the 9 areas".into()));
    }
    for i in 0..3 {
        for j in i + 1..3 {
            if homes[i] == homes[j] {
                return Err(QreError::InvalidGeometry(format!("duplicate home area {}", homes[i])));
            }
        }
    }
    Ok(homes
        .iter()
        .map(|&h| {
            (0..9)
                .map(|a| {
                    if a == h {
                        HOME_COST
                    } else if graph.is_adjacent(h, a) {
                        ADJACENT_COST
                    } else {
                        FAR_COST
                    }
                })
                .collect()
        })
        .collect())
}

/// Three delivery companies allocating service over nine areas, `C = 0`.
pub fn build_fair_game(graph: &AreaGraph, homes: &[usize]) -> Result<Game> {
    let costs = fair_costs(graph, homes)?;
    let dims = PlayerDims::uniform(3, 9)?;
    let b: Vec<f64> = costs.into_iter().flatten().collect();
    Game::without_coupling(dims, FAIR_LAMBDA, DVector::from_vec(b))
}

pub fn build_default_fair_game() -> Game {
    let graph = AreaGraph::grid3x3();
    build_fair_game(&graph, &default_homes(&graph)).expect("default geometry is valid")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpSweepRow {
    pub epsilon: f64,
    pub outcome: std::result::Result<MinNormDesign, QreError>,
}

/// Min-norm design of the collision scenario for each margin.
pub fn sweep_sdp_epsilon(eps_values: &[f64], base: &SdpConfig, jobs: usize) -> Result<Vec<SdpSweepRow>> {
    if eps_values.is_empty() {
        return Err(QreError::InvalidConfig("epsilon grid is empty".into()));
    }
    if let Some(e) = eps_values.iter().find(|e| !(**e >= 0.0)) {
        return Err(QreError::InvalidConfig(format!("epsilon {e} is negative")));
    }
    let (g, t) = build_collision_game();
    let run = |eps: f64| SdpSweepRow {
        epsilon: eps,
        outcome: solve_min_norm_design(&g, &t, &base.with_epsilon(eps)),
    };
    Ok(par_map(eps_values, jobs, run))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BilevelSweepRow {
    pub rho: f64,
    pub outcome: std::result::Result<BilevelRowData, QreError>,
}

/// What a sweep row reports: the lowest-objective iterate of the run.
#[derive(Debug, Clone, PartialEq)]
pub struct BilevelRowData {
    pub psi_value: f64,
    pub c_norm: f64,
    pub kl_to_target: Option<f64>,
    pub outer_iters: usize,
    pub converged: bool,
    pub stationarity: f64,
    pub x: JointStrategy,
    /// Aggregate service per area, for games with a shared action set.
    pub totals: Option<Vec<f64>>,
    pub design: DesignResult,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    /// Start each radius from the best matrix of the previous one (sequential).
    pub warm_start: bool,
    pub jobs: usize,
    /// Record per-area totals (games whose players share one action set).
    pub report_totals: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            warm_start: true,
            jobs: 1,
            report_totals: false,
        }
    }
}

/// Runs the projected-gradient design for each radius in `rho_values`.
///
/// With `warm_start`, radii are processed in increasing order and each run
/// starts from the previous run's best matrix, which is feasible for every
/// larger radius. Rows come back in the order of `rho_values`.
pub fn sweep_bilevel_rho(
    rho_values: &[f64],
    obj: &dyn PerformanceObjective,
    g: &Game,
    cfg: &BilevelConfig,
    kl_target: Option<&KlObjective>,
    opts: &SweepOptions,
) -> Result<Vec<BilevelSweepRow>> {
    if rho_values.is_empty() {
        return Err(QreError::InvalidConfig("rho grid is empty".into()));
    }
    for &r in rho_values {
        FeasibleSetParams::new(r)?;
    }
    let shared_areas = opts.report_totals && g.dims().sizes().iter().all(|&s| s == g.dims().size(0));
    let summarize = |rho: f64, res: Result<DesignResult>| -> BilevelSweepRow {
        let outcome = res.and_then(|design| {
            let x = design.best_x.clone();
            let game = g.with_cost_matrix(design.best_c.clone())?;
            Ok(BilevelRowData {
                psi_value: design.best_objective,
                c_norm: design.best_c.norm(),
                kl_to_target: kl_target.map(|k| k.value(&x)).transpose()?,
                outer_iters: design.outer_iterations,
                converged: design.converged,
                stationarity: stationarity_residual(&game, &x)?,
                totals: shared_areas.then(|| area_totals(g.dims(), &x)),
                x,
                design,
            })
        });
        BilevelSweepRow { rho, outcome }
    };

    if !opts.warm_start {
        let run = |rho: f64| {
            let res = FeasibleSetParams::new(rho).and_then(|p| run_projected_gradient(g, obj, &p, cfg));
            summarize(rho, res)
        };
        return Ok(par_map(rho_values, opts.jobs, run));
    }

    let mut order: Vec<usize> = (0..rho_values.len()).collect();
    order.sort_by(|&a, &b| rho_values[a].total_cmp(&rho_values[b]));
    let mut rows: Vec<Option<BilevelSweepRow>> = vec![None; rho_values.len()];
    let mut start = g.clone();
    for idx in order {
        let rho = rho_values[idx];
        let res = FeasibleSetParams::new(rho).and_then(|p| run_projected_gradient(&start, obj, &p, cfg));
        if let Ok(design) = &res {
            start = g.with_cost_matrix(design.best_c.clone())?;
        }
        rows[idx] = Some(summarize(rho, res));
    }
    Ok(rows.into_iter().map(|r| r.expect("every row filled")).collect())
}

/// KL objective towards the collision scenario's pure target.
pub fn collision_kl_objective(delta: f64) -> Result<KlObjective> {
    let (g, t) = build_collision_game();
    kl_objective(g.dims(), &pure_to_strategy(&t, g.dims())?, delta)
}

#[cfg(feature = "parallel")]
fn par_map<T, F>(values: &[f64], jobs: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(f64) -> T + Sync + Send,
{
    use rayon::prelude::*;
    if jobs <= 1 {
        return values.iter().map(|&v| f(v)).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(|| values.par_iter().map(|&v| f(v)).collect()),
        Err(_) => values.iter().map(|&v| f(v)).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
fn par_map<T, F>(values: &[f64], _jobs: usize, f: F) -> Vec<T>
where
    F: Fn(f64) -> T,
{
    values.iter().map(|&v| f(v)).collect()
}

fn status(err: Option<&QreError>) -> String {
    match err {
        None => "ok".to_string(),
        Some(e) => format!("error:{}", e.kind()),
    }
}

/// `epsilon,c_norm,kl_to_target,max_violation,min_eig_sym,sweeps,converged,status`
pub fn sdp_sweep_csv(rows: &[SdpSweepRow]) -> String {
    let mut out = String::from("epsilon,c_norm,kl_to_target,max_violation,min_eig_sym,sweeps,converged,status\n");
    for row in rows {
        match &row.outcome {
            Ok(d) => writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                row.epsilon,
                d.c_norm,
                d.kl_to_target,
                d.max_violation,
                d.min_eig_sym,
                d.sweeps,
                d.converged && d.equilibrium_converged,
                status(None)
            ),
            Err(e) => writeln!(out, "{},,,,,,false,{}", row.epsilon, status(Some(e))),
        }
        .expect("writing to a String cannot fail");
    }
    out
}

/// `sweep_param,psi_value,c_norm,kl_to_target,outer_iters,converged,status,stationarity`
/// followed by one `total_<area>` column per area when totals are available.
pub fn bilevel_sweep_csv(rows: &[BilevelSweepRow], area_names: Option<&[String]>) -> String {
    let areas = rows
        .iter()
        .filter_map(|r| r.outcome.as_ref().ok())
        .find_map(|d| d.totals.as_ref().map(|t| t.len()))
        .unwrap_or(0);
    let mut out = String::from("sweep_param,psi_value,c_norm,kl_to_target,outer_iters,converged,status,stationarity");
    for a in 0..areas {
        match area_names.and_then(|n| n.get(a)) {
            Some(name) => write!(out, ",total_{name}"),
            None => write!(out, ",total_{a}"),
        }
        .expect("writing to a String cannot fail");
    }
    out.push('\n');
    for row in rows {
        match &row.outcome {
            Ok(d) => {
                let kl = d.kl_to_target.map(|v| v.to_string()).unwrap_or_default();
                write!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    row.rho,
                    d.psi_value,
                    d.c_norm,
                    kl,
                    d.outer_iters,
                    d.converged,
                    status(None),
                    d.stationarity
                )
                .expect("writing to a String cannot fail");
                for a in 0..areas {
                    let v = d.totals.as_ref().and_then(|t| t.get(a)).map(|v| v.to_string());
                    write!(out, ",{}", v.unwrap_or_default()).expect("writing to a String cannot fail");
                }
            }
            Err(e) => {
                write!(out, "{},,,,,false,{},", row.rho, status(Some(e))).expect("writing to a String cannot fail");
                out.push_str(&",".repeat(areas));
            }
        }
        out.push('\n');
    }
    out
}

/// Static line chart of `(x, y)` points, with axis labels.
pub fn tradeoff_svg(points: &[(f64, f64)], x_label: &str, y_label: &str) -> String {
    let (w, h, pad) = (480.0, 320.0, 48.0);
    let finite: Vec<(f64, f64)> = points.iter().copied().filter(|(x, y)| x.is_finite() && y.is_finite()).collect();
    let (x0, x1) = bounds(finite.iter().map(|p| p.0));
    let (y0, y1) = bounds(finite.iter().map(|p| p.1));
    let sx = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n\
         <line x1=\"{pad}\" y1=\"{yb}\" x2=\"{xr}\" y2=\"{yb}\" stroke=\"black\"/>\n\
         <line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{yb}\" stroke=\"black\"/>\n",
        yb = h - pad,
        xr = w - pad
    );
    let path: Vec<String> = finite.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
    let _ = writeln!(svg, "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"{}\"/>", path.join(" "));
    for &(x, y) in &finite {
        let _ = writeln!(svg, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"#1f77b4\"/>", sx(x), sy(y));
    }
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">{x_label} [{x0:.3}, {x1:.3}]</text>",
        w / 2.0,
        h - 12.0
    );
    let _ = writeln!(
        svg,
        "<text x=\"14\" y=\"{}\" font-size=\"12\" transform=\"rotate(-90 14 {})\" text-anchor=\"middle\">{y_label} [{y0:.3e}, {y1:.3e}]</text>",
        h / 2.0,
        h / 2.0
    );
    svg.push_str("</svg>\n");
    svg
}

/// One group of stacked bars per sweep row: each bar is an area, stacked by company.
pub fn allocation_svg(groups: &[(String, Vec<Vec<f64>>)], area_names: &[String]) -> String {
    const COLORS: [&str; 6] = ["#d62728", "#2ca02c", "#1f77b4", "#ff7f0e", "#9467bd", "#8c564b"];
    let areas = area_names.len().max(1);
    let bar = 10.0;
    let group_w = bar * areas as f64 + 24.0;
    let (h, pad) = (260.0, 40.0);
    let w = pad * 2.0 + group_w * groups.len() as f64;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"
    );
    // totals sum to the number of players; scale so a full-share bar fits
    let max_total = groups
        .iter()
        .flat_map(|(_, alloc)| (0..areas).map(move |a| alloc.iter().map(|p| p.get(a).copied().unwrap_or(0.0)).sum::<f64>()))
        .fold(1e-12, f64::max);
    let scale = (h - 2.0 * pad) / max_total;
    for (gi, (label, alloc)) in groups.iter().enumerate() {
        let gx = pad + gi as f64 * group_w;
        for a in 0..areas {
            let mut y = h - pad;
            for (pi, player) in alloc.iter().enumerate() {
                let v = player.get(a).copied().unwrap_or(0.0);
                let bh = v * scale;
                y -= bh;
                let _ = writeln!(
                    svg,
                    "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{}\" height=\"{:.2}\" fill=\"{}\"/>",
                    gx + a as f64 * bar,
                    y,
                    bar - 1.0,
                    bh,
                    COLORS[pi % COLORS.len()]
                );
            }
        }
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{label}</text>",
            gx + bar * areas as f64 / 2.0,
            h - pad + 16.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Per-player allocation matrix (players x areas) from a joint strategy.
pub fn allocation(dims: &PlayerDims, x: &JointStrategy) -> Vec<Vec<f64>> {
    (0..dims.players()).map(|i| x.block(dims, i).to_vec()).collect()
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-300 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}
