//! JSON documents written by the subcommands. Matrices are row-major.

use qre_core::bilevel::HistoryEntry;
use qre_core::nalgebra::DMatrix;
use qre_core::{AssumptionReport, DesignResult, JointStrategy, MinNormDesign, SolveOutcome};
use serde::Serialize;

pub fn rows(c: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..c.nrows()).map(|i| c.row(i).iter().copied().collect()).collect()
}

fn vec_of(x: &JointStrategy) -> Vec<f64> {
    x.as_slice().to_vec()
}

#[derive(Serialize)]
pub struct SolveReport {
    pub seed: u64,
    pub x: Vec<f64>,
    pub residual_sq: f64,
    pub iterations: usize,
    pub converged: bool,
    pub certified: bool,
    pub stationarity: Option<f64>,
}

impl SolveReport {
    pub fn new(seed: u64, out: &SolveOutcome, stationarity: Option<f64>) -> Self {
        Self {
            seed,
            x: vec_of(&out.x),
            residual_sq: out.residual_sq,
            iterations: out.iterations,
            converged: out.converged,
            certified: out.certified,
            stationarity,
        }
    }
}

#[derive(Serialize)]
pub struct CheckReport<'a> {
    pub seed: u64,
    #[serde(flatten)]
    pub report: &'a AssumptionReport,
}

#[derive(Serialize)]
pub struct SdpReport {
    pub seed: u64,
    pub epsilon: f64,
    pub target: Vec<usize>,
    pub converged: bool,
    pub c_norm: f64,
    pub kl_to_target: f64,
    pub max_violation: f64,
    pub min_eig_sym: f64,
    pub sweeps: usize,
    pub equilibrium_residual_sq: f64,
    pub equilibrium_converged: bool,
    pub x: Vec<f64>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
}

impl SdpReport {
    /// `target` is one-based, as given on the command line.
    pub fn new(seed: u64, target: Vec<usize>, d: &MinNormDesign) -> Self {
        Self {
            seed,
            epsilon: d.epsilon,
            target,
            converged: d.converged,
            c_norm: d.c_norm,
            kl_to_target: d.kl_to_target,
            max_violation: d.max_violation,
            min_eig_sym: d.min_eig_sym,
            sweeps: d.sweeps,
            equilibrium_residual_sq: d.equilibrium_residual_sq,
            equilibrium_converged: d.equilibrium_converged,
            x: vec_of(&d.x),
            c: rows(&d.c),
        }
    }
}

#[derive(Serialize)]
pub struct BilevelReport {
    pub seed: u64,
    pub objective: String,
    pub rho: f64,
    pub step_alpha: f64,
    pub stop_eps: f64,
    pub converged: bool,
    pub outer_iterations: usize,
    pub objective_value: f64,
    pub c_norm: f64,
    pub x: Vec<f64>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    pub best_objective: f64,
    pub best_c_norm: f64,
    pub best_x: Vec<f64>,
    pub best_c: Vec<Vec<f64>>,
    pub history: Vec<HistoryEntry>,
}

impl BilevelReport {
    pub fn new(seed: u64, objective: &str, rho: f64, step_alpha: f64, stop_eps: f64, d: &DesignResult) -> Self {
        Self {
            seed,
            objective: objective.to_string(),
            rho,
            step_alpha,
            stop_eps,
            converged: d.converged,
            outer_iterations: d.outer_iterations,
            objective_value: d.objective_value,
            c_norm: d.c_norm,
            x: vec_of(&d.x),
            c: rows(&d.c),
            best_objective: d.best_objective,
            best_c_norm: d.best_c.norm(),
            best_x: vec_of(&d.best_x),
            best_c: rows(&d.best_c),
            history: d.history.clone(),
        }
    }
}

#[derive(Serialize)]
pub struct SimulationBlock {
    pub player: usize,
    pub cost: Vec<f64>,
    pub frequencies: Vec<f64>,
    pub logit: Vec<f64>,
    pub total_variation: f64,
}

#[derive(Serialize)]
pub struct SimulateReport {
    pub seed: u64,
    pub lambda: f64,
    pub samples: usize,
    pub players: Vec<SimulationBlock>,
}
