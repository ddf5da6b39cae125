//! Quantal response equilibria of multiplayer entropy-regularized matrix
//! games, and the inverse problem of designing the cost matrix `C` so that
//! the unique equilibrium is a desired joint strategy.

pub mod bilevel;
pub mod dykstra;
pub mod error;
pub mod experiments;
pub mod game;
pub mod gumbel;
pub mod linalg;
pub mod objective;
pub mod response;
pub mod sdp;
pub mod solver;

pub use nalgebra;

pub use error::{QreError, Result};
pub use game::{
    check_assumption, pure_to_strategy, AssumptionReport, Game, GameFile, JointStrategy,
    PlayerDims, PureTarget,
};
pub use gumbel::simulate_gumbel_choice;
pub use response::{logit_response, response_jacobian, stationarity_residual};
pub use solver::{solve_equilibrium, SolveOutcome, SolverConfig};
pub use objective::{kl_objective, potential_delay_objective, PerformanceObjective};
pub use sdp::{build_margin_constraints, project_cone_sum, solve_min_norm_design, MinNormDesign, SdpConfig};
pub use experiments::{build_collision_game, build_fair_game, AreaGraph};
pub use bilevel::{
    implicit_gradient, project_feasible, run_projected_gradient, BilevelConfig, DesignResult,
    FeasibleSetParams,
};
