//! WebAssembly bindings for the demo page in `www/`. Each export takes plain
//! numbers and returns a JSON string; errors come back as JS strings.

use qre_core::experiments::{
    allocation, build_collision_game, build_default_fair_game, experiment_sdp_config, fair_bilevel_config,
    AreaGraph, FAIR_STEP_ALPHA,
};
use qre_core::gumbel::total_variation;
use qre_core::nalgebra::DVector;
use qre_core::objective::{area_totals, PotentialDelay};
use qre_core::response::softmax_blocks;
use qre_core::{run_projected_gradient, simulate_gumbel_choice, solve_min_norm_design, FeasibleSetParams, PlayerDims};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Upper bound on Monte Carlo samples so the page stays responsive.
pub const MAX_SAMPLES: usize = 2_000_000;
pub const MAX_OUTER_ITERS: usize = 20_000;

#[derive(Serialize)]
pub struct CollisionDesign {
    pub epsilon: f64,
    pub converged: bool,
    pub c_norm: f64,
    pub kl_to_target: f64,
    /// Per rover: probabilities of beeline, clockwise, counterclockwise.
    pub strategies: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
}

#[derive(Serialize)]
pub struct FairAllocation {
    pub rho: f64,
    pub alpha: f64,
    pub converged: bool,
    pub outer_iterations: usize,
    pub potential_delay: f64,
    pub c_norm: f64,
    pub areas: Vec<String>,
    pub homes: Vec<String>,
    /// Company by area.
    pub allocation: Vec<Vec<f64>>,
    pub totals: Vec<f64>,
}

#[derive(Serialize)]
pub struct ChoiceSimulation {
    pub lambda: f64,
    pub samples: usize,
    pub seed: u64,
    pub frequencies: Vec<f64>,
    pub logit: Vec<f64>,
    pub total_variation: f64,
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("demo results serialize")
}

/// Min-norm cost matrix that sends all four rovers counterclockwise.
pub fn collision_design(epsilon: f64) -> Result<CollisionDesign, String> {
    let (g, t) = build_collision_game();
    let d = solve_min_norm_design(&g, &t, &experiment_sdp_config().with_epsilon(epsilon)).map_err(|e| e.to_string())?;
    Ok(CollisionDesign {
        epsilon,
        converged: d.converged && d.equilibrium_converged,
        c_norm: d.c_norm,
        kl_to_target: d.kl_to_target,
        strategies: (0..4).map(|i| d.x.block(g.dims(), i).to_vec()).collect(),
        c: (0..d.c.nrows()).map(|i| d.c.row(i).iter().copied().collect()).collect(),
    })
}

/// Projected-gradient design for the delivery companies at one radius.
pub fn fair_allocation(rho: f64, alpha: f64, max_outer_iters: usize) -> Result<FairAllocation, String> {
    if max_outer_iters == 0 || max_outer_iters > MAX_OUTER_ITERS {
        return Err(format!("iterations must lie in 1..={MAX_OUTER_ITERS}"));
    }
    let g = build_default_fair_game();
    let obj = PotentialDelay::new(g.dims()).map_err(|e| e.to_string())?;
    let p = FeasibleSetParams::new(rho).map_err(|e| e.to_string())?;
    let cfg = qre_core::BilevelConfig {
        step_alpha: alpha,
        max_outer_iters,
        ..fair_bilevel_config()
    };
    let d = run_projected_gradient(&g, &obj, &p, &cfg).map_err(|e| e.to_string())?;
    let graph = AreaGraph::grid3x3();
    Ok(FairAllocation {
        rho,
        alpha,
        converged: d.converged,
        outer_iterations: d.outer_iterations,
        potential_delay: d.best_objective,
        c_norm: d.best_c.norm(),
        homes: ["SW", "SE", "E"].iter().map(|s| s.to_string()).collect(),
        allocation: allocation(g.dims(), &d.best_x),
        totals: area_totals(g.dims(), &d.best_x),
        areas: graph.names,
    })
}

/// Gumbel-perturbed argmin frequencies next to the logit probabilities.
pub fn choice_simulation(costs: &[f64], lambda: f64, samples: usize, seed: u64) -> Result<ChoiceSimulation, String> {
    if samples > MAX_SAMPLES {
        return Err(format!("at most {MAX_SAMPLES} samples"));
    }
    let frequencies = simulate_gumbel_choice(costs, lambda, samples, seed).map_err(|e| e.to_string())?;
    let dims = PlayerDims::new(vec![costs.len()]).map_err(|e| e.to_string())?;
    let u = DVector::from_iterator(costs.len(), costs.iter().map(|c| -c / lambda));
    let logit: Vec<f64> = softmax_blocks(&dims, &u).map_err(|e| e.to_string())?.iter().copied().collect();
    Ok(ChoiceSimulation {
        lambda,
        samples,
        seed,
        total_variation: total_variation(&frequencies, &logit),
        frequencies,
        logit,
    })
}

#[wasm_bindgen(js_name = designCollision)]
pub fn design_collision_js(epsilon: f64) -> Result<String, JsValue> {
    collision_design(epsilon).map(|d| to_json(&d)).map_err(JsValue::from)
}

#[wasm_bindgen(js_name = fairAllocation)]
pub fn fair_allocation_js(rho: f64, alpha: Option<f64>, max_outer_iters: Option<u32>) -> Result<String, JsValue> {
    fair_allocation(rho, alpha.unwrap_or(FAIR_STEP_ALPHA), max_outer_iters.unwrap_or(5000) as usize)
        .map(|d| to_json(&d))
        .map_err(JsValue::from)
}

#[wasm_bindgen(js_name = simulateChoice)]
pub fn simulate_choice_js(costs: &[f64], lambda: f64, samples: u32, seed: u32) -> Result<String, JsValue> {
    choice_simulation(costs, lambda, samples as usize, seed as u64)
        .map(|d| to_json(&d))
        .map_err(JsValue::from)
}
