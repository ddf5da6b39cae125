//! Forward problem: find `x` with `x = f(-(b + C x)/lambda)` by minimizing
//! `||x - f(u(x))||^2` with Gauss-Newton and Armijo backtracking. If that
//! stalls, Newton's method on the cost argument `u = -(b + C f(u))/lambda`
//! takes over; it needs no clamping since `f(u)` is always interior.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{QreError, Result};
use crate::game::{check_assumption, Game, JointStrategy, PlayerDims, ASSUMPTION_TOL};
use crate::linalg;
use crate::response::{cost_argument, softmax_blocks, softmax_jacobian};

/// Entries are kept at or above this floor so that logarithms stay finite.
pub const STRATEGY_FLOOR: f64 = 1e-300;

const PINV_CUTOFF: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Stop once the squared residual is at or below this value.
    pub residual_tol: f64,
    pub max_iters: usize,
    pub armijo_c: f64,
    pub backtrack_factor: f64,
    pub max_backtracks: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            residual_tol: 1e-10,
            max_iters: 200,
            armijo_c: 1e-4,
            backtrack_factor: 0.5,
            max_backtracks: 40,
        }
    }
}

impl SolverConfig {
    pub fn with_residual_tol(mut self, tol: f64) -> Self {
        self.residual_tol = tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(QreError::InvalidConfig(what.to_string()));
        if !(self.residual_tol > 0.0) {
            return bad("residual_tol must be positive");
        }
        if self.max_iters == 0 || self.max_backtracks == 0 {
            return bad("iteration limits must be positive");
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return bad("armijo_c must lie in (0, 1)");
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return bad("backtrack_factor must lie in (0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    pub x: JointStrategy,
    pub residual_sq: f64,
    pub iterations: usize,
    /// `residual_sq <= residual_tol`.
    pub converged: bool,
    /// Whether the game satisfies the uniqueness assumption.
    pub certified: bool,
}

/// Residual `x - f(u(x))` together with the response probabilities.
fn residual(g: &Game, x: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
    let p = softmax_blocks(g.dims(), &cost_argument(g, x)?)?;
    Ok((x - &p, p))
}

/// Clamp to the floor and rescale every block to sum to one.
fn renormalize(dims: &PlayerDims, x: &mut DVector<f64>) {
    for r in dims.ranges() {
        let mut total = 0.0;
        for k in r.clone() {
            x[k] = x[k].max(STRATEGY_FLOOR);
            total += x[k];
        }
        for k in r {
            x[k] /= total;
        }
    }
}

/// Residual Jacobian `I + (1/lambda) D C` where `D` is the softmax Jacobian.
pub fn residual_jacobian(g: &Game, p: &DVector<f64>) -> DMatrix<f64> {
    let m = g.dims().total();
    let d = softmax_jacobian(g.dims(), p);
    DMatrix::identity(m, m) + (d * g.c()) / g.lambda()
}

fn gauss_newton_step(j: &DMatrix<f64>, r: &DVector<f64>) -> Result<DVector<f64>> {
    let jt = j.transpose();
    let rhs = -(&jt * r);
    if let Some(chol) = (&jt * j).cholesky() {
        let s = chol.solve(&rhs);
        if s.iter().all(|v| v.is_finite()) {
            return Ok(s);
        }
    }
    let pinv = linalg::pseudo_inverse(j, PINV_CUTOFF)?;
    Ok(-(pinv * r))
}

/// Solves for the quantal response equilibrium starting from `x0` (uniform
/// when absent). A run that stalls or hits `max_iters` is returned with
/// `converged = false` and the best iterate found.
pub fn solve_equilibrium(
    g: &Game,
    cfg: &SolverConfig,
    x0: Option<&JointStrategy>,
) -> Result<SolveOutcome> {
    g.validate()?;
    cfg.validate()?;
    let dims = g.dims();
    let certified = check_assumption(g, ASSUMPTION_TOL)?.passed;

    let mut x = match x0 {
        Some(x0) => {
            if x0.len() != dims.total() {
                return Err(QreError::DimensionMismatch(format!(
                    "initial strategy has length {}, expected {}",
                    x0.len(),
                    dims.total()
                )));
            }
            x0.as_vector().clone()
        }
        None => JointStrategy::uniform(dims).into_vector(),
    };
    renormalize(dims, &mut x);

    let (mut r, mut p) = residual(g, &x)?;
    let mut phi = r.norm_squared();
    let mut iterations = 0;

    while phi > cfg.residual_tol && iterations < cfg.max_iters {
        let j = residual_jacobian(g, &p);
        let step = gauss_newton_step(&j, &r)?;
        // directional derivative of phi/2 along the step
        let slope = (j.transpose() * &r).dot(&step);
        if !(slope < 0.0) {
            break;
        }

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..cfg.max_backtracks {
            let mut candidate = &x + &step * t;
            renormalize(dims, &mut candidate);
            let (rc, pc) = residual(g, &candidate)?;
            let phi_c = rc.norm_squared();
            if 0.5 * phi_c <= 0.5 * phi + cfg.armijo_c * t * slope {
                accepted = Some((candidate, rc, pc, phi_c));
                break;
            }
            t *= cfg.backtrack_factor;
        }
        iterations += 1;
        match accepted {
            Some((xc, rc, pc, phi_c)) => {
                x = xc;
                r = rc;
                p = pc;
                phi = phi_c;
            }
            // no sufficient decrease: round-off floor or a genuine stall
            None => break,
        }
    }

    // the fallback shares the iteration budget
    if phi > cfg.residual_tol && iterations < cfg.max_iters {
        let (xu, phi_u, iters_u) = newton_on_costs(g, cfg, &x, cfg.max_iters - iterations)?;
        iterations += iters_u;
        if phi_u < phi {
            x = xu;
            phi = phi_u;
        }
    }

    Ok(SolveOutcome {
        x: JointStrategy::from_raw(x),
        residual_sq: phi,
        iterations,
        converged: phi <= cfg.residual_tol,
        certified,
    })
}

/// Newton with backtracking on `R(u) = u + (b + C f(u))/lambda`, started
/// from the cost argument of `x`. Returns `f(u)`, its squared strategy-space
/// residual and the iteration count.
fn newton_on_costs(
    g: &Game,
    cfg: &SolverConfig,
    x: &DVector<f64>,
    budget: usize,
) -> Result<(DVector<f64>, f64, usize)> {
    let dims = g.dims();
    let m = dims.total();
    let lambda = g.lambda();
    let cost_residual = |u: &DVector<f64>| -> Result<(DVector<f64>, DVector<f64>)> {
        let p = softmax_blocks(dims, u)?;
        let r = u + g.action_costs(&p) / lambda;
        Ok((r, p))
    };

    let mut u = cost_argument(g, x)?;
    let (mut r, mut p) = cost_residual(&u)?;
    let mut merit = r.norm_squared();
    let mut phi = residual(g, &p)?.0.norm_squared();
    let mut iterations = 0;

    while phi > cfg.residual_tol && iterations < budget {
        let j = DMatrix::identity(m, m) + g.c() * softmax_jacobian(dims, &p) / lambda;
        let step = match j.clone().lu().solve(&r) {
            Some(s) if s.iter().all(|v| v.is_finite()) => -s,
            _ => -(linalg::pseudo_inverse(&j, PINV_CUTOFF)? * &r),
        };
        let slope = (j.transpose() * &r).dot(&step);
        if !(slope < 0.0) {
            break;
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..cfg.max_backtracks {
            let candidate = &u + &step * t;
            let (rc, pc) = cost_residual(&candidate)?;
            let merit_c = rc.norm_squared();
            if 0.5 * merit_c <= 0.5 * merit + cfg.armijo_c * t * slope {
                accepted = Some((candidate, rc, pc, merit_c));
                break;
            }
            t *= cfg.backtrack_factor;
        }
        iterations += 1;
        match accepted {
            Some((uc, rc, pc, merit_c)) => {
                u = uc;
                r = rc;
                p = pc;
                merit = merit_c;
                phi = residual(g, &p)?.0.norm_squared();
            }
            None => break,
        }
    }
    Ok((p, phi, iterations))
}
