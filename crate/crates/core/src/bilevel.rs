//! Design of `C` against a performance function of the equilibrium:
//! gradients through the equilibrium condition by implicit differentiation,
//! projection onto the certified Frobenius ball, and the projected-gradient
//! outer loop.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{QreError, Result};
use crate::game::{Game, JointStrategy, PlayerDims};
use crate::linalg;
use crate::objective::PerformanceObjective;
use crate::response::{cost_argument, softmax_blocks, softmax_jacobian};
use crate::sdp::project_cone_sum;
use crate::solver::{solve_equilibrium, SolverConfig};

/// Relative singular-value cutoff for the pseudoinverse.
pub const PINV_RCOND: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibleSetParams {
    /// Radius of the Frobenius ball.
    pub rho: f64,
}

impl FeasibleSetParams {
    pub fn new(rho: f64) -> Result<Self> {
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(QreError::InvalidConfig(format!("rho must be positive, got {rho}")));
        }
        Ok(Self { rho })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BilevelConfig {
    pub step_alpha: f64,
    /// Stop when successive iterates differ by at most this (Frobenius).
    pub stop_eps: f64,
    pub max_outer_iters: usize,
    pub inner: SolverConfig,
}

impl Default for BilevelConfig {
    fn default() -> Self {
        Self {
            step_alpha: 0.1,
            stop_eps: 1e-6,
            max_outer_iters: 5000,
            inner: SolverConfig::default(),
        }
    }
}

impl BilevelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_alpha > 0.0) || !(self.stop_eps > 0.0) || self.max_outer_iters == 0 {
            return Err(QreError::InvalidConfig(
                "step_alpha, stop_eps and max_outer_iters must be positive".into(),
            ));
        }
        self.inner.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub iteration: usize,
    pub objective_value: f64,
    /// `||C+ - C||_F` after this iteration's update.
    pub step_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignResult {
    pub c: DMatrix<f64>,
    /// Converged equilibrium of `c`.
    pub x: JointStrategy,
    pub objective_value: f64,
    pub c_norm: f64,
    pub outer_iterations: usize,
    pub converged: bool,
    pub history: Vec<HistoryEntry>,
    /// Lowest objective seen along the run, with its matrix and equilibrium.
    pub best_c: DMatrix<f64>,
    pub best_x: JointStrategy,
    pub best_objective: f64,
}

/// Approximate gradient of `psi(x(C))` with respect to `C`:
/// `-(1/lambda) D^T ((I + (1/lambda) D C)^+)^T grad_psi x^T`, where `D` is
/// the softmax Jacobian at `u = -(b + C x)/lambda`. Exact whenever the inner
/// matrix is nonsingular.
pub fn implicit_gradient(g: &Game, x: &JointStrategy, grad_psi_x: &DVector<f64>) -> Result<DMatrix<f64>> {
    let m = g.dims().total();
    if x.len() != m || grad_psi_x.len() != m {
        return Err(QreError::DimensionMismatch(format!(
            "strategy/gradient length {}/{}, expected {m}",
            x.len(),
            grad_psi_x.len()
        )));
    }
    let lambda = g.lambda();
    let p = softmax_blocks(g.dims(), &cost_argument(g, x.as_vector())?)?;
    let d = softmax_jacobian(g.dims(), &p);
    let inner = DMatrix::identity(m, m) + (&d * g.c()) / lambda;
    let pinv = linalg::pseudo_inverse(&inner, PINV_RCOND)?;
    let w = pinv.transpose() * grad_psi_x;
    let v = d.transpose() * w * (-1.0 / lambda);
    Ok(v * x.as_vector().transpose())
}

/// Projection onto the certified cone intersected with the Frobenius ball of
/// radius `rho`: cone projection followed by radial scaling.
pub fn project_feasible(c: &DMatrix<f64>, dims: &PlayerDims, p: &FeasibleSetParams) -> Result<DMatrix<f64>> {
    let a = project_cone_sum(c, dims)?;
    let norm = a.norm();
    Ok(a * (p.rho / p.rho.max(norm)))
}

/// Projected gradient descent on `psi(x(C))` over the feasible set, starting
/// from `g0`'s cost matrix.
pub fn run_projected_gradient(
    g0: &Game,
    obj: &dyn PerformanceObjective,
    p: &FeasibleSetParams,
    cfg: &BilevelConfig,
) -> Result<DesignResult> {
    g0.validate()?;
    cfg.validate()?;
    FeasibleSetParams::new(p.rho)?;
    let dims = g0.dims();
    let m = dims.total();

    let mut c = g0.c().clone();
    // the first update tests ||C+ - C|| against 2 eps * sqrt(m) > eps, so the loop is entered
    let mut c_next = &c + DMatrix::identity(m, m) * (2.0 * cfg.stop_eps);
    let mut history = Vec::new();
    let mut warm: Option<JointStrategy> = None;
    let mut last: Option<(DMatrix<f64>, JointStrategy, f64)> = None;
    let mut best: Option<(DMatrix<f64>, JointStrategy, f64)> = None;
    let mut iteration = 0;
    let mut converged = false;

    while iteration < cfg.max_outer_iters {
        if iteration > 0 && (&c_next - &c).norm() <= cfg.stop_eps {
            converged = true;
            break;
        }
        iteration += 1;
        c = if iteration == 1 {
            project_feasible(&c_next, dims, p)?
        } else {
            c_next.clone()
        };

        let game = g0.with_cost_matrix(c.clone())?;
        let eq = solve_equilibrium(&game, &cfg.inner, warm.as_ref())?;
        if !eq.converged {
            return Err(QreError::InnerSolveFailure {
                iteration,
                residual_sq: eq.residual_sq,
            });
        }
        let value = obj.value(&eq.x)?;
        let grad = implicit_gradient(&game, &eq.x, &obj.gradient(&eq.x)?)?;
        c_next = project_feasible(&(&c - grad * cfg.step_alpha), dims, p)?;

        history.push(HistoryEntry {
            iteration,
            objective_value: value,
            step_norm: (&c_next - &c).norm(),
        });
        if best.as_ref().map_or(true, |(_, _, v)| value < *v) {
            best = Some((c.clone(), eq.x.clone(), value));
        }
        warm = Some(eq.x.clone());
        last = Some((c.clone(), eq.x, value));
    }
    if !converged && iteration >= cfg.max_outer_iters {
        converged = (&c_next - &c).norm() <= cfg.stop_eps;
    }

    let (c, x, objective_value) = last.expect("at least one outer iteration runs");
    let (best_c, best_x, best_objective) = best.expect("at least one outer iteration runs");
    Ok(DesignResult {
        c_norm: c.norm(),
        c,
        x,
        objective_value,
        outer_iterations: iteration,
        converged,
        history,
        best_c,
        best_x,
        best_objective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{check_assumption, diag_block_asymmetry, pure_to_strategy, PureTarget};
    use crate::objective::{kl_objective, potential_delay_objective};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn certified_game(rng: &mut ChaCha8Rng, sizes: Vec<usize>, lambda: f64, scale: f64) -> Game {
        let dims = PlayerDims::new(sizes).unwrap();
        let m = dims.total();
        let a = DMatrix::from_fn(m, m, |_, _| rng.gen_range(-1.0..1.0));
        let mut s = DMatrix::from_fn(m, m, |_, _| rng.gen_range(-1.0..1.0));
        s = &s - s.transpose();
        for r in dims.ranges() {
            s.view_mut((r.start, r.start), (r.len(), r.len())).fill(0.0);
        }
        let c = (a.transpose() * a + s) * scale;
        let b = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
        Game::new(dims, lambda, b, c).unwrap()
    }

    fn random_interior(dims: &PlayerDims, rng: &mut ChaCha8Rng) -> JointStrategy {
        let mut v = DVector::zeros(dims.total());
        for r in dims.ranges() {
            let raw: Vec<f64> = r.clone().map(|_| rng.gen_range(0.1..1.0)).collect();
            let s: f64 = raw.iter().sum();
            for (k, w) in r.zip(raw) {
                v[k] = w / s;
            }
        }
        JointStrategy::new(dims, v).unwrap()
    }

    fn collision() -> (Game, PureTarget) {
        let dims = PlayerDims::uniform(4, 3).unwrap();
        let b: Vec<f64> = (0..4).flat_map(|_| [2.0, PI, PI]).collect();
        (
            Game::without_coupling(dims, 0.1, DVector::from_vec(b)).unwrap(),
            PureTarget::new(vec![2; 4]),
        )
    }

    fn tight() -> SolverConfig {
        SolverConfig::default().with_residual_tol(1e-26)
    }

    #[test]
    fn zero_objective_gradient_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = certified_game(&mut rng, vec![3, 3], 1.0, 1.0);
        let eq = solve_equilibrium(&g, &tight(), None).unwrap();
        let grad = implicit_gradient(&g, &eq.x, &DVector::zeros(6)).unwrap();
        assert_eq!(grad.amax(), 0.0);
    }

    #[test]
    fn uncoupled_gradient_reduces_to_direct_formula() {
        let dims = PlayerDims::new(vec![3, 2]).unwrap();
        let g = Game::without_coupling(dims.clone(), 0.4, DVector::from_vec(vec![0.1, 0.5, -0.2, 0.3, 0.0])).unwrap();
        let eq = solve_equilibrium(&g, &tight(), None).unwrap();
        let gpsi = DVector::from_vec(vec![1.0, -2.0, 0.5, 0.3, 0.7]);
        let got = implicit_gradient(&g, &eq.x, &gpsi).unwrap();
        let d = softmax_jacobian(&dims, eq.x.as_vector());
        let expected = d.transpose() * &gpsi * eq.x.as_vector().transpose() * (-1.0 / 0.4);
        assert!((got - expected).amax() < 1e-12);
    }

    /// Central differences of psi(x(C)) with a full re-solve per perturbation.
    fn resolve_fd(g: &Game, obj: &dyn PerformanceObjective, h: f64) -> DMatrix<f64> {
        let m = g.dims().total();
        let psi_at = |c: DMatrix<f64>| {
            let gg = g.with_cost_matrix(c).unwrap();
            let eq = solve_equilibrium(&gg, &tight(), None).unwrap();
            assert!(eq.converged);
            obj.value(&eq.x).unwrap()
        };
        DMatrix::from_fn(m, m, |p, q| {
            let mut up = g.c().clone();
            let mut dn = g.c().clone();
            up[(p, q)] += h;
            dn[(p, q)] -= h;
            (psi_at(up) - psi_at(dn)) / (2.0 * h)
        })
    }

    #[test]
    fn implicit_gradient_matches_resolve_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..5 {
            let g = certified_game(&mut rng, vec![3, 3], 0.5, 0.5);
            let dims = g.dims().clone();
            let target = random_interior(&dims, &mut rng);
            let obj = kl_objective(&dims, &target, 0.0).unwrap();
            let eq = solve_equilibrium(&g, &tight(), None).unwrap();
            let got = implicit_gradient(&g, &eq.x, &obj.gradient(&eq.x).unwrap()).unwrap();
            let fd = resolve_fd(&g, &obj, 1e-5);
            let rel = (&got - &fd).amax() / fd.amax();
            assert!(rel <= 1e-4, "relative error {rel}");
        }
    }

    #[test]
    fn feasible_projection_scales_into_ball() {
        let dims = PlayerDims::new(vec![2]).unwrap();
        let p = FeasibleSetParams::new(1.0).unwrap();
        let out = project_feasible(&(DMatrix::identity(2, 2) * 3.0), &dims, &p).unwrap();
        let expected = DMatrix::identity(2, 2) / 2f64.sqrt();
        assert!((out - expected).amax() < 1e-14);
    }

    #[test]
    fn feasible_projection_fixes_members() {
        let dims = PlayerDims::new(vec![2, 2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let p = FeasibleSetParams::new(rng.gen_range(0.1..5.0)).unwrap();
            let c = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-3.0..3.0));
            let once = project_feasible(&c, &dims, &p).unwrap();
            let twice = project_feasible(&once, &dims, &p).unwrap();
            assert!((&twice - &once).amax() <= 1e-10);
            assert!(once.norm() <= p.rho + 1e-9);
            assert!(linalg::min_eigenvalue(&linalg::symmetric_part(&once)).unwrap() >= -1e-9);
            assert!(diag_block_asymmetry(&once, &dims) <= 1e-10);
        }
    }

    #[test]
    fn rejects_nonpositive_rho() {
        assert!(FeasibleSetParams::new(0.0).is_err());
        assert!(FeasibleSetParams::new(f64::NAN).is_err());
    }

    #[test]
    fn tiny_radius_keeps_uncoupled_equilibrium() {
        let (g, t) = collision();
        let dims = g.dims().clone();
        let obj = kl_objective(&dims, &pure_to_strategy(&t, &dims).unwrap(), 1e-3).unwrap();
        let p = FeasibleSetParams::new(1e-8).unwrap();
        let res = run_projected_gradient(&g, &obj, &p, &BilevelConfig::default()).unwrap();
        assert!(res.c_norm <= 1e-8 + 1e-12);
        for i in 0..4 {
            assert!(res.x.block(&dims, i)[0] >= 0.99);
        }
    }

    #[test]
    fn collision_kl_improves_and_stays_feasible() {
        let (g, t) = collision();
        let dims = g.dims().clone();
        let obj = kl_objective(&dims, &pure_to_strategy(&t, &dims).unwrap(), 1e-3).unwrap();
        let base = obj.value(&solve_equilibrium(&g, &SolverConfig::default(), None).unwrap().x).unwrap();
        let p = FeasibleSetParams::new(7.0).unwrap();
        let cfg = BilevelConfig {
            max_outer_iters: 500,
            ..BilevelConfig::default()
        };
        let res = run_projected_gradient(&g, &obj, &p, &cfg).unwrap();
        assert!(res.objective_value < base);
        assert!(res.c_norm <= 7.0 + 1e-9);
        let designed = g.with_cost_matrix(res.c.clone()).unwrap();
        assert!(check_assumption(&designed, 1e-9).unwrap().passed);
    }

    #[test]
    fn every_iterate_is_feasible() {
        let dims = PlayerDims::uniform(3, 3).unwrap();
        let b = DVector::from_vec(vec![1.0, 1.5, 1.8, 1.8, 1.0, 1.5, 1.5, 1.8, 1.0]);
        let g = Game::without_coupling(dims.clone(), 0.2, b).unwrap();
        let obj = potential_delay_objective(&dims).unwrap();
        let p = FeasibleSetParams::new(2.0).unwrap();
        let cfg = BilevelConfig {
            max_outer_iters: 50,
            ..BilevelConfig::default()
        };
        // replay the loop by hand to inspect each C+
        let mut c = DMatrix::identity(9, 9) * (2.0 * cfg.stop_eps);
        for _ in 0..cfg.max_outer_iters {
            c = project_feasible(&c, &dims, &p).unwrap();
            let game = g.with_cost_matrix(c.clone()).unwrap();
            let eq = solve_equilibrium(&game, &cfg.inner, None).unwrap();
            let grad = implicit_gradient(&game, &eq.x, &obj.gradient(&eq.x).unwrap()).unwrap();
            c = project_feasible(&(&c - grad * cfg.step_alpha), &dims, &p).unwrap();
            assert!(linalg::min_eigenvalue(&linalg::symmetric_part(&c)).unwrap() >= -1e-9);
            assert!(c.norm() <= p.rho + 1e-9);
            assert!(diag_block_asymmetry(&c, &dims) <= 1e-10);
        }
        let res = run_projected_gradient(&g, &obj, &p, &cfg).unwrap();
        assert_eq!(res.history.len(), res.outer_iterations);
        assert!(res.best_objective <= res.history[0].objective_value);
    }
}
