//! Min-norm design for a pure target: the smallest `C` (Frobenius norm) that
//! satisfies the uniqueness certificate and makes every player's target
//! action cheaper than each alternative by a margin `epsilon`, computed by
//! projecting the zero matrix onto that convex set with Dykstra's method.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dykstra::{dykstra, ConvexSet, DykstraConfig, HalfSpace};
use crate::error::{QreError, Result};
use crate::game::{diag_block_asymmetry, pure_to_strategy, Game, JointStrategy, PlayerDims, PureTarget};
use crate::linalg;
use crate::objective::{kl_objective, PerformanceObjective};
use crate::solver::{solve_equilibrium, SolverConfig};

/// `<normal, C> <= beta`: player `player`'s target action undercuts `action`
/// by the margin at the pure target profile.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginConstraint {
    pub normal: DMatrix<f64>,
    pub beta: f64,
    pub player: usize,
    pub action: usize,
}

impl MarginConstraint {
    /// Amount by which `c` violates the constraint (zero when satisfied).
    pub fn violation(&self, c: &DMatrix<f64>) -> f64 {
        (self.normal.dot(c) - self.beta).max(0.0)
    }
}

/// One constraint per player and non-target action:
/// `[b_i + (C x*)_i]_{i*} + epsilon <= [b_i + (C x*)_i]_k`.
pub fn build_margin_constraints(g: &Game, t: &PureTarget, epsilon: f64) -> Result<Vec<MarginConstraint>> {
    let dims = g.dims();
    t.validate(dims)?;
    let m = dims.total();
    let target_cols: Vec<usize> = (0..dims.players()).map(|j| t.row(dims, j)).collect();
    let mut out = Vec::new();
    for i in 0..dims.players() {
        let star = t.row(dims, i);
        for (action, k) in dims.range(i).enumerate() {
            if k == star {
                continue;
            }
            let mut normal = DMatrix::zeros(m, m);
            for &col in &target_cols {
                normal[(star, col)] += 1.0;
                normal[(k, col)] -= 1.0;
            }
            out.push(MarginConstraint {
                normal,
                beta: g.b()[k] - g.b()[star] - epsilon,
                player: i,
                action,
            });
        }
    }
    Ok(out)
}

/// Projection onto `{C : C + C^T >= 0, C_ii = C_ii^T}`: the PSD part of the
/// symmetric half plus the skew half with its diagonal blocks removed.
pub fn project_cone_sum(c: &DMatrix<f64>, dims: &PlayerDims) -> Result<DMatrix<f64>> {
    let m = dims.total();
    if c.nrows() != m || c.ncols() != m {
        return Err(QreError::DimensionMismatch(format!(
            "matrix is {}x{}, expected {m}x{m}",
            c.nrows(),
            c.ncols()
        )));
    }
    let sym = linalg::project_psd(&linalg::symmetric_part(c))?;
    let mut skew = linalg::skew_part(c);
    for r in dims.ranges() {
        skew.view_mut((r.start, r.start), (r.len(), r.len())).fill(0.0);
    }
    Ok(sym + skew)
}

/// Cone membership measure: negative spectrum of the symmetric part plus
/// diagonal-block asymmetry.
pub fn cone_violation(c: &DMatrix<f64>, dims: &PlayerDims) -> Result<f64> {
    let min_eig = linalg::min_eigenvalue(&linalg::symmetric_part(c))?;
    Ok((-min_eig).max(0.0).max(diag_block_asymmetry(c, dims)))
}

struct CertificateCone<'a>(&'a PlayerDims);

impl ConvexSet for CertificateCone<'_> {
    fn project(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        project_cone_sum(x, self.0)
    }

    fn violation(&self, x: &DMatrix<f64>) -> f64 {
        cone_violation(x, self.0).unwrap_or(f64::INFINITY)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdpConfig {
    /// Cost separation between the target action and every alternative.
    pub epsilon: f64,
    pub dykstra_tol: f64,
    pub max_sweeps: usize,
    /// Smoothing of the pure target when reporting the KL divergence.
    pub kl_delta: f64,
    pub inner: SolverConfig,
}

impl Default for SdpConfig {
    fn default() -> Self {
        Self {
            epsilon: 3.0,
            dykstra_tol: 1e-8,
            max_sweeps: 50_000,
            kl_delta: 1e-12,
            inner: SolverConfig::default(),
        }
    }
}

impl SdpConfig {
    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(QreError::InvalidConfig("epsilon must be nonnegative".into()));
        }
        if !(self.dykstra_tol > 0.0) || self.max_sweeps == 0 {
            return Err(QreError::InvalidConfig("dykstra_tol and max_sweeps must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.kl_delta) {
            return Err(QreError::InvalidConfig("kl_delta must lie in [0, 1]".into()));
        }
        self.inner.validate()
    }
}

/// Result of the min-norm design.
#[derive(Debug, Clone, PartialEq)]
pub struct MinNormDesign {
    pub c: DMatrix<f64>,
    /// Equilibrium induced by `c`.
    pub x: JointStrategy,
    pub epsilon: f64,
    pub c_norm: f64,
    /// `KL(x || smoothed target)`.
    pub kl_to_target: f64,
    /// Largest margin-constraint violation at `c`.
    pub max_violation: f64,
    /// Smallest eigenvalue of `(c + c^T)/2`.
    pub min_eig_sym: f64,
    pub sweeps: usize,
    pub converged: bool,
    pub equilibrium_residual_sq: f64,
    pub equilibrium_converged: bool,
}

/// Nearest point to `anchor` satisfying the certificate cone and all margin
/// constraints. With a zero anchor this is the min-norm design.
pub fn project_onto_design_set(
    anchor: &DMatrix<f64>,
    dims: &PlayerDims,
    constraints: &[MarginConstraint],
    dcfg: &DykstraConfig,
) -> Result<crate::dykstra::DykstraOutcome> {
    let half_spaces: Vec<HalfSpace> = constraints
        .iter()
        .map(|c| HalfSpace::new(c.normal.clone(), c.beta))
        .collect();
    let cone = CertificateCone(dims);
    let mut sets: Vec<&dyn ConvexSet> = half_spaces.iter().map(|h| h as &dyn ConvexSet).collect();
    // last, so the returned point lies in the cone up to eigen round-off
    sets.push(&cone);
    dykstra(anchor, &sets, dcfg)
}

pub fn solve_min_norm_design(g: &Game, t: &PureTarget, cfg: &SdpConfig) -> Result<MinNormDesign> {
    g.validate()?;
    cfg.validate()?;
    let dims = g.dims();
    let constraints = build_margin_constraints(g, t, cfg.epsilon)?;
    let dcfg = DykstraConfig {
        tol: cfg.dykstra_tol,
        max_sweeps: cfg.max_sweeps,
        ..DykstraConfig::default()
    };
    let m = dims.total();
    let out = project_onto_design_set(&DMatrix::zeros(m, m), dims, &constraints, &dcfg)?;
    let c = out.point;

    let designed = g.with_cost_matrix(c.clone())?;
    let eq = solve_equilibrium(&designed, &cfg.inner, None)?;
    let target = pure_to_strategy(t, dims)?;
    let kl = kl_objective(dims, &target, cfg.kl_delta)?.value(&eq.x)?;
    let max_violation = constraints.iter().map(|k| k.violation(&c)).fold(0.0, f64::max);
    let min_eig_sym = linalg::min_eigenvalue(&linalg::symmetric_part(&c))?;

    Ok(MinNormDesign {
        c_norm: c.norm(),
        c,
        x: eq.x,
        epsilon: cfg.epsilon,
        kl_to_target: kl,
        max_violation,
        min_eig_sym,
        sweeps: out.sweeps,
        converged: out.converged,
        equilibrium_residual_sq: eq.residual_sq,
        equilibrium_converged: eq.converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::check_assumption;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{PI, SQRT_2};

    fn collision() -> (Game, PureTarget) {
        let dims = PlayerDims::uniform(4, 3).unwrap();
        let b: Vec<f64> = (0..4).flat_map(|_| [2.0, PI, PI]).collect();
        (
            Game::without_coupling(dims, 0.1, DVector::from_vec(b)).unwrap(),
            PureTarget::new(vec![2; 4]),
        )
    }

    fn two_action(b: [f64; 2]) -> Game {
        Game::without_coupling(PlayerDims::new(vec![2]).unwrap(), 1.0, DVector::from_vec(b.to_vec())).unwrap()
    }

    fn random_matrix(rng: &mut ChaCha8Rng, m: usize, scale: f64) -> DMatrix<f64> {
        DMatrix::from_fn(m, m, |_, _| rng.gen_range(-scale..scale))
    }

    #[test]
    fn collision_constraint_structure() {
        let (g, t) = collision();
        let cons = build_margin_constraints(&g, &t, 3.0).unwrap();
        assert_eq!(cons.len(), 8);
        for c in &cons {
            assert_eq!(c.normal.iter().filter(|&&v| v == 1.0).count(), 4);
            assert_eq!(c.normal.iter().filter(|&&v| v == -1.0).count(), 4);
            assert_eq!(c.normal.iter().filter(|&&v| v != 0.0).count(), 8);
            // beeline: 2 - pi - 3; clockwise semicircle: pi - pi - 3
            let expected = if c.action == 0 { 2.0 - PI - 3.0 } else { -3.0 };
            assert!((c.beta - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn already_separated_single_player() {
        let g = two_action([0.0, 1.0]);
        let t = PureTarget::new(vec![0]);
        let cons = build_margin_constraints(&g, &t, 0.0).unwrap();
        assert_eq!(cons.len(), 1);
        assert_eq!(cons[0].beta, 1.0);
        assert_eq!(cons[0].violation(&DMatrix::zeros(2, 2)), 0.0);

        let d = solve_min_norm_design(&g, &t, &SdpConfig::default().with_epsilon(0.0)).unwrap();
        assert!(d.converged);
        assert!(d.c_norm < 1e-12);
    }

    #[test]
    fn huge_margin_still_builds() {
        let (g, t) = collision();
        let cons = build_margin_constraints(&g, &t, 1e6).unwrap();
        assert!(cons.iter().all(|c| c.beta.is_finite() && c.beta < -1e5));
    }

    #[test]
    fn target_index_checked() {
        let g = two_action([0.0, 1.0]);
        assert!(matches!(
            build_margin_constraints(&g, &PureTarget::new(vec![2]), 0.0),
            Err(QreError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn cone_projection_fixes_members() {
        let dims = PlayerDims::new(vec![2, 3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let member = project_cone_sum(&random_matrix(&mut rng, 5, 2.0), &dims).unwrap();
            let again = project_cone_sum(&member, &dims).unwrap();
            assert!((&again - &member).amax() < 1e-10);
        }
    }

    #[test]
    fn cone_projection_of_negative_definite_is_zero() {
        let dims = PlayerDims::new(vec![3]).unwrap();
        let p = project_cone_sum(&(DMatrix::identity(3, 3) * -2.0), &dims).unwrap();
        assert!(p.amax() < 1e-15);
    }

    /// Random member of the cone: PSD plus skew with zero diagonal blocks.
    fn random_cone_member(rng: &mut ChaCha8Rng, dims: &PlayerDims) -> DMatrix<f64> {
        let m = dims.total();
        let rank = rng.gen_range(0..=m);
        let a = DMatrix::from_fn(rank, m, |_, _| rng.gen_range(-1.0..1.0));
        let mut s = random_matrix(rng, m, 1.0);
        s = &s - s.transpose();
        for r in dims.ranges() {
            s.view_mut((r.start, r.start), (r.len(), r.len())).fill(0.0);
        }
        a.transpose() * a * rng.gen_range(0.0..3.0) + s * rng.gen_range(0.0..3.0)
    }

    #[test]
    fn cone_projection_variational_inequality() {
        let dims = PlayerDims::new(vec![2, 2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let c = random_matrix(&mut rng, 4, 3.0);
            let p = project_cone_sum(&c, &dims).unwrap();
            let resid = &c - &p;
            for _ in 0..10_000 {
                let y = random_cone_member(&mut rng, &dims);
                assert!(resid.dot(&(&y - &p)) <= 1e-9);
            }
        }
    }

    #[test]
    fn cone_projection_is_nonexpansive() {
        let dims = PlayerDims::new(vec![1, 3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..200 {
            let a = random_matrix(&mut rng, 4, 5.0);
            let b = random_matrix(&mut rng, 4, 5.0);
            let pa = project_cone_sum(&a, &dims).unwrap();
            let pb = project_cone_sum(&b, &dims).unwrap();
            assert!((pa - pb).norm() <= (a - b).norm() + 1e-12);
        }
    }

    #[test]
    fn analytic_single_player_design() {
        // b = [0, 1], target action 0, epsilon = 3: need C_10 - C_00 >= 2 with C
        // symmetric PSD. The optimum is rank one along w ~ (sqrt2 - 1, 1) with
        // ||C||_F = 2 d (sqrt2 + 1), d = 2.
        let g = two_action([0.0, 1.0]);
        let d = solve_min_norm_design(&g, &PureTarget::new(vec![0]), &SdpConfig::default()).unwrap();
        assert!(d.converged);
        let norm = 4.0 * (SQRT_2 + 1.0);
        let w = DVector::from_vec(vec![SQRT_2 - 1.0, 1.0]).normalize();
        let expected = &w * w.transpose() * norm;
        assert!((&d.c - &expected).amax() < 1e-6, "{} vs {}", d.c, expected);
        assert!((d.c_norm - norm).abs() < 1e-6);
    }

    #[test]
    fn collision_design_meets_margins() {
        let (g, t) = collision();
        let d = solve_min_norm_design(&g, &t, &SdpConfig::default()).unwrap();
        assert!(d.converged);
        assert!(d.max_violation <= 1e-6);
        assert!(d.min_eig_sym >= -1e-9);
        let designed = g.with_cost_matrix(d.c.clone()).unwrap();
        assert!(check_assumption(&designed, 1e-9).unwrap().passed);
        for i in 0..4 {
            assert!(d.x.block(g.dims(), i)[2] >= 0.9);
        }
    }

    #[test]
    fn design_is_min_norm_among_sampled_feasible_points() {
        let dims = PlayerDims::new(vec![2, 2]).unwrap();
        let g = Game::without_coupling(dims.clone(), 0.5, DVector::from_vec(vec![0.0, 0.4, 0.2, 0.0])).unwrap();
        let t = PureTarget::new(vec![1, 0]);
        let cfg = SdpConfig::default().with_epsilon(1.0);
        let d = solve_min_norm_design(&g, &t, &cfg).unwrap();
        assert!(d.converged);

        let cons = build_margin_constraints(&g, &t, cfg.epsilon).unwrap();
        let dcfg = DykstraConfig {
            tol: 1e-9,
            ..DykstraConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..1000 {
            let anchor = random_matrix(&mut rng, 4, 4.0);
            let y = project_onto_design_set(&anchor, &dims, &cons, &dcfg).unwrap();
            assert!(y.max_violation <= 1e-7);
            assert!(d.c_norm <= y.point.norm() + 1e-6);
        }
    }
}
