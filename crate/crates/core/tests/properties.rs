use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use qre_core::gumbel::total_variation;
use qre_core::sdp::cone_violation;
use qre_core::{
    check_assumption, kl_objective, logit_response, project_feasible, pure_to_strategy,
    run_projected_gradient, simulate_gumbel_choice, solve_equilibrium, solve_min_norm_design,
    stationarity_residual, BilevelConfig, FeasibleSetParams, Game, JointStrategy,
    PerformanceObjective, PlayerDims, PureTarget, SdpConfig, SolverConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dims_from(rng: &mut ChaCha8Rng) -> PlayerDims {
    let players = rng.gen_range(1..=3);
    PlayerDims::new((0..players).map(|_| rng.gen_range(2..=4)).collect()).unwrap()
}

/// `A A^T` plus a skew part that vanishes on the diagonal blocks.
fn certified_matrix(rng: &mut ChaCha8Rng, dims: &PlayerDims) -> DMatrix<f64> {
    let m = dims.total();
    let a = DMatrix::from_fn(m, m, |_, _| rng.gen_range(-1.0..1.0));
    let mut k = DMatrix::from_fn(m, m, |_, _| rng.gen_range(-1.0..1.0));
    k = &k - k.transpose();
    for r in dims.ranges() {
        k.view_mut((r.start, r.start), (r.len(), r.len())).fill(0.0);
    }
    &a * a.transpose() + k
}

fn random_game(seed: u64) -> Game {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = dims_from(&mut rng);
    let m = dims.total();
    let lambda = rng.gen_range(0.2..2.0);
    let b = DVector::from_fn(m, |_, _| rng.gen_range(0.0..2.0));
    let c = certified_matrix(&mut rng, &dims);
    Game::new(dims, lambda, b, c).unwrap()
}

fn tight() -> SolverConfig {
    SolverConfig::default().with_residual_tol(1e-24)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn equilibria_are_interior_fixed_points(seed in any::<u64>()) {
        let g = random_game(seed);
        let out = solve_equilibrium(&g, &tight(), None).unwrap();
        prop_assert!(out.converged);
        prop_assert!(out.certified);
        for r in g.dims().ranges() {
            let block = &out.x.as_slice()[r];
            prop_assert!(block.iter().all(|&p| p > 0.0));
            prop_assert!((block.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        prop_assert!(stationarity_residual(&g, &out.x).unwrap() < 1e-10);
    }

    #[test]
    fn solver_agrees_with_contracting_picard_iteration(seed in any::<u64>()) {
        // Each softmax block has Jacobian norm at most 1/2 per unit of cost, so with
        // ||C||_2 <= lambda the best-response map halves distances.
        let g = random_game(seed);
        let norm2 = g.c().clone().svd(false, false).singular_values.max();
        let g = g.with_cost_matrix(g.c() * (g.lambda() / norm2.max(1e-12))).unwrap();
        let mut x = JointStrategy::uniform(g.dims());
        for _ in 0..120 {
            x = logit_response(&g, &x).unwrap();
        }
        let out = solve_equilibrium(&g, &tight(), None).unwrap();
        prop_assert!((out.x.as_vector() - x.as_vector()).amax() < 1e-10);
    }

    #[test]
    fn feasible_projection_is_idempotent_and_certified(seed in any::<u64>(), rho in 0.05f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = dims_from(&mut rng);
        let m = dims.total();
        let y = DMatrix::from_fn(m, m, |_, _| rng.gen_range(-5.0..5.0));
        let p = FeasibleSetParams::new(rho).unwrap();
        let c = project_feasible(&y, &dims, &p).unwrap();
        let again = project_feasible(&c, &dims, &p).unwrap();
        prop_assert!((&again - &c).norm() <= 1e-9 * (1.0 + c.norm()));
        prop_assert!(c.norm() <= rho * (1.0 + 1e-12));
        prop_assert!(cone_violation(&c, &dims).unwrap() < 1e-9);
        let g = Game::new(dims.clone(), 1.0, DVector::zeros(m), c.clone()).unwrap();
        prop_assert!(check_assumption(&g, 1e-9).unwrap().passed);
    }

    #[test]
    fn feasible_projection_is_nonexpansive(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = dims_from(&mut rng);
        let m = dims.total();
        let y1 = DMatrix::from_fn(m, m, |_, _| rng.gen_range(-3.0..3.0));
        let y2 = DMatrix::from_fn(m, m, |_, _| rng.gen_range(-3.0..3.0));
        let p = FeasibleSetParams::new(2.0).unwrap();
        let d = (project_feasible(&y1, &dims, &p).unwrap() - project_feasible(&y2, &dims, &p).unwrap()).norm();
        prop_assert!(d <= (&y1 - &y2).norm() + 1e-9);
    }

    #[test]
    fn gumbel_frequencies_are_distributions(
        cost in prop::collection::vec(-2.0f64..2.0, 2..6),
        lambda in 0.1f64..3.0,
        seed in any::<u64>(),
    ) {
        let freq = simulate_gumbel_choice(&cost, lambda, 2_000, seed).unwrap();
        prop_assert_eq!(freq.len(), cost.len());
        prop_assert!(freq.iter().all(|&f| (0.0..=1.0).contains(&f)));
        prop_assert!((freq.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert_eq!(freq, simulate_gumbel_choice(&cost, lambda, 2_000, seed).unwrap());
    }

    #[test]
    fn game_json_round_trips_bit_for_bit(seed in any::<u64>()) {
        let g = random_game(seed);
        let back = Game::from_json(&g.to_json()).unwrap();
        prop_assert_eq!(back.lambda().to_bits(), g.lambda().to_bits());
        prop_assert!(back.b().iter().zip(g.b().iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
        prop_assert!(back.c().iter().zip(g.c().iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
        prop_assert_eq!(back.dims().sizes(), g.dims().sizes());
    }
}

#[test]
fn gumbel_matches_logit_at_scale() {
    let cost: [f64; 4] = [0.3, -0.2, 1.1, 0.0];
    let lambda = 0.7;
    let w: Vec<f64> = cost.iter().map(|c| (-c / lambda).exp()).collect();
    let z: f64 = w.iter().sum();
    let logit: Vec<f64> = w.iter().map(|v| v / z).collect();
    let freq = simulate_gumbel_choice(&cost, lambda, 400_000, 11).unwrap();
    assert!(total_variation(&freq, &logit) < 5e-3);
}

#[test]
fn min_norm_design_meets_margins_on_random_targets() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..6 {
        let dims = dims_from(&mut rng);
        let m = dims.total();
        let b = DVector::from_fn(m, |_, _| rng.gen_range(0.0..1.0));
        let g = Game::without_coupling(dims.clone(), 0.5, b).unwrap();
        let t = PureTarget::new(dims.sizes().iter().map(|&n| rng.gen_range(0..n)).collect());
        let cfg = SdpConfig::default().with_epsilon(1.0);
        let d = solve_min_norm_design(&g, &t, &cfg).unwrap();
        assert!(d.converged);
        assert!(d.max_violation < 1e-6, "violation {}", d.max_violation);
        assert!(d.min_eig_sym > -1e-6);

        // at the target, each chosen action is cheaper than every alternative by epsilon
        let x = pure_to_strategy(&t, &dims).unwrap();
        let costs = g.with_cost_matrix(d.c.clone()).unwrap().action_costs(x.as_vector());
        for (p, r) in dims.ranges().enumerate() {
            let chosen = costs[t.row(&dims, p)];
            for i in r.filter(|&i| i != t.row(&dims, p)) {
                assert!(costs[i] - chosen >= 1.0 - 1e-6);
            }
        }
    }
}

#[test]
fn min_norm_design_is_zero_when_the_margin_already_holds() {
    let dims = PlayerDims::new(vec![2, 3]).unwrap();
    let b = DVector::from_vec(vec![0.0, 2.0, 3.0, 0.0, 3.0]);
    let g = Game::without_coupling(dims, 1.0, b).unwrap();
    let t = PureTarget::new(vec![0, 1]);
    let d = solve_min_norm_design(&g, &t, &SdpConfig::default().with_epsilon(1.0)).unwrap();
    assert!(d.c_norm < 1e-9);
}

#[test]
fn projected_gradient_never_reports_worse_than_its_start() {
    for seed in 0..4 {
        let g = random_game(seed);
        let dims = g.dims().clone();
        let g = g.with_cost_matrix(DMatrix::zeros(dims.total(), dims.total())).unwrap();
        let t = PureTarget::new(vec![0; dims.players()]);
        let target = pure_to_strategy(&t, &dims).unwrap();
        let obj = kl_objective(&dims, &target, 1e-3).unwrap();
        let start = solve_equilibrium(&g, &tight(), None).unwrap();
        let psi0 = obj.value(&start.x).unwrap();
        let cfg = BilevelConfig { max_outer_iters: 200, inner: tight(), ..Default::default() };
        let r = run_projected_gradient(&g, &obj, &FeasibleSetParams::new(1.0).unwrap(), &cfg).unwrap();
        assert!(r.best_objective <= psi0 + 1e-12);
        assert!(r.best_c.norm() <= 1.0 + 1e-9);
    }
}
