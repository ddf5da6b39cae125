//! Monte Carlo check of the logit response: sample Gumbel perception noise
//! and count which action wins.

use rand::distributions::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{QreError, Result};

/// Empirical choice frequencies when each of `samples` decision makers picks
/// `argmax_k(-cost_k + xi_k)` with `xi_k ~ Gumbel(0, lambda)`.
pub fn simulate_gumbel_choice(cost: &[f64], lambda: f64, samples: usize, seed: u64) -> Result<Vec<f64>> {
    if cost.is_empty() {
        return Err(QreError::DimensionMismatch("cost vector is empty".into()));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(QreError::NonFiniteInput("cost"));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(QreError::NonPositiveLambda(lambda));
    }
    if samples == 0 {
        return Err(QreError::InvalidConfig("samples must be positive".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0u64; cost.len()];
    for _ in 0..samples {
        let mut best = 0;
        let mut best_val = f64::NEG_INFINITY;
        for (k, &c) in cost.iter().enumerate() {
            let u: f64 = rng.sample(Open01);
            let xi = -lambda * (-u.ln()).ln();
            let v = -c + xi;
            if v > best_val {
                best_val = v;
                best = k;
            }
        }
        counts[best] += 1;
    }
    let n = samples as f64;
    Ok(counts.into_iter().map(|c| c as f64 / n).collect())
}

/// Total-variation distance between two distributions on the same support.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::response::softmax_blocks;
    use crate::game::PlayerDims;
    use nalgebra::DVector;
    use std::f64::consts::PI;

    fn logit(cost: &[f64], lambda: f64) -> Vec<f64> {
        let dims = PlayerDims::new(vec![cost.len()]).unwrap();
        let u = DVector::from_iterator(cost.len(), cost.iter().map(|c| -c / lambda));
        softmax_blocks(&dims, &u).unwrap().iter().copied().collect()
    }

    #[test]
    fn symmetric_costs_give_uniform_frequencies() {
        let f = simulate_gumbel_choice(&[0.0, 0.0, 0.0], 1.0, 1_000_000, 0).unwrap();
        for v in &f {
            assert!((v - 1.0 / 3.0).abs() < 0.01);
        }
    }

    #[test]
    fn beeline_is_chosen_almost_always() {
        let f = simulate_gumbel_choice(&[2.0, PI, PI], 0.1, 1_000_000, 3).unwrap();
        assert!(f[0] >= 0.999);
        assert!(total_variation(&f, &logit(&[2.0, PI, PI], 0.1)) <= 0.01);
    }

    #[test]
    fn frequencies_sum_to_one() {
        let f = simulate_gumbel_choice(&[0.3, 1.7, -0.4, 2.2], 0.8, 12_345, 99).unwrap();
        assert!((f.iter().sum::<f64>() - 1.0).abs() <= 4.0 * f64::EPSILON);
    }

    #[test]
    fn same_seed_same_draws() {
        let a = simulate_gumbel_choice(&[0.1, 0.2], 0.5, 5000, 42).unwrap();
        let b = simulate_gumbel_choice(&[0.1, 0.2], 0.5, 5000, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(simulate_gumbel_choice(&[f64::NAN], 1.0, 10, 0).is_err());
        assert!(simulate_gumbel_choice(&[0.0], 0.0, 10, 0).is_err());
        assert!(simulate_gumbel_choice(&[0.0], 1.0, 0, 0).is_err());
    }
}
