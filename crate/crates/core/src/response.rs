//! The logit quantal response map, its Jacobian, and the stationarity test
//! for the entropy-regularized best response.

use nalgebra::{DMatrix, DVector};

use crate::error::{QreError, Result};
use crate::game::{Game, JointStrategy, PlayerDims};

/// Cost argument `u = -(b + C x) / lambda` of the response map.
pub fn cost_argument(g: &Game, x: &DVector<f64>) -> Result<DVector<f64>> {
    let u = -g.action_costs(x) / g.lambda();
    if u.iter().any(|v| !v.is_finite()) {
        return Err(QreError::NonFiniteInput("cost argument"));
    }
    Ok(u)
}

/// Blockwise softmax, stabilized by subtracting each block's maximum.
pub fn softmax_blocks(dims: &PlayerDims, u: &DVector<f64>) -> Result<DVector<f64>> {
    if u.len() != dims.total() {
        return Err(QreError::DimensionMismatch(format!(
            "argument has length {}, expected {}",
            u.len(),
            dims.total()
        )));
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(QreError::NonFiniteInput("cost argument"));
    }
    let mut p = DVector::zeros(u.len());
    for r in dims.ranges() {
        let block = &u.as_slice()[r.clone()];
        let max = block.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (k, &v) in block.iter().enumerate() {
            let e = (v - max).exp();
            p[r.start + k] = e;
            total += e;
        }
        for k in r {
            p[k] /= total;
        }
    }
    Ok(p)
}

/// Logit response `f(-(b + C x) / lambda)` to the joint strategy `x`.
pub fn logit_response(g: &Game, x: &JointStrategy) -> Result<JointStrategy> {
    let u = cost_argument(g, x.as_vector())?;
    softmax_blocks(g.dims(), &u).map(JointStrategy::from_raw)
}

/// Block-diagonal softmax Jacobian with blocks `diag(p_i) - p_i p_i^T`.
pub fn softmax_jacobian(dims: &PlayerDims, p: &DVector<f64>) -> DMatrix<f64> {
    let m = dims.total();
    let mut d = DMatrix::zeros(m, m);
    for r in dims.ranges() {
        for a in r.clone() {
            for c in r.clone() {
                d[(a, c)] = -p[a] * p[c];
            }
            d[(a, a)] += p[a];
        }
    }
    d
}

/// Jacobian `∂_u f(u)` of the response map at `u = -(b + C x)/lambda`.
///
/// Callers form the residual Jacobian `I + (1/lambda) ∂_u f(u) C` themselves.
pub fn response_jacobian(g: &Game, x: &JointStrategy) -> Result<DMatrix<f64>> {
    let p = logit_response(g, x)?;
    Ok(softmax_jacobian(g.dims(), p.as_vector()))
}

/// Spread of `b_i + sum_j C_ij x_j + lambda ln(x_i)` within each block,
/// maximized over players. Zero exactly at an equilibrium.
pub fn stationarity_residual(g: &Game, x: &JointStrategy) -> Result<f64> {
    let xv = x.as_vector();
    if let Some(index) = xv.iter().position(|&v| v <= 0.0 || v.is_nan()) {
        return Err(QreError::NonPositiveStrategy {
            index,
            value: xv[index],
        });
    }
    let costs = g.action_costs(xv);
    let lambda = g.lambda();
    let mut worst: f64 = 0.0;
    for r in g.dims().ranges() {
        let (lo, hi) = r.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), k| {
            let v = costs[k] + lambda * xv[k].ln();
            (lo.min(v), hi.max(v))
        });
        worst = worst.max(hi - lo);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn single(b: &[f64], lambda: f64) -> Game {
        let dims = PlayerDims::new(vec![b.len()]).unwrap();
        Game::without_coupling(dims, lambda, DVector::from_row_slice(b)).unwrap()
    }

    #[test]
    fn zero_cost_gives_uniform() {
        let g = single(&[0.0, 0.0, 0.0], 1.0);
        let x = JointStrategy::uniform(g.dims());
        let p = logit_response(&g, &x).unwrap();
        for &v in p.as_slice() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn beeline_dominates_at_low_temperature() {
        let g = single(&[2.0, PI, PI], 0.1);
        let p = logit_response(&g, &JointStrategy::uniform(g.dims())).unwrap();
        assert!((p.as_slice()[0] - 1.0).abs() < 1e-4);
        assert!(p.as_slice()[1] < 1e-4 && p.as_slice()[2] < 1e-4);
    }

    #[test]
    fn large_costs_do_not_underflow() {
        let g = single(&[1000.0, 1000.5, 1001.0], 0.01);
        let p = logit_response(&g, &JointStrategy::uniform(g.dims())).unwrap();
        assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(p.as_slice()[0] > 0.99);
    }

    #[test]
    fn non_finite_cost_is_rejected() {
        let dims = PlayerDims::new(vec![2]).unwrap();
        let u = DVector::from_vec(vec![0.0, f64::INFINITY]);
        assert!(matches!(softmax_blocks(&dims, &u), Err(QreError::NonFiniteInput(_))));
    }

    #[test]
    fn uniform_jacobian_block() {
        let dims = PlayerDims::new(vec![3]).unwrap();
        let p = DVector::from_element(3, 1.0 / 3.0);
        let d = softmax_jacobian(&dims, &p);
        let expected = DMatrix::identity(3, 3) / 3.0 - DMatrix::from_element(3, 3, 1.0 / 9.0);
        assert!((d - expected).amax() < 1e-15);
    }

    #[test]
    fn stationarity_zero_at_uniform_free_game() {
        let g = single(&[0.0, 0.0, 0.0], 0.5);
        let r = stationarity_residual(&g, &JointStrategy::uniform(g.dims())).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn stationarity_rejects_boundary_points() {
        let g = single(&[0.0, 0.0], 0.5);
        let x = JointStrategy::new(g.dims(), DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert!(matches!(
            stationarity_residual(&g, &x),
            Err(QreError::NonPositiveStrategy { index: 1, .. })
        ));
    }

    fn arb_blocks() -> impl Strategy<Value = (PlayerDims, Vec<f64>)> {
        prop::collection::vec(1usize..5, 1..4).prop_flat_map(|sizes| {
            let dims = PlayerDims::new(sizes).unwrap();
            let m = dims.total();
            (Just(dims), prop::collection::vec(-40.0f64..40.0, m))
        })
    }

    proptest! {
        #[test]
        fn softmax_blocks_are_distributions((dims, u) in arb_blocks()) {
            let p = softmax_blocks(&dims, &DVector::from_vec(u)).unwrap();
            for r in dims.ranges() {
                let block = &p.as_slice()[r];
                prop_assert!(block.iter().all(|&v| v > 0.0));
                prop_assert!((block.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }

        #[test]
        fn shift_invariance((dims, u) in arb_blocks(), player in 0usize..4, shift in -50.0f64..50.0) {
            let player = player % dims.players();
            let u = DVector::from_vec(u);
            let mut shifted = u.clone();
            for k in dims.range(player) {
                shifted[k] += shift;
            }
            let a = softmax_blocks(&dims, &u).unwrap();
            let b = softmax_blocks(&dims, &shifted).unwrap();
            prop_assert!((a - b).amax() <= 1e-12);
        }

        #[test]
        fn jacobian_matches_central_differences((dims, u) in arb_blocks()) {
            let u = DVector::from_vec(u.into_iter().map(|v| v / 10.0).collect());
            let p = softmax_blocks(&dims, &u).unwrap();
            let d = softmax_jacobian(&dims, &p);
            let h = 1e-6;
            for q in 0..u.len() {
                let mut up = u.clone();
                let mut dn = u.clone();
                up[q] += h;
                dn[q] -= h;
                let col = (softmax_blocks(&dims, &up).unwrap() - softmax_blocks(&dims, &dn).unwrap()) / (2.0 * h);
                for r in 0..u.len() {
                    prop_assert!((col[r] - d[(r, q)]).abs() <= 1e-6);
                }
            }
            // rows of each block sum to zero and D is symmetric
            prop_assert!((&d - d.transpose()).amax() == 0.0);
            for r in 0..u.len() {
                prop_assert!(d.row(r).sum().abs() < 1e-15);
            }
        }
    }
}
