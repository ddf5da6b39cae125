//! Dykstra's alternating projections: the Frobenius-nearest point to an
//! anchor within an intersection of closed convex sets of matrices.

use nalgebra::DMatrix;

use crate::error::{QreError, Result};

pub trait ConvexSet {
    fn project(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>>;

    /// Nonnegative distance-like measure, zero on the set.
    fn violation(&self, x: &DMatrix<f64>) -> f64;
}

/// `{X : <A, X> <= beta}` under the Frobenius inner product.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpace {
    pub normal: DMatrix<f64>,
    pub beta: f64,
    norm_sq: f64,
}

impl HalfSpace {
    pub fn new(normal: DMatrix<f64>, beta: f64) -> Self {
        let norm_sq = normal.norm_squared();
        Self { normal, beta, norm_sq }
    }

    pub fn slack(&self, x: &DMatrix<f64>) -> f64 {
        self.beta - self.normal.dot(x)
    }
}

impl ConvexSet for HalfSpace {
    fn project(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let excess = -self.slack(x);
        if excess <= 0.0 || self.norm_sq == 0.0 {
            return Ok(x.clone());
        }
        Ok(x - &self.normal * (excess / self.norm_sq))
    }

    fn violation(&self, x: &DMatrix<f64>) -> f64 {
        (-self.slack(x)).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DykstraConfig {
    /// Stop when a full sweep moves the iterate by at most this much.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Consecutive stalled sweeps with persistent violation before giving up.
    pub stall_sweeps: usize,
    pub stall_violation: f64,
}

impl Default for DykstraConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_sweeps: 50_000,
            stall_sweeps: 500,
            stall_violation: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DykstraOutcome {
    pub point: DMatrix<f64>,
    pub sweeps: usize,
    pub converged: bool,
    pub last_change: f64,
    /// Largest violation over all sets at the returned point.
    pub max_violation: f64,
}

fn max_violation(sets: &[&dyn ConvexSet], x: &DMatrix<f64>) -> f64 {
    sets.iter().map(|s| s.violation(x)).fold(0.0, f64::max)
}

/// Projects `anchor` onto the intersection of `sets`.
///
/// Progress that stalls while some set stays violated by at least
/// `stall_violation` for `stall_sweeps` sweeps is reported as infeasible.
/// This is a heuristic; Dykstra's method yields no certificate.
pub fn dykstra(anchor: &DMatrix<f64>, sets: &[&dyn ConvexSet], cfg: &DykstraConfig) -> Result<DykstraOutcome> {
    if sets.is_empty() {
        return Ok(DykstraOutcome {
            point: anchor.clone(),
            sweeps: 0,
            converged: true,
            last_change: 0.0,
            max_violation: 0.0,
        });
    }
    let mut x = anchor.clone();
    let mut increments: Vec<DMatrix<f64>> = vec![DMatrix::zeros(x.nrows(), x.ncols()); sets.len()];
    let mut stalled = 0;
    let mut last_change = f64::INFINITY;

    for sweep in 1..=cfg.max_sweeps {
        let start = x.clone();
        for (set, inc) in sets.iter().zip(increments.iter_mut()) {
            let shifted = &x + &*inc;
            let projected = set.project(&shifted)?;
            *inc = shifted - &projected;
            x = projected;
        }
        last_change = (&x - &start).norm();

        let scale = x.norm().max(1.0);
        if last_change <= cfg.tol || last_change <= 1e-6 * scale {
            let violation = max_violation(sets, &x);
            if violation < cfg.stall_violation {
                if last_change <= cfg.tol {
                    return Ok(DykstraOutcome {
                        point: x,
                        sweeps: sweep,
                        converged: true,
                        last_change,
                        max_violation: violation,
                    });
                }
                stalled = 0;
            } else {
                stalled += 1;
                if stalled >= cfg.stall_sweeps {
                    return Err(QreError::InfeasibleDetected { violation, sweeps: sweep });
                }
            }
        } else {
            stalled = 0;
        }
    }

    let violation = max_violation(sets, &x);
    Ok(DykstraOutcome {
        point: x,
        sweeps: cfg.max_sweeps,
        converged: false,
        last_change,
        max_violation: violation,
    })
}
