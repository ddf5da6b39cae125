//! Differentiable performance functions over joint strategies.

use nalgebra::DVector;

use crate::error::{QreError, Result};
use crate::game::{JointStrategy, PlayerDims};

/// Default mixing weight toward uniform when smoothing a pure KL target.
pub const DEFAULT_KL_SMOOTHING: f64 = 1e-3;

pub trait PerformanceObjective: Send + Sync {
    fn name(&self) -> &str;

    fn value(&self, x: &JointStrategy) -> Result<f64>;

    /// Gradient with respect to the stacked strategy vector.
    fn gradient(&self, x: &JointStrategy) -> Result<DVector<f64>>;
}

fn require_positive(x: &JointStrategy) -> Result<()> {
    match x.as_slice().iter().position(|&v| !(v > 0.0)) {
        Some(index) => Err(QreError::NonPositiveStrategy {
            index,
            value: x.as_slice()[index],
        }),
        None => Ok(()),
    }
}

/// Sum over players of `KL(x_i || target_i)`, with the target mixed toward
/// uniform by `delta` so that pure targets give finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct KlObjective {
    log_target: DVector<f64>,
    smoothed: DVector<f64>,
}

impl KlObjective {
    pub fn new(dims: &PlayerDims, target: &JointStrategy, delta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&delta) {
            return Err(QreError::InvalidConfig(format!("smoothing delta {delta} outside [0, 1]")));
        }
        // revalidates block sums and length
        let target = JointStrategy::new(dims, target.as_vector().clone())?;
        let mut smoothed = target.into_vector();
        for (i, r) in dims.ranges().enumerate() {
            let u = 1.0 / dims.size(i) as f64;
            for k in r {
                smoothed[k] = (1.0 - delta) * smoothed[k] + delta * u;
            }
        }
        let log_target = smoothed.map(f64::ln);
        Ok(Self { log_target, smoothed })
    }

    /// The smoothed target the divergence is measured against.
    pub fn target(&self) -> &DVector<f64> {
        &self.smoothed
    }
}

/// `KL(x || target)` summed over players, with `target` smoothed by `delta`.
pub fn kl_objective(dims: &PlayerDims, target: &JointStrategy, delta: f64) -> Result<KlObjective> {
    KlObjective::new(dims, target, delta)
}

impl PerformanceObjective for KlObjective {
    fn name(&self) -> &str {
        "kl"
    }

    fn value(&self, x: &JointStrategy) -> Result<f64> {
        require_positive(x)?;
        Ok(x.as_slice()
            .iter()
            .zip(self.log_target.iter())
            .map(|(&v, &lt)| v * (v.ln() - lt))
            .sum())
    }

    fn gradient(&self, x: &JointStrategy) -> Result<DVector<f64>> {
        require_positive(x)?;
        Ok(DVector::from_iterator(
            x.len(),
            x.as_slice()
                .iter()
                .zip(self.log_target.iter())
                .map(|(&v, &lt)| v.ln() - lt + 1.0),
        ))
    }
}

/// Potential delay `sum_a 1 / (sum_i x_i[a])` for players that share the same
/// set of areas.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialDelay {
    dims: PlayerDims,
    areas: usize,
}

impl PotentialDelay {
    pub fn new(dims: &PlayerDims) -> Result<Self> {
        let areas = dims.size(0);
        if dims.sizes().iter().any(|&s| s != areas) {
            return Err(QreError::DimensionMismatch(
                "potential delay needs every player to share the same areas".into(),
            ));
        }
        Ok(Self {
            dims: dims.clone(),
            areas,
        })
    }

    /// Aggregate service per area.
    pub fn totals(&self, x: &JointStrategy) -> Vec<f64> {
        area_totals(&self.dims, x)
    }

    fn checked_totals(&self, x: &JointStrategy) -> Result<Vec<f64>> {
        if x.len() != self.dims.total() {
            return Err(QreError::DimensionMismatch(format!(
                "strategy has length {}, expected {}",
                x.len(),
                self.dims.total()
            )));
        }
        let totals = self.totals(x);
        match totals.iter().position(|&t| !(t > 0.0)) {
            Some(a) => Err(QreError::ZeroAreaTotal(a)),
            None => Ok(totals),
        }
    }
}

pub fn potential_delay_objective(dims: &PlayerDims) -> Result<PotentialDelay> {
    PotentialDelay::new(dims)
}

/// Per-area sum of all players' allocations. Assumes equal block sizes.
pub fn area_totals(dims: &PlayerDims, x: &JointStrategy) -> Vec<f64> {
    let areas = dims.size(0);
    let mut totals = vec![0.0; areas];
    for r in dims.ranges() {
        for (a, k) in r.enumerate() {
            totals[a] += x.as_slice()[k];
        }
    }
    totals
}

impl PerformanceObjective for PotentialDelay {
    fn name(&self) -> &str {
        "potential-delay"
    }

    fn value(&self, x: &JointStrategy) -> Result<f64> {
        Ok(self.checked_totals(x)?.iter().map(|t| 1.0 / t).sum())
    }

    fn gradient(&self, x: &JointStrategy) -> Result<DVector<f64>> {
        let totals = self.checked_totals(x)?;
        let mut g = DVector::zeros(x.len());
        for r in self.dims.ranges() {
            for (a, k) in r.enumerate() {
                g[k] = -1.0 / (totals[a] * totals[a]);
            }
        }
        debug_assert_eq!(totals.len(), self.areas);
        Ok(g)
    }
}
