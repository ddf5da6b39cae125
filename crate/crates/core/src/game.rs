//! Problem instances: player dimensions, the block-structured cost model
//! `b_i + sum_j C_ij x_j`, joint strategies and the uniqueness certificate.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{QreError, Result};
use crate::linalg;

/// Default tolerance used when certifying the uniqueness assumption.
pub const ASSUMPTION_TOL: f64 = 1e-9;

/// Tolerance on block sums for a valid joint strategy.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Action counts per player, plus the offsets of each player's block in
/// the stacked vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct PlayerDims {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
}

impl PlayerDims {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(QreError::DimensionMismatch("a game needs at least one player".into()));
        }
        if let Some(i) = sizes.iter().position(|&s| s == 0) {
            return Err(QreError::DimensionMismatch(format!("player {i} has no actions")));
        }
        let mut offsets = Vec::with_capacity(sizes.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for &s in &sizes {
            acc += s;
            offsets.push(acc);
        }
        Ok(Self { sizes, offsets })
    }

    /// `n` players with `m` actions each.
    pub fn uniform(players: usize, actions: usize) -> Result<Self> {
        Self::new(vec![actions; players])
    }

    pub fn players(&self) -> usize {
        self.sizes.len()
    }

    /// Total number of actions `m`.
    pub fn total(&self) -> usize {
        self.offsets[self.sizes.len()]
    }

    pub fn size(&self, player: usize) -> usize {
        self.sizes[player]
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn offset(&self, player: usize) -> usize {
        self.offsets[player]
    }

    pub fn range(&self, player: usize) -> Range<usize> {
        self.offsets[player]..self.offsets[player + 1]
    }

    pub fn ranges(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        (0..self.players()).map(move |i| self.range(i))
    }

    /// Split a stacked vector into per-player blocks.
    pub fn split<'a>(&self, v: &'a [f64]) -> Vec<&'a [f64]> {
        self.ranges().map(|r| &v[r]).collect()
    }

    pub fn concat(&self, blocks: &[&[f64]]) -> Result<Vec<f64>> {
        if blocks.len() != self.players() {
            return Err(QreError::DimensionMismatch(format!(
                "expected {} blocks, got {}",
                self.players(),
                blocks.len()
            )));
        }
        let mut out = Vec::with_capacity(self.total());
        for (i, b) in blocks.iter().enumerate() {
            if b.len() != self.size(i) {
                return Err(QreError::DimensionMismatch(format!(
                    "block {i} has length {}, expected {}",
                    b.len(),
                    self.size(i)
                )));
            }
            out.extend_from_slice(b);
        }
        Ok(out)
    }
}

impl TryFrom<Vec<usize>> for PlayerDims {
    type Error = QreError;

    fn try_from(sizes: Vec<usize>) -> Result<Self> {
        Self::new(sizes)
    }
}

impl From<PlayerDims> for Vec<usize> {
    fn from(d: PlayerDims) -> Self {
        d.sizes
    }
}

/// A joint mixed strategy: per-player distributions stacked into one vector.
#[derive(Debug, Clone, PartialEq)]
pub struct JointStrategy(DVector<f64>);

impl JointStrategy {
    /// Wraps `x` after checking that every block is a probability vector.
    pub fn new(dims: &PlayerDims, x: DVector<f64>) -> Result<Self> {
        if x.len() != dims.total() {
            return Err(QreError::DimensionMismatch(format!(
                "strategy has length {}, expected {}",
                x.len(),
                dims.total()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(QreError::NonFiniteInput("strategy"));
        }
        for (i, r) in dims.ranges().enumerate() {
            let block = x.rows(r.start, r.len());
            if let Some(k) = block.iter().position(|&v| v < 0.0) {
                return Err(QreError::NonPositiveStrategy {
                    index: r.start + k,
                    value: block[k],
                });
            }
            let sum: f64 = block.sum();
            if (sum - 1.0).abs() > SIMPLEX_TOL * dims.size(i).max(1) as f64 {
                return Err(QreError::DimensionMismatch(format!(
                    "block {i} sums to {sum}, not 1"
                )));
            }
        }
        Ok(Self(x))
    }

    /// Wraps `x` without validation. For internal iterates that are
    /// simplex-feasible by construction.
    pub(crate) fn from_raw(x: DVector<f64>) -> Self {
        Self(x)
    }

    pub fn uniform(dims: &PlayerDims) -> Self {
        let mut x = DVector::zeros(dims.total());
        for (i, r) in dims.ranges().enumerate() {
            x.rows_mut(r.start, r.len()).fill(1.0 / dims.size(i) as f64);
        }
        Self(x)
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn block<'a>(&'a self, dims: &PlayerDims, player: usize) -> &'a [f64] {
        &self.0.as_slice()[dims.range(player)]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// One preferred action per player (zero-based).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PureTarget {
    pub chosen: Vec<usize>,
}

impl PureTarget {
    pub fn new(chosen: Vec<usize>) -> Self {
        Self { chosen }
    }

    /// Builds a target from one-based action numbers, as used on the command line.
    pub fn from_one_based(actions: &[usize]) -> Result<Self> {
        if let Some(player) = actions.iter().position(|&a| a == 0) {
            return Err(QreError::MalformedInput(format!(
                "actions are numbered from 1, player {player} has action 0"
            )));
        }
        Ok(Self::new(actions.iter().map(|a| a - 1).collect()))
    }

    pub fn validate(&self, dims: &PlayerDims) -> Result<()> {
        if self.chosen.len() != dims.players() {
            return Err(QreError::DimensionMismatch(format!(
                "target names {} players, game has {}",
                self.chosen.len(),
                dims.players()
            )));
        }
        for (player, &index) in self.chosen.iter().enumerate() {
            if index >= dims.size(player) {
                return Err(QreError::IndexOutOfRange {
                    player,
                    index,
                    actions: dims.size(player),
                });
            }
        }
        Ok(())
    }

    /// Row of the stacked vector holding player `i`'s preferred action.
    pub fn row(&self, dims: &PlayerDims, player: usize) -> usize {
        dims.offset(player) + self.chosen[player]
    }
}

/// The pure joint strategy with block `i` equal to the basis vector at `chosen[i]`.
pub fn pure_to_strategy(t: &PureTarget, dims: &PlayerDims) -> Result<JointStrategy> {
    t.validate(dims)?;
    let mut x = DVector::zeros(dims.total());
    for i in 0..dims.players() {
        x[t.row(dims, i)] = 1.0;
    }
    Ok(JointStrategy(x))
}

/// A multiplayer matrix game with perception noise temperature `lambda`.
#[derive(Debug, Clone, PartialEq)]
pub struct Game {
    dims: PlayerDims,
    lambda: f64,
    b: DVector<f64>,
    c: DMatrix<f64>,
}

impl Game {
    pub fn new(dims: PlayerDims, lambda: f64, b: DVector<f64>, c: DMatrix<f64>) -> Result<Self> {
        let g = Self { dims, lambda, b, c };
        g.validate()?;
        Ok(g)
    }

    /// Game with `C = 0`.
    pub fn without_coupling(dims: PlayerDims, lambda: f64, b: DVector<f64>) -> Result<Self> {
        let m = dims.total();
        Self::new(dims, lambda, b, DMatrix::zeros(m, m))
    }

    /// Checks sizes, `lambda > 0` and finiteness.
    pub fn validate(&self) -> Result<()> {
        let m = self.dims.total();
        if self.b.len() != m {
            return Err(QreError::DimensionMismatch(format!(
                "b has length {}, expected {m}",
                self.b.len()
            )));
        }
        if self.c.nrows() != m || self.c.ncols() != m {
            return Err(QreError::DimensionMismatch(format!(
                "C is {}x{}, expected {m}x{m}",
                self.c.nrows(),
                self.c.ncols()
            )));
        }
        if !self.lambda.is_finite() {
            return Err(QreError::NonFiniteInput("lambda"));
        }
        if self.lambda <= 0.0 {
            return Err(QreError::NonPositiveLambda(self.lambda));
        }
        if self.b.iter().any(|v| !v.is_finite()) {
            return Err(QreError::NonFiniteInput("b"));
        }
        if self.c.iter().any(|v| !v.is_finite()) {
            return Err(QreError::NonFiniteInput("C"));
        }
        Ok(())
    }

    pub fn dims(&self) -> &PlayerDims {
        &self.dims
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    /// Same game with a different cost matrix.
    pub fn with_cost_matrix(&self, c: DMatrix<f64>) -> Result<Self> {
        Self::new(self.dims.clone(), self.lambda, self.b.clone(), c)
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(self.dims.clone(), lambda, self.b.clone(), self.c.clone())
    }

    /// Expected cost of every action, `b + C x`.
    pub fn action_costs(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.b + &self.c * x
    }

    pub fn check_assumption(&self, tol: f64) -> Result<AssumptionReport> {
        check_assumption(self, tol)
    }
}

/// Outcome of checking `lambda > 0`, `C + C^T >= 0` and symmetric diagonal blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    /// Smallest eigenvalue of `(C + C^T) / 2`.
    pub min_eig_sym: f64,
    /// Largest Frobenius norm of `C_ii - C_ii^T` over players.
    pub diag_block_asymmetry: f64,
    pub lambda_ok: bool,
    pub tol: f64,
    pub passed: bool,
}

/// Largest Frobenius norm of `C_ii - C_ii^T`.
pub fn diag_block_asymmetry(c: &DMatrix<f64>, dims: &PlayerDims) -> f64 {
    dims.ranges()
        .map(|r| {
            let blk = c.view((r.start, r.start), (r.len(), r.len()));
            (blk - blk.transpose()).norm()
        })
        .fold(0.0, f64::max)
}

pub fn check_assumption(g: &Game, tol: f64) -> Result<AssumptionReport> {
    g.validate()?;
    let min_eig_sym = linalg::min_eigenvalue(&linalg::symmetric_part(&g.c))?;
    let diag_block_asymmetry = diag_block_asymmetry(&g.c, &g.dims);
    let lambda_ok = g.lambda > 0.0;
    Ok(AssumptionReport {
        min_eig_sym,
        diag_block_asymmetry,
        lambda_ok,
        tol,
        passed: lambda_ok && min_eig_sym >= -tol && diag_block_asymmetry <= tol,
    })
}

/// On-disk game description; `C` is row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameFile {
    pub lambda: f64,
    pub dims: Vec<usize>,
    pub b: Vec<f64>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
}

impl GameFile {
    pub fn from_game(g: &Game) -> Self {
        let m = g.dims.total();
        Self {
            lambda: g.lambda,
            dims: g.dims.sizes().to_vec(),
            b: g.b.iter().copied().collect(),
            c: (0..m).map(|i| g.c.row(i).iter().copied().collect()).collect(),
        }
    }

    pub fn into_game(self) -> Result<Game> {
        let dims = PlayerDims::new(self.dims)?;
        let m = dims.total();
        if self.c.len() != m {
            return Err(QreError::DimensionMismatch(format!(
                "C has {} rows, expected {m}",
                self.c.len()
            )));
        }
        if let Some((i, row)) = self.c.iter().enumerate().find(|(_, r)| r.len() != m) {
            return Err(QreError::DimensionMismatch(format!(
                "C row {i} has {} entries, expected {m}",
                row.len()
            )));
        }
        let flat: Vec<f64> = self.c.into_iter().flatten().collect();
        let c = DMatrix::from_row_slice(m, m, &flat);
        Game::new(dims, self.lambda, DVector::from_vec(self.b), c)
    }
}

impl Game {
    pub fn from_json(s: &str) -> Result<Self> {
        let file: GameFile = serde_json::from_str(s)
            .map_err(|e| QreError::MalformedInput(format!("game JSON: {e}")))?;
        file.into_game()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&GameFile::from_game(self)).expect("game serializes")
    }
}
