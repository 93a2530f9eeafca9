//! Symbolic two-sided Young towers.
//!
//! The base is the full shift on branch indices with a Bernoulli measure
//! `p`. A point of the tower is a column `future[0]`, a level inside that
//! column, the (lazily extended) future symbols and a truncated past. The
//! past plays the role of the stable coordinate: two points with the same
//! future and level lie on the same stable leaf, and dropping the past gives
//! the quotient tower.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{compensated_sum, gcd};

/// Tolerance on `sum(prob) = 1`.
pub const PROBABILITY_TOLERANCE: f64 = 1e-12;

/// Default truncation depth of the stable coordinate.
pub const DEFAULT_PAST_DEPTH: usize = 32;

/// Default cap for separation times.
pub const DEFAULT_SEPARATION_CAP: u32 = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TowerError {
    #[error("schema has no branches")]
    EmptySchema,
    #[error("branch probabilities sum to {sum}, expected 1")]
    ProbabilityNotNormalized { sum: f64 },
    #[error("branch {branch} has return time {value}; return times must be >= 1")]
    NonpositiveReturnTime { branch: usize, value: i64 },
    #[error("parameter `{name}` = {value} is out of range")]
    ParameterOutOfRange { name: &'static str, value: f64 },
    #[error("separation time needs base points, got levels {0} and {1}")]
    LevelMismatch(u32, u32),
    #[error("invalid tower point: {0}")]
    InvalidPoint(String),
    #[error("not enough future symbols: need index {needed}, have {available}")]
    FutureExhausted { needed: usize, available: usize },
}

/// One Markov branch of the base: its measure and its return time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub prob: f64,
    pub return_time: u32,
}

/// Validated, immutable tower description.
#[derive(Debug, Clone)]
pub struct TowerSchema {
    branches: Vec<Branch>,
    theta: f64,
    gamma: f64,
    past_depth: usize,
    mean_return_time: f64,
    column_weights: Vec<f64>,
    base_sampler: WeightedAliasIndex<f64>,
    column_sampler: WeightedAliasIndex<f64>,
}

/// Human-editable form of a schema: `branches = [[p, R], ...]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaConfig {
    pub branches: Vec<(f64, i64)>,
    pub theta: f64,
    pub gamma: f64,
    #[serde(default = "default_past_depth")]
    pub past_depth: usize,
}

fn default_past_depth() -> usize {
    DEFAULT_PAST_DEPTH
}

impl TowerSchema {
    /// Validates branches and parameters and caches `∫R` and the column weights
    /// `p_i R_i / Σ_j p_j R_j`.
    pub fn new(
        branches: &[(f64, i64)],
        theta: f64,
        gamma: f64,
        past_depth: usize,
    ) -> Result<Self, TowerError> {
        if branches.is_empty() {
            return Err(TowerError::EmptySchema);
        }
        for (i, &(p, r)) in branches.iter().enumerate() {
            if r < 1 || r > u32::MAX as i64 {
                return Err(TowerError::NonpositiveReturnTime { branch: i, value: r });
            }
            if !(p > 0.0 && p <= 1.0) {
                return Err(TowerError::ParameterOutOfRange { name: "prob", value: p });
            }
        }
        let probs: Vec<f64> = branches.iter().map(|b| b.0).collect();
        let sum = compensated_sum(&probs);
        if (sum - 1.0).abs() > PROBABILITY_TOLERANCE {
            return Err(TowerError::ProbabilityNotNormalized { sum });
        }
        if !(theta > 0.0 && theta < 1.0) {
            return Err(TowerError::ParameterOutOfRange { name: "theta", value: theta });
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(TowerError::ParameterOutOfRange { name: "gamma", value: gamma });
        }
        let branches: Vec<Branch> = branches
            .iter()
            .map(|&(prob, r)| Branch { prob, return_time: r as u32 })
            .collect();
        let masses: Vec<f64> = branches.iter().map(|b| b.prob * b.return_time as f64).collect();
        let mean_return_time = compensated_sum(&masses);
        let column_weights: Vec<f64> = masses.iter().map(|m| m / mean_return_time).collect();
        let base_sampler = WeightedAliasIndex::new(probs)
            .map_err(|e| TowerError::InvalidPoint(format!("base sampler: {e}")))?;
        let column_sampler = WeightedAliasIndex::new(column_weights.clone())
            .map_err(|e| TowerError::InvalidPoint(format!("column sampler: {e}")))?;
        Ok(Self {
            branches,
            theta,
            gamma,
            past_depth,
            mean_return_time,
            column_weights,
            base_sampler,
            column_sampler,
        })
    }

    pub fn from_config(config: &SchemaConfig) -> Result<Self, TowerError> {
        Self::new(&config.branches, config.theta, config.gamma, config.past_depth)
    }

    pub fn to_config(&self) -> SchemaConfig {
        SchemaConfig {
            branches: self
                .branches
                .iter()
                .map(|b| (b.prob, b.return_time as i64))
                .collect(),
            theta: self.theta,
            gamma: self.gamma,
            past_depth: self.past_depth,
        }
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn n_branches(&self) -> usize {
        self.branches.len()
    }

    #[inline]
    pub fn return_time(&self, branch: u32) -> u32 {
        self.branches[branch as usize].return_time
    }

    #[inline]
    pub fn prob(&self, branch: u32) -> f64 {
        self.branches[branch as usize].prob
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Truncation depth `K` of the stable coordinate.
    pub fn past_depth(&self) -> usize {
        self.past_depth
    }

    /// `∫R dμ_Y = Σ p_i R_i`.
    pub fn mean_return_time(&self) -> f64 {
        self.mean_return_time
    }

    /// `p_i R_i / Σ_j p_j R_j`, the μ_Δ-mass of each column.
    pub fn column_weights(&self) -> &[f64] {
        &self.column_weights
    }

    pub fn max_return_time(&self) -> u32 {
        self.branches.iter().map(|b| b.return_time).max().unwrap_or(1)
    }

    /// Draws a branch from the Bernoulli base measure.
    #[inline]
    pub fn draw_branch<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        self.base_sampler.sample(rng) as u32
    }

    /// Draws a column with probability proportional to `p_i R_i`.
    #[inline]
    pub fn draw_column<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        self.column_sampler.sample(rng) as u32
    }

    /// Extends the future of `point` with fresh base symbols until it holds at
    /// least `len` symbols.
    #[inline]
    pub fn ensure_future<R: Rng + ?Sized>(&self, point: &mut TowerPoint, len: usize, rng: &mut R) {
        while point.future.len() < len {
            point.future.push_back(self.draw_branch(rng));
        }
    }

    /// One application of the tower map: climb the column, or at the top jump
    /// to level 0 of the next column, moving the consumed symbol into the past.
    #[inline]
    pub fn step<R: Rng + ?Sized>(&self, point: &mut TowerPoint, rng: &mut R) {
        let r = self.return_time(point.future[0]);
        if point.level + 1 < r {
            point.level += 1;
            return;
        }
        point.level = 0;
        let consumed = point.future.pop_front().expect("future is never empty");
        if self.past_depth > 0 {
            if point.past.len() == self.past_depth {
                point.past.pop_back();
            }
            point.past.push_front(consumed);
        }
        if point.future.is_empty() {
            point.future.push_back(self.draw_branch(rng));
        }
    }

    /// Deterministic step that refuses to draw new symbols.
    pub fn stepped(&self, point: &TowerPoint) -> Result<TowerPoint, TowerError> {
        let mut next = point.clone();
        let r = self.return_time(point.future[0]);
        if point.level + 1 == r && point.future.len() < 2 {
            return Err(TowerError::FutureExhausted { needed: 1, available: 0 });
        }
        self.step(&mut next, &mut NoDraw);
        Ok(next)
    }

    /// Inverse of [`step`](Self::step). Stepping back from level 0 reveals the
    /// most recent past symbol; a fresh base symbol refills the deep end of the
    /// past so its length stays `K`.
    pub fn step_back<R: Rng + ?Sized>(&self, point: &mut TowerPoint, rng: &mut R) {
        if point.level > 0 {
            point.level -= 1;
            return;
        }
        let previous = match point.past.pop_front() {
            Some(b) => b,
            None => self.draw_branch(rng),
        };
        if self.past_depth > 0 {
            point.past.push_back(self.draw_branch(rng));
        }
        point.future.push_front(previous);
        point.level = self.return_time(previous) - 1;
    }

    /// First index at which the futures of two base points differ.
    pub fn separation_time(
        &self,
        x: &TowerPoint,
        y: &TowerPoint,
        cap: u32,
    ) -> Result<Separation, TowerError> {
        if x.level != 0 || y.level != 0 {
            return Err(TowerError::LevelMismatch(x.level, y.level));
        }
        let cap = cap.max(1) as usize;
        for n in 0..cap {
            match (x.future.get(n), y.future.get(n)) {
                (Some(a), Some(b)) => {
                    if a != b {
                        return Ok(Separation::Finite(n as u32));
                    }
                }
                _ => {
                    return Err(TowerError::FutureExhausted {
                        needed: n,
                        available: x.future.len().min(y.future.len()),
                    })
                }
            }
        }
        Ok(Separation::Infinite)
    }

    /// `d_θ(x, y) = θ^{s(x,y)}`; an infinite separation returns `θ^cap` with the
    /// truncation flag set.
    pub fn d_theta(&self, x: &TowerPoint, y: &TowerPoint, cap: u32) -> Result<DTheta, TowerError> {
        Ok(match self.separation_time(x, y, cap)? {
            Separation::Finite(s) => DTheta {
                value: self.theta.powi(s as i32),
                truncated: false,
            },
            Separation::Infinite => DTheta {
                value: self.theta.powi(cap.max(1) as i32),
                truncated: true,
            },
        })
    }

    /// Splits the tower into `s = gcd{R_i}` cyclically permuted components.
    pub fn gcd_decompose(&self) -> ComponentAssignment {
        let s = self
            .branches
            .iter()
            .fold(0u64, |g, b| gcd(g, b.return_time as u64)) as u32;
        ComponentAssignment {
            s,
            return_times: self.branches.iter().map(|b| b.return_time).collect(),
        }
    }

    /// `h_n(x) = #{0 ≤ j ≤ n : f^j x ∈ Y}`.
    pub fn h_n<R: Rng + ?Sized>(&self, point: &TowerPoint, n: u64, rng: &mut R) -> u64 {
        let mut p = point.clone();
        let mut count = (p.level == 0) as u64;
        for _ in 0..n {
            self.step(&mut p, rng);
            count += (p.level == 0) as u64;
        }
        count
    }

    pub(crate) fn check_point(&self, point: &TowerPoint) -> Result<(), TowerError> {
        let nb = self.branches.len() as u32;
        if point.future.is_empty() {
            return Err(TowerError::InvalidPoint("empty future".into()));
        }
        if let Some(bad) = point.future.iter().chain(point.past.iter()).find(|&&b| b >= nb) {
            return Err(TowerError::InvalidPoint(format!("branch index {bad} >= {nb}")));
        }
        if point.past.len() != self.past_depth {
            return Err(TowerError::InvalidPoint(format!(
                "past has {} symbols, schema depth is {}",
                point.past.len(),
                self.past_depth
            )));
        }
        let r = self.return_time(point.future[0]);
        if point.level >= r {
            return Err(TowerError::InvalidPoint(format!(
                "level {} not below return time {r}",
                point.level
            )));
        }
        Ok(())
    }
}

/// An rng stand-in for deterministic stepping; drawing from it is a bug.
struct NoDraw;

impl rand::RngCore for NoDraw {
    fn next_u32(&mut self) -> u32 {
        unreachable!("deterministic step tried to draw a symbol")
    }
    fn next_u64(&mut self) -> u64 {
        unreachable!("deterministic step tried to draw a symbol")
    }
    fn fill_bytes(&mut self, _dst: &mut [u8]) {
        unreachable!("deterministic step tried to draw a symbol")
    }
}

/// A point `(y, ℓ)` of the two-sided tower.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TowerPoint {
    /// Most recent symbol first; length `K`.
    pub(crate) past: VecDeque<u32>,
    /// `future[0]` is the current column.
    pub(crate) future: VecDeque<u32>,
    pub(crate) level: u32,
}

impl TowerPoint {
    pub fn new(
        schema: &TowerSchema,
        past: Vec<u32>,
        future: Vec<u32>,
        level: u32,
    ) -> Result<Self, TowerError> {
        let point = Self {
            past: past.into(),
            future: future.into(),
            level,
        };
        schema.check_point(&point)?;
        Ok(point)
    }

    /// Base point with the given future and an all-zero past.
    pub fn base(schema: &TowerSchema, future: Vec<u32>) -> Result<Self, TowerError> {
        Self::new(schema, vec![0; schema.past_depth()], future, 0)
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    /// The current column (branch of the base point below this point).
    pub fn branch(&self) -> u32 {
        self.future[0]
    }

    pub fn future(&self) -> &VecDeque<u32> {
        &self.future
    }

    /// Past symbols, most recent first.
    pub fn past(&self) -> &VecDeque<u32> {
        &self.past
    }

    pub fn is_base(&self) -> bool {
        self.level == 0
    }

    /// Replaces the stable coordinate. Used to move along a stable leaf.
    pub fn set_past(&mut self, past: impl IntoIterator<Item = u32>) {
        self.past = past.into_iter().collect();
    }

    /// True when both points have the same quotient image (same level and the
    /// same future on the symbols both know).
    pub fn same_stable_leaf(&self, other: &TowerPoint) -> bool {
        self.level == other.level
            && self
                .future
                .iter()
                .zip(other.future.iter())
                .all(|(a, b)| a == b)
    }
}

/// Separation time of two base points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Separation {
    Finite(u32),
    /// Futures agree up to the cap.
    Infinite,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DTheta {
    pub value: f64,
    pub truncated: bool,
}

/// Cyclic decomposition `Δ = Δ^(1) ∪ … ∪ Δ^(s)` with `s = gcd{R_i}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentAssignment {
    pub s: u32,
    return_times: Vec<u32>,
}

impl ComponentAssignment {
    /// Residue class in `1..=s` of the tower cell `(branch, level)`.
    pub fn component_of(&self, branch: u32, level: u32) -> u32 {
        debug_assert!(level < self.return_times[branch as usize]);
        level % self.s + 1
    }

    pub fn component_of_point(&self, point: &TowerPoint) -> u32 {
        self.component_of(point.branch(), point.level())
    }

    pub fn n_components(&self) -> u32 {
        self.s
    }
}
