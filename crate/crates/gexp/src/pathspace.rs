//! Finite binary path tree for the Brownian motion, its filtration, and
//! (conditional) expectations.
//!
//! The tree is non-recombining: level `k` has `2^k` nodes, one per path
//! prefix. Children of node `i` at level `k` are `2i` (increment `+sqrt(dt)`)
//! and `2i + 1` (increment `-sqrt(dt)`), each with probability 1/2. Leaf
//! values therefore resolve the full path, which the adjoint and optimizer
//! modules rely on.

use crate::error::{Error, Result};

/// Hard cap on tree depth so leaf arrays stay in memory (2^24 leaves).
pub const MAX_DEPTH: usize = 24;

/// Binary discretization of the Brownian filtration on `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathTree {
    n_steps: usize,
    horizon: f64,
    dt: f64,
    sqrt_dt: f64,
}

impl PathTree {
    pub fn build(n_steps: usize, horizon: f64) -> Result<Self> {
        if n_steps == 0 || n_steps > MAX_DEPTH {
            return Err(Error::DepthTooLarge(n_steps));
        }
        if !(horizon > 0.0) {
            return Err(Error::NonPositiveHorizon(horizon));
        }
        let dt = horizon / n_steps as f64;
        Ok(PathTree {
            n_steps,
            horizon,
            dt,
            sqrt_dt: dt.sqrt(),
        })
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn sqrt_dt(&self) -> f64 {
        self.sqrt_dt
    }

    pub fn n_leaves(&self) -> usize {
        1usize << self.n_steps
    }

    pub fn nodes_at(&self, level: usize) -> usize {
        1usize << level
    }

    pub fn leaf_probability(&self) -> f64 {
        1.0 / self.n_leaves() as f64
    }

    pub fn time_at(&self, level: usize) -> f64 {
        level as f64 * self.dt
    }

    /// Sign of the increment taken at step `step` (0-based) on the path
    /// prefix identified by `(level, node)`: +1 for the up child, -1 down.
    pub fn increment_sign(&self, level: usize, node: usize, step: usize) -> f64 {
        debug_assert!(step < level);
        if (node >> (level - 1 - step)) & 1 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Value of W at a node: signed sum of the path's increments.
    pub fn w_value(&self, level: usize, node: usize) -> f64 {
        let ups = level - (node as u64).count_ones() as usize;
        let downs = (node as u64).count_ones() as usize;
        (ups as f64 - downs as f64) * self.sqrt_dt
    }

    /// The process W as an adapted field over levels `0..=n_steps`.
    pub fn w_field(&self) -> AdaptedField {
        AdaptedField::from_fn(self, 0, self.n_steps, |level, node| {
            self.w_value(level, node)
        })
    }

    /// Terminal field `leaf -> W_T(leaf)`.
    pub fn w_terminal(&self) -> TerminalField {
        TerminalField::from_fn(self, |leaf| self.w_value(self.n_steps, leaf))
    }

    /// Plain expectation of a terminal field under P.
    pub fn expectation(&self, field: &TerminalField) -> Result<f64> {
        if field.len() != self.n_leaves() {
            return Err(Error::ShapeMismatch {
                expected: self.n_leaves(),
                got: field.len(),
            });
        }
        let p = self.leaf_probability();
        Ok(field.values().iter().map(|v| p * v).sum())
    }

    /// One backward step of conditional expectation: from the field's values
    /// at `level + 1` produce the node values at `level`.
    pub fn conditional_expectation(&self, field: &AdaptedField, level: usize) -> Result<Vec<f64>> {
        if level + 1 > self.n_steps || level + 1 < field.first_level() || level + 1 > field.last_level()
        {
            return Err(Error::LevelOutOfRange {
                level,
                lo: field.first_level().saturating_sub(1),
                hi: field.last_level().saturating_sub(1),
            });
        }
        let child = field.level(level + 1);
        Ok((0..self.nodes_at(level))
            .map(|i| 0.5 * (child[2 * i] + child[2 * i + 1]))
            .collect())
    }
}

/// A real value per node over a contiguous range of levels. Adaptedness holds
/// by construction: a node's value is indexed by its path prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedField {
    first_level: usize,
    levels: Vec<Vec<f64>>,
}

impl AdaptedField {
    pub fn from_fn(
        tree: &PathTree,
        first_level: usize,
        last_level: usize,
        f: impl Fn(usize, usize) -> f64,
    ) -> Self {
        assert!(first_level <= last_level && last_level <= tree.n_steps());
        let levels = (first_level..=last_level)
            .map(|k| (0..tree.nodes_at(k)).map(|i| f(k, i)).collect())
            .collect();
        AdaptedField {
            first_level,
            levels,
        }
    }

    pub fn from_levels(first_level: usize, levels: Vec<Vec<f64>>) -> Self {
        for (off, lv) in levels.iter().enumerate() {
            assert_eq!(lv.len(), 1usize << (first_level + off));
        }
        AdaptedField {
            first_level,
            levels,
        }
    }

    /// Constant-in-omega field over the given level range.
    pub fn constant(tree: &PathTree, first_level: usize, last_level: usize, c: f64) -> Self {
        Self::from_fn(tree, first_level, last_level, |_, _| c)
    }

    pub fn first_level(&self) -> usize {
        self.first_level
    }

    pub fn last_level(&self) -> usize {
        self.first_level + self.levels.len() - 1
    }

    pub fn level(&self, k: usize) -> &[f64] {
        &self.levels[k - self.first_level]
    }

    pub fn at(&self, level: usize, node: usize) -> f64 {
        self.levels[level - self.first_level][node]
    }

    /// Truncate to levels `first_level..=level`.
    pub fn truncated(&self, level: usize) -> AdaptedField {
        assert!(level >= self.first_level && level <= self.last_level());
        AdaptedField {
            first_level: self.first_level,
            levels: self.levels[..=level - self.first_level].to_vec(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.levels
            .iter()
            .flatten()
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// One real per leaf, with an optional admissibility band.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalField {
    values: Vec<f64>,
    bounds: Option<(f64, f64)>,
}

impl TerminalField {
    pub fn new(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        TerminalField {
            values,
            bounds: None,
        }
    }

    pub fn from_fn(tree: &PathTree, f: impl Fn(usize) -> f64) -> Self {
        Self::new((0..tree.n_leaves()).map(f).collect())
    }

    pub fn constant(tree: &PathTree, c: f64) -> Self {
        Self::new(vec![c; tree.n_leaves()])
    }

    /// Indicator of `{W_T > 0}`.
    pub fn indicator_wt_positive(tree: &PathTree) -> Self {
        Self::from_fn(tree, |leaf| {
            if tree.w_value(tree.n_steps(), leaf) > 0.0 {
                1.0
            } else {
                0.0
            }
        })
    }

    pub fn with_bounds(mut self, lo: f64, hi: f64) -> Self {
        debug_assert!(self.values.iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
        self.bounds = Some((lo, hi));
        self
    }

    pub fn bounds(&self) -> Option<(f64, f64)> {
        self.bounds
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn at(&self, leaf: usize) -> f64 {
        self.values[leaf]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> TerminalField {
        TerminalField::new(self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &TerminalField, f: impl Fn(f64, f64) -> f64) -> TerminalField {
        assert_eq!(self.len(), other.len());
        TerminalField::new(
            self.values
                .iter()
                .zip(other.values.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_step_tree_has_two_leaves() {
        let tree = PathTree::build(1, 1.0).unwrap();
        assert_eq!(tree.n_leaves(), 2);
        assert_eq!(tree.w_value(1, 0), 1.0);
        assert_eq!(tree.w_value(1, 1), -1.0);
    }

    #[test]
    fn three_step_tree_counting() {
        let tree = PathTree::build(3, 1.0).unwrap();
        assert_eq!(tree.n_leaves(), 8);
        assert!((tree.dt() - 1.0 / 3.0).abs() < 1e-15);
        assert!((tree.leaf_probability() - 0.125).abs() < 1e-15);
    }

    #[test]
    fn depth_boundary() {
        assert!(PathTree::build(24, 1.0).is_ok());
        assert!(matches!(
            PathTree::build(25, 1.0),
            Err(Error::DepthTooLarge(25))
        ));
        assert!(matches!(
            PathTree::build(3, 0.0),
            Err(Error::NonPositiveHorizon(_))
        ));
    }

    #[test]
    fn leaf_probabilities_sum_to_one() {
        for n in [1, 5, 12] {
            let tree = PathTree::build(n, 2.0).unwrap();
            let total: f64 = (0..tree.n_leaves()).map(|_| tree.leaf_probability()).sum();
            assert!((total - 1.0).abs() <= 1e-14);
        }
    }

    #[test]
    fn expectation_of_constant_and_wt() {
        let tree = PathTree::build(6, 1.0).unwrap();
        let c = TerminalField::constant(&tree, 3.7);
        assert!((tree.expectation(&c).unwrap() - 3.7).abs() < 1e-14);
        let wt = tree.w_terminal();
        assert!(tree.expectation(&wt).unwrap().abs() < 1e-14);
    }

    #[test]
    fn expectation_of_wt_squared_is_horizon() {
        // variance of N iid +-sqrt(dt) increments is N*dt = T
        for n in [2, 7, 11] {
            let tree = PathTree::build(n, 1.0).unwrap();
            let sq = tree.w_terminal().map(|w| w * w);
            assert!((tree.expectation(&sq).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn expectation_shape_mismatch() {
        let tree = PathTree::build(3, 1.0).unwrap();
        let bad = TerminalField::new(vec![0.0; 4]);
        assert!(matches!(
            tree.expectation(&bad),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn conditional_expectation_is_child_mean() {
        let tree = PathTree::build(2, 1.0).unwrap();
        let field = AdaptedField::from_levels(2, vec![vec![4.0, 2.0, 7.0, 7.0]]);
        let parents = tree.conditional_expectation(&field, 1).unwrap();
        assert_eq!(parents, vec![3.0, 7.0]);
        assert!(matches!(
            tree.conditional_expectation(&field, 0),
            Err(Error::LevelOutOfRange { .. })
        ));
    }

    #[test]
    fn w_is_a_martingale() {
        let tree = PathTree::build(8, 1.0).unwrap();
        let w = tree.w_field();
        for k in (0..8).rev() {
            let cond = tree.conditional_expectation(&w, k).unwrap();
            for (i, v) in cond.iter().enumerate() {
                // +-sqrt(dt) increments cancel; only product rounding remains
                let tol = 4.0 * f64::EPSILON * (1.0 + w.at(k, i).abs());
                assert!((*v - w.at(k, i)).abs() <= tol, "level {k} node {i}");
            }
        }
    }

    #[test]
    fn tower_property_matches_expectation() {
        let tree = PathTree::build(9, 1.0).unwrap();
        let terminal = tree.w_terminal().map(|w| (1.3 * w).sin() + 0.5 * w * w);
        let mut field = AdaptedField::from_levels(9, vec![terminal.values().to_vec()]);
        for k in (0..9).rev() {
            let parents = tree.conditional_expectation(&field, k).unwrap();
            field = AdaptedField::from_levels(k, vec![parents]);
        }
        let nested = field.at(0, 0);
        let direct = tree.expectation(&terminal).unwrap();
        assert!((nested - direct).abs() <= 1e-13);
    }
}
