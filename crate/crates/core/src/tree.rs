//! Binary scenario tree carrying a discrete Brownian motion.
//!
//! Node `j` at level `k` has children `2j` (increment `+√dt`) and `2j + 1`
//! (increment `-√dt`), each with conditional probability one half. Paths do
//! not recombine, so every node can carry path-dependent data.

use crate::error::{Error, Result};

/// Default cap on `N_t · 2^N_t`.
pub const DEFAULT_NODE_BUDGET: u64 = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioTree {
    num_steps: usize,
    horizon: f64,
    dt: f64,
    sqrt_dt: f64,
}

pub fn build_tree(num_steps: usize, horizon: f64) -> Result<ScenarioTree> {
    build_tree_with_budget(num_steps, horizon, DEFAULT_NODE_BUDGET)
}

pub fn build_tree_with_budget(num_steps: usize, horizon: f64, budget: u64) -> Result<ScenarioTree> {
    if num_steps == 0 {
        return Err(Error::Config("tree needs at least one time step".into()));
    }
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::Config(format!("horizon must be positive, got {horizon}")));
    }
    let cost = if num_steps >= 64 {
        u128::MAX
    } else {
        (num_steps as u128) << num_steps
    };
    if cost > budget as u128 {
        return Err(Error::Resource(format!(
            "tree with {num_steps} steps needs N_t*2^N_t = {cost} node slots, budget is {budget}"
        )));
    }
    let dt = horizon / num_steps as f64;
    Ok(ScenarioTree {
        num_steps,
        horizon,
        dt,
        sqrt_dt: dt.sqrt(),
    })
}

impl ScenarioTree {
    pub fn num_steps(&self) -> usize {
        self.num_steps
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

    pub fn time(&self, level: usize) -> f64 {
        level as f64 * self.dt
    }

    pub fn nodes_at(&self, level: usize) -> usize {
        1 << level
    }

    pub fn num_leaves(&self) -> usize {
        self.nodes_at(self.num_steps)
    }

    pub fn total_nodes(&self) -> usize {
        (1 << (self.num_steps + 1)) - 1
    }

    /// Probability of a single node at `level`.
    pub fn probability(&self, level: usize) -> f64 {
        0.5f64.powi(level as i32)
    }

    pub fn children(&self, node: usize) -> (usize, usize) {
        (2 * node, 2 * node + 1)
    }

    pub fn parent(&self, node: usize) -> usize {
        node / 2
    }

    /// Increment `ΔW` on the edge into `child` (any level ≥ 1).
    pub fn increment(&self, child: usize) -> f64 {
        if child.is_multiple_of(2) {
            self.sqrt_dt
        } else {
            -self.sqrt_dt
        }
    }

    /// `W(t_level)` at `node`.
    pub fn brownian(&self, level: usize, node: usize) -> f64 {
        (0..level).map(|bit| self.increment(node >> bit)).sum()
    }

    /// The Brownian motion as a scalar process on levels `0..=N`.
    pub fn brownian_process(&self) -> AdaptedProcess {
        AdaptedProcess::from_fn(self, 1, self.num_steps + 1, |k, j, out| out[0] = self.brownian(k, j))
    }
}

/// One `dim`-sized payload per node, stored level by level.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedProcess {
    dim: usize,
    levels: Vec<Vec<f64>>,
}

impl AdaptedProcess {
    pub fn zeros(dim: usize, num_levels: usize) -> Self {
        let levels = (0..num_levels).map(|k| vec![0.0; dim << k]).collect();
        Self { dim, levels }
    }

    pub fn from_fn<F>(tree: &ScenarioTree, dim: usize, num_levels: usize, f: F) -> Self
    where
        F: Fn(usize, usize, &mut [f64]),
    {
        let mut p = Self::zeros(dim, num_levels);
        for k in 0..num_levels {
            for j in 0..tree.nodes_at(k) {
                f(k, j, p.node_mut(k, j));
            }
        }
        p
    }

    /// Like [`AdaptedProcess::from_fn`], visiting the nodes of each level in parallel.
    pub fn par_from_fn<F>(dim: usize, num_levels: usize, f: F) -> Self
    where
        F: Fn(usize, usize, &mut [f64]) + Send + Sync,
    {
        let mut p = Self::zeros(dim, num_levels);
        for k in 0..num_levels {
            crate::exec::for_each_node(p.level_mut(k), dim, |j, out| f(k, j, out));
        }
        p
    }

    /// The same payload at every node of every level.
    pub fn deterministic(dim_values: &[f64], num_levels: usize) -> Self {
        let dim = dim_values.len();
        let levels = (0..num_levels).map(|k| dim_values.repeat(1 << k)).collect();
        Self { dim, levels }
    }

    /// Wraps raw level buffers without validation; see [`check_adapted`].
    pub fn from_levels(dim: usize, levels: Vec<Vec<f64>>) -> Self {
        Self { dim, levels }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, k: usize) -> &[f64] {
        &self.levels[k]
    }

    pub fn level_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.levels[k]
    }

    pub fn levels(&self) -> &[Vec<f64>] {
        &self.levels
    }

    pub fn node(&self, k: usize, j: usize) -> &[f64] {
        &self.levels[k][j * self.dim..(j + 1) * self.dim]
    }

    pub fn node_mut(&mut self, k: usize, j: usize) -> &mut [f64] {
        let d = self.dim;
        &mut self.levels[k][j * d..(j + 1) * d]
    }

    pub fn last_level(&self) -> &[f64] {
        self.levels.last().map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub(crate) fn push_level(&mut self, values: Vec<f64>) {
        self.levels.push(values);
    }

    pub fn scale(&mut self, c: f64) {
        self.levels.iter_mut().flatten().for_each(|v| *v *= c);
    }

    /// `self += c * other` over the common levels.
    pub fn axpy(&mut self, c: f64, other: &AdaptedProcess) {
        for (a, b) in self.levels.iter_mut().zip(&other.levels) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += c * y;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.levels.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.levels.iter().flatten().all(|v| v.is_finite())
    }

    /// Flattened copy of levels `from..to`.
    pub fn flatten_levels(&self, from: usize, to: usize) -> Vec<f64> {
        self.levels[from..to].concat()
    }

    /// Inverse of [`AdaptedProcess::flatten_levels`] starting at level `from`.
    pub fn unflatten(dim: usize, from: usize, to: usize, data: &[f64]) -> Self {
        let mut levels: Vec<Vec<f64>> = (0..from).map(|k| vec![0.0; dim << k]).collect();
        let mut off = 0;
        for k in from..to {
            let len = dim << k;
            levels.push(data[off..off + len].to_vec());
            off += len;
        }
        Self { dim, levels }
    }
}

/// Probability-weighted average over the nodes of level `k`.
pub fn expectation(tree: &ScenarioTree, x: &AdaptedProcess, k: usize) -> Vec<f64> {
    let d = x.dim();
    let mut acc = vec![0.0; d];
    for node in x.level(k).chunks_exact(d) {
        for (a, v) in acc.iter_mut().zip(node) {
            *a += v;
        }
    }
    let p = tree.probability(k);
    acc.iter_mut().for_each(|a| *a *= p);
    acc
}

/// `𝔼[X_{k+1} | node]` for `node` at level `k`.
pub fn conditional_expectation(tree: &ScenarioTree, x: &AdaptedProcess, k: usize, node: usize) -> Result<Vec<f64>> {
    if k >= tree.num_steps() || k + 1 >= x.num_levels() {
        return Err(Error::NoChildren { level: k, node });
    }
    let (up, down) = tree.children(node);
    Ok(x.node(k + 1, up)
        .iter()
        .zip(x.node(k + 1, down))
        .map(|(a, b)| 0.5 * (a + b))
        .collect())
}

/// Conditional expectation of level `k+1` onto every node of level `k`.
pub fn condition_level(tree: &ScenarioTree, x: &AdaptedProcess, k: usize) -> Result<AdaptedProcess> {
    if k >= tree.num_steps() || k + 1 >= x.num_levels() {
        return Err(Error::NoChildren { level: k, node: 0 });
    }
    let d = x.dim();
    let next = x.level(k + 1);
    let mut out = vec![0.0; d << k];
    for (j, chunk) in out.chunks_exact_mut(d).enumerate() {
        let up = &next[2 * j * d..(2 * j + 1) * d];
        let down = &next[(2 * j + 1) * d..(2 * j + 2) * d];
        for ((o, a), b) in chunk.iter_mut().zip(up).zip(down) {
            *o = 0.5 * (a + b);
        }
    }
    let mut levels: Vec<Vec<f64>> = (0..k).map(|l| vec![0.0; d << l]).collect();
    levels.push(out);
    Ok(AdaptedProcess::from_levels(d, levels))
}

/// True when every stored level has exactly one payload per node and the
/// level count fits the tree.
pub fn check_adapted(tree: &ScenarioTree, x: &AdaptedProcess) -> bool {
    x.dim() > 0
        && x.num_levels() >= 1
        && x.num_levels() <= tree.num_steps() + 1
        && x.levels().iter().enumerate().all(|(k, v)| v.len() == x.dim() << k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_trees() {
        let t = build_tree(1, 1.0).unwrap();
        assert_eq!(t.num_leaves(), 2);
        assert_eq!(t.increment(0), 1.0);
        assert_eq!(t.increment(1), -1.0);
        let t = build_tree(2, 1.0).unwrap();
        assert_eq!(t.num_leaves(), 4);
        assert!((t.increment(2) - 0.5f64.sqrt()).abs() < 1e-15);
        let t = build_tree(8, 1.0).unwrap();
        assert_eq!(t.num_leaves(), 256);
        assert_eq!(t.total_nodes(), 511);
    }

    #[test]
    fn budget_is_enforced() {
        assert!(matches!(build_tree_with_budget(10, 1.0, 1000), Err(Error::Resource(_))));
        assert!(build_tree_with_budget(10, 1.0, 10 * 1024).is_ok());
        assert!(matches!(build_tree(0, 1.0), Err(Error::Config(_))));
    }

    #[test]
    fn brownian_moments() {
        let t = build_tree(5, 2.0).unwrap();
        let w = t.brownian_process();
        let last = t.num_steps();
        assert!(expectation(&t, &w, last)[0].abs() < 1e-14);
        let sq = AdaptedProcess::from_fn(&t, 1, last + 1, |k, j, o| o[0] = w.node(k, j)[0].powi(2));
        assert!((expectation(&t, &sq, last)[0] - 2.0).abs() < 1e-13);
    }

    #[test]
    fn constant_process() {
        let t = build_tree(4, 1.0).unwrap();
        let c = AdaptedProcess::deterministic(&[3.0, -1.0], 5);
        assert_eq!(expectation(&t, &c, 4), vec![3.0, -1.0]);
        assert_eq!(conditional_expectation(&t, &c, 2, 3).unwrap(), vec![3.0, -1.0]);
        assert!(check_adapted(&t, &c));
    }

    #[test]
    fn conditional_increment_moments() {
        let t = build_tree(3, 1.0).unwrap();
        let dw = AdaptedProcess::from_fn(&t, 2, 4, |k, j, o| {
            let v = if k == 0 { 0.0 } else { t.increment(j) };
            o[0] = v;
            o[1] = v * v;
        });
        for k in 0..3 {
            for j in 0..t.nodes_at(k) {
                let c = conditional_expectation(&t, &dw, k, j).unwrap();
                assert_eq!(c[0], 0.0);
                assert!((c[1] - t.dt()).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn leaf_has_no_children() {
        let t = build_tree(2, 1.0).unwrap();
        let x = AdaptedProcess::zeros(1, 3);
        assert_eq!(
            conditional_expectation(&t, &x, 2, 0),
            Err(Error::NoChildren { level: 2, node: 0 })
        );
    }

    #[test]
    fn missing_level_is_not_adapted() {
        let t = build_tree(3, 1.0).unwrap();
        let full = AdaptedProcess::zeros(2, 4);
        assert!(check_adapted(&t, &full));
        let mut levels = full.levels().to_vec();
        levels.remove(1);
        assert!(!check_adapted(&t, &AdaptedProcess::from_levels(2, levels)));
    }

    #[test]
    fn flatten_round_trip() {
        let t = build_tree(3, 1.0).unwrap();
        let x = AdaptedProcess::from_fn(&t, 2, 3, |k, j, o| {
            o[0] = k as f64;
            o[1] = j as f64;
        });
        let flat = x.flatten_levels(1, 3);
        let y = AdaptedProcess::unflatten(2, 1, 3, &flat);
        assert_eq!(y.level(1), x.level(1));
        assert_eq!(y.level(2), x.level(2));
        assert!(y.level(0).iter().all(|&v| v == 0.0));
    }
}
