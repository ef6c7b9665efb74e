//! Bagged multi-output regression trees exposing leaf co-membership weights.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub trees: usize,
    pub min_leaf: usize,
    /// Fraction of the training units drawn (without replacement) per tree.
    pub sample_fraction: f64,
    /// Candidate features per split; `None` uses `min(ceil(sqrt(p)) + 20, p)`.
    pub mtry: Option<usize>,
    /// Grow each tree on one half of its subsample and populate the leaves
    /// with the other half.
    pub honesty: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            trees: 500,
            min_leaf: 5,
            sample_fraction: 0.5,
            mtry: None,
            honesty: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn check(&self) -> Result<()> {
        if self.trees == 0 {
            return invalid("forest needs at least one tree");
        }
        if self.min_leaf == 0 {
            return invalid("min_leaf must be at least 1");
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0) {
            return invalid(format!("sample_fraction must lie in (0, 1], got {}", self.sample_fraction));
        }
        if self.mtry == Some(0) {
            return invalid("mtry must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Node {
    /// `(feature, threshold, left child, right child)`.
    split: Option<(u32, f64, u32, u32)>,
    /// Range in `members` of the estimation units below this node.
    start: u32,
    len: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Tree {
    nodes: Vec<Node>,
    /// Estimation units, contiguous per subtree.
    members: Vec<u32>,
}

impl Tree {
    /// Estimation units of the deepest non-empty node containing `x`.
    fn leaf(&self, x: &[f64]) -> &[u32] {
        let mut k = 0usize;
        while let Some((feature, threshold, left, right)) = self.nodes[k].split {
            let next = if x[feature as usize] <= threshold { left } else { right } as usize;
            if self.nodes[next].len == 0 {
                break;
            }
            k = next;
        }
        let node = &self.nodes[k];
        &self.members[node.start as usize..(node.start + node.len) as usize]
    }

    fn place(&mut self, k: usize, idx: Vec<u32>, x: &[f64], p: usize) {
        self.nodes[k].start = self.members.len() as u32;
        self.nodes[k].len = idx.len() as u32;
        match self.nodes[k].split {
            Some((feature, threshold, left, right)) => {
                let (l, r): (Vec<u32>, Vec<u32>) = idx
                    .iter()
                    .partition(|&&i| x[i as usize * p + feature as usize] <= threshold);
                self.place(left as usize, l, x, p);
                self.place(right as usize, r, x, p);
            }
            None => self.members.extend_from_slice(&idx),
        }
    }
}

/// A fitted forest over `n_train` units with `p` features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionForest {
    trees: Vec<Tree>,
    n_train: usize,
    p: usize,
}

struct Builder<'a> {
    x: &'a [f64],
    p: usize,
    y: &'a [f64],
    m: usize,
    min_leaf: usize,
    mtry: usize,
}

impl Builder<'_> {
    fn build(&self, grow: Vec<u32>, estimate: Vec<u32>, rng: &mut ChaCha8Rng) -> Tree {
        let mut tree = Tree {
            nodes: vec![Node {
                split: None,
                start: 0,
                len: 0,
            }],
            members: Vec::with_capacity(estimate.len()),
        };
        let mut stack = vec![(grow, 0usize)];
        while let Some((idx, slot)) = stack.pop() {
            if let Some((feature, threshold)) = self.best_split(&idx, rng) {
                let (l, r): (Vec<u32>, Vec<u32>) = idx
                    .iter()
                    .partition(|&&i| self.x[i as usize * self.p + feature] <= threshold);
                let left = tree.nodes.len();
                for _ in 0..2 {
                    tree.nodes.push(Node {
                        split: None,
                        start: 0,
                        len: 0,
                    });
                }
                tree.nodes[slot].split = Some((feature as u32, threshold, left as u32, left as u32 + 1));
                stack.push((r, left + 1));
                stack.push((l, left));
            }
        }
        tree.place(0, estimate, self.x, self.p);
        tree
    }

    /// Split maximizing the reduction in summed squared error over all
    /// response columns, among `mtry` randomly chosen features.
    fn best_split(&self, idx: &[u32], rng: &mut ChaCha8Rng) -> Option<(usize, f64)> {
        let n = idx.len();
        if n < 2 * self.min_leaf {
            return None;
        }
        let m = self.m;
        let mut total = vec![0.0; m];
        for &i in idx {
            for (t, v) in total.iter_mut().zip(&self.y[i as usize * m..(i as usize + 1) * m]) {
                *t += v;
            }
        }
        let parent: f64 = total.iter().map(|s| s * s).sum::<f64>() / n as f64;

        let mut features: Vec<usize> = (0..self.p).collect();
        for s in 0..self.mtry {
            let r = rng.random_range(s..self.p);
            features.swap(s, r);
        }
        let mut best: Option<(f64, usize, f64)> = None;
        let mut order: Vec<(f64, u32)> = Vec::with_capacity(n);
        let mut left = vec![0.0; m];
        for &f in &features[..self.mtry] {
            order.clear();
            order.extend(idx.iter().map(|&i| (self.x[i as usize * self.p + f], i)));
            order.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            if order[0].0 == order[n - 1].0 {
                continue;
            }
            left.fill(0.0);
            for pos in 0..n - 1 {
                let i = order[pos].1 as usize;
                for (l, v) in left.iter_mut().zip(&self.y[i * m..(i + 1) * m]) {
                    *l += v;
                }
                let nl = pos + 1;
                if nl < self.min_leaf || n - nl < self.min_leaf || order[pos].0 == order[pos + 1].0 {
                    continue;
                }
                let nr = (n - nl) as f64;
                let score: f64 = left
                    .iter()
                    .zip(&total)
                    .map(|(l, t)| l * l / nl as f64 + (t - l) * (t - l) / nr)
                    .sum::<f64>()
                    - parent;
                if best.is_none_or(|b| score > b.0) {
                    best = Some((score, f, 0.5 * (order[pos].0 + order[pos + 1].0)));
                }
            }
        }
        let scale = parent.abs().max(1.0);
        best.filter(|b| b.0 > 1e-12 * scale).map(|b| (b.1, b.2))
    }
}

impl RegressionForest {
    /// Fit on row-major features `x` (`n x p`) and responses `y` (`n x m`).
    pub fn fit(x: &[f64], p: usize, y: &[f64], m: usize, cfg: &ForestConfig) -> Result<Self> {
        cfg.check()?;
        if p == 0 || m == 0 {
            return invalid("forest needs at least one feature and one response");
        }
        let n = x.len() / p;
        if x.len() != n * p || y.len() != n * m {
            return invalid("forest features and responses disagree in length");
        }
        if n < cfg.min_leaf {
            return invalid(format!("{n} training units is fewer than min_leaf = {}", cfg.min_leaf));
        }
        let size = ((cfg.sample_fraction * n as f64).ceil() as usize).clamp(1, n);
        let mtry = cfg
            .mtry
            .unwrap_or_else(|| ((p as f64).sqrt().ceil() as usize + 20).min(p))
            .min(p);
        let builder = Builder {
            x,
            p,
            y,
            m,
            min_leaf: cfg.min_leaf,
            mtry,
        };
        let trees = (0..cfg.trees)
            .into_par_iter()
            .map(|b| {
                let mut rng = substream(cfg.seed, &[b as u64]);
                let mut all: Vec<u32> = (0..n as u32).collect();
                for s in 0..size.min(n - 1) {
                    let r = rng.random_range(s..n);
                    all.swap(s, r);
                }
                all.truncate(size);
                if cfg.honesty && size >= 2 {
                    let estimate = all.split_off(size / 2);
                    builder.build(all, estimate, &mut rng)
                } else {
                    builder.build(all.clone(), all, &mut rng)
                }
            })
            .collect();
        Ok(RegressionForest { trees, n_train: n, p })
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn n_train(&self) -> usize {
        self.n_train
    }

    pub fn n_features(&self) -> usize {
        self.p
    }

    /// Sparse weights `(training index, weight)`, sorted by index, summing
    /// to one.
    pub fn weights(&self, x: &[f64]) -> Result<Vec<(usize, f64)>> {
        if x.len() != self.p {
            return invalid(format!("query has {} features, forest expects {}", x.len(), self.p));
        }
        let mut dense = vec![0.0; self.n_train];
        let b = self.trees.len() as f64;
        for tree in &self.trees {
            let leaf = tree.leaf(x);
            let share = 1.0 / (b * leaf.len() as f64);
            for &i in leaf {
                dense[i as usize] += share;
            }
        }
        Ok(dense
            .into_iter()
            .enumerate()
            .filter(|(_, w)| *w > 0.0)
            .collect())
    }
}
