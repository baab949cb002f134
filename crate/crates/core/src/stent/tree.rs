//! Bootstrap-aggregated CART classification trees (Gini impurity).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::codec::{Reader, Writer};
use super::StentError;

const LEAF: u32 = u32::MAX;

/// One node of a flattened tree. Leaves have `feature == u32::MAX` and carry the
/// positive-class fraction in `value`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub feature: u32,
    pub threshold: f64,
    pub left: u32,
    pub right: u32,
    pub value: f64,
}

impl Node {
    fn leaf(value: f64) -> Self {
        Self { feature: LEAF, threshold: 0.0, left: 0, right: 0, value }
    }

    pub fn is_leaf(&self) -> bool {
        self.feature == LEAF
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0usize;
        loop {
            let n = &self.nodes[i];
            if n.is_leaf() {
                return n.value;
            }
            i = if x[n.feature as usize] <= n.threshold { n.left } else { n.right } as usize;
        }
    }

    pub fn depth(&self) -> usize {
        fn rec(t: &Tree, i: usize) -> usize {
            let n = &t.nodes[i];
            if n.is_leaf() {
                0
            } else {
                1 + rec(t, n.left as usize).max(rec(t, n.right as usize))
            }
        }
        rec(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TreeParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            n_trees: 31,
            max_depth: 10,
            min_samples_split: 4,
            min_samples_leaf: 2,
        }
    }
}

fn gini(pos: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let p = pos as f64 / total as f64;
    2.0 * p * (1.0 - p)
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [bool],
    params: &'a TreeParams,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    /// Best `(feature, threshold)` by weighted Gini; the first one found wins ties.
    /// Zero-gain splits are allowed so that XOR-like structure can be reached.
    fn best_split(&self, idx: &[usize]) -> Option<(usize, f64)> {
        let n = idx.len();
        let total_pos = idx.iter().filter(|&&i| self.y[i]).count();
        let min_leaf = self.params.min_samples_leaf.max(1);
        let mut best: Option<(usize, f64)> = None;
        let mut best_impurity = f64::INFINITY;
        let n_features = self.x[idx[0]].len();
        let mut order: Vec<usize> = idx.to_vec();
        for f in 0..n_features {
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let mut left_pos = 0usize;
            for k in 0..n - 1 {
                if self.y[order[k]] {
                    left_pos += 1;
                }
                let (lo, hi) = (self.x[order[k]][f], self.x[order[k + 1]][f]);
                let left = k + 1;
                if lo == hi || left < min_leaf || n - left < min_leaf {
                    continue;
                }
                let impurity = (left as f64 * gini(left_pos, left)
                    + (n - left) as f64 * gini(total_pos - left_pos, n - left))
                    / n as f64;
                if impurity < best_impurity {
                    best_impurity = impurity;
                    best = Some((f, lo + (hi - lo) / 2.0));
                }
            }
        }
        best
    }

    fn build(&mut self, idx: Vec<usize>, depth: usize) -> u32 {
        let pos = idx.iter().filter(|&&i| self.y[i]).count();
        let value = pos as f64 / idx.len() as f64;
        let at = self.nodes.len() as u32;
        self.nodes.push(Node::leaf(value));
        if depth >= self.params.max_depth || idx.len() < self.params.min_samples_split || pos == 0 || pos == idx.len()
        {
            return at;
        }
        let Some((feature, threshold)) = self.best_split(&idx) else {
            return at;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.x[i][feature] <= threshold);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[at as usize] = Node {
            feature: feature as u32,
            threshold,
            left,
            right,
            value,
        };
        at
    }
}

/// Fit a single tree on the samples listed in `idx` (repeats allowed).
pub fn fit_tree(x: &[Vec<f64>], y: &[bool], idx: Vec<usize>, params: &TreeParams) -> Tree {
    let mut b = Builder { x, y, params, nodes: Vec::new() };
    if idx.is_empty() {
        return Tree { nodes: vec![Node::leaf(0.0)] };
    }
    b.build(idx, 0);
    Tree { nodes: b.nodes }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaggedTrees {
    pub n_features: usize,
    pub trees: Vec<Tree>,
}

impl BaggedTrees {
    /// Each tree gets its own bootstrap sample drawn from `seed` and its index,
    /// so the ensemble does not depend on thread scheduling.
    pub fn fit(x: &[Vec<f64>], y: &[bool], params: &TreeParams, seed: u64) -> Self {
        let n = x.len();
        let trees = (0..params.n_trees.max(1))
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(t as u64 + 1);
                let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                fit_tree(x, y, idx, params)
            })
            .collect();
        Self {
            n_features: x.first().map_or(0, Vec::len),
            trees,
        }
    }

    /// Mean positive-class fraction over the trees.
    pub fn predict(&self, x: &[f64]) -> f64 {
        if self.trees.is_empty() {
            return 0.0;
        }
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }

    pub(crate) fn encode(&self, w: &mut Writer) {
        w.u32(self.n_features as u32);
        w.u32(self.trees.len() as u32);
        for t in &self.trees {
            w.u32(t.nodes.len() as u32);
            for n in &t.nodes {
                w.u32(n.feature);
                w.f64(n.threshold);
                w.u32(n.left);
                w.u32(n.right);
                w.f64(n.value);
            }
        }
    }

    pub(crate) fn decode(r: &mut Reader) -> Result<Self, StentError> {
        let n_features = r.u32()? as usize;
        let n_trees = r.u32()? as usize;
        let mut trees = Vec::with_capacity(n_trees.min(4096));
        for _ in 0..n_trees {
            let n_nodes = r.u32()? as usize;
            let mut nodes = Vec::with_capacity(n_nodes.min(1 << 20));
            for _ in 0..n_nodes {
                let node = Node {
                    feature: r.u32()?,
                    threshold: r.f64()?,
                    left: r.u32()?,
                    right: r.u32()?,
                    value: r.f64()?,
                };
                let bad_child = !node.is_leaf()
                    && (node.left as usize >= n_nodes
                        || node.right as usize >= n_nodes
                        || node.feature as usize >= n_features);
                if bad_child {
                    return Err(StentError::ModelFormat("tree node out of range".into()));
                }
                nodes.push(node);
            }
            if nodes.is_empty() {
                return Err(StentError::ModelFormat("empty tree".into()));
            }
            trees.push(Tree { nodes });
        }
        Ok(Self { n_features, trees })
    }
}
