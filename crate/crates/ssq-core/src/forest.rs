//! Bootstrap-aggregated CART regression trees.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::random::Rng;

#[derive(Debug, Clone)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Features tried per split; `None` means `max(1, p/3)`.
    pub mtry: Option<usize>,
    pub min_leaf: usize,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig { n_trees: 500, mtry: None, min_leaf: 5, bootstrap: true, seed: 0 }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Split { feature: usize, threshold: f64, left: u32, right: u32 },
    Leaf(f64),
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, row: &[f64]) -> f64 {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf(v) => return *v,
                Node::Split { feature, threshold, left, right } => {
                    at = if row[*feature] <= *threshold { *left as usize } else { *right as usize };
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Forest {
    trees: Vec<Tree>,
    pub y_min: f64,
    pub y_max: f64,
}

struct Grower<'a> {
    features: &'a Matrix,
    y: &'a [f64],
    mtry: usize,
    min_leaf: usize,
    nodes: Vec<Node>,
    feature_pool: Vec<usize>,
}

impl<'a> Grower<'a> {
    /// Best SSE-reducing split on a random feature subset; children must keep
    /// at least `min_leaf` rows each.
    fn best_split(&mut self, idx: &[usize], rng: &mut Rng) -> Option<(usize, f64, f64)> {
        let n = idx.len();
        if n < 2 * self.min_leaf {
            return None;
        }
        let p = self.feature_pool.len();
        for i in 0..self.mtry.min(p) {
            let j = i + rng.below(p - i);
            self.feature_pool.swap(i, j);
        }
        let total_sum: f64 = idx.iter().map(|&i| self.y[i]).sum();
        let total_sq: f64 = idx.iter().map(|&i| self.y[i] * self.y[i]).sum();
        let base_sse = total_sq - total_sum * total_sum / n as f64;
        let mut best: Option<(usize, f64, f64)> = None;
        let mut order: Vec<usize> = Vec::with_capacity(n);
        for fi in 0..self.mtry.min(p) {
            let feature = self.feature_pool[fi];
            order.clear();
            order.extend_from_slice(idx);
            order.sort_unstable_by(|&a, &b| {
                self.features
                    .get(a, feature)
                    .partial_cmp(&self.features.get(b, feature))
                    .unwrap_or(core::cmp::Ordering::Equal)
            });
            let mut left_sum = 0.0;
            let mut left_sq = 0.0;
            for (pos, &row) in order.iter().enumerate().take(n - 1) {
                let yv = self.y[row];
                left_sum += yv;
                left_sq += yv * yv;
                let n_left = pos + 1;
                let n_right = n - n_left;
                if n_left < self.min_leaf || n_right < self.min_leaf {
                    continue;
                }
                let xv = self.features.get(row, feature);
                let xnext = self.features.get(order[pos + 1], feature);
                if xnext <= xv {
                    continue;
                }
                let right_sum = total_sum - left_sum;
                let right_sq = total_sq - left_sq;
                let sse = (left_sq - left_sum * left_sum / n_left as f64)
                    + (right_sq - right_sum * right_sum / n_right as f64);
                let gain = base_sse - sse;
                if gain > 1e-12 && best.map_or(true, |(_, _, g)| gain > g) {
                    best = Some((feature, 0.5 * (xv + xnext), gain));
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: Vec<usize>, rng: &mut Rng) -> u32 {
        if let Some((feature, threshold, _)) = self.best_split(&idx, rng) {
            let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = idx
                .into_iter()
                .partition(|&i| self.features.get(i, feature) <= threshold);
            let slot = self.nodes.len();
            self.nodes.push(Node::Leaf(0.0)); // placeholder
            let left = self.grow(left_idx, rng);
            let right = self.grow(right_idx, rng);
            self.nodes[slot] = Node::Split { feature, threshold, left, right };
            slot as u32
        } else {
            let mean = idx.iter().map(|&i| self.y[i]).sum::<f64>() / idx.len() as f64;
            self.nodes.push(Node::Leaf(mean));
            (self.nodes.len() - 1) as u32
        }
    }
}

/// Fits a regression forest; prediction is the mean of per-tree leaf means.
/// Deterministic given `cfg.seed`.
pub fn forest_fit(features: &Matrix, y: &[f64], cfg: &ForestConfig) -> Result<Forest> {
    let n = features.rows();
    let p = features.cols();
    if p == 0 {
        return Err(Error::invalid("forest_fit: empty feature set"));
    }
    if n == 0 || n != y.len() {
        return Err(Error::invalid("forest_fit: feature/target size mismatch"));
    }
    let mtry = cfg.mtry.unwrap_or_else(|| (p / 3).max(1)).min(p);
    let base_rng = Rng::stream(cfg.seed, 0xF0_5E57);
    let mut trees = Vec::with_capacity(cfg.n_trees);
    for t in 0..cfg.n_trees {
        let mut rng = base_rng.substream(t as u64);
        let idx: Vec<usize> = if cfg.bootstrap {
            (0..n).map(|_| rng.below(n)).collect()
        } else {
            (0..n).collect()
        };
        let mut grower = Grower {
            features,
            y,
            mtry,
            min_leaf: cfg.min_leaf.max(1),
            nodes: Vec::new(),
            feature_pool: (0..p).collect(),
        };
        let root = grower.grow(idx, &mut rng);
        debug_assert_eq!(root, 0);
        trees.push(Tree { nodes: grower.nodes });
    }
    let y_min = y.iter().copied().fold(f64::INFINITY, f64::min);
    let y_max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(Forest { trees, y_min, y_max })
}

pub fn forest_predict(model: &Forest, features: &Matrix) -> Vec<f64> {
    let inv = 1.0 / model.trees.len() as f64;
    (0..features.rows())
        .map(|i| {
            let row = features.row(i);
            model.trees.iter().map(|t| t.predict(row)).sum::<f64>() * inv
        })
        .collect()
}
