//! Exact greedy binary trees over presorted feature orders.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;

/// Internal-node split: rows with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
}

/// One node of a fitted tree. Nodes are stored in pre-order, root first.
///
/// `value` is P(Risk) for classification trees and an additive margin for
/// boosted trees. `cover` is the weighted training mass reaching the node,
/// `n_samples` the unweighted count (bootstrap duplicates counted).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub split: Option<Split>,
    pub value: f64,
    pub cover: f64,
    pub n_samples: usize,
    pub impurity: f64,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.split.is_none()
    }
}

pub fn predict_tree(nodes: &[TreeNode], x: &[f64]) -> f64 {
    let mut i = 0;
    while let Some(s) = nodes[i].split {
        i = if x[s.feature] <= s.threshold { s.left } else { s.right };
    }
    nodes[i].value
}

/// Index of the leaf reached by `x`.
pub fn leaf_of(nodes: &[TreeNode], x: &[f64]) -> usize {
    let mut i = 0;
    while let Some(s) = nodes[i].split {
        i = if x[s.feature] <= s.threshold { s.left } else { s.right };
    }
    i
}

pub fn depth(nodes: &[TreeNode]) -> usize {
    fn go(nodes: &[TreeNode], i: usize) -> usize {
        match nodes[i].split {
            None => 0,
            Some(s) => 1 + go(nodes, s.left).max(go(nodes, s.right)),
        }
    }
    go(nodes, 0)
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Criterion {
    /// Weighted Gini impurity; `a` = weight, `b` = weight * y.
    Gini,
    /// Second-order log-loss; `a` = hessian, `b` = gradient.
    Newton { lambda: f64, eta: f64, min_child_weight: f64, gamma: f64 },
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct GrowParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features tried per split; `None` tries all.
    pub max_features: Option<usize>,
}

/// A training sample with its multiplicity and criterion statistics.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Sample {
    pub row: usize,
    pub count: usize,
    pub cover: f64,
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Stats {
    count: usize,
    cover: f64,
    a: f64,
    b: f64,
}

impl Stats {
    fn add(&mut self, s: &Sample) {
        self.count += s.count;
        self.cover += s.cover;
        self.a += s.a;
        self.b += s.b;
    }

    fn minus(&self, o: &Stats) -> Stats {
        Stats { count: self.count - o.count, cover: self.cover - o.cover, a: self.a - o.a, b: self.b - o.b }
    }
}

impl Criterion {
    /// Node score; a split's gain is score(left) + score(right) - score(parent).
    fn score(&self, s: &Stats) -> f64 {
        match *self {
            Criterion::Gini => {
                if s.a <= 0.0 {
                    0.0
                } else {
                    -2.0 * s.b * (s.a - s.b) / s.a
                }
            }
            Criterion::Newton { lambda, .. } => s.b * s.b / (s.a + lambda),
        }
    }

    fn impurity(&self, s: &Stats) -> f64 {
        match *self {
            Criterion::Gini => {
                if s.a <= 0.0 {
                    0.0
                } else {
                    let p = s.b / s.a;
                    2.0 * p * (1.0 - p)
                }
            }
            // scaled so that cover-weighted impurity decrease equals split gain
            Criterion::Newton { lambda, .. } => {
                if s.cover <= 0.0 {
                    0.0
                } else {
                    -s.b * s.b / (s.a + lambda) / s.cover
                }
            }
        }
    }

    fn value(&self, s: &Stats) -> f64 {
        match *self {
            Criterion::Gini => {
                if s.a <= 0.0 {
                    0.0
                } else {
                    s.b / s.a
                }
            }
            Criterion::Newton { lambda, eta, .. } => {
                let d = s.a + lambda;
                if d <= 0.0 {
                    0.0
                } else {
                    -eta * s.b / d
                }
            }
        }
    }

    fn splittable(&self, s: &Stats) -> bool {
        match self {
            Criterion::Gini => s.b > 1e-12 * s.a && s.a - s.b > 1e-12 * s.a,
            Criterion::Newton { .. } => true,
        }
    }

    fn child_ok(&self, s: &Stats) -> bool {
        match *self {
            Criterion::Gini => true,
            Criterion::Newton { min_child_weight, .. } => s.a >= min_child_weight,
        }
    }

    fn accept(&self, gain: f64) -> bool {
        match *self {
            // zero-gain splits are allowed, as in the usual CART implementations
            Criterion::Gini => gain >= -1e-12,
            Criterion::Newton { gamma, .. } => 0.5 * gain > gamma && gain > 0.0,
        }
    }
}

struct Builder<'a> {
    cols: &'a [Vec<f64>],
    samples: &'a [Sample],
    crit: Criterion,
    params: GrowParams,
    nodes: Vec<TreeNode>,
    go_left: Vec<bool>,
}

struct Best {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl Builder<'_> {
    fn grow(&mut self, orders: Vec<Vec<usize>>, depth: usize, rng: &mut Rng) -> usize {
        let mut stats = Stats::default();
        for &p in &orders[0] {
            stats.add(&self.samples[p]);
        }
        let id = self.nodes.len();
        self.nodes.push(TreeNode {
            split: None,
            value: self.crit.value(&stats),
            cover: stats.cover,
            n_samples: stats.count,
            impurity: self.crit.impurity(&stats),
        });
        if depth >= self.params.max_depth
            || stats.count < 2 * self.params.min_leaf.max(1)
            || !self.crit.splittable(&stats)
        {
            return id;
        }
        let d = self.cols.len();
        let features: Vec<usize> = match self.params.max_features {
            Some(m) if m < d => {
                let mut f = sample(rng, d, m.max(1)).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..d).collect(),
        };
        let Some(best) = self.best_split(&orders, &features, &stats) else {
            return id;
        };
        let col = &self.cols[best.feature];
        for &p in &orders[0] {
            self.go_left[p] = col[self.samples[p].row] <= best.threshold;
        }
        let mut left = Vec::with_capacity(d);
        let mut right = Vec::with_capacity(d);
        for o in orders {
            let (l, r): (Vec<usize>, Vec<usize>) = o.into_iter().partition(|&p| self.go_left[p]);
            left.push(l);
            right.push(r);
        }
        let l = self.grow(left, depth + 1, rng);
        let r = self.grow(right, depth + 1, rng);
        self.nodes[id].split = Some(Split { feature: best.feature, threshold: best.threshold, left: l, right: r });
        id
    }

    fn best_split(&self, orders: &[Vec<usize>], features: &[usize], total: &Stats) -> Option<Best> {
        let parent = self.crit.score(total);
        let min_leaf = self.params.min_leaf.max(1);
        let mut best: Option<Best> = None;
        for &f in features {
            let col = &self.cols[f];
            let order = &orders[f];
            let mut left = Stats::default();
            for w in order.windows(2) {
                left.add(&self.samples[w[0]]);
                let (v0, v1) = (col[self.samples[w[0]].row], col[self.samples[w[1]].row]);
                if v0 == v1 {
                    continue;
                }
                let right = total.minus(&left);
                if left.count < min_leaf || right.count < min_leaf {
                    continue;
                }
                if !self.crit.child_ok(&left) || !self.crit.child_ok(&right) {
                    continue;
                }
                let gain = self.crit.score(&left) + self.crit.score(&right) - parent;
                if !self.crit.accept(gain) {
                    continue;
                }
                if best.as_ref().is_none_or(|b| gain > b.gain + 1e-12 * b.gain.abs().max(1e-300)) {
                    let mid = v0 + (v1 - v0) / 2.0;
                    let threshold = if mid < v1 { mid } else { v0 };
                    best = Some(Best { gain, feature: f, threshold });
                }
            }
        }
        best
    }
}

/// Grows one tree. `cols` is column-major feature data.
pub(crate) fn grow_tree(cols: &[Vec<f64>], samples: &[Sample], crit: Criterion, params: GrowParams, rng: &mut Rng) -> Vec<TreeNode> {
    let orders: Vec<Vec<usize>> = cols
        .iter()
        .map(|col| {
            let mut o: Vec<usize> = (0..samples.len()).collect();
            o.sort_by(|&a, &b| col[samples[a].row].total_cmp(&col[samples[b].row]).then(a.cmp(&b)));
            o
        })
        .collect();
    let mut b = Builder { cols, samples, crit, params, nodes: Vec::new(), go_left: vec![false; samples.len()] };
    if samples.is_empty() {
        return vec![TreeNode { split: None, value: 0.0, cover: 0.0, n_samples: 0, impurity: 0.0 }];
    }
    b.grow(orders, 0, rng);
    b.nodes
}

pub(crate) fn to_columns(x: &[Vec<f64>], d: usize) -> Vec<Vec<f64>> {
    (0..d).map(|j| x.iter().map(|r| r[j]).collect()).collect()
}
