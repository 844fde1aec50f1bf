//! CART trees (MSE splits for regression, Gini for classification) and a
//! bootstrap random forest over them.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Dense row-major feature matrix.
#[derive(Debug, Clone, Copy)]
pub struct Features<'a> {
    pub data: &'a [f64],
    pub ncols: usize,
}

impl<'a> Features<'a> {
    pub fn new(data: &'a [f64], ncols: usize) -> Self {
        assert!(ncols > 0 && data.len() % ncols == 0, "ragged feature matrix");
        Self { data, ncols }
    }

    pub fn nrows(&self) -> usize {
        self.data.len() / self.ncols
    }

    fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.ncols + col]
    }

    pub fn row(&self, row: usize) -> &'a [f64] {
        &self.data[row * self.ncols..(row + 1) * self.ncols]
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    Regression(&'a [f64]),
    Classification { labels: &'a [usize], n_classes: usize },
}

// Short serialized names keep persisted forests small.
#[derive(Debug, Clone, Serialize, Deserialize)]
enum Node {
    /// Mean for regression, class distribution for classification.
    #[serde(rename = "l")]
    Leaf(Vec<f64>),
    #[serde(rename = "s")]
    Split {
        #[serde(rename = "f")]
        feature: usize,
        #[serde(rename = "t")]
        threshold: f64,
        #[serde(rename = "a")]
        left: usize,
        #[serde(rename = "b")]
        right: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn leaf_value(&self, x: &[f64]) -> &[f64] {
        let mut n = 0;
        loop {
            match &self.nodes[n] {
                Node::Leaf(v) => return v,
                Node::Split { feature, threshold, left, right } => n = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], n: usize) -> usize {
            match &nodes[n] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }
}

fn leaf(target: Target<'_>, idx: &[usize]) -> Vec<f64> {
    match target {
        Target::Regression(y) => vec![idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64],
        Target::Classification { labels, n_classes } => {
            let mut counts = vec![0.0; n_classes];
            for &i in idx {
                counts[labels[i]] += 1.0;
            }
            counts.iter_mut().for_each(|c| *c /= idx.len() as f64);
            counts
        }
    }
}

/// Total impurity of a node: SSE for regression, n · Gini for
/// classification.
fn impurity(target: Target<'_>, idx: &[usize]) -> f64 {
    match target {
        Target::Regression(y) => {
            let n = idx.len() as f64;
            let s: f64 = idx.iter().map(|&i| y[i]).sum();
            let ss: f64 = idx.iter().map(|&i| y[i] * y[i]).sum();
            (ss - s * s / n).max(0.0)
        }
        Target::Classification { labels, n_classes } => {
            let mut counts = vec![0.0; n_classes];
            for &i in idx {
                counts[labels[i]] += 1.0;
            }
            let n = idx.len() as f64;
            n - counts.iter().map(|c| c * c).sum::<f64>() / n
        }
    }
}

struct Split {
    feature: usize,
    threshold: f64,
    cost: f64,
}

/// Best threshold on one feature by a sorted sweep.
fn best_on_feature(x: Features<'_>, target: Target<'_>, idx: &mut [usize], feature: usize, min_leaf: usize) -> Option<Split> {
    idx.sort_by(|&a, &b| x.at(a, feature).total_cmp(&x.at(b, feature)));
    let n = idx.len();
    let mut best: Option<Split> = None;
    match target {
        Target::Regression(y) => {
            let total: f64 = idx.iter().map(|&i| y[i]).sum();
            let total_sq: f64 = idx.iter().map(|&i| y[i] * y[i]).sum();
            let (mut s, mut ss) = (0.0, 0.0);
            for k in 0..n - 1 {
                let v = y[idx[k]];
                s += v;
                ss += v * v;
                let (lo, hi) = (x.at(idx[k], feature), x.at(idx[k + 1], feature));
                let nl = k + 1;
                let nr = n - nl;
                if lo == hi || nl < min_leaf || nr < min_leaf {
                    continue;
                }
                let cost = (ss - s * s / nl as f64) + ((total_sq - ss) - (total - s).powi(2) / nr as f64);
                if best.as_ref().is_none_or(|b| cost < b.cost) {
                    best = Some(Split { feature, threshold: midpoint(lo, hi), cost });
                }
            }
        }
        Target::Classification { labels, n_classes } => {
            let mut right = vec![0.0; n_classes];
            for &i in idx.iter() {
                right[labels[i]] += 1.0;
            }
            let mut left = vec![0.0; n_classes];
            let (mut sl2, mut sr2) = (0.0, right.iter().map(|c| c * c).sum::<f64>());
            for k in 0..n - 1 {
                let c = labels[idx[k]];
                sl2 += 2.0 * left[c] + 1.0;
                sr2 -= 2.0 * right[c] - 1.0;
                left[c] += 1.0;
                right[c] -= 1.0;
                let (lo, hi) = (x.at(idx[k], feature), x.at(idx[k + 1], feature));
                let nl = (k + 1) as f64;
                let nr = (n - k - 1) as f64;
                if lo == hi || (k + 1) < min_leaf || (n - k - 1) < min_leaf {
                    continue;
                }
                let cost = (nl - sl2 / nl) + (nr - sr2 / nr);
                if best.as_ref().is_none_or(|b| cost < b.cost) {
                    best = Some(Split { feature, threshold: midpoint(lo, hi), cost });
                }
            }
        }
    }
    best
}

fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if m >= hi {
        lo
    } else {
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeOptions {
    pub max_features: usize,
    pub min_samples_leaf: usize,
}

/// Grows a tree to purity (or until no split separates distinct values).
pub fn fit_tree(x: Features<'_>, target: Target<'_>, rows: Vec<usize>, opts: TreeOptions, rng: &mut ChaCha8Rng) -> Tree {
    let p = x.ncols;
    let mtry = opts.max_features.clamp(1, p);
    let mut nodes = vec![Node::Leaf(Vec::new())];
    let mut stack = vec![(0usize, rows)];
    while let Some((id, mut idx)) = stack.pop() {
        let parent = impurity(target, &idx);
        let mut best: Option<Split> = None;
        if parent > 1e-12 && idx.len() >= 2 * opts.min_samples_leaf {
            for f in sample(rng, p, mtry).into_iter() {
                if let Some(s) = best_on_feature(x, target, &mut idx, f, opts.min_samples_leaf) {
                    if best.as_ref().is_none_or(|b| s.cost < b.cost) {
                        best = Some(s);
                    }
                }
            }
        }
        match best.filter(|b| b.cost < parent - 1e-12 * parent.max(1.0)) {
            None => nodes[id] = Node::Leaf(leaf(target, &idx)),
            Some(s) => {
                let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| x.at(i, s.feature) <= s.threshold);
                let left = nodes.len();
                nodes.push(Node::Leaf(Vec::new()));
                nodes.push(Node::Leaf(Vec::new()));
                nodes[id] = Node::Split { feature: s.feature, threshold: s.threshold, left, right: left + 1 };
                stack.push((left + 1, r));
                stack.push((left, l));
            }
        }
    }
    Tree { nodes }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestOptions {
    pub n_trees: usize,
    /// `None` picks √p for classification and p/3 for regression.
    pub max_features: Option<usize>,
    pub min_samples_leaf: usize,
    pub bootstrap: bool,
}

impl Default for ForestOptions {
    fn default() -> Self {
        Self { n_trees: 100, max_features: None, min_samples_leaf: 1, bootstrap: true }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RandomForest {
    trees: Vec<Tree>,
    n_classes: Option<usize>,
}

impl RandomForest {
    pub fn fit(x: Features<'_>, target: Target<'_>, opts: ForestOptions, seed: u64) -> RandomForest {
        let n = x.nrows();
        let p = x.ncols;
        let n_classes = match target {
            Target::Regression(y) => {
                assert_eq!(y.len(), n, "target length");
                None
            }
            Target::Classification { labels, n_classes } => {
                assert_eq!(labels.len(), n, "target length");
                Some(n_classes)
            }
        };
        let mtry = opts.max_features.unwrap_or(match n_classes {
            Some(_) => (p as f64).sqrt() as usize,
            None => p / 3,
        });
        let tree_opts = TreeOptions { max_features: mtry.max(1), min_samples_leaf: opts.min_samples_leaf.max(1) };
        let mut seeder = ChaCha8Rng::seed_from_u64(seed);
        let seeds: Vec<u64> = (0..opts.n_trees.max(1)).map(|_| seeder.random()).collect();
        let trees = seeds
            .par_iter()
            .map(|&s| {
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                let rows = if opts.bootstrap { (0..n).map(|_| rng.random_range(0..n)).collect() } else { (0..n).collect() };
                fit_tree(x, target, rows, tree_opts, &mut rng)
            })
            .collect();
        RandomForest { trees, n_classes }
    }

    /// Mean of the tree predictions.
    pub fn predict_regression(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.leaf_value(x)[0]).sum::<f64>() / self.trees.len() as f64
    }

    /// Class with the highest mean leaf probability; lowest index on ties.
    pub fn predict_class(&self, x: &[f64]) -> usize {
        let k = self.n_classes.expect("classification forest");
        let mut p = vec![0.0; k];
        for t in &self.trees {
            p.iter_mut().zip(t.leaf_value(x)).for_each(|(a, b)| *a += b);
        }
        p.iter().enumerate().fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc }).0
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }
}
