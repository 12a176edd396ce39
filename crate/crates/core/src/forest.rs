//! Random forest of Gini-split decision trees.
//!
//! Split selection is exact: the candidate score is a ratio of integer class
//! counts and is compared by cross-multiplication, so the trained model does
//! not depend on floating-point summation order. Each tree draws from its own
//! ChaCha stream `(seed, tree index)`, so trees can be grown in any order or in
//! parallel with identical results.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Features inspected per split; `None` means `ceil(sqrt(d))`.
    pub mtry: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self { n_trees: 200, max_depth: None, min_samples_leaf: 1, mtry: None, bootstrap: true, seed: 0 }
    }
}

impl ForestConfig {
    pub fn resolved_mtry(&self, d: usize) -> usize {
        self.mtry.unwrap_or_else(|| {
            let mut m = 1;
            while m * m < d {
                m += 1;
            }
            m
        })
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Config("n_trees must be at least 1".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::Config("min_samples_leaf must be at least 1".into()));
        }
        let m = self.resolved_mtry(d);
        if m == 0 || m > d {
            return Err(Error::Config(format!("mtry {m} outside 1..={d}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    /// Samples with `x[feature] <= threshold` go to the node right after this
    /// one in preorder; the rest go to `right`.
    Split {
        feature: usize,
        threshold: f64,
        right: usize,
    },
    Leaf {
        p_tumor: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    /// Preorder; node 0 is the root.
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { p_tumor } => return p_tumor,
                Node::Split { feature, threshold, right } => {
                    i = if x[feature] <= threshold { i + 1 } else { right };
                }
            }
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Data("tree has no nodes".into()));
        }
        // Every subtree must end inside the node list, and the left subtree
        // must end exactly where the right one begins.
        fn walk(nodes: &[Node], i: usize, d: usize) -> Result<usize> {
            match nodes.get(i) {
                None => Err(Error::Data(format!("node {i} missing"))),
                Some(Node::Leaf { p_tumor }) => {
                    if (0.0..=1.0).contains(p_tumor) {
                        Ok(i + 1)
                    } else {
                        Err(Error::Data(format!("leaf probability {p_tumor} outside [0, 1]")))
                    }
                }
                Some(&Node::Split { feature, threshold, right }) => {
                    if feature >= d || !threshold.is_finite() {
                        return Err(Error::Data(format!("invalid split at node {i}")));
                    }
                    if walk(nodes, i + 1, d)? != right {
                        return Err(Error::Data(format!("right child of node {i} misplaced")));
                    }
                    walk(nodes, right, d)
                }
            }
        }
        if walk(&self.nodes, 0, d)? != self.nodes.len() {
            return Err(Error::Data("trailing nodes after tree".into()));
        }
        Ok(())
    }
}

/// One trained tree plus what the forest aggregates from it.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeFit {
    pub tree: Tree,
    /// Impurity decrease per feature, in sample-weighted units.
    pub impurity_decrease: Vec<f64>,
    /// Sample indices not drawn into this tree's bootstrap.
    pub out_of_bag: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub config: ForestConfig,
    pub feature_dim: usize,
    pub trees: Vec<Tree>,
    pub importances: Vec<f64>,
    pub oob_error: Option<f64>,
}

fn check_data(x: &[Vec<f64>], y: &[bool]) -> Result<usize> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("{} rows but {} labels", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::Config("need at least two samples".into()));
    }
    let d = x[0].len();
    if d == 0 {
        return Err(Error::Shape("feature vectors are empty".into()));
    }
    for (i, row) in x.iter().enumerate() {
        if row.len() != d {
            return Err(Error::Shape(format!("row {i} has {} features, expected {d}", row.len())));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("row {i} contains a non-finite value")));
        }
    }
    if y.iter().all(|&t| t) || y.iter().all(|&t| !t) {
        return Err(Error::Config("labels contain a single class".into()));
    }
    Ok(d)
}

/// Candidate split score `(a_l² + b_l²)/n_l + (a_r² + b_r²)/n_r` as a fraction.
#[derive(Clone, Copy)]
struct Score {
    num: u128,
    den: u128,
}

impl Score {
    fn new(left: (u64, u64), right: (u64, u64)) -> Self {
        let (nl, nr) = ((left.0 + left.1) as u128, (right.0 + right.1) as u128);
        let sl = (left.0 as u128).pow(2) + (left.1 as u128).pow(2);
        let sr = (right.0 as u128).pow(2) + (right.1 as u128).pow(2);
        Self { num: sl * nr + sr * nl, den: nl * nr }
    }

    fn beats(&self, other: &Score) -> bool {
        self.num * other.den > other.num * self.den
    }

    fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

struct Candidate {
    feature: usize,
    threshold: f64,
    score: Score,
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m >= b {
        a
    } else {
        m
    }
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [bool],
    cfg: &'a ForestConfig,
    mtry: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
    decrease: Vec<f64>,
    order: Vec<usize>,
}

impl Builder<'_> {
    fn counts(&self, idx: &[usize]) -> (u64, u64) {
        let tumor = idx.iter().filter(|&&i| self.y[i]).count() as u64;
        (idx.len() as u64 - tumor, tumor)
    }

    fn best_split(&mut self, idx: &[usize]) -> Option<Candidate> {
        let d = self.decrease.len();
        let mut features: Vec<usize> = (0..d).collect();
        features.shuffle(&mut self.rng);
        let total = self.counts(idx);
        let min_leaf = self.cfg.min_samples_leaf as u64;
        let mut best: Option<Candidate> = None;
        let mut visited = 0;
        for f in features {
            if visited == self.mtry {
                break;
            }
            self.order.clear();
            self.order.extend_from_slice(idx);
            let x = self.x;
            self.order.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]));
            let first = x[self.order[0]][f];
            let last = x[self.order[self.order.len() - 1]][f];
            if first == last {
                continue;
            }
            visited += 1;
            let mut left = (0u64, 0u64);
            for k in 0..self.order.len() - 1 {
                let i = self.order[k];
                if self.y[i] {
                    left.1 += 1;
                } else {
                    left.0 += 1;
                }
                let (v, next) = (x[i][f], x[self.order[k + 1]][f]);
                if v == next {
                    continue;
                }
                let right = (total.0 - left.0, total.1 - left.1);
                if left.0 + left.1 < min_leaf || right.0 + right.1 < min_leaf {
                    continue;
                }
                let cand = Candidate { feature: f, threshold: midpoint(v, next), score: Score::new(left, right) };
                let better = match &best {
                    None => true,
                    Some(b) => {
                        cand.score.beats(&b.score)
                            || (!b.score.beats(&cand.score)
                                && (cand.feature, cand.threshold) < (b.feature, b.threshold))
                    }
                };
                if better {
                    best = Some(cand);
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize) {
        let (normal, tumor) = self.counts(&idx);
        let n = idx.len() as u64;
        let leaf = Node::Leaf { p_tumor: tumor as f64 / n as f64 };
        let stop = normal == 0
            || tumor == 0
            || self.cfg.max_depth.is_some_and(|m| depth >= m)
            || n < 2 * self.cfg.min_samples_leaf as u64;
        if stop {
            self.nodes.push(leaf);
            return;
        }
        let Some(split) = self.best_split(&idx) else {
            self.nodes.push(leaf);
            return;
        };
        let parent = ((normal * normal + tumor * tumor) as f64) / n as f64;
        self.decrease[split.feature] += (split.score.value() - parent).max(0.0);
        let (left, right): (Vec<usize>, Vec<usize>) =
            idx.into_iter().partition(|&i| self.x[i][split.feature] <= split.threshold);
        let at = self.nodes.len();
        self.nodes.push(Node::Split { feature: split.feature, threshold: split.threshold, right: 0 });
        self.grow(left, depth + 1);
        let right_at = self.nodes.len();
        if let Node::Split { right, .. } = &mut self.nodes[at] {
            *right = right_at;
        }
        self.grow(right, depth + 1);
    }
}

/// Grows tree `tree_index` of a forest. Inputs are assumed validated.
pub fn train_tree(x: &[Vec<f64>], y: &[bool], cfg: &ForestConfig, tree_index: usize) -> TreeFit {
    let n = x.len();
    let d = x[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(tree_index as u64);
    let (sample, out_of_bag) = if cfg.bootstrap {
        let mut drawn = vec![false; n];
        let sample: Vec<usize> = (0..n)
            .map(|_| {
                let i = rng.gen_range(0..n);
                drawn[i] = true;
                i
            })
            .collect();
        (sample, (0..n).filter(|&i| !drawn[i]).collect())
    } else {
        ((0..n).collect(), Vec::new())
    };
    let mut b = Builder {
        x,
        y,
        cfg,
        mtry: cfg.resolved_mtry(d),
        rng,
        nodes: Vec::new(),
        decrease: vec![0.0; d],
        order: Vec::with_capacity(n),
    };
    b.grow(sample, 0);
    TreeFit { tree: Tree { nodes: b.nodes }, impurity_decrease: b.decrease, out_of_bag }
}

fn normalize(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    }
}

/// Validates the training data; returns the feature dimension.
pub fn check_training_data(x: &[Vec<f64>], y: &[bool], cfg: &ForestConfig) -> Result<usize> {
    let d = check_data(x, y)?;
    cfg.validate(d)?;
    Ok(d)
}

/// Assembles a model from per-tree fits listed in tree-index order.
pub fn assemble_forest(x: &[Vec<f64>], y: &[bool], cfg: &ForestConfig, fits: Vec<TreeFit>) -> ForestModel {
    let d = x[0].len();
    let mut importances = vec![0.0; d];
    for fit in &fits {
        let mut per_tree = fit.impurity_decrease.clone();
        normalize(&mut per_tree);
        importances.iter_mut().zip(&per_tree).for_each(|(a, b)| *a += b);
    }
    normalize(&mut importances);

    let oob_error = cfg.bootstrap.then(|| {
        let mut votes: Vec<Vec<f64>> = vec![Vec::new(); x.len()];
        for fit in &fits {
            for &i in &fit.out_of_bag {
                votes[i].push(fit.tree.predict(&x[i]));
            }
        }
        let (mut wrong, mut seen) = (0usize, 0usize);
        for (i, v) in votes.iter_mut().enumerate() {
            if v.is_empty() {
                continue;
            }
            seen += 1;
            if (mean_sorted(v) >= 0.5) != y[i] {
                wrong += 1;
            }
        }
        (seen > 0).then(|| wrong as f64 / seen as f64)
    });

    ForestModel {
        config: *cfg,
        feature_dim: d,
        trees: fits.into_iter().map(|f| f.tree).collect(),
        importances,
        oob_error: oob_error.flatten(),
    }
}

/// Order-independent mean: values are summed in sorted order.
fn mean_sorted(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn train_forest(x: &[Vec<f64>], y: &[bool], cfg: &ForestConfig) -> Result<ForestModel> {
    check_training_data(x, y, cfg)?;
    let fits = (0..cfg.n_trees).map(|t| train_tree(x, y, cfg, t)).collect();
    Ok(assemble_forest(x, y, cfg, fits))
}

impl ForestModel {
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.feature_dim {
            return Err(Error::Shape(format!("{} features, model expects {}", x.len(), self.feature_dim)));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("feature vector contains a non-finite value".into()));
        }
        let mut votes: Vec<f64> = self.trees.iter().map(|t| t.predict(x)).collect();
        let (lo, hi) = votes.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        Ok(mean_sorted(&mut votes).clamp(lo, hi))
    }

    pub fn feature_importance(&self) -> &[f64] {
        &self.importances
    }

    /// Feature indices ordered by decreasing importance, ties by index.
    pub fn ranked_features(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.feature_dim).collect();
        idx.sort_by(|&a, &b| self.importances[b].total_cmp(&self.importances[a]).then(a.cmp(&b)));
        idx
    }

    pub fn validate(&self) -> Result<()> {
        if self.trees.is_empty() {
            return Err(Error::Data("forest has no trees".into()));
        }
        if self.importances.len() != self.feature_dim {
            return Err(Error::Shape("importance vector length differs from feature dimension".into()));
        }
        self.trees.iter().try_for_each(|t| t.validate(self.feature_dim))
    }
}
