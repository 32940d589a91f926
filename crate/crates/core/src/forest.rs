//! Gini decision trees and the bagged random forest built on them.
//!
//! The same tree core serves two callers: the impurity-importance stage of
//! feature selection (unbounded depth) and the meta-learner over the 7-D
//! meta-feature space (depth 5). Trees vote with hard labels; the forest
//! probability is the fraction of trees voting class 1.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UpmiError};
use crate::rng::{self, Stream};
use crate::scale::Standardizer;

/// How many candidate features each node examines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeaturesPerSplit {
    /// `ceil(sqrt(d))`
    Sqrt,
    All,
    Fixed(usize),
}

impl FeaturesPerSplit {
    pub fn resolve(self, d: usize) -> usize {
        let m = match self {
            FeaturesPerSplit::Sqrt => (d as f64).sqrt().ceil() as usize,
            FeaturesPerSplit::All => d,
            FeaturesPerSplit::Fixed(m) => m,
        };
        m.clamp(1, d.max(1))
    }
}

/// Which rows the forest's input standardizer is fit on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StandardizeOn {
    /// Real and synthetic rows together.
    Augmented,
    RealOnly,
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RfConfig {
    pub n_trees: usize,
    /// `None` grows until purity or `min_samples_split`.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub features_per_split: FeaturesPerSplit,
    pub standardize: StandardizeOn,
}

impl Default for RfConfig {
    fn default() -> Self {
        RfConfig::meta_learner()
    }
}

impl RfConfig {
    /// 100 trees of depth at most 5 over standardized meta-features.
    pub fn meta_learner() -> Self {
        RfConfig {
            n_trees: 100,
            max_depth: Some(5),
            min_samples_split: 2,
            features_per_split: FeaturesPerSplit::Sqrt,
            standardize: StandardizeOn::Augmented,
        }
    }

    /// 100 unbounded trees used to rank candidate features by impurity decrease.
    pub fn importance_ranking() -> Self {
        RfConfig {
            n_trees: 100,
            max_depth: None,
            min_samples_split: 2,
            features_per_split: FeaturesPerSplit::Sqrt,
            standardize: StandardizeOn::Off,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(UpmiError::Config("forest needs at least one tree".into()));
        }
        if self.max_depth == Some(0) {
            return Err(UpmiError::Config("max_depth must be at least 1".into()));
        }
        if let FeaturesPerSplit::Fixed(0) = self.features_per_split {
            return Err(UpmiError::Config("features_per_split must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        counts: [usize; 2],
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        counts: [usize; 2],
    },
}

/// Axis-aligned binary tree; `x[feature] <= threshold` goes left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    nodes: Vec<Node>,
    n_features: usize,
    /// Total weighted Gini decrease per feature, normalized to sum 1 when any split exists.
    importances: Vec<f64>,
}

/// Knobs of a single tree, resolved from [`RfConfig`].
#[derive(Debug, Clone, Copy)]
pub struct TreeParams {
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub features_per_split: usize,
}

impl TreeParams {
    pub fn from_config(config: &RfConfig, d: usize) -> Self {
        TreeParams {
            max_depth: config.max_depth,
            min_samples_split: config.min_samples_split.max(2),
            features_per_split: config.features_per_split.resolve(d),
        }
    }
}

fn gini(counts: [usize; 2]) -> f64 {
    let n = (counts[0] + counts[1]) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let p0 = counts[0] as f64 / n;
    let p1 = counts[1] as f64 / n;
    1.0 - p0 * p0 - p1 * p1
}

fn count(y: &[u8], idx: &[usize]) -> [usize; 2] {
    let ones = idx.iter().filter(|&&i| y[i] == 1).count();
    [idx.len() - ones, ones]
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    /// `n·G(parent) − n_l·G(left) − n_r·G(right)`
    decrease: f64,
}

struct Grower<'a> {
    x: &'a [Vec<f64>],
    y: &'a [u8],
    params: TreeParams,
    nodes: Vec<Node>,
    importances: Vec<f64>,
}

impl Grower<'_> {
    fn grow(&mut self, idx: Vec<usize>, depth: usize, rng: &mut Stream) -> usize {
        let counts = count(self.y, &idx);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { counts });
        let pure = counts[0] == 0 || counts[1] == 0;
        let depth_capped = self.params.max_depth.is_some_and(|m| depth >= m);
        if pure || depth_capped || idx.len() < self.params.min_samples_split {
            return id;
        }
        let Some(best) = self.best_split(&idx, counts, rng) else {
            return id;
        };
        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| self.x[i][best.feature] <= best.threshold);
        self.importances[best.feature] += best.decrease;
        let left = self.grow(left_idx, depth + 1, rng);
        let right = self.grow(right_idx, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
            counts,
        };
        id
    }

    /// Examines `features_per_split` random features; keeps drawing past that
    /// budget only while no examined feature admits any split.
    fn best_split(&self, idx: &[usize], counts: [usize; 2], rng: &mut Stream) -> Option<BestSplit> {
        let d = self.x[idx[0]].len();
        let mut order: Vec<usize> = (0..d).collect();
        order.shuffle(rng);
        let n = idx.len() as f64;
        let parent = n * gini(counts);
        let mut best: Option<BestSplit> = None;
        let mut pairs: Vec<(f64, u8)> = Vec::with_capacity(idx.len());
        for (visited, &f) in order.iter().enumerate() {
            if visited >= self.params.features_per_split && best.is_some() {
                break;
            }
            pairs.clear();
            pairs.extend(idx.iter().map(|&i| (self.x[i][f], self.y[i])));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left = [0usize; 2];
            for k in 0..pairs.len() - 1 {
                left[pairs[k].1 as usize] += 1;
                let (a, b) = (pairs[k].0, pairs[k + 1].0);
                if a == b {
                    continue;
                }
                let right = [counts[0] - left[0], counts[1] - left[1]];
                let nl = (left[0] + left[1]) as f64;
                let nr = (right[0] + right[1]) as f64;
                let decrease = parent - nl * gini(left) - nr * gini(right);
                if best.as_ref().is_none_or(|bs| decrease > bs.decrease) {
                    let mut threshold = a + (b - a) / 2.0;
                    if threshold >= b {
                        threshold = a;
                    }
                    best = Some(BestSplit {
                        feature: f,
                        threshold,
                        decrease,
                    });
                }
            }
        }
        best
    }
}

impl DecisionTree {
    /// Grows a tree on the rows listed in `sample` (repeats allowed).
    pub fn fit(x: &[Vec<f64>], y: &[u8], sample: &[usize], params: TreeParams, rng: &mut Stream) -> Self {
        assert!(!sample.is_empty(), "a tree needs at least one sample");
        let n_features = x[sample[0]].len();
        let mut grower = Grower {
            x,
            y,
            params,
            nodes: Vec::new(),
            importances: vec![0.0; n_features],
        };
        grower.grow(sample.to_vec(), 0, rng);
        let total: f64 = grower.importances.iter().sum();
        let mut importances = grower.importances;
        if total > 0.0 {
            importances.iter_mut().for_each(|v| *v /= total);
        }
        DecisionTree {
            nodes: grower.nodes,
            n_features,
            importances,
        }
    }

    fn leaf_counts(&self, x: &[f64]) -> [usize; 2] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { counts } => return *counts,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    /// Majority class of the reached leaf; ties go to class 0.
    pub fn predict(&self, x: &[f64]) -> u8 {
        let c = self.leaf_counts(x);
        u8::from(c[1] > c[0])
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn importances(&self) -> &[f64] {
        &self.importances
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Number of edges on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn min_leaf_size(&self) -> usize {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Leaf { counts } => Some(counts[0] + counts[1]),
                _ => None,
            })
            .min()
            .unwrap_or(0)
    }
}

/// Fits one tree on all rows of `(x, y)`.
pub fn fit_tree(x: &[Vec<f64>], y: &[u8], config: &RfConfig, rng: &mut Stream) -> DecisionTree {
    let d = x.first().map_or(0, Vec::len);
    let all: Vec<usize> = (0..x.len()).collect();
    DecisionTree::fit(x, y, &all, TreeParams::from_config(config, d), rng)
}

/// One training row of the forest. `key` fixes the canonical row order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledRow {
    pub key: String,
    pub x: Vec<f64>,
    pub y: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestTree {
    pub tree: DecisionTree,
    /// Bootstrap draw, as positions into the canonically sorted training rows.
    pub sample: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForestModel {
    pub trees: Vec<ForestTree>,
    pub standardizer: Standardizer,
    pub config: RfConfig,
    pub n_train: usize,
}

fn canonical_order(rows: &mut [&LabeledRow]) {
    rows.sort_by(|a, b| {
        a.key.cmp(&b.key).then_with(|| a.y.cmp(&b.y)).then_with(|| {
            a.x.iter()
                .zip(&b.x)
                .map(|(u, v)| u.total_cmp(v))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
}

/// Fits a forest on `real ∪ synth`.
///
/// Rows are sorted by key before anything random happens, and tree `t` draws
/// its bootstrap from stream `(seed, t)`, so the result depends only on the
/// row multiset and the seed.
pub fn fit_forest(
    real: &[LabeledRow],
    synth: &[LabeledRow],
    config: &RfConfig,
    seed: u64,
) -> Result<RandomForestModel> {
    config.validate()?;
    let mut rows: Vec<&LabeledRow> = real.iter().chain(synth).collect();
    if rows.is_empty() {
        return Err(UpmiError::InvalidArgument("forest training set is empty".into()));
    }
    let d = rows[0].x.len();
    if rows.iter().any(|r| r.x.len() != d) {
        return Err(UpmiError::Shape("forest rows differ in dimension".into()));
    }
    if rows.iter().all(|r| r.y == rows[0].y) {
        return Err(UpmiError::SingleClass("forest training set".into()));
    }
    canonical_order(&mut rows);

    let standardizer = match config.standardize {
        StandardizeOn::Augmented => {
            Standardizer::fit_lenient(&rows.iter().map(|r| r.x.clone()).collect::<Vec<_>>())
        }
        StandardizeOn::RealOnly => {
            let mut reals: Vec<&LabeledRow> = real.iter().collect();
            canonical_order(&mut reals);
            Standardizer::fit_lenient(&reals.iter().map(|r| r.x.clone()).collect::<Vec<_>>())
        }
        StandardizeOn::Off => Standardizer::identity(d),
    };
    let x: Vec<Vec<f64>> = rows.iter().map(|r| standardizer.transform(&r.x)).collect();
    let y: Vec<u8> = rows.iter().map(|r| r.y).collect();
    let n = x.len();
    let params = TreeParams::from_config(config, d);

    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut stream = rng::stream(seed, &[t as u64]);
            let sample: Vec<usize> = (0..n).map(|_| stream.random_range(0..n)).collect();
            let tree = DecisionTree::fit(&x, &y, &sample, params, &mut stream);
            ForestTree { tree, sample }
        })
        .collect();

    Ok(RandomForestModel {
        trees,
        standardizer,
        config: config.clone(),
        n_train: n,
    })
}

impl RandomForestModel {
    pub fn votes_for_positive(&self, x: &[f64]) -> usize {
        let z = self.standardizer.transform(x);
        self.trees.iter().filter(|t| t.tree.predict(&z) == 1).count()
    }

    /// Fraction of trees voting class 1.
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        self.votes_for_positive(x) as f64 / self.trees.len() as f64
    }

    /// Majority vote; an exact tie resolves to class 0.
    pub fn predict_label(&self, x: &[f64]) -> u8 {
        u8::from(2 * self.votes_for_positive(x) > self.trees.len())
    }

    /// Mean of per-tree normalized impurity decreases, renormalized to sum 1.
    pub fn feature_importances(&self) -> Vec<f64> {
        let d = self.standardizer.dim();
        let mut acc = vec![0.0; d];
        for t in &self.trees {
            for (a, v) in acc.iter_mut().zip(t.tree.importances()) {
                *a += v;
            }
        }
        let total: f64 = acc.iter().sum();
        if total > 0.0 {
            acc.iter_mut().for_each(|v| *v /= total);
        }
        acc
    }
}

pub fn predict_proba_forest(model: &RandomForestModel, x: &[f64]) -> f64 {
    model.predict_proba(x)
}

pub fn predict_label(model: &RandomForestModel, x: &[f64]) -> u8 {
    model.predict_label(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rows(x: &[Vec<f64>], y: &[u8]) -> Vec<LabeledRow> {
        x.iter()
            .zip(y)
            .enumerate()
            .map(|(i, (x, &y))| LabeledRow {
                key: format!("r{i:04}"),
                x: x.clone(),
                y,
            })
            .collect()
    }

    fn stream0() -> Stream {
        Stream::seed_from_u64(0)
    }

    #[test]
    fn pure_input_gives_single_leaf() {
        let x = vec![vec![1.0], vec![2.0], vec![3.0]];
        let tree = fit_tree(&x, &[1, 1, 1], &RfConfig::meta_learner(), &mut stream0());
        assert_eq!(tree.nodes().len(), 1);
        assert_eq!(tree.predict(&[100.0]), 1);
    }

    #[test]
    fn separable_1d_is_fit_perfectly() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let y: Vec<u8> = (0..10).map(|i| u8::from(i >= 6)).collect();
        let cfg = RfConfig {
            max_depth: Some(1),
            ..RfConfig::meta_learner()
        };
        let tree = fit_tree(&x, &y, &cfg, &mut stream0());
        for (xi, &yi) in x.iter().zip(&y) {
            assert_eq!(tree.predict(xi), yi);
        }
        assert_eq!(tree.depth(), 1);
        match &tree.nodes()[0] {
            Node::Split { threshold, .. } => assert_eq!(*threshold, 5.5),
            _ => panic!("expected a split"),
        }
    }

    /// Enumerates every axis-aligned stump on the data and returns the best
    /// training accuracy any of them reaches.
    fn best_stump_accuracy(x: &[Vec<f64>], y: &[u8]) -> f64 {
        let n = x.len() as f64;
        let mut best: f64 = 0.0;
        for f in 0..x[0].len() {
            let mut vals: Vec<f64> = x.iter().map(|r| r[f]).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            let mut cuts = vec![f64::NEG_INFINITY];
            cuts.extend(vals.windows(2).map(|w| (w[0] + w[1]) / 2.0));
            for c in cuts {
                for left_label in [0u8, 1] {
                    let correct = x
                        .iter()
                        .zip(y)
                        .filter(|(r, &yy)| (if r[f] <= c { left_label } else { 1 - left_label }) == yy)
                        .count();
                    best = best.max(correct as f64 / n);
                }
            }
        }
        best
    }

    #[test]
    fn depth_one_tree_on_xor_is_capped() {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (a, b) in [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)] {
            for k in 0..5 {
                let jitter = k as f64 * 0.01;
                x.push(vec![a + jitter, b - jitter]);
                y.push(u8::from((a > 0.5) != (b > 0.5)));
            }
        }
        let oracle = best_stump_accuracy(&x, &y);
        assert!(oracle <= 0.75);
        let cfg = RfConfig {
            max_depth: Some(1),
            features_per_split: FeaturesPerSplit::All,
            ..RfConfig::meta_learner()
        };
        for s in 0..5 {
            let tree = fit_tree(&x, &y, &cfg, &mut Stream::seed_from_u64(s));
            let acc = x.iter().zip(&y).filter(|(r, &yy)| tree.predict(r) == yy).count() as f64 / 20.0;
            assert!(acc <= oracle + 1e-12 && acc <= 0.75, "acc {acc}");
        }
    }

    #[test]
    fn forest_is_deterministic_and_order_free() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![(i % 7) as f64, (i * 13 % 11) as f64]).collect();
        let y: Vec<u8> = (0..40).map(|i| u8::from(i % 7 > 3)).collect();
        let r = rows(&x, &y);
        let a = fit_forest(&r, &[], &RfConfig::meta_learner(), 3).unwrap();
        let b = fit_forest(&r, &[], &RfConfig::meta_learner(), 3).unwrap();
        assert_eq!(a, b);
        let mut shuffled = r.clone();
        shuffled.reverse();
        let c = fit_forest(&shuffled, &[], &RfConfig::meta_learner(), 3).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn votes_and_labels_agree() {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64, ((i * 7) % 5) as f64]).collect();
        let y: Vec<u8> = (0..30).map(|i| u8::from((i * 3) % 4 == 0)).collect();
        let m = fit_forest(&rows(&x, &y), &[], &RfConfig::meta_learner(), 11).unwrap();
        for xi in &x {
            let p = m.predict_proba(xi);
            assert_eq!((p * 100.0).round() / 100.0, p);
            assert_eq!(m.predict_label(xi), u8::from(p > 0.5));
        }
    }

    #[test]
    fn depth_bound_and_leaf_occupancy() {
        let x: Vec<Vec<f64>> = (0..60).map(|i| vec![(i as f64).sin(), (i as f64 * 0.37).cos(), i as f64]).collect();
        let y: Vec<u8> = (0..60).map(|i| u8::from((i as f64).sin() > 0.2)).collect();
        let m = fit_forest(&rows(&x, &y), &[], &RfConfig::meta_learner(), 5).unwrap();
        for t in &m.trees {
            assert!(t.tree.depth() <= 5);
            assert!(t.tree.min_leaf_size() >= 1);
        }
    }

    #[test]
    fn single_class_forest_is_rejected() {
        let r = rows(&[vec![1.0], vec![2.0]], &[0, 0]);
        assert!(matches!(
            fit_forest(&r, &[], &RfConfig::meta_learner(), 0),
            Err(UpmiError::SingleClass(_))
        ));
    }
}
