//! CART random forests for regression and classification.
//!
//! Trees split on midpoints between consecutive distinct feature values and
//! minimise the sample-weighted child impurity: sum of squared deviations
//! for regression, Gini for classification. Each tree owns an RNG stream
//! derived from `(seed, tree index)`, so training is deterministic no matter
//! how the trees are scheduled across threads.

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{self, MetricError};
use crate::rng;

#[derive(Debug, Error, PartialEq)]
pub enum ForestError {
    #[error("need at least 2 training rows, got {0}")]
    TooFewRows(usize),
    #[error("{x} feature rows but {y} targets")]
    LengthMismatch { x: usize, y: usize },
    #[error("row {row} has {got} features, expected {expected}")]
    Ragged { row: usize, got: usize, expected: usize },
    #[error("non-finite value in row {0}")]
    NonFinite(usize),
    #[error("rows have no features")]
    NoFeatures,
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("hyperparameter grid is empty")]
    EmptyGrid,
    #[error("cross-validation needs k >= 2 and at least k rows (k = {k}, rows = {rows})")]
    InvalidFolds { k: usize, rows: usize },
    #[error("scoring failed: {0}")]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    Classification,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    All,
    Sqrt,
    Fraction(f64),
}

impl MaxFeatures {
    /// Number of candidate features per node for `p` features.
    pub fn count(self, p: usize) -> usize {
        let m = match self {
            MaxFeatures::All => p,
            MaxFeatures::Sqrt => (p as f64).sqrt().floor() as usize,
            MaxFeatures::Fraction(f) => (f * p as f64).floor() as usize,
        };
        m.clamp(1, p.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub n_trees: usize,
    /// `None` grows until the other stopping rules apply.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: None,
            min_samples_split: 2,
            max_features: MaxFeatures::Fraction(1.0 / 3.0),
            bootstrap: true,
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn for_task(task: Task) -> Self {
        Self {
            max_features: match task {
                Task::Regression => MaxFeatures::Fraction(1.0 / 3.0),
                Task::Classification => MaxFeatures::Sqrt,
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ForestError> {
        if self.n_trees == 0 {
            return Err(ForestError::InvalidHyperparams("n_trees must be >= 1".into()));
        }
        if self.min_samples_split < 2 {
            return Err(ForestError::InvalidHyperparams(
                "min_samples_split must be >= 2".into(),
            ));
        }
        if let MaxFeatures::Fraction(f) = self.max_features {
            if !(f > 0.0 && f <= 1.0) {
                return Err(ForestError::InvalidHyperparams(format!(
                    "max_features fraction {f} outside (0, 1]"
                )));
            }
        }
        Ok(())
    }

    /// Default search grid: trees {100, 300} x depth {unlimited, 10, 20}
    /// x min_samples_split {2, 5}.
    pub fn default_grid(task: Task, seed: u64) -> Vec<Hyperparams> {
        let base = Self::for_task(task);
        let mut grid = Vec::new();
        for n_trees in [100, 300] {
            for max_depth in [None, Some(10), Some(20)] {
                for min_samples_split in [2, 5] {
                    grid.push(Hyperparams {
                        n_trees,
                        max_depth,
                        min_samples_split,
                        seed,
                        ..base.clone()
                    });
                }
            }
        }
        grid
    }
}

/// Training targets.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Regression(Vec<f64>),
    /// Class labels; the model's label order is the sorted distinct labels.
    Classification(Vec<String>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Regression(y) => y.len(),
            Targets::Classification(y) => y.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn task(&self) -> Task {
        match self {
            Targets::Regression(_) => Task::Regression,
            Targets::Classification(_) => Task::Classification,
        }
    }

    fn subset(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Regression(y) => Targets::Regression(idx.iter().map(|&i| y[i]).collect()),
            Targets::Classification(y) => {
                Targets::Classification(idx.iter().map(|&i| y[i].clone()).collect())
            }
        }
    }
}

/// Flat tree node; children are indices into the owning tree's node list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// `[mean]` for regression, class probabilities for classification.
    Leaf { value: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    fn leaf_for(&self, x: &[f64]) -> &[f64] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[*feature] <= *threshold { *left } else { *right },
                TreeNode::Leaf { value } => return value,
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], at: usize) -> usize {
            match &nodes[at] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub task: Task,
    pub feature_count: usize,
    #[serde(default)]
    pub class_labels: Vec<String>,
    pub hyperparams: Hyperparams,
    pub importance: Vec<f64>,
    pub trees: Vec<Tree>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Value(f64),
    Class { label: String, probabilities: Vec<f64> },
}

/// Encoded targets used during tree growth.
enum Encoded<'a> {
    Regression(&'a [f64]),
    Classification { codes: Vec<usize>, n_classes: usize },
}

struct Grower<'a> {
    x: &'a [Vec<f64>],
    y: &'a Encoded<'a>,
    hp: &'a Hyperparams,
    n_features: usize,
    n_root: f64,
    nodes: Vec<TreeNode>,
    importance: Vec<f64>,
}

/// Impurity statistics of a sample multiset.
#[derive(Clone)]
enum Stats {
    Reg { n: f64, sum: f64, sum_sq: f64 },
    Cls { n: f64, counts: Vec<f64> },
}

impl Stats {
    fn empty(y: &Encoded) -> Self {
        match y {
            Encoded::Regression(_) => Stats::Reg {
                n: 0.0,
                sum: 0.0,
                sum_sq: 0.0,
            },
            Encoded::Classification { n_classes, .. } => Stats::Cls {
                n: 0.0,
                counts: vec![0.0; *n_classes],
            },
        }
    }

    fn add(&mut self, y: &Encoded, i: usize, sign: f64) {
        match (self, y) {
            (Stats::Reg { n, sum, sum_sq }, Encoded::Regression(v)) => {
                *n += sign;
                *sum += sign * v[i];
                *sum_sq += sign * v[i] * v[i];
            }
            (Stats::Cls { n, counts }, Encoded::Classification { codes, .. }) => {
                *n += sign;
                counts[codes[i]] += sign;
            }
            _ => unreachable!("stats and targets disagree on task"),
        }
    }

    /// Sample-weighted impurity: SSE for regression, n * Gini for classes.
    fn weighted_impurity(&self) -> f64 {
        match self {
            Stats::Reg { n, sum, sum_sq } => {
                if *n == 0.0 {
                    0.0
                } else {
                    // Below this relative level the SSE is cancellation
                    // noise of identical targets, not spread.
                    let sse = sum_sq - sum * sum / n;
                    if sse <= sum_sq.abs() * 1e-12 {
                        0.0
                    } else {
                        sse
                    }
                }
            }
            Stats::Cls { n, counts } => {
                if *n == 0.0 {
                    0.0
                } else {
                    n - counts.iter().map(|c| c * c).sum::<f64>() / n
                }
            }
        }
    }
}

struct Split {
    feature: usize,
    threshold: f64,
    child_impurity: f64,
}

impl<'a> Grower<'a> {
    fn node_stats(&self, idx: &[usize]) -> Stats {
        let mut s = Stats::empty(self.y);
        for &i in idx {
            s.add(self.y, i, 1.0);
        }
        s
    }

    fn leaf_value(&self, idx: &[usize]) -> Vec<f64> {
        match self.y {
            Encoded::Regression(v) => {
                vec![idx.iter().map(|&i| v[i]).sum::<f64>() / idx.len() as f64]
            }
            Encoded::Classification { codes, n_classes } => {
                let mut p = vec![0.0; *n_classes];
                for &i in idx {
                    p[codes[i]] += 1.0;
                }
                let n = idx.len() as f64;
                p.iter_mut().for_each(|v| *v /= n);
                p
            }
        }
    }

    fn best_split<R: Rng>(&self, idx: &[usize], parent: &Stats, rng: &mut R) -> Option<Split> {
        let m = self.hp.max_features.count(self.n_features);
        let mut features: Vec<usize> = if m >= self.n_features {
            (0..self.n_features).collect()
        } else {
            index::sample(rng, self.n_features, m).into_vec()
        };
        features.sort_unstable();

        let mut best: Option<Split> = None;
        let mut order: Vec<usize> = idx.to_vec();
        for &f in &features {
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]));
            let first = self.x[order[0]][f];
            if first == self.x[order[order.len() - 1]][f] {
                continue;
            }
            let mut left = Stats::empty(self.y);
            let mut right = parent.clone();
            for k in 0..order.len() - 1 {
                let i = order[k];
                left.add(self.y, i, 1.0);
                right.add(self.y, i, -1.0);
                let (a, b) = (self.x[i][f], self.x[order[k + 1]][f]);
                if a == b {
                    continue;
                }
                let impurity = left.weighted_impurity() + right.weighted_impurity();
                if best.as_ref().is_none_or(|s| impurity < s.child_impurity) {
                    let mid = a + (b - a) / 2.0;
                    best = Some(Split {
                        feature: f,
                        threshold: if mid < b { mid } else { a },
                        child_impurity: impurity,
                    });
                }
            }
        }
        best
    }

    fn grow<R: Rng>(&mut self, idx: Vec<usize>, depth: usize, rng: &mut R) -> usize {
        let at = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { value: Vec::new() });
        let stats = self.node_stats(&idx);
        let parent_impurity = stats.weighted_impurity();

        let may_split = idx.len() >= self.hp.min_samples_split
            && self.hp.max_depth.is_none_or(|d| depth < d)
            && parent_impurity > 0.0;
        let split = if may_split {
            self.best_split(&idx, &stats, rng)
                .filter(|s| s.child_impurity < parent_impurity * (1.0 - 1e-12))
        } else {
            None
        };

        match split {
            None => {
                self.nodes[at] = TreeNode::Leaf {
                    value: self.leaf_value(&idx),
                };
            }
            Some(s) => {
                self.importance[s.feature] += (parent_impurity - s.child_impurity) / self.n_root;
                let (l, r): (Vec<usize>, Vec<usize>) =
                    idx.iter().partition(|&&i| self.x[i][s.feature] <= s.threshold);
                let left = self.grow(l, depth + 1, rng);
                let right = self.grow(r, depth + 1, rng);
                self.nodes[at] = TreeNode::Split {
                    feature: s.feature,
                    threshold: s.threshold,
                    left,
                    right,
                };
            }
        }
        at
    }
}

fn validate_inputs(x: &[Vec<f64>], n_targets: usize) -> Result<usize, ForestError> {
    if x.len() != n_targets {
        return Err(ForestError::LengthMismatch {
            x: x.len(),
            y: n_targets,
        });
    }
    if x.len() < 2 {
        return Err(ForestError::TooFewRows(x.len()));
    }
    let p = x[0].len();
    if p == 0 {
        return Err(ForestError::NoFeatures);
    }
    for (r, row) in x.iter().enumerate() {
        if row.len() != p {
            return Err(ForestError::Ragged {
                row: r,
                got: row.len(),
                expected: p,
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(ForestError::NonFinite(r));
        }
    }
    Ok(p)
}

pub fn fit(x: &[Vec<f64>], targets: &Targets, hp: &Hyperparams) -> Result<ForestModel, ForestError> {
    hp.validate()?;
    let p = validate_inputs(x, targets.len())?;
    let (encoded, class_labels) = match targets {
        Targets::Regression(y) => {
            if let Some(r) = y.iter().position(|v| !v.is_finite()) {
                return Err(ForestError::NonFinite(r));
            }
            (Encoded::Regression(y), Vec::new())
        }
        Targets::Classification(y) => {
            let mut labels: Vec<String> = y.clone();
            labels.sort();
            labels.dedup();
            let codes = y
                .iter()
                .map(|l| labels.binary_search(l).expect("label present"))
                .collect();
            (
                Encoded::Classification {
                    codes,
                    n_classes: labels.len(),
                },
                labels,
            )
        }
    };
    let n = x.len();

    let grown: Vec<(Tree, Vec<f64>)> = (0..hp.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng::stream_rng(hp.seed, "tree", t as u64);
            let idx: Vec<usize> = if hp.bootstrap {
                (0..n).map(|_| rng.gen_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let mut g = Grower {
                x,
                y: &encoded,
                hp,
                n_features: p,
                n_root: idx.len() as f64,
                nodes: Vec::new(),
                importance: vec![0.0; p],
            };
            g.grow(idx, 0, &mut rng);
            (Tree { nodes: g.nodes }, g.importance)
        })
        .collect();

    let mut importance = vec![0.0; p];
    for (_, imp) in &grown {
        for (acc, v) in importance.iter_mut().zip(imp) {
            *acc += v;
        }
    }
    let total: f64 = importance.iter().sum();
    if total > 0.0 {
        importance.iter_mut().for_each(|v| *v /= total);
    } else {
        importance.iter_mut().for_each(|v| *v = 0.0);
    }

    Ok(ForestModel {
        task: targets.task(),
        feature_count: p,
        class_labels,
        hyperparams: hp.clone(),
        importance,
        trees: grown.into_iter().map(|(t, _)| t).collect(),
    })
}

impl ForestModel {
    fn check_dimension(&self, x: &[f64]) -> Result<(), ForestError> {
        if x.len() != self.feature_count {
            return Err(ForestError::DimensionMismatch {
                expected: self.feature_count,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Averaged leaf vector over all trees.
    fn mean_leaf(&self, x: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; self.trees[0].leaf_for(x).len()];
        for t in &self.trees {
            for (a, v) in acc.iter_mut().zip(t.leaf_for(x)) {
                *a += v;
            }
        }
        let n = self.trees.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction, ForestError> {
        self.check_dimension(x)?;
        let mean = self.mean_leaf(x);
        Ok(match self.task {
            Task::Regression => Prediction::Value(mean[0]),
            Task::Classification => {
                let mut best = 0;
                for (k, p) in mean.iter().enumerate() {
                    if *p > mean[best] {
                        best = k;
                    }
                }
                Prediction::Class {
                    label: self.class_labels[best].clone(),
                    probabilities: mean,
                }
            }
        })
    }

    /// Regression prediction. For classifiers this is the index of the
    /// predicted label.
    pub fn predict_value(&self, x: &[f64]) -> Result<f64, ForestError> {
        Ok(match self.predict(x)? {
            Prediction::Value(v) => v,
            Prediction::Class { label, .. } => {
                self.class_labels.iter().position(|l| *l == label).unwrap_or(0) as f64
            }
        })
    }

    pub fn predict_label(&self, x: &[f64]) -> Result<String, ForestError> {
        match self.predict(x)? {
            Prediction::Class { label, .. } => Ok(label),
            Prediction::Value(v) => Ok(v.to_string()),
        }
    }

    pub fn predict_many(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>, ForestError> {
        rows.iter().map(|r| self.predict_value(r)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub best: Hyperparams,
    pub best_index: usize,
    /// Per grid entry, the held-out score of each fold.
    pub fold_scores: Vec<Vec<f64>>,
    pub mean_scores: Vec<f64>,
}

/// Contiguous fold boundaries over `n` shuffled rows; the first `n % k`
/// folds hold one extra row.
fn fold_ranges(n: usize, k: usize) -> Vec<std::ops::Range<usize>> {
    let base = n / k;
    let extra = n % k;
    let mut start = 0;
    (0..k)
        .map(|f| {
            let len = base + usize::from(f < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

/// k-fold grid search. Mean held-out R² (regression) or accuracy
/// (classification) ranks the grid; ties go to the earliest entry.
pub fn cross_validate(
    x: &[Vec<f64>],
    targets: &Targets,
    grid: &[Hyperparams],
    k: usize,
    seed: u64,
) -> Result<CvResult, ForestError> {
    if grid.is_empty() {
        return Err(ForestError::EmptyGrid);
    }
    let n = x.len();
    if k < 2 || n < k {
        return Err(ForestError::InvalidFolds { k, rows: n });
    }
    validate_inputs(x, targets.len())?;

    let mut order: Vec<usize> = (0..n).collect();
    {
        use rand::seq::SliceRandom;
        let mut rng = rng::stream_rng(seed, "cv-shuffle", 0);
        order.shuffle(&mut rng);
    }
    let folds = fold_ranges(n, k);

    let mut fold_scores = Vec::with_capacity(grid.len());
    for hp in grid {
        let mut scores = Vec::with_capacity(k);
        for range in &folds {
            let test: Vec<usize> = order[range.clone()].to_vec();
            let train: Vec<usize> = order[..range.start]
                .iter()
                .chain(&order[range.end..])
                .copied()
                .collect();
            let x_train: Vec<Vec<f64>> = train.iter().map(|&i| x[i].clone()).collect();
            let model = fit(&x_train, &targets.subset(&train), hp)?;
            let score = match targets.subset(&test) {
                Targets::Regression(y) => {
                    let pred = test
                        .iter()
                        .map(|&i| model.predict_value(&x[i]))
                        .collect::<Result<Vec<_>, _>>()?;
                    metrics::r2_score(&y, &pred)?
                }
                Targets::Classification(y) => {
                    let pred = test
                        .iter()
                        .map(|&i| model.predict_label(&x[i]))
                        .collect::<Result<Vec<_>, _>>()?;
                    metrics::accuracy(&y, &pred)?
                }
            };
            scores.push(score);
        }
        fold_scores.push(scores);
    }
    let mean_scores: Vec<f64> = fold_scores
        .iter()
        .map(|s| s.iter().sum::<f64>() / s.len() as f64)
        .collect();
    let mut best_index = 0;
    for (i, s) in mean_scores.iter().enumerate() {
        if *s > mean_scores[best_index] {
            best_index = i;
        }
    }
    Ok(CvResult {
        best: grid[best_index].clone(),
        best_index,
        fold_scores,
        mean_scores,
    })
}
