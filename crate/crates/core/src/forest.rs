//! Random forest over window feature vectors: Gini-impurity CART trees on
//! bootstrap resamples with per-node random feature subsets.

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::Label;
use crate::rng::{task_rng, TaskRng};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForestError {
    #[error("training labels contain a single class")]
    SingleClassTraining,
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{rows} feature rows but {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
    #[error("non-finite feature value at row {row}, column {column}")]
    NonFiniteFeature { row: usize, column: usize },
    #[error("invalid forest config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    /// `None` means `ceil(sqrt(d))`.
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: None,
            min_samples_split: 2,
            features_per_split: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<(), ForestError> {
        if self.n_trees == 0 {
            return Err(ForestError::InvalidConfig("n_trees must be at least 1".into()));
        }
        if self.min_samples_split < 2 {
            return Err(ForestError::InvalidConfig(
                "min_samples_split must be at least 2".into(),
            ));
        }
        if self.features_per_split == Some(0) {
            return Err(ForestError::InvalidConfig("features_per_split must be positive".into()));
        }
        Ok(())
    }

    pub fn split_features(&self, d: usize) -> usize {
        self.features_per_split
            .unwrap_or_else(|| (d as f64).sqrt().ceil() as usize)
            .clamp(1, d.max(1))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        /// Training rows reaching the leaf, indexed by class.
        class_counts: [u32; 2],
    },
}

/// Flat tree; node 0 is the root. `x[feature] <= threshold` goes left.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

impl DecisionTree {
    pub fn leaf_for(&self, x: &[f64]) -> [u32; 2] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
                Node::Leaf { class_counts } => return *class_counts,
            }
        }
    }

    /// Class-1 fraction of the leaf that `x` lands in.
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        let [c0, c1] = self.leaf_for(x);
        c1 as f64 / (c0 + c1) as f64
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub config: ForestConfig,
    pub n_features: usize,
    pub trees: Vec<DecisionTree>,
    /// Out-of-bag accuracy when bootstrapping; `None` otherwise or when no
    /// row was ever out of bag.
    pub oob_accuracy: Option<f64>,
}

impl RandomForest {
    /// Mean over trees of the leaf ARDS fraction.
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64, ForestError> {
        if x.len() != self.n_features {
            return Err(ForestError::DimensionMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        let total: f64 = self.trees.iter().map(|t| t.predict_proba(x)).sum();
        Ok(total / self.trees.len() as f64)
    }

    /// How often each feature is used as a split.
    pub fn split_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_features];
        for node in self.trees.iter().flat_map(|t| &t.nodes) {
            if let Node::Split { feature, .. } = node {
                counts[*feature] += 1;
            }
        }
        counts
    }
}

pub fn rf_predict_proba(forest: &RandomForest, x: &[f64]) -> Result<f64, ForestError> {
    forest.predict_proba(x)
}

/// Best split found at a node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
}

/// Purity score `sum_c n_c^2 / n` of one side as an exact fraction.
#[derive(Clone, Copy)]
struct Purity {
    num: u128,
    den: u128,
}

impl Purity {
    fn of(counts: [u32; 2]) -> Purity {
        let (a, b) = (counts[0] as u128, counts[1] as u128);
        Purity {
            num: a * a + b * b,
            den: a + b,
        }
    }

    /// Sum of two sides; weighted Gini of the split is `n - sum`, so a larger
    /// sum is a purer split.
    fn plus(self, o: Purity) -> (u128, u128) {
        (self.num * o.den + o.num * self.den, self.den * o.den)
    }
}

fn better(a: (u128, u128), b: (u128, u128)) -> bool {
    a.0 * b.1 > b.0 * a.1
}

/// Weighted child Gini impurity `(n_l G_l + n_r G_r) / n` of a partition.
pub fn split_gini(left: [u32; 2], right: [u32; 2]) -> f64 {
    let g = |c: [u32; 2]| {
        let n = (c[0] + c[1]) as f64;
        if n == 0.0 {
            return 0.0;
        }
        let (p0, p1) = (c[0] as f64 / n, c[1] as f64 / n);
        1.0 - p0 * p0 - p1 * p1
    };
    let (nl, nr) = ((left[0] + left[1]) as f64, (right[0] + right[1]) as f64);
    (nl * g(left) + nr * g(right)) / (nl + nr)
}

/// Exhaustive Gini split search over `features` (visited in ascending index
/// order). Ties keep the lowest feature index, then the lowest threshold.
/// Returns `None` when every listed feature is constant on `rows`.
pub fn best_split(x: &[Vec<f64>], y: &[usize], rows: &[usize], features: &[usize]) -> Option<SplitChoice> {
    let mut total = [0u32; 2];
    for &r in rows {
        total[y[r]] += 1;
    }
    let mut best: Option<(SplitChoice, (u128, u128))> = None;
    let mut order: Vec<usize> = rows.to_vec();
    for &f in features {
        order.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]));
        let mut left = [0u32; 2];
        for w in 0..order.len().saturating_sub(1) {
            left[y[order[w]]] += 1;
            let (lo, hi) = (x[order[w]][f], x[order[w + 1]][f]);
            if lo == hi {
                continue;
            }
            let right = [total[0] - left[0], total[1] - left[1]];
            let score = Purity::of(left).plus(Purity::of(right));
            if best.as_ref().is_none_or(|(_, s)| better(score, *s)) {
                let threshold = lo + (hi - lo) / 2.0;
                best = Some((SplitChoice { feature: f, threshold }, score));
            }
        }
    }
    best.map(|(c, _)| c)
}

struct Grower<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    cfg: &'a ForestConfig,
    m: usize,
    rng: TaskRng,
    nodes: Vec<Node>,
}

impl Grower<'_> {
    fn grow(&mut self, rows: &[usize], depth: usize) -> usize {
        let mut counts = [0u32; 2];
        for &r in rows {
            counts[self.y[r]] += 1;
        }
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { class_counts: counts });
        let pure = counts[0] == 0 || counts[1] == 0;
        let depth_capped = self.cfg.max_depth.is_some_and(|d| depth >= d);
        if pure || depth_capped || rows.len() < self.cfg.min_samples_split {
            return id;
        }
        let d = self.x[0].len();
        let mut subset = sample(&mut self.rng, d, self.m).into_vec();
        subset.sort_unstable();
        let mut choice = best_split(self.x, self.y, rows, &subset);
        if choice.is_none() {
            // every sampled feature is constant here; widen to the rest
            let rest: Vec<usize> = (0..d).filter(|f| !subset.contains(f)).collect();
            choice = best_split(self.x, self.y, rows, &rest);
        }
        let Some(SplitChoice { feature, threshold }) = choice else {
            return id;
        };
        let (l_rows, r_rows): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&r| self.x[r][feature] <= threshold);
        let left = self.grow(&l_rows, depth + 1);
        let right = self.grow(&r_rows, depth + 1);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

fn check_inputs(x: &[Vec<f64>], y: &[Label]) -> Result<usize, ForestError> {
    if x.len() != y.len() {
        return Err(ForestError::LengthMismatch {
            rows: x.len(),
            labels: y.len(),
        });
    }
    let d = x.first().map_or(0, Vec::len);
    for (row, v) in x.iter().enumerate() {
        if v.len() != d {
            return Err(ForestError::DimensionMismatch {
                expected: d,
                got: v.len(),
            });
        }
        if let Some(column) = v.iter().position(|f| !f.is_finite()) {
            return Err(ForestError::NonFiniteFeature { row, column });
        }
    }
    let has = |l: Label| y.contains(&l);
    if !(has(Label::Ards) && has(Label::NonArds)) {
        return Err(ForestError::SingleClassTraining);
    }
    if d == 0 {
        return Err(ForestError::DimensionMismatch { expected: 1, got: 0 });
    }
    Ok(d)
}

/// Grows a single tree on `rows` (duplicates allowed).
pub fn grow_tree(x: &[Vec<f64>], y: &[usize], rows: &[usize], cfg: &ForestConfig, rng: TaskRng) -> DecisionTree {
    let mut g = Grower {
        x,
        y,
        cfg,
        m: cfg.split_features(x[0].len()),
        rng,
        nodes: Vec::new(),
    };
    g.grow(rows, 0);
    DecisionTree { nodes: g.nodes }
}

/// Trains `cfg.n_trees` trees in parallel. Tree `t` draws from an RNG seeded
/// by `(cfg.seed, t)`, so the forest does not depend on scheduling.
pub fn train_random_forest(x: &[Vec<f64>], y: &[Label], cfg: &ForestConfig) -> Result<RandomForest, ForestError> {
    cfg.validate()?;
    let d = check_inputs(x, y)?;
    let yi: Vec<usize> = y.iter().map(|l| l.class_index()).collect();
    let n = x.len();

    let grown: Vec<(DecisionTree, Vec<bool>)> = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = task_rng(cfg.seed, &[t as u64]);
            let mut in_bag = vec![!cfg.bootstrap; n];
            let rows: Vec<usize> = if cfg.bootstrap {
                (0..n)
                    .map(|_| {
                        let r = rng.random_range(0..n);
                        in_bag[r] = true;
                        r
                    })
                    .collect()
            } else {
                (0..n).collect()
            };
            (grow_tree(x, &yi, &rows, cfg, rng), in_bag)
        })
        .collect();

    let oob_accuracy = cfg.bootstrap.then(|| {
        let (mut correct, mut scored) = (0usize, 0usize);
        for i in 0..n {
            let votes: Vec<f64> = grown
                .iter()
                .filter(|(_, bag)| !bag[i])
                .map(|(t, _)| t.predict_proba(&x[i]))
                .collect();
            if votes.is_empty() {
                continue;
            }
            let p = votes.iter().sum::<f64>() / votes.len() as f64;
            scored += 1;
            correct += usize::from((p > 0.5) == (yi[i] == 1));
        }
        (scored > 0).then(|| correct as f64 / scored as f64)
    });

    Ok(RandomForest {
        config: cfg.clone(),
        n_features: d,
        trees: grown.into_iter().map(|(t, _)| t).collect(),
        oob_accuracy: oob_accuracy.flatten(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(v: &[usize]) -> Vec<Label> {
        v.iter().map(|&c| Label::from_class_index(c)).collect()
    }

    #[test]
    fn one_perfect_split() {
        let x: Vec<Vec<f64>> = [-3.0, -2.0, -1.0, 1.0, 2.0, 3.0].iter().map(|&v| vec![v]).collect();
        let y = labels(&[0, 0, 0, 1, 1, 1]);
        let cfg = ForestConfig {
            n_trees: 1,
            max_depth: Some(1),
            bootstrap: false,
            ..Default::default()
        };
        let f = train_random_forest(&x, &y, &cfg).unwrap();
        assert_eq!(f.trees[0].depth(), 1);
        for (xi, yi) in x.iter().zip(&y) {
            let p = f.predict_proba(xi).unwrap();
            assert_eq!(p > 0.5, yi.is_ards());
        }
        assert!(matches!(f.trees[0].nodes[0], Node::Split { threshold, .. } if threshold == 0.0));
    }

    #[test]
    fn single_class_rejected() {
        let x = vec![vec![1.0], vec![2.0]];
        let err = train_random_forest(&x, &labels(&[1, 1]), &ForestConfig::default()).unwrap_err();
        assert_eq!(err, ForestError::SingleClassTraining);
    }

    #[test]
    fn dimension_mismatch_on_predict() {
        let x = vec![vec![1.0, 0.0], vec![2.0, 1.0]];
        let f = train_random_forest(&x, &labels(&[0, 1]), &ForestConfig::default()).unwrap();
        assert!(matches!(
            f.predict_proba(&[1.0]),
            Err(ForestError::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn soft_vote_is_mean_of_leaves() {
        let pure = |c: [u32; 2]| DecisionTree {
            nodes: vec![Node::Leaf { class_counts: c }],
        };
        let f = RandomForest {
            config: ForestConfig::default(),
            n_features: 1,
            trees: vec![pure([0, 3]), pure([5, 0])],
            oob_accuracy: None,
        };
        assert_eq!(f.predict_proba(&[0.0]).unwrap(), 0.5);
        let f = RandomForest {
            trees: vec![pure([0, 3]), pure([0, 1])],
            ..f
        };
        assert_eq!(f.predict_proba(&[0.0]).unwrap(), 1.0);
    }

    #[test]
    fn tie_break_prefers_low_feature_then_low_threshold() {
        // both features separate perfectly; feature 0 must win
        let x = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
        let s = best_split(&x, &[0, 1], &[0, 1], &[0, 1]).unwrap();
        assert_eq!(
            s,
            SplitChoice {
                feature: 0,
                threshold: 0.5
            }
        );
        // [0,1,0,1]: thresholds 0.5 and 2.5 tie exactly (gini 1/3 each)
        let x: Vec<Vec<f64>> = [0.0, 1.0, 2.0, 3.0].iter().map(|&v| vec![v]).collect();
        let y = [0, 1, 1, 0];
        let s = best_split(&x, &y, &[0, 1, 2, 3], &[0]).unwrap();
        assert_eq!(s.threshold, 0.5);
    }

    #[test]
    fn gini_formula() {
        assert_eq!(split_gini([2, 0], [0, 2]), 0.0);
        assert!((split_gini([1, 1], [1, 1]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn constant_features_make_a_leaf() {
        let x = vec![vec![1.0, 5.0]; 4];
        let f = train_random_forest(
            &x,
            &labels(&[0, 1, 0, 1]),
            &ForestConfig {
                n_trees: 3,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(f.trees.iter().all(|t| t.nodes.len() == 1));
        assert!(f.predict_proba(&[1.0, 5.0]).unwrap() > 0.0);
    }

    #[test]
    fn deterministic_given_seed() {
        let x: Vec<Vec<f64>> = (0..60)
            .map(|i| vec![(i * 37 % 11) as f64, (i * 13 % 7) as f64, i as f64 * 0.1])
            .collect();
        let y: Vec<Label> = (0..60)
            .map(|i| Label::from_class_index((i * 37 % 11 > 5) as usize))
            .collect();
        let cfg = ForestConfig {
            n_trees: 20,
            seed: 9,
            ..Default::default()
        };
        let a = train_random_forest(&x, &y, &cfg).unwrap();
        let b = train_random_forest(&x, &y, &cfg).unwrap();
        assert_eq!(a, b);
        let json = serde_json::to_string(&a).unwrap();
        let back: RandomForest = serde_json::from_str(&json).unwrap();
        assert_eq!(a, back);
    }
}
