//! Random forest of axis-aligned decision trees grown on Gini impurity,
//! with seeded bootstrap resampling and per-node random feature subsets of
//! size ceil(sqrt(n_features)).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{validate_finite, TrainConfig, TrainError};
use crate::corpus::Label;

const N_CLASSES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        class: usize,
    },
}

/// One decision tree stored as a node arena; index 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
}

impl DecisionTree {
    pub fn predict(&self, x: &[f64]) -> usize {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                TreeNode::Leaf { class } => return *class,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    idx = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }
}

/// Fitted forest; prediction is the plurality over tree votes with ties
/// broken toward the lowest class code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<DecisionTree>,
    pub trees_count: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub seed: u64,
    pub n_features: usize,
}

impl ForestModel {
    pub fn vote_counts(&self, x: &[f64]) -> [usize; N_CLASSES] {
        let mut votes = [0usize; N_CLASSES];
        for tree in &self.trees {
            votes[tree.predict(x)] += 1;
        }
        votes
    }

    /// Vote fractions, usable as a rough class distribution.
    pub fn vote_distribution(&self, x: &[f64]) -> [f64; N_CLASSES] {
        let votes = self.vote_counts(x);
        let total = self.trees.len() as f64;
        [
            votes[0] as f64 / total,
            votes[1] as f64 / total,
            votes[2] as f64 / total,
        ]
    }

    pub fn predict(&self, x: &[f64]) -> Label {
        let votes = self.vote_counts(x);
        let mut best = 0;
        for c in 1..N_CLASSES {
            if votes[c] > votes[best] {
                best = c;
            }
        }
        Label::from_index(best).expect("3 classes")
    }
}

fn gini(counts: &[usize; N_CLASSES], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts
        .iter()
        .map(|&c| {
            let p = c as f64 / t;
            p * p
        })
        .sum::<f64>()
}

fn majority_class(counts: &[usize; N_CLASSES]) -> usize {
    let mut best = 0;
    for c in 1..N_CLASSES {
        if counts[c] > counts[best] {
            best = c;
        }
    }
    best
}

struct TreeBuilder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    max_depth: usize,
    min_samples_leaf: usize,
    n_subset: usize,
    nodes: Vec<TreeNode>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    decrease: f64,
}

impl<'a> TreeBuilder<'a> {
    fn class_counts(&self, rows: &[usize]) -> [usize; N_CLASSES] {
        let mut counts = [0usize; N_CLASSES];
        for &r in rows {
            counts[self.y[r]] += 1;
        }
        counts
    }

    /// Exhaustive scan over midpoints of one feature's sorted values.
    fn best_split_on_feature(&self, rows: &[usize], feature: usize) -> Option<BestSplit> {
        let mut pairs: Vec<(f64, usize)> =
            rows.iter().map(|&r| (self.x[r][feature], self.y[r])).collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite features"));
        let total = pairs.len();
        let parent_counts = {
            let mut c = [0usize; N_CLASSES];
            for &(_, yl) in &pairs {
                c[yl] += 1;
            }
            c
        };
        let parent_gini = gini(&parent_counts, total);
        let mut left = [0usize; N_CLASSES];
        let mut best: Option<BestSplit> = None;
        for i in 0..total - 1 {
            left[pairs[i].1] += 1;
            let n_left = i + 1;
            let n_right = total - n_left;
            if pairs[i].0 == pairs[i + 1].0 {
                continue; // identical values cannot be separated
            }
            if n_left < self.min_samples_leaf || n_right < self.min_samples_leaf {
                continue;
            }
            let mut right = parent_counts;
            for c in 0..N_CLASSES {
                right[c] -= left[c];
            }
            let weighted = (n_left as f64 * gini(&left, n_left)
                + n_right as f64 * gini(&right, n_right))
                / total as f64;
            let decrease = parent_gini - weighted;
            let threshold = 0.5 * (pairs[i].0 + pairs[i + 1].0);
            let better = match &best {
                None => true,
                Some(b) => decrease > b.decrease + 1e-12,
            };
            if better {
                best = Some(BestSplit {
                    feature,
                    threshold,
                    decrease,
                });
            }
        }
        best
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let counts = self.class_counts(&rows);
        let n = rows.len();
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let can_split = depth < self.max_depth && !pure && n >= 2 * self.min_samples_leaf;
        if !can_split {
            let idx = self.nodes.len();
            self.nodes.push(TreeNode::Leaf {
                class: majority_class(&counts),
            });
            return idx;
        }
        let n_features = self.x[0].len();
        let subset = rand::seq::index::sample(rng, n_features, self.n_subset.min(n_features));
        let mut best: Option<BestSplit> = None;
        for feature in subset {
            if let Some(candidate) = self.best_split_on_feature(&rows, feature) {
                let better = match &best {
                    None => candidate.decrease > 1e-12,
                    Some(b) => candidate.decrease > b.decrease + 1e-12,
                };
                if better {
                    best = Some(candidate);
                }
            }
        }
        let Some(split) = best else {
            let idx = self.nodes.len();
            self.nodes.push(TreeNode::Leaf {
                class: majority_class(&counts),
            });
            return idx;
        };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
            .into_iter()
            .partition(|&r| self.x[r][split.feature] <= split.threshold);
        let idx = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { class: 0 }); // placeholder
        let left = self.grow(left_rows, depth + 1, rng);
        let right = self.grow(right_rows, depth + 1, rng);
        self.nodes[idx] = TreeNode::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        idx
    }
}

/// Trains a forest on raw (unstandardized) feature rows.
pub fn train_forest(
    x: &[Vec<f64>],
    y: &[Label],
    config: &TrainConfig,
) -> Result<ForestModel, TrainError> {
    if x.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    validate_finite(x)?;
    let y_idx: Vec<usize> = y.iter().map(|l| l.index()).collect();
    let n = x.len();
    let n_features = x[0].len();
    let n_subset = (n_features as f64).sqrt().ceil() as usize;
    let mut trees = Vec::with_capacity(config.trees_count);
    for t in 0..config.trees_count {
        // Per-tree stream derived deterministically from the master seed.
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(t as u64));
        let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let mut builder = TreeBuilder {
            x,
            y: &y_idx,
            max_depth: config.max_depth,
            min_samples_leaf: config.min_samples_leaf,
            n_subset,
            nodes: Vec::new(),
        };
        builder.grow(rows, 0, &mut rng);
        trees.push(DecisionTree {
            nodes: builder.nodes,
        });
    }
    Ok(ForestModel {
        trees,
        trees_count: config.trees_count,
        max_depth: config.max_depth,
        min_samples_leaf: config.min_samples_leaf,
        seed: config.seed,
        n_features,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(trees: usize, depth: usize) -> TrainConfig {
        TrainConfig {
            trees_count: trees,
            max_depth: depth,
            min_samples_leaf: 1,
            seed: 7,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn constant_labels_give_single_leaf_trees() {
        let x = vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]];
        let y = vec![Label::Uncertain; 4];
        let m = train_forest(&x, &y, &config(5, 4)).unwrap();
        for tree in &m.trees {
            assert_eq!(tree.nodes.len(), 1);
            assert!(matches!(tree.nodes[0], TreeNode::Leaf { class: 1 }));
        }
        assert_eq!(m.predict(&[1.5]), Label::Uncertain);
    }

    #[test]
    fn stump_threshold_lies_between_classes() {
        // 1-D data separable at a threshold: class 0 in [0,1], class 2 in [3,4].
        let x: Vec<Vec<f64>> = vec![
            vec![0.0],
            vec![0.5],
            vec![1.0],
            vec![3.0],
            vec![3.5],
            vec![4.0],
        ];
        let y = vec![
            Label::Human,
            Label::Human,
            Label::Human,
            Label::Llm,
            Label::Llm,
            Label::Llm,
        ];
        // Independent brute-force oracle: scan every midpoint and verify the
        // chosen threshold achieves the maximal Gini decrease.
        let oracle_best = {
            let mut vals: Vec<f64> = x.iter().map(|r| r[0]).collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut best_dec = f64::MIN;
            let mut best_thr = 0.0;
            for i in 0..vals.len() - 1 {
                if vals[i] == vals[i + 1] {
                    continue;
                }
                let thr = 0.5 * (vals[i] + vals[i + 1]);
                let left: Vec<usize> = (0..6).filter(|&r| x[r][0] <= thr).collect();
                let right: Vec<usize> = (0..6).filter(|&r| x[r][0] > thr).collect();
                let count = |rows: &[usize]| {
                    let mut c = [0usize; 3];
                    for &r in rows {
                        c[y[r].index()] += 1;
                    }
                    c
                };
                let g = |rows: &[usize]| gini(&count(rows), rows.len());
                let parent = g(&(0..6).collect::<Vec<_>>());
                let dec = parent
                    - (left.len() as f64 * g(&left) + right.len() as f64 * g(&right)) / 6.0;
                if dec > best_dec {
                    best_dec = dec;
                    best_thr = thr;
                }
            }
            best_thr
        };
        assert_eq!(oracle_best, 2.0); // midpoint of 1.0 and 3.0

        let cfg = TrainConfig {
            trees_count: 1,
            max_depth: 1,
            min_samples_leaf: 1,
            seed: 0,
            ..TrainConfig::default()
        };
        let m = train_forest(&x, &y, &cfg).unwrap();
        match &m.trees[0].nodes[0] {
            TreeNode::Split { threshold, .. } => {
                assert!(
                    *threshold > 1.0 && *threshold < 3.0,
                    "threshold {threshold} outside class gap"
                );
                assert_eq!(*threshold, oracle_best);
            }
            other => panic!("expected a split at the root, got {other:?}"),
        }
        assert_eq!(m.predict(&[0.2]), Label::Human);
        assert_eq!(m.predict(&[3.8]), Label::Llm);
    }

    #[test]
    fn same_seed_identical_forests() {
        let x: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![(i % 7) as f64, (i % 3) as f64, i as f64 * 0.1])
            .collect();
        let y: Vec<Label> = (0..40)
            .map(|i| Label::from_index(i % 3).unwrap())
            .collect();
        let a = train_forest(&x, &y, &config(20, 6)).unwrap();
        let b = train_forest(&x, &y, &config(20, 6)).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        for row in &x {
            assert_eq!(a.predict(row), b.predict(row));
        }
    }

    #[test]
    fn different_seed_differs_somewhere() {
        let x: Vec<Vec<f64>> = (0..60)
            .map(|i| vec![(i % 11) as f64, ((i * 3) % 7) as f64])
            .collect();
        let y: Vec<Label> = (0..60)
            .map(|i| Label::from_index((i / 2) % 3).unwrap())
            .collect();
        let a = train_forest(&x, &y, &config(10, 5)).unwrap();
        let mut cfg2 = config(10, 5);
        cfg2.seed = 8;
        let b = train_forest(&x, &y, &cfg2).unwrap();
        assert_ne!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn large_forest_fits_noiseless_separable_data() {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..30 {
            let f = i as f64 * 0.05;
            x.push(vec![f, 1.0 - f]);
            y.push(Label::Human);
            x.push(vec![5.0 + f, 6.0 - f]);
            y.push(Label::Llm);
            x.push(vec![10.0 + f, 11.0 - f]);
            y.push(Label::Uncertain);
        }
        let m = train_forest(&x, &y, &config(100, 8)).unwrap();
        let correct = x
            .iter()
            .zip(&y)
            .filter(|(xi, yi)| m.predict(xi) == **yi)
            .count();
        assert_eq!(correct, x.len());
    }

    #[test]
    fn min_samples_leaf_respected() {
        let x: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64]).collect();
        let y: Vec<Label> = (0..12)
            .map(|i| {
                if i < 6 {
                    Label::Human
                } else {
                    Label::Llm
                }
            })
            .collect();
        let cfg = TrainConfig {
            trees_count: 10,
            max_depth: 10,
            min_samples_leaf: 3,
            seed: 3,
            ..TrainConfig::default()
        };
        let m = train_forest(&x, &y, &cfg).unwrap();
        // Count training samples reaching each leaf; every leaf must hold
        // at least min_samples_leaf of its tree's bootstrap sample.
        for (t, tree) in m.trees.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(t as u64));
            let rows: Vec<usize> = (0..x.len()).map(|_| rng.random_range(0..x.len())).collect();
            let mut leaf_counts = vec![0usize; tree.nodes.len()];
            for &r in &rows {
                let mut idx = 0;
                loop {
                    match &tree.nodes[idx] {
                        TreeNode::Leaf { .. } => {
                            leaf_counts[idx] += 1;
                            break;
                        }
                        TreeNode::Split {
                            feature,
                            threshold,
                            left,
                            right,
                        } => {
                            idx = if x[r][*feature] <= *threshold { *left } else { *right };
                        }
                    }
                }
            }
            for (idx, node) in tree.nodes.iter().enumerate() {
                if matches!(node, TreeNode::Leaf { .. }) {
                    assert!(
                        leaf_counts[idx] >= cfg.min_samples_leaf,
                        "tree {t} leaf {idx} holds {} samples",
                        leaf_counts[idx]
                    );
                }
            }
        }
    }

    #[test]
    fn empty_training_set_rejected() {
        let x: Vec<Vec<f64>> = Vec::new();
        let y: Vec<Label> = Vec::new();
        assert!(matches!(
            train_forest(&x, &y, &TrainConfig::default()),
            Err(TrainError::EmptyTrainingSet)
        ));
    }
}
