//! Decision-tree and random-forest classifiers built from scratch.
//!
//! Trees split greedily on the weighted Gini-impurity decrease over midpoint
//! thresholds between consecutive distinct sorted feature values. Tie rules
//! are fixed so independent implementations agree: equal-gain splits prefer
//! the lowest feature index, then the lowest threshold; leaf and vote ties
//! prefer the lowest class index. A node with remaining impurity is split
//! even when the best achievable gain is zero (both children non-empty), so
//! XOR-style targets still resolve at depth 2.
//!
//! Forests train each tree on an independent size-`N` bootstrap resample and
//! examine `floor(sqrt(d))` randomly drawn candidate features per split,
//! with per-tree RNG streams keyed by `(seed, tree_index)`, so results do
//! not depend on training order.

use ndarray::{ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::indexed_stream;

/// Decision-tree hyperparameters. The split criterion is always Gini.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeConfig {
    /// Maximum depth; `None` grows until purity or `min_samples_split`.
    pub max_depth: Option<usize>,
    /// Minimum node size eligible for splitting.
    pub min_samples_split: usize,
    /// RNG seed (only consumed when feature subsampling is active).
    pub seed: u64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            max_depth: None,
            min_samples_split: 2,
            seed: 42,
        }
    }
}

/// Random-forest hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    /// Number of trees.
    pub n_estimators: usize,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    /// Bootstrap resampling (size `N`, with replacement). Disabling it is a
    /// test hook that makes a 1-tree forest reduce to a plain tree.
    pub bootstrap: bool,
    /// Candidate features per split; `None` = `floor(sqrt(d))`.
    pub feature_subsample: Option<usize>,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_estimators: 100,
            max_depth: None,
            min_samples_split: 2,
            bootstrap: true,
            feature_subsample: None,
            seed: 42,
        }
    }
}

/// Flattened tree node. Thresholds serialize as decimal strings so persisted
/// models reload without float drift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        #[serde(with = "f64_as_string")]
        threshold: f64,
        left: usize,
        right: usize,
        /// Training samples that reached this node.
        n: usize,
        /// Gini decrease achieved by this split, weighted by node fraction
        /// (used for feature importance).
        #[serde(with = "f64_as_string")]
        weighted_gain: f64,
    },
    Leaf {
        class_counts: Vec<usize>,
    },
}

/// Serializes an `f64` as its shortest-roundtrip decimal string.
mod f64_as_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{v}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A fitted decision tree.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeModel {
    /// Document version for persisted models.
    pub version: u32,
    pub nodes: Vec<Node>,
    pub n_classes: usize,
    pub n_features: usize,
    pub config: TreeConfig,
}

/// A fitted random forest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForestModel {
    pub version: u32,
    pub trees: Vec<TreeModel>,
    pub n_classes: usize,
    pub n_features: usize,
    pub config: ForestConfig,
}

/// Gini impurity `1 − Σ p_c²` of a class-count vector.
pub fn gini(class_counts: &[usize]) -> Result<f64> {
    let total: usize = class_counts.iter().sum();
    if total == 0 {
        return Err(Error::Data("gini of an all-zero count vector".into()));
    }
    let t = total as f64;
    let sum_sq: f64 = class_counts
        .iter()
        .map(|&c| {
            let p = c as f64 / t;
            p * p
        })
        .sum();
    Ok(1.0 - sum_sq)
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

/// Finds the best (feature, threshold) over `candidates`, maximizing the
/// Gini gain. Iteration order (features ascending, thresholds ascending)
/// plus strict improvement implements the tie rules.
fn best_split(
    x: &ArrayView2<f64>,
    y: &[usize],
    indices: &[usize],
    candidates: &[usize],
    n_classes: usize,
    parent_gini: f64,
) -> Option<BestSplit> {
    let n = indices.len() as f64;
    let mut best: Option<BestSplit> = None;

    for &feature in candidates {
        // Sort node samples by this feature's value.
        let mut order: Vec<usize> = indices.to_vec();
        order.sort_by(|&a, &b| {
            x[[a, feature]]
                .partial_cmp(&x[[b, feature]])
                .expect("features must not be NaN")
        });

        let mut left_counts = vec![0usize; n_classes];
        let mut right_counts = vec![0usize; n_classes];
        for &i in &order {
            right_counts[y[i]] += 1;
        }

        for w in 0..order.len() - 1 {
            let i = order[w];
            left_counts[y[i]] += 1;
            right_counts[y[i]] -= 1;
            let v_here = x[[i, feature]];
            let v_next = x[[order[w + 1], feature]];
            if v_here == v_next {
                continue; // no boundary between identical values
            }
            let threshold = v_here + (v_next - v_here) / 2.0;
            let nl = (w + 1) as f64;
            let nr = n - nl;
            let gl = gini(&left_counts).expect("left side non-empty");
            let gr = gini(&right_counts).expect("right side non-empty");
            let gain = parent_gini - (nl * gl + nr * gr) / n;
            let improves = match &best {
                None => true,
                Some(b) => gain > b.gain,
            };
            if improves {
                best = Some(BestSplit {
                    feature,
                    threshold,
                    gain,
                });
            }
        }
    }
    best
}

fn class_counts(y: &[usize], indices: &[usize], n_classes: usize) -> Vec<usize> {
    let mut counts = vec![0usize; n_classes];
    for &i in indices {
        counts[y[i]] += 1;
    }
    counts
}

/// Recursive tree builder. `feature_rng` is the per-tree stream used to draw
/// split candidates when `n_candidates < d` (forest mode).
#[allow(clippy::too_many_arguments)]
fn build_node(
    x: &ArrayView2<f64>,
    y: &[usize],
    indices: &[usize],
    depth: usize,
    n_classes: usize,
    n_root: usize,
    config: &TreeConfig,
    n_candidates: usize,
    feature_rng: &mut Option<&mut ChaCha8Rng>,
    nodes: &mut Vec<Node>,
) -> usize {
    let counts = class_counts(y, indices, n_classes);
    let node_gini = gini(&counts).expect("node is non-empty");
    let depth_limited = config.max_depth.is_some_and(|m| depth >= m);
    let too_small = indices.len() < config.min_samples_split;

    if node_gini == 0.0 || depth_limited || too_small {
        nodes.push(Node::Leaf {
            class_counts: counts,
        });
        return nodes.len() - 1;
    }

    let d = x.ncols();
    let candidates: Vec<usize> = if n_candidates >= d {
        (0..d).collect()
    } else {
        let rng = feature_rng
            .as_deref_mut()
            .expect("feature subsampling requires an RNG");
        let mut all: Vec<usize> = (0..d).collect();
        all.shuffle(rng);
        let mut chosen: Vec<usize> = all.into_iter().take(n_candidates).collect();
        chosen.sort_unstable();
        chosen
    };

    let split = best_split(x, y, indices, &candidates, n_classes, node_gini);
    let Some(split) = split else {
        // No candidate threshold (identical feature vectors): leaf.
        nodes.push(Node::Leaf {
            class_counts: counts,
        });
        return nodes.len() - 1;
    };

    let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = indices
        .iter()
        .partition(|&&i| x[[i, split.feature]] <= split.threshold);
    debug_assert!(!left_idx.is_empty() && !right_idx.is_empty());

    // Reserve this node's slot so children land after the parent.
    let slot = nodes.len();
    nodes.push(Node::Leaf {
        class_counts: Vec::new(),
    });
    let left = build_node(
        x,
        y,
        &left_idx,
        depth + 1,
        n_classes,
        n_root,
        config,
        n_candidates,
        feature_rng,
        nodes,
    );
    let right = build_node(
        x,
        y,
        &right_idx,
        depth + 1,
        n_classes,
        n_root,
        config,
        n_candidates,
        feature_rng,
        nodes,
    );
    nodes[slot] = Node::Split {
        feature: split.feature,
        threshold: split.threshold,
        left,
        right,
        n: indices.len(),
        weighted_gain: (indices.len() as f64 / n_root as f64) * split.gain,
    };
    slot
}

/// Fits a decision tree on all features.
pub fn fit_tree(
    x: &ArrayView2<f64>,
    y: &[usize],
    n_classes: usize,
    config: &TreeConfig,
) -> Result<TreeModel> {
    fit_tree_inner(x, y, n_classes, config, x.ncols(), None)
}

fn fit_tree_inner(
    x: &ArrayView2<f64>,
    y: &[usize],
    n_classes: usize,
    config: &TreeConfig,
    n_candidates: usize,
    indices_override: Option<(&[usize], &mut ChaCha8Rng)>,
) -> Result<TreeModel> {
    let n = x.nrows();
    if n == 0 {
        return Err(Error::Data("cannot fit a tree on zero samples".into()));
    }
    if y.len() != n {
        return Err(Error::Data(format!(
            "feature matrix has {n} rows but y has {}",
            y.len()
        )));
    }
    if n_classes == 0 || y.iter().any(|&c| c >= n_classes) {
        return Err(Error::Data("class index outside declared range".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("features must be finite".into()));
    }

    let mut nodes = Vec::new();
    match indices_override {
        Some((indices, rng)) => {
            let mut rng_opt = Some(rng);
            build_node(
                x,
                y,
                indices,
                0,
                n_classes,
                indices.len(),
                config,
                n_candidates,
                &mut rng_opt,
                &mut nodes,
            );
        }
        None => {
            let indices: Vec<usize> = (0..n).collect();
            build_node(
                x,
                y,
                &indices,
                0,
                n_classes,
                n,
                config,
                n_candidates,
                &mut None,
                &mut nodes,
            );
        }
    }
    Ok(TreeModel {
        version: 1,
        nodes,
        n_classes,
        n_features: x.ncols(),
        config: config.clone(),
    })
}

impl TreeModel {
    /// Predicted class (leaf majority, ties → lowest class index) for one row.
    pub fn predict_row(&self, row: &ArrayView1<f64>) -> Result<usize> {
        if row.len() != self.n_features {
            return Err(Error::Data(format!(
                "model expects {} features, got {}",
                self.n_features,
                row.len()
            )));
        }
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    at = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
                Node::Leaf { class_counts } => {
                    return Ok(argmax_counts(class_counts));
                }
            }
        }
    }

    /// Impurity-based feature importance: per-feature sum of weighted Gini
    /// decreases, normalized to sum 1 (all zeros for a stump).
    pub fn feature_importance(&self) -> Vec<f64> {
        let mut imp = vec![0.0; self.n_features];
        for node in &self.nodes {
            if let Node::Split {
                feature,
                weighted_gain,
                ..
            } = node
            {
                imp[*feature] += weighted_gain;
            }
        }
        normalize(&mut imp);
        imp
    }

    /// Persists the model as a versioned JSON document.
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Data(format!("tree serialization failed: {e}")))
    }

    pub fn from_json(text: &str) -> Result<TreeModel> {
        serde_json::from_str(text).map_err(|e| Error::Data(format!("invalid tree JSON: {e}")))
    }
}

/// Largest count wins; ties break to the lowest class index.
fn argmax_counts(counts: &[usize]) -> usize {
    let mut best = 0usize;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

fn normalize(v: &mut [f64]) {
    let total: f64 = v.iter().sum();
    if total > 0.0 {
        for x in v.iter_mut() {
            *x /= total;
        }
    }
}

/// Predicts labels for every row.
pub fn predict_tree(model: &TreeModel, x: &ArrayView2<f64>) -> Result<Vec<usize>> {
    x.rows()
        .into_iter()
        .map(|row| model.predict_row(&row))
        .collect()
}

/// Fits a random forest: per-tree bootstrap resamples and per-split feature
/// subsampling, with tree RNG streams keyed by `(seed, tree_index)`.
pub fn fit_forest(
    x: &ArrayView2<f64>,
    y: &[usize],
    n_classes: usize,
    config: &ForestConfig,
) -> Result<ForestModel> {
    if config.n_estimators == 0 {
        return Err(Error::Config("n_estimators must be ≥ 1".into()));
    }
    let n = x.nrows();
    if n == 0 {
        return Err(Error::Data("cannot fit a forest on zero samples".into()));
    }
    let d = x.ncols();
    let n_candidates = match config.feature_subsample {
        Some(k) => {
            if k == 0 || k > d {
                return Err(Error::Config(format!(
                    "feature_subsample must be in 1..={d}, got {k}"
                )));
            }
            k
        }
        None => ((d as f64).sqrt().floor() as usize).max(1),
    };
    let tree_config = TreeConfig {
        max_depth: config.max_depth,
        min_samples_split: config.min_samples_split,
        seed: config.seed,
    };

    let mut trees = Vec::with_capacity(config.n_estimators);
    for t in 0..config.n_estimators {
        let mut rng = indexed_stream(config.seed, "forest-tree", t as u64);
        let indices: Vec<usize> = if config.bootstrap {
            (0..n).map(|_| rng.random_range(0..n)).collect()
        } else {
            (0..n).collect()
        };
        let tree = fit_tree_inner(
            x,
            y,
            n_classes,
            &tree_config,
            n_candidates,
            Some((&indices, &mut rng)),
        )?;
        trees.push(tree);
    }
    Ok(ForestModel {
        version: 1,
        trees,
        n_classes,
        n_features: d,
        config: config.clone(),
    })
}

impl ForestModel {
    /// Majority vote over trees for one row (ties → lowest class index).
    pub fn predict_row(&self, row: &ArrayView1<f64>) -> Result<usize> {
        let mut votes = vec![0usize; self.n_classes];
        for tree in &self.trees {
            votes[tree.predict_row(row)?] += 1;
        }
        Ok(argmax_counts(&votes))
    }

    /// Mean of per-tree normalized importances, renormalized to sum 1.
    pub fn feature_importance(&self) -> Vec<f64> {
        let mut imp = vec![0.0; self.n_features];
        for tree in &self.trees {
            for (j, v) in tree.feature_importance().into_iter().enumerate() {
                imp[j] += v;
            }
        }
        normalize(&mut imp);
        imp
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Data(format!("forest serialization failed: {e}")))
    }

    pub fn from_json(text: &str) -> Result<ForestModel> {
        serde_json::from_str(text).map_err(|e| Error::Data(format!("invalid forest JSON: {e}")))
    }
}

/// Predicts labels for every row by majority vote.
pub fn predict_forest(model: &ForestModel, x: &ArrayView2<f64>) -> Result<Vec<usize>> {
    x.rows()
        .into_iter()
        .map(|row| model.predict_row(&row))
        .collect()
}
