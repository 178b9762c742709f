//! Isolation forest for outlier detection over gaze feature vectors.
//!
//! Each tree recursively partitions a subsample with uniformly random
//! feature/split choices until points are isolated or a height cap of
//! `ceil(log2(subsample_size))` is reached. Scores follow the standard
//! normalization `s(x) = 2^(-E[h(x)] / c(psi))`, where `c(n)` is the average
//! unsuccessful-search path length of a binary search tree (`c(1) = 0`,
//! `c(2) = 1`). Scores above 0.5 indicate shorter-than-average isolation
//! paths, i.e. likely outliers; the decision cutoff is applied by callers
//! and defaults to 0.5.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::indexed_stream;

/// Euler-Mascheroni constant, used by the harmonic-number approximation.
const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Average path length `c(n)` of an unsuccessful search in a binary search
/// tree over `n` points: 0 for n <= 1, 1 for n = 2, otherwise
/// `2 H(n-1) - 2 (n-1)/n` with `H(i) ~= ln(i) + gamma`.
pub fn average_path_length(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let nf = n as f64;
            2.0 * ((nf - 1.0).ln() + EULER_GAMMA) - 2.0 * (nf - 1.0) / nf
        }
    }
}

/// A node of an isolation tree.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ITreeNode {
    /// Internal split: `x[feature] <= split` descends left, else right.
    Internal {
        feature: usize,
        split: f64,
        left: Box<ITreeNode>,
        right: Box<ITreeNode>,
    },
    /// Unsplit node holding `size` subsample points.
    External { size: usize },
}

impl ITreeNode {
    fn path_length(&self, x: &[f64], depth: f64) -> f64 {
        match self {
            ITreeNode::External { size } => depth + average_path_length(*size),
            ITreeNode::Internal {
                feature,
                split,
                left,
                right,
            } => {
                if x[*feature] <= *split {
                    left.path_length(x, depth + 1.0)
                } else {
                    right.path_length(x, depth + 1.0)
                }
            }
        }
    }

    fn height(&self) -> usize {
        match self {
            ITreeNode::External { .. } => 0,
            ITreeNode::Internal { left, right, .. } => 1 + left.height().max(right.height()),
        }
    }
}

/// A fitted isolation forest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IsolationForestModel {
    trees: Vec<ITreeNode>,
    /// Effective subsample size per tree (requested size capped at N).
    pub subsample_size: usize,
    /// Number of trees.
    pub n_trees: usize,
    /// Seed the fit was keyed on.
    pub seed: u64,
    /// Expected feature width of scoring queries.
    pub n_features: usize,
}

impl IsolationForestModel {
    /// Serializes the model to pretty-printed JSON.
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Data(format!("isolation forest serialization failed: {e}")))
    }

    /// Restores a model previously produced by [`IsolationForestModel::to_json`].
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| Error::Data(format!("isolation forest deserialization failed: {e}")))
    }

    /// Tallest tree in the forest (internal edges only), for invariants.
    pub fn max_tree_height(&self) -> usize {
        self.trees.iter().map(ITreeNode::height).max().unwrap_or(0)
    }
}

/// Builds one isolation tree over `rows` (indices into `x`).
fn build_itree(
    x: &[Vec<f64>],
    rows: &mut Vec<usize>,
    depth: usize,
    height_limit: usize,
    rng: &mut impl Rng,
) -> ITreeNode {
    if rows.len() <= 1 || depth >= height_limit {
        return ITreeNode::External { size: rows.len() };
    }
    let d = x[0].len();
    // Features with a non-degenerate range within this node.
    let mut ranges: Vec<(usize, f64, f64)> = Vec::new();
    for j in 0..d {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &i in rows.iter() {
            lo = lo.min(x[i][j]);
            hi = hi.max(x[i][j]);
        }
        if hi > lo {
            ranges.push((j, lo, hi));
        }
    }
    if ranges.is_empty() {
        // All remaining points coincide; nothing can separate them.
        return ITreeNode::External { size: rows.len() };
    }
    let (feature, lo, hi) = ranges[rng.random_range(0..ranges.len())];
    // split in [lo, hi): the left branch (<=) keeps the minimum point and
    // the right branch (>) keeps the maximum, so both are non-empty.
    let split = lo + rng.random::<f64>() * (hi - lo);
    let (mut left_rows, mut right_rows): (Vec<usize>, Vec<usize>) =
        rows.drain(..).partition(|&i| x[i][feature] <= split);
    let left = build_itree(x, &mut left_rows, depth + 1, height_limit, rng);
    let right = build_itree(x, &mut right_rows, depth + 1, height_limit, rng);
    ITreeNode::Internal {
        feature,
        split,
        left: Box::new(left),
        right: Box::new(right),
    }
}

/// Fits an isolation forest of `n_trees` trees, each grown on a subsample
/// of `subsample_size` points drawn without replacement (capped at N) with
/// a per-tree keyed RNG stream.
pub fn isolation_forest_fit(
    x: &ndarray::ArrayView2<f64>,
    n_trees: usize,
    subsample_size: usize,
    seed: u64,
) -> Result<IsolationForestModel> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::Data(
            "isolation_forest_fit requires at least 2 samples".into(),
        ));
    }
    if n_trees < 1 {
        return Err(Error::Config(
            "isolation forest needs at least one tree".into(),
        ));
    }
    if subsample_size < 2 {
        return Err(Error::Config(
            "isolation forest subsample size must be at least 2".into(),
        ));
    }
    let rows: Vec<Vec<f64>> = (0..n).map(|i| x.row(i).to_vec()).collect();
    for (i, r) in rows.iter().enumerate() {
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "isolation_forest_fit: non-finite feature in row {i}"
            )));
        }
    }
    let psi = subsample_size.min(n);
    let height_limit = (psi as f64).log2().ceil() as usize;
    let mut trees = Vec::with_capacity(n_trees);
    for t in 0..n_trees {
        let mut rng = indexed_stream(seed, "iforest-tree", t as u64);
        // Partial Fisher-Yates: the first `psi` slots become the subsample.
        let mut indices: Vec<usize> = (0..n).collect();
        for i in 0..psi {
            let j = rng.random_range(i..n);
            indices.swap(i, j);
        }
        let mut subsample: Vec<usize> = indices[..psi].to_vec();
        trees.push(build_itree(&rows, &mut subsample, 0, height_limit, &mut rng));
    }
    Ok(IsolationForestModel {
        trees,
        subsample_size: psi,
        n_trees,
        seed,
        n_features: x.ncols(),
    })
}

/// Anomaly score of a single point: `2^(-E[h(x)] / c(psi))`, in (0, 1).
/// Higher means more anomalous; 0.5 is the indifference point.
pub fn anomaly_score(model: &IsolationForestModel, x: &[f64]) -> Result<f64> {
    if x.len() != model.n_features {
        return Err(Error::Data(format!(
            "anomaly_score: query has {} features, model expects {}",
            x.len(),
            model.n_features
        )));
    }
    let mean_path: f64 = model
        .trees
        .iter()
        .map(|t| t.path_length(x, 0.0))
        .sum::<f64>()
        / model.trees.len() as f64;
    Ok(2f64.powf(-mean_path / average_path_length(model.subsample_size)))
}
