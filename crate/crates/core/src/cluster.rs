//! Clustering and novelty-detection toolkit for the open-set scenario.
//!
//! This module provides the unsupervised half of the re-identification
//! pipeline: 1-nearest-neighbour matching with a distance-based confidence,
//! k-means clustering (k-means++ seeding, restarts, empty-cluster repair),
//! an elbow curve, silhouette scoring, a centroid-distance novelty score
//! with a percentile threshold, and a two-component PCA projection for
//! reporting.
//!
//! Conventions:
//! - cluster assignment uses squared Euclidean distance; the novelty score
//!   uses the unsquared distance (the argmin is identical either way);
//! - percentiles are computed with linear interpolation between order
//!   statistics;
//! - a point in a singleton cluster contributes silhouette 0.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::indexed_stream;

// ---------------------------------------------------------------------------
// Small distance helpers
// ---------------------------------------------------------------------------

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<f64>()
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    squared_distance(a, b).sqrt()
}

fn row(x: &ArrayView2<f64>, i: usize) -> Vec<f64> {
    x.row(i).to_vec()
}

// ---------------------------------------------------------------------------
// 1-NN matching
// ---------------------------------------------------------------------------

/// Matches `query` against the scaled training matrix with a 1-nearest-
/// neighbour rule and returns `(matched_id, distance, confidence)` where
/// `confidence = exp(-distance)`.
///
/// Ties on the nearest distance are broken by the lowest training row
/// index. The query must have the same width as the training matrix.
/// Match confidence assigned to a nearest-neighbor distance:
/// `exp(-distance)`, so distance 0 is full confidence and confidence decays
/// toward 0 as the match gets farther away.
pub fn knn_confidence(distance: f64) -> f64 {
    (-distance).exp()
}

pub fn knn1_match(
    train_x: &ArrayView2<f64>,
    train_ids: &[u32],
    query: &[f64],
) -> Result<(u32, f64, f64)> {
    let (n, d) = (train_x.nrows(), train_x.ncols());
    if n == 0 {
        return Err(Error::Data("knn1_match: empty training matrix".into()));
    }
    if train_ids.len() != n {
        return Err(Error::Data(format!(
            "knn1_match: {} training rows but {} ids",
            n,
            train_ids.len()
        )));
    }
    if query.len() != d {
        return Err(Error::Data(format!(
            "knn1_match: query has {} features, training data has {}",
            query.len(),
            d
        )));
    }
    let mut best_idx = 0usize;
    let mut best_sq = f64::INFINITY;
    for i in 0..n {
        let sq = squared_distance(&row(train_x, i), query);
        // Strict `<` keeps the lowest index on exact ties.
        if sq < best_sq {
            best_sq = sq;
            best_idx = i;
        }
    }
    let distance = best_sq.sqrt();
    Ok((train_ids[best_idx], distance, knn_confidence(distance)))
}

// ---------------------------------------------------------------------------
// K-means
// ---------------------------------------------------------------------------

/// A fitted k-means model: centroids, the within-cluster sum of squares at
/// convergence, and the fitting parameters for provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KMeansModel {
    /// Cluster centres, one row per cluster.
    pub centroids: Vec<Vec<f64>>,
    /// Number of clusters.
    pub k: usize,
    /// Within-cluster sum of squared distances over the training data.
    pub wcss: f64,
    /// Number of k-means++ restarts used during fitting.
    pub n_init: usize,
    /// Seed the fit was keyed on.
    pub seed: u64,
}

impl KMeansModel {
    /// Index of the nearest centroid by squared Euclidean distance, together
    /// with that squared distance. Ties go to the lowest cluster index.
    pub fn nearest_centroid(&self, x: &[f64]) -> (usize, f64) {
        let mut best = 0usize;
        let mut best_sq = f64::INFINITY;
        for (j, c) in self.centroids.iter().enumerate() {
            let sq = squared_distance(c, x);
            if sq < best_sq {
                best_sq = sq;
                best = j;
            }
        }
        (best, best_sq)
    }

    /// Cluster assignment for every row of `x`.
    pub fn assignments(&self, x: &ArrayView2<f64>) -> Vec<usize> {
        (0..x.nrows())
            .map(|i| self.nearest_centroid(&row(x, i)).0)
            .collect()
    }

    /// Serializes the model to pretty-printed JSON.
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Data(format!("kmeans model serialization failed: {e}")))
    }

    /// Restores a model previously produced by [`KMeansModel::to_json`].
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| Error::Data(format!("kmeans model deserialization failed: {e}")))
    }
}

/// Total within-cluster sum of squares of `x` under the given centroids.
fn compute_wcss(x: &ArrayView2<f64>, centroids: &[Vec<f64>]) -> f64 {
    (0..x.nrows())
        .map(|i| {
            let r = row(x, i);
            centroids
                .iter()
                .map(|c| squared_distance(c, &r))
                .fold(f64::INFINITY, f64::min)
        })
        .sum()
}

/// k-means++ seeding: the first centre is uniform, each subsequent centre is
/// drawn with probability proportional to the squared distance to the
/// nearest centre chosen so far.
fn kmeans_pp_init(x: &ArrayView2<f64>, k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = x.nrows();
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    let first = rng.random_range(0..n);
    centroids.push(row(x, first));
    let mut min_sq: Vec<f64> = (0..n)
        .map(|i| squared_distance(&row(x, i), &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = min_sq.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in min_sq.iter().enumerate() {
                u -= w;
                if u <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // All remaining points coincide with existing centres; fall back
            // to a uniform draw so seeding still terminates.
            rng.random_range(0..n)
        };
        let c = row(x, next);
        for i in 0..n {
            min_sq[i] = min_sq[i].min(squared_distance(&row(x, i), &c));
        }
        centroids.push(c);
    }
    centroids
}

/// One full Lloyd run from the given initial centroids. Returns the final
/// centroids and WCSS. Empty clusters are repaired by reseeding them on the
/// point currently farthest from its assigned centroid.
fn lloyd(
    x: &ArrayView2<f64>,
    mut centroids: Vec<Vec<f64>>,
    max_iter: usize,
) -> (Vec<Vec<f64>>, f64) {
    let n = x.nrows();
    let d = x.ncols();
    let k = centroids.len();
    let mut assign = vec![usize::MAX; n];
    let mut prev_wcss = f64::INFINITY;
    for _ in 0..max_iter {
        // Assignment step (squared distance; ties to the lowest cluster).
        let mut changed = false;
        let mut sq_dist = vec![0.0f64; n];
        for i in 0..n {
            let r = row(x, i);
            let mut best = 0usize;
            let mut best_sq = f64::INFINITY;
            for (j, c) in centroids.iter().enumerate() {
                let sq = squared_distance(c, &r);
                if sq < best_sq {
                    best_sq = sq;
                    best = j;
                }
            }
            sq_dist[i] = best_sq;
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }

        // Repair empty clusters: move each onto the point farthest from its
        // assigned centroid, excluding points already used for repair.
        let mut counts = vec![0usize; k];
        for &a in &assign {
            counts[a] += 1;
        }
        let mut taken = vec![false; n];
        for j in 0..k {
            if counts[j] > 0 {
                continue;
            }
            let (mut far_i, mut far_sq) = (usize::MAX, -1.0f64);
            for i in 0..n {
                if !taken[i] && counts[assign[i]] > 1 && sq_dist[i] > far_sq {
                    far_sq = sq_dist[i];
                    far_i = i;
                }
            }
            if far_i == usize::MAX {
                continue; // fewer distinct points than clusters; leave empty
            }
            taken[far_i] = true;
            counts[assign[far_i]] -= 1;
            counts[j] += 1;
            centroids[j] = row(x, far_i);
            assign[far_i] = j;
            sq_dist[far_i] = 0.0;
            changed = true;
        }

        // Update step: mean of the assigned points.
        let mut sums = vec![vec![0.0f64; d]; k];
        let mut sizes = vec![0usize; k];
        for i in 0..n {
            let a = assign[i];
            sizes[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        for j in 0..k {
            if sizes[j] > 0 {
                for s in sums[j].iter_mut() {
                    *s /= sizes[j] as f64;
                }
                centroids[j] = sums[j].clone();
            }
        }

        let wcss = compute_wcss(x, &centroids);
        debug_assert!(
            wcss <= prev_wcss + 1e-9,
            "Lloyd iteration increased WCSS: {prev_wcss} -> {wcss}"
        );
        prev_wcss = wcss;
        if !changed {
            break;
        }
    }
    let final_wcss = compute_wcss(x, &centroids);
    (centroids, final_wcss)
}

/// Fits k-means with k-means++ seeding and `n_init` restarts, keeping the
/// restart with the lowest final WCSS. Each restart draws from its own keyed
/// RNG sub-stream so restarts are order-independent.
pub fn kmeans_fit(
    x: &ArrayView2<f64>,
    k: usize,
    n_init: usize,
    max_iter: usize,
    seed: u64,
) -> Result<KMeansModel> {
    let n = x.nrows();
    if k < 1 {
        return Err(Error::Config("kmeans: k must be at least 1".into()));
    }
    if k > n {
        return Err(Error::Config(format!(
            "kmeans: k = {k} exceeds the number of samples ({n})"
        )));
    }
    if n_init < 1 {
        return Err(Error::Config("kmeans: n_init must be at least 1".into()));
    }
    let mut best: Option<(Vec<Vec<f64>>, f64)> = None;
    for restart in 0..n_init {
        let mut rng = indexed_stream(seed, "kmeans-restart", restart as u64);
        let init = kmeans_pp_init(x, k, &mut rng);
        let (centroids, wcss) = lloyd(x, init, max_iter);
        if best.as_ref().map(|(_, w)| wcss < *w).unwrap_or(true) {
            best = Some((centroids, wcss));
        }
    }
    let (centroids, wcss) = best.expect("n_init >= 1 guarantees a candidate");
    Ok(KMeansModel {
        centroids,
        k,
        wcss,
        n_init,
        seed,
    })
}

/// Computes the elbow curve: one `(k, wcss)` point per entry of `k_range`.
///
/// Every k is fitted with the same seed and restart budget. To keep the
/// curve non-increasing even when k-means++ lands in a poor local optimum,
/// each k after the first also tries a warm start built from the previous
/// best centroids plus the point farthest from them; adding a centre on a
/// data point can only lower the objective, and Lloyd never raises it.
pub fn wcss_curve(
    x: &ArrayView2<f64>,
    k_range: &[usize],
    n_init: usize,
    max_iter: usize,
    seed: u64,
) -> Result<Vec<(usize, f64)>> {
    if k_range.is_empty() {
        return Err(Error::Config("wcss_curve: empty k range".into()));
    }
    let mut sorted = k_range.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut curve = Vec::with_capacity(sorted.len());
    let mut prev: Option<KMeansModel> = None;
    for &k in &sorted {
        let mut model = kmeans_fit(x, k, n_init, max_iter, seed)?;
        if let Some(p) = &prev {
            if k == p.k + 1 {
                let mut warm = p.centroids.clone();
                let (far_i, _) = (0..x.nrows())
                    .map(|i| {
                        let r = row(x, i);
                        let sq = warm
                            .iter()
                            .map(|c| squared_distance(c, &r))
                            .fold(f64::INFINITY, f64::min);
                        (i, sq)
                    })
                    .max_by(|a, b| a.1.total_cmp(&b.1))
                    .expect("non-empty matrix");
                warm.push(row(x, far_i));
                let (centroids, wcss) = lloyd(x, warm, max_iter);
                if wcss < model.wcss {
                    model.centroids = centroids;
                    model.wcss = wcss;
                }
            }
        }
        curve.push((k, model.wcss));
        prev = Some(model);
    }
    Ok(curve)
}

// ---------------------------------------------------------------------------
// Silhouette
// ---------------------------------------------------------------------------

/// Mean silhouette coefficient over all points, computed by brute-force
/// pairwise distances.
///
/// For each point, `a` is the mean distance to the rest of its own cluster
/// and `b` the smallest mean distance to any other cluster; the score is
/// `(b - a) / max(a, b)`. Points in singleton clusters score 0 by
/// convention, as do points where both means are 0 (exact duplicates).
pub fn silhouette(x: &ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
    let n = x.nrows();
    if labels.len() != n {
        return Err(Error::Data(format!(
            "silhouette: {} rows but {} labels",
            n,
            labels.len()
        )));
    }
    if n == 0 {
        return Err(Error::Data("silhouette: empty input".into()));
    }
    let mut clusters: Vec<usize> = labels.to_vec();
    clusters.sort_unstable();
    clusters.dedup();
    if clusters.len() < 2 {
        return Err(Error::Data(
            "silhouette requires at least two clusters".into(),
        ));
    }
    let mut cluster_size = std::collections::HashMap::new();
    for &l in labels {
        *cluster_size.entry(l).or_insert(0usize) += 1;
    }
    let mut total = 0.0f64;
    for i in 0..n {
        let own = labels[i];
        if cluster_size[&own] == 1 {
            continue; // contributes 0
        }
        let ri = row(x, i);
        // Sum of distances from i to each cluster.
        let mut sums: std::collections::HashMap<usize, f64> = std::collections::HashMap::new();
        for j in 0..n {
            if i == j {
                continue;
            }
            *sums.entry(labels[j]).or_insert(0.0) += euclidean(&ri, &row(x, j));
        }
        let a = sums.get(&own).copied().unwrap_or(0.0) / (cluster_size[&own] - 1) as f64;
        let b = clusters
            .iter()
            .filter(|&&c| c != own)
            .map(|c| sums.get(c).copied().unwrap_or(0.0) / cluster_size[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            let s = (b - a) / denom;
            debug_assert!((-1.0..=1.0).contains(&s));
            total += s;
        }
    }
    Ok(total / n as f64)
}

// ---------------------------------------------------------------------------
// Novelty score and threshold
// ---------------------------------------------------------------------------

/// Distance from `x` to the nearest cluster centre (unsquared Euclidean).
pub fn novelty_score(x: &[f64], model: &KMeansModel) -> f64 {
    model
        .centroids
        .iter()
        .map(|c| euclidean(c, x))
        .fold(f64::INFINITY, f64::min)
}

/// A calibrated novelty cutoff: the chosen percentile of the training
/// population's novelty scores, retained alongside its inputs for audit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoveltyThreshold {
    /// The cutoff value; scores strictly above it are flagged as novel.
    pub tau: f64,
    /// The percentile the cutoff was taken at (0-100).
    pub percentile: f64,
    /// The per-point novelty scores the percentile was computed from.
    pub source_distances: Vec<f64>,
}

/// Linear-interpolated percentile of `values` (p in 0-100). With `n` sorted
/// values the rank is `p/100 * (n-1)` and fractional ranks interpolate
/// between the neighbouring order statistics.
pub fn percentile_linear(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Data("percentile of an empty set".into()));
    }
    if !(0.0..=100.0).contains(&p) || !p.is_finite() {
        return Err(Error::Config(format!(
            "percentile must lie in [0, 100], got {p}"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Ok(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

/// Calibrates the novelty cutoff as the 95th percentile of the novelty
/// scores of the known population `existing_x` under `model`.
pub fn novelty_threshold(
    existing_x: &ArrayView2<f64>,
    model: &KMeansModel,
) -> Result<NoveltyThreshold> {
    if existing_x.nrows() == 0 {
        return Err(Error::Data(
            "novelty_threshold: empty calibration set".into(),
        ));
    }
    let distances: Vec<f64> = (0..existing_x.nrows())
        .map(|i| novelty_score(&row(existing_x, i), model))
        .collect();
    let percentile = 95.0;
    let tau = percentile_linear(&distances, percentile)?;
    Ok(NoveltyThreshold {
        tau,
        percentile,
        source_distances: distances,
    })
}

/// A sample is an outlier when its novelty score strictly exceeds the
/// calibrated cutoff.
pub fn is_outlier(x: &[f64], model: &KMeansModel, threshold: &NoveltyThreshold) -> bool {
    novelty_score(x, model) > threshold.tau
}

// ---------------------------------------------------------------------------
// PCA
// ---------------------------------------------------------------------------

/// A fitted PCA projection: the training mean, row-orthonormal components,
/// and the fraction of variance each component explains.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PcaModel {
    /// Column means of the training data (subtracted before projection).
    pub mean: Vec<f64>,
    /// Principal axes, one row per component, unit length.
    pub components: Vec<Vec<f64>>,
    /// Eigenvalue share of each retained component, descending.
    pub explained_variance_ratio: Vec<f64>,
}

impl PcaModel {
    /// Serializes the model to pretty-printed JSON.
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Data(format!("pca model serialization failed: {e}")))
    }

    /// Restores a model previously produced by [`PcaModel::to_json`].
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| Error::Data(format!("pca model deserialization failed: {e}")))
    }
}

/// Fits a PCA of `n_components` axes via the eigendecomposition of the
/// sample covariance matrix. Component signs are fixed so the entry of
/// largest magnitude in each axis is positive.
pub fn pca_fit(x: &ArrayView2<f64>, n_components: usize) -> Result<PcaModel> {
    let (n, d) = (x.nrows(), x.ncols());
    if n < 2 {
        return Err(Error::Data("pca_fit requires at least 2 samples".into()));
    }
    if n_components < 1 || n_components > d {
        return Err(Error::Config(format!(
            "pca_fit: n_components = {n_components} outside [1, {d}]"
        )));
    }
    let mean: Vec<f64> = (0..d).map(|j| x.column(j).mean().unwrap_or(0.0)).collect();
    // Sample covariance (divisor n - 1).
    let mut cov = nalgebra::DMatrix::<f64>::zeros(d, d);
    for i in 0..n {
        let r = row(x, i);
        for a in 0..d {
            let da = r[a] - mean[a];
            for b in a..d {
                cov[(a, b)] += da * (r[b] - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            cov[(a, b)] /= (n - 1) as f64;
            cov[(b, a)] = cov[(a, b)];
        }
    }
    let eig = nalgebra::SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let total: f64 = eig.eigenvalues.iter().map(|&l| l.max(0.0)).sum();
    if total <= f64::EPSILON {
        return Err(Error::Data("pca_fit: data has zero variance".into()));
    }
    let mut components = Vec::with_capacity(n_components);
    let mut ratios = Vec::with_capacity(n_components);
    for &idx in order.iter().take(n_components) {
        let col = eig.eigenvectors.column(idx);
        let mut axis: Vec<f64> = col.iter().copied().collect();
        // Sign convention: largest-magnitude entry positive.
        let mut arg = 0usize;
        for (j, v) in axis.iter().enumerate() {
            if v.abs() > axis[arg].abs() {
                arg = j;
            }
        }
        if axis[arg] < 0.0 {
            for v in axis.iter_mut() {
                *v = -*v;
            }
        }
        components.push(axis);
        ratios.push(eig.eigenvalues[idx].max(0.0) / total);
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance_ratio: ratios,
    })
}

/// Projects `x` onto the fitted axes: `(x - mean) @ components^T`.
pub fn pca_project(model: &PcaModel, x: &ArrayView2<f64>) -> Result<Array2<f64>> {
    let (n, d) = (x.nrows(), x.ncols());
    if d != model.mean.len() {
        return Err(Error::Data(format!(
            "pca_project: input has {} features, model expects {}",
            d,
            model.mean.len()
        )));
    }
    let k = model.components.len();
    let mut out = Array2::zeros((n, k));
    for i in 0..n {
        let r = row(x, i);
        for (c, axis) in model.components.iter().enumerate() {
            out[(i, c)] = r
                .iter()
                .zip(axis)
                .zip(&model.mean)
                .map(|((&v, &a), &m)| (v - m) * a)
                .sum();
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::Rng;

    #[test]
    fn knn1_exact_hit_and_tie_rule() {
        let train = array![[0.0, 0.0], [2.0, 0.0], [5.0, 5.0]];
        let (id, dist, conf) = knn1_match(&train.view(), &[3, 7, 9], &[2.0, 0.0]).unwrap();
        assert_eq!(id, 7);
        assert_eq!(dist, 0.0);
        assert_eq!(conf, 1.0);

        // Query equidistant from rows 0 and 1 -> lowest index wins.
        let (id, _, _) = knn1_match(&train.view(), &[3, 7, 9], &[1.0, 0.0]).unwrap();
        assert_eq!(id, 3);
    }

    #[test]
    fn knn1_confidence_law() {
        let train = array![[0.0, 0.0]];
        let (_, dist, conf) = knn1_match(&train.view(), &[1], &[2.69, 0.0]).unwrap();
        assert_abs_diff_eq!(dist, 2.69, epsilon = 1e-12);
        // Reported confidence at distance 2.69 rounds to 0.0678.
        assert!((conf - 0.0678).abs() <= 2e-4, "conf = {conf}");
        // Strictly decreasing in distance, equals 1 iff distance 0.
        let (_, _, near) = knn1_match(&train.view(), &[1], &[1.0, 0.0]).unwrap();
        assert!(near > conf && near < 1.0);
    }

    #[test]
    fn knn1_rejects_dimension_mismatch() {
        let train = array![[0.0, 0.0]];
        assert!(knn1_match(&train.view(), &[1], &[0.0]).is_err());
        assert!(knn1_match(&train.view(), &[1, 2], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn kmeans_k1_is_the_column_mean() {
        let x = array![[1.0, 10.0], [3.0, 14.0], [5.0, 18.0]];
        let m = kmeans_fit(&x.view(), 1, 3, 100, 42).unwrap();
        assert_abs_diff_eq!(m.centroids[0][0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.centroids[0][1], 14.0, epsilon = 1e-12);
        // WCSS = total scatter around the mean.
        let scatter: f64 = x
            .rows()
            .into_iter()
            .map(|r| (r[0] - 3.0).powi(2) + (r[1] - 14.0).powi(2))
            .sum();
        assert_abs_diff_eq!(m.wcss, scatter, epsilon = 1e-9);
    }

    #[test]
    fn kmeans_two_pairs_find_midpoints() {
        let x = array![[0.0, 0.0], [0.0, 2.0], [10.0, 0.0], [10.0, 2.0]];
        let m = kmeans_fit(&x.view(), 2, 5, 100, 7).unwrap();
        let mut cs = m.centroids.clone();
        cs.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_abs_diff_eq!(cs[0][0], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(cs[0][1], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(cs[1][0], 10.0, epsilon = 1e-9);
        assert_abs_diff_eq!(cs[1][1], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn kmeans_is_deterministic_and_wcss_consistent() {
        let mut rng = crate::rng::named_stream(5, "cluster-test");
        let mut x = Array2::zeros((40, 3));
        for i in 0..40 {
            for j in 0..3 {
                x[(i, j)] = rng.random::<f64>() * 10.0 + if i % 4 == 0 { 20.0 } else { 0.0 };
            }
        }
        let a = kmeans_fit(&x.view(), 4, 10, 200, 11).unwrap();
        let b = kmeans_fit(&x.view(), 4, 10, 200, 11).unwrap();
        assert_eq!(a.centroids, b.centroids);
        let recomputed = compute_wcss(&x.view(), &a.centroids);
        assert!((a.wcss - recomputed).abs() <= 1e-6 * recomputed.max(1.0));
    }

    #[test]
    fn kmeans_rejects_bad_k() {
        let x = array![[0.0, 0.0], [1.0, 1.0]];
        assert!(kmeans_fit(&x.view(), 0, 1, 10, 1).is_err());
        assert!(kmeans_fit(&x.view(), 3, 1, 10, 1).is_err());
    }

    #[test]
    fn wcss_curve_is_non_increasing_and_hits_zero_at_n() {
        let mut rng = crate::rng::named_stream(9, "cluster-test");
        let mut x = Array2::zeros((24, 2));
        for i in 0..24 {
            let blob = (i % 3) as f64 * 15.0;
            x[(i, 0)] = blob + rng.random::<f64>();
            x[(i, 1)] = blob + rng.random::<f64>();
        }
        let ks: Vec<usize> = (2..=6).collect();
        let curve = wcss_curve(&x.view(), &ks, 10, 200, 3).unwrap();
        assert_eq!(curve.len(), 5);
        for w in curve.windows(2) {
            assert!(w[1].1 <= w[0].1 + 1e-9, "curve rose: {:?}", curve);
        }
        let full = wcss_curve(&x.view(), &[24], 5, 200, 3).unwrap();
        assert_abs_diff_eq!(full[0].1, 0.0, epsilon = 1e-9);

        let single = wcss_curve(&x.view(), &[1], 1, 200, 3).unwrap();
        let mean: Vec<f64> = (0..2).map(|j| x.column(j).mean().unwrap()).collect();
        let scatter: f64 = (0..24)
            .map(|i| squared_distance(&row(&x.view(), i), &mean))
            .sum();
        assert_abs_diff_eq!(single[0].1, scatter, epsilon = 1e-9);

        assert!(wcss_curve(&x.view(), &[], 1, 10, 3).is_err());
    }

    #[test]
    fn silhouette_separated_blobs_score_high() {
        let x = array![
            [0.0, 0.0],
            [0.1, 0.0],
            [0.0, 0.1],
            [50.0, 50.0],
            [50.1, 50.0],
            [50.0, 50.1]
        ];
        let s = silhouette(&x.view(), &[0, 0, 0, 1, 1, 1]).unwrap();
        assert!(s > 0.9, "s = {s}");
    }

    #[test]
    fn silhouette_random_labels_near_zero() {
        for seed in 0..10u64 {
            let mut rng = crate::rng::named_stream(seed, "silhouette-null");
            let n = 40;
            let mut x = Array2::zeros((n, 2));
            for i in 0..n {
                for j in 0..2 {
                    x[(i, j)] = rng.random::<f64>();
                }
            }
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
            if labels.iter().all(|&l| l == labels[0]) {
                continue;
            }
            let s = silhouette(&x.view(), &labels).unwrap();
            assert!(s.abs() < 0.2, "seed {seed}: s = {s}");
        }
    }

    #[test]
    fn silhouette_conventions_and_errors() {
        let x = array![[0.0, 0.0], [1.0, 0.0]];
        // Two singleton clusters -> both points contribute 0.
        assert_eq!(silhouette(&x.view(), &[0, 1]).unwrap(), 0.0);
        // A single cluster is an error.
        assert!(silhouette(&x.view(), &[0, 0]).is_err());
        assert!(silhouette(&x.view(), &[0]).is_err());
    }

    #[test]
    fn novelty_score_analytic_and_brute_force() {
        let model = KMeansModel {
            centroids: vec![vec![0.0, 0.0], vec![3.0, 4.0]],
            k: 2,
            wcss: 0.0,
            n_init: 1,
            seed: 0,
        };
        assert_eq!(novelty_score(&[0.0, 0.0], &model), 0.0);
        assert_abs_diff_eq!(novelty_score(&[3.0, 0.0], &model), 3.0, epsilon = 1e-12);

        let mut rng = crate::rng::named_stream(2, "novelty-brute");
        for _ in 0..50 {
            let x = [rng.random::<f64>() * 8.0, rng.random::<f64>() * 8.0];
            let brute = model
                .centroids
                .iter()
                .map(|c| euclidean(c, &x))
                .fold(f64::INFINITY, f64::min);
            assert_abs_diff_eq!(novelty_score(&x, &model), brute, epsilon = 1e-12);
        }
    }

    #[test]
    fn percentile_linear_oracles() {
        let values: Vec<f64> = (1..=20).map(|v| v as f64).collect();
        assert_abs_diff_eq!(percentile_linear(&values, 95.0).unwrap(), 19.05, epsilon = 1e-12);
        assert_eq!(percentile_linear(&[4.0, 4.0, 4.0], 95.0).unwrap(), 4.0);
        assert_eq!(percentile_linear(&[3.0, 1.0], 0.0).unwrap(), 1.0);
        assert_eq!(percentile_linear(&[3.0, 1.0], 100.0).unwrap(), 3.0);
        assert!(percentile_linear(&[], 95.0).is_err());
        assert!(percentile_linear(&[1.0], 101.0).is_err());
    }

    #[test]
    fn threshold_and_outlier_rule() {
        let model = KMeansModel {
            centroids: vec![vec![0.0, 0.0]],
            k: 1,
            wcss: 0.0,
            n_init: 1,
            seed: 0,
        };
        // All calibration points at distance 2 -> tau = 2.
        let existing = array![[2.0, 0.0], [0.0, 2.0], [-2.0, 0.0], [0.0, -2.0]];
        let thr = novelty_threshold(&existing.view(), &model).unwrap();
        assert_abs_diff_eq!(thr.tau, 2.0, epsilon = 1e-12);
        assert_eq!(thr.percentile, 95.0);
        assert_eq!(thr.source_distances.len(), 4);
        assert!(!is_outlier(&[2.0, 0.0], &model, &thr)); // score == tau: inlier
        assert!(!is_outlier(&[1.0, 0.0], &model, &thr)); // monotone below
        assert!(is_outlier(&[2.1, 0.0], &model, &thr));
    }

    #[test]
    fn pca_line_data_and_mean_projection() {
        // Points on the line y = 2x: one direction carries all variance.
        let x = array![[0.0, 0.0], [1.0, 2.0], [2.0, 4.0], [3.0, 6.0]];
        let m = pca_fit(&x.view(), 2).unwrap();
        assert_abs_diff_eq!(m.explained_variance_ratio[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(m.explained_variance_ratio[1], 0.0, epsilon = 1e-9);
        assert!(m.explained_variance_ratio[0] >= m.explained_variance_ratio[1]);

        // Projection of the mean point is the origin.
        let mean = array![[1.5, 3.0]];
        let proj = pca_project(&m, &mean.view()).unwrap();
        assert_abs_diff_eq!(proj[(0, 0)], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(proj[(0, 1)], 0.0, epsilon = 1e-9);

        // Sign convention: dominant entry of each axis is positive.
        for axis in &m.components {
            let arg = axis
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .unwrap()
                .0;
            assert!(axis[arg] > 0.0);
        }
    }

    #[test]
    fn pca_components_orthonormal_and_rank2_reconstruction() {
        // Build rank-2 data in 4 dimensions from two fixed basis vectors.
        let b1 = [1.0, 0.5, -0.25, 2.0];
        let b2 = [0.0, 1.0, 1.5, -0.5];
        let mut rng = crate::rng::named_stream(3, "pca-rank2");
        let mut x = Array2::zeros((30, 4));
        for i in 0..30 {
            let (u, v) = (rng.random::<f64>() * 4.0, rng.random::<f64>() * 4.0);
            for j in 0..4 {
                x[(i, j)] = u * b1[j] + v * b2[j];
            }
        }
        let m = pca_fit(&x.view(), 2).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                let dot: f64 = m.components[a].iter().zip(&m.components[b]).map(|(p, q)| p * q).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(dot, want, epsilon = 1e-9);
            }
        }
        // Reconstruction from 2 components is exact on rank-2 data.
        let proj = pca_project(&m, &x.view()).unwrap();
        for i in 0..30 {
            for j in 0..4 {
                let recon = m.mean[j]
                    + proj[(i, 0)] * m.components[0][j]
                    + proj[(i, 1)] * m.components[1][j];
                assert_abs_diff_eq!(recon, x[(i, j)], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn pca_rejects_degenerate_inputs() {
        let constant = array![[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]];
        assert!(pca_fit(&constant.view(), 2).is_err());
        let single = array![[1.0, 2.0]];
        assert!(pca_fit(&single.view(), 1).is_err());
        let x = array![[0.0, 1.0], [1.0, 0.0]];
        assert!(pca_fit(&x.view(), 3).is_err());
    }

    #[test]
    fn models_roundtrip_through_json() {
        let x = array![[0.0, 0.0], [0.0, 2.0], [10.0, 0.0], [10.0, 2.0]];
        let m = kmeans_fit(&x.view(), 2, 3, 100, 5).unwrap();
        let restored = KMeansModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(m.centroids, restored.centroids);
        assert_eq!(m.k, restored.k);

        let p = pca_fit(&x.view(), 2).unwrap();
        let restored = PcaModel::from_json(&p.to_json().unwrap()).unwrap();
        assert_eq!(p.components, restored.components);
        assert_eq!(p.mean, restored.mean);
    }
}
