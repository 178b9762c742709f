//! Scaling and dataset partitioning: min-max / z-score scalers, level-based
//! splits, stratified random splits, and stratified k-fold plans.
//!
//! Scalers are fitted on the training partition only and never refit during
//! `transform`. Stratified allocation uses largest-remainder rounding per
//! class (ties broken by class index), which keeps every per-class count
//! within one sample of the ideal fraction.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::named_stream;

/// Normalization family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalerKind {
    /// Map each feature's fit-range onto `[0, 1]`.
    MinMax,
    /// Map each feature to zero mean and unit variance
    /// (population standard deviation).
    ZScore,
}

/// Per-feature fitted parameters: `(min, max)` for min-max,
/// `(mean, std)` for z-score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureParams {
    pub a: f64,
    pub b: f64,
}

/// A fitted, persistable scaler. `transform` never refits; serialization
/// round-trips to bit-identical parameters (JSON floats use
/// shortest-roundtrip encoding).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedScaler {
    pub kind: ScalerKind,
    pub params: Vec<FeatureParams>,
}

impl FittedScaler {
    /// Fits scaling parameters on `x` (the training partition).
    pub fn fit(x: &ArrayView2<f64>, kind: ScalerKind) -> Result<FittedScaler> {
        let (n, d) = x.dim();
        if n == 0 || d == 0 {
            return Err(Error::Data("cannot fit scaler on empty matrix".into()));
        }
        let mut params = Vec::with_capacity(d);
        for j in 0..d {
            let col = x.column(j);
            match kind {
                ScalerKind::MinMax => {
                    let mut lo = f64::INFINITY;
                    let mut hi = f64::NEG_INFINITY;
                    for &v in col {
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                    params.push(FeatureParams { a: lo, b: hi });
                }
                ScalerKind::ZScore => {
                    let mean = col.sum() / n as f64;
                    let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
                    params.push(FeatureParams {
                        a: mean,
                        b: var.sqrt(),
                    });
                }
            }
        }
        Ok(FittedScaler { kind, params })
    }

    /// Applies the fitted parameters to `x`. Constant features (zero range
    /// or zero standard deviation at fit time) map to 0.
    pub fn transform(&self, x: &ArrayView2<f64>) -> Result<Array2<f64>> {
        let (n, d) = x.dim();
        if d != self.params.len() {
            return Err(Error::Data(format!(
                "scaler fitted on {} features, input has {d}",
                self.params.len()
            )));
        }
        let mut out = Array2::zeros((n, d));
        for j in 0..d {
            let p = &self.params[j];
            for i in 0..n {
                let v = x[[i, j]];
                out[[i, j]] = match self.kind {
                    ScalerKind::MinMax => {
                        let range = p.b - p.a;
                        if range == 0.0 {
                            0.0
                        } else {
                            (v - p.a) / range
                        }
                    }
                    ScalerKind::ZScore => {
                        if p.b == 0.0 {
                            0.0
                        } else {
                            (v - p.a) / p.b
                        }
                    }
                };
            }
        }
        Ok(out)
    }

    /// Fit on `x` and transform it in one step.
    pub fn fit_transform(
        x: &ArrayView2<f64>,
        kind: ScalerKind,
    ) -> Result<(FittedScaler, Array2<f64>)> {
        let scaler = FittedScaler::fit(x, kind)?;
        let t = scaler.transform(x)?;
        Ok((scaler, t))
    }
}

/// A train/test partition as index lists into a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    /// Provenance string, e.g. `"levels {1,2} vs {3}"`.
    pub description: String,
    /// Records belonging to neither side (level splits only).
    pub n_excluded: usize,
}

impl SplitPlan {
    /// Checks disjointness and bounds against a dataset of size `n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &i in self.train_indices.iter().chain(&self.test_indices) {
            if i >= n {
                return Err(Error::Data(format!("split index {i} out of bounds ({n})")));
            }
            if seen[i] {
                return Err(Error::Data(format!("split index {i} appears twice")));
            }
            seen[i] = true;
        }
        Ok(())
    }
}

/// Partitions records by `game_level` membership: training levels vs test
/// levels (e.g. `{1,2}` vs `{3}`). Records in neither set are excluded and
/// counted.
pub fn split_by_level(
    dataset: &Dataset,
    train_levels: &[u8],
    test_levels: &[u8],
) -> Result<SplitPlan> {
    if train_levels.iter().any(|l| test_levels.contains(l)) {
        return Err(Error::Config(
            "train_levels and test_levels overlap".into(),
        ));
    }
    let mut train_indices = Vec::new();
    let mut test_indices = Vec::new();
    let mut n_excluded = 0usize;
    for (i, rec) in dataset.records().iter().enumerate() {
        if train_levels.contains(&rec.game_level) {
            train_indices.push(i);
        } else if test_levels.contains(&rec.game_level) {
            test_indices.push(i);
        } else {
            n_excluded += 1;
        }
    }
    if train_indices.is_empty() {
        return Err(Error::Data(format!(
            "no records in train levels {train_levels:?}"
        )));
    }
    if test_indices.is_empty() {
        return Err(Error::Data(format!(
            "no records in test levels {test_levels:?}"
        )));
    }
    Ok(SplitPlan {
        train_indices,
        test_indices,
        description: format!("levels {train_levels:?} vs {test_levels:?}"),
        n_excluded,
    })
}

/// Groups indices by class label, classes in ascending label order.
fn group_by_class(labels: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in labels.iter().enumerate() {
        groups.entry(c).or_default().push(i);
    }
    groups
}

/// Stratified random train/test split: per-class train share within ±1
/// sample of `train_frac` via largest-remainder allocation, deterministic
/// for a fixed seed. Every class needs at least 2 samples so both sides
/// stay populated.
pub fn random_stratified_split(
    labels: &[usize],
    train_frac: f64,
    seed: u64,
) -> Result<SplitPlan> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::Config(format!(
            "train_frac must be in (0,1), got {train_frac}"
        )));
    }
    if labels.is_empty() {
        return Err(Error::Data("cannot split empty label vector".into()));
    }
    let groups = group_by_class(labels);
    for (c, idx) in &groups {
        if idx.len() < 2 {
            return Err(Error::Data(format!(
                "class {c} has {} sample(s); need ≥ 2 for a stratified split",
                idx.len()
            )));
        }
    }

    // Largest-remainder allocation of the total train count across classes.
    let n = labels.len() as f64;
    let total_train = (train_frac * n).round() as usize;
    let classes: Vec<usize> = groups.keys().copied().collect();
    let mut base: Vec<usize> = Vec::with_capacity(classes.len());
    let mut remainders: Vec<(usize, f64)> = Vec::with_capacity(classes.len());
    for (pos, c) in classes.iter().enumerate() {
        let ideal = train_frac * groups[c].len() as f64;
        base.push(ideal.floor() as usize);
        remainders.push((pos, ideal - ideal.floor()));
    }
    let mut leftover = total_train.saturating_sub(base.iter().sum::<usize>());
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for (pos, _) in remainders {
        if leftover == 0 {
            break;
        }
        base[pos] += 1;
        leftover -= 1;
    }

    let mut rng = named_stream(seed, "stratified-split");
    let mut train_indices = Vec::new();
    let mut test_indices = Vec::new();
    for (pos, c) in classes.iter().enumerate() {
        let mut idx = groups[c].clone();
        idx.shuffle(&mut rng);
        // Clamp into [1, n_c - 1] so both sides keep every class.
        let take = base[pos].clamp(1, idx.len() - 1);
        train_indices.extend_from_slice(&idx[..take]);
        test_indices.extend_from_slice(&idx[take..]);
    }
    train_indices.sort_unstable();
    test_indices.sort_unstable();
    Ok(SplitPlan {
        train_indices,
        test_indices,
        description: format!("stratified random split, train_frac {train_frac}"),
        n_excluded: 0,
    })
}

/// K disjoint, covering, class-stratified folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Vec<usize>>,
}

impl FoldPlan {
    /// Number of folds.
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    /// Train/validation index lists where fold `i` is the validation side.
    pub fn train_test(&self, i: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        if i >= self.folds.len() {
            return Err(Error::Config(format!(
                "fold {i} out of range ({} folds)",
                self.folds.len()
            )));
        }
        let test = self.folds[i].clone();
        let mut train = Vec::new();
        for (j, fold) in self.folds.iter().enumerate() {
            if j != i {
                train.extend_from_slice(fold);
            }
        }
        train.sort_unstable();
        Ok((train, test))
    }

    /// Checks the fold invariants: pairwise disjoint and covering `0..n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        let mut count = 0usize;
        for fold in &self.folds {
            for &i in fold {
                if i >= n {
                    return Err(Error::Data(format!("fold index {i} out of bounds ({n})")));
                }
                if seen[i] {
                    return Err(Error::Data(format!("fold index {i} appears twice")));
                }
                seen[i] = true;
                count += 1;
            }
        }
        if count != n {
            return Err(Error::Data(format!(
                "folds cover {count} of {n} indices"
            )));
        }
        Ok(())
    }
}

/// Stratified k-fold plan: shuffled per-class round-robin dealing with a
/// rolling fold cursor, so per-fold class counts deviate by at most one
/// sample. Deterministic for a fixed seed.
pub fn stratified_kfold(labels: &[usize], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config(format!("k must be ≥ 2, got {k}")));
    }
    let groups = group_by_class(labels);
    for (c, idx) in &groups {
        if idx.len() < k {
            return Err(Error::Data(format!(
                "class {c} has {} sample(s); need ≥ k = {k}",
                idx.len()
            )));
        }
    }
    let mut rng = named_stream(seed, "stratified-kfold");
    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut cursor = 0usize;
    for idx in groups.values() {
        let mut idx = idx.clone();
        idx.shuffle(&mut rng);
        for i in idx {
            folds[cursor].push(i);
            cursor = (cursor + 1) % k;
        }
    }
    for fold in folds.iter_mut() {
        fold.sort_unstable();
    }
    Ok(FoldPlan { folds })
}
