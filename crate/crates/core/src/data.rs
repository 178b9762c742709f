//! Dataset model, CSV ingestion/cleaning, and seeded synthetic generation.
//!
//! A [`GazeRecord`] is one eye-tracking sample: screen gaze coordinates,
//! pupil diameters, head position, plus the session labels (game level,
//! diagnosis, student id). The seven physiological columns — and only those —
//! form the model feature vector; `student_id` and `game_level` are labels
//! and partition keys, never features (using them as features would leak the
//! prediction target).
//!
//! [`generate_synthetic`] builds seeded datasets where each student draws
//! features from a student-specific Gaussian. `signature_separation` controls
//! how far apart the per-student means sit (in pooled-standard-deviation
//! units per feature), `level_drift` shifts the means at higher game levels
//! to model task-difficulty distribution shift. Separation 0 makes students
//! statistically indistinguishable; separation ≥ 4 makes a 1-NN attack on
//! student identity essentially perfect — the regime the re-identification
//! scenarios operate in.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::named_stream;

/// The fixed model feature order. Every feature matrix in the crate is
/// `N × 7` over exactly these columns.
pub const FEATURE_NAMES: [&str; 7] = [
    "gaze_x",
    "gaze_y",
    "left_pupil_dia",
    "right_pupil_dia",
    "head_x",
    "head_y",
    "head_z",
];

/// Number of model features.
pub const N_FEATURES: usize = FEATURE_NAMES.len();

/// JSON codec for maps keyed by student id. JSON object keys are strings;
/// converting explicitly (rather than relying on serde_json's implicit
/// integer-key handling) keeps the map usable inside internally-tagged
/// enums, whose buffered deserializer lacks that conversion.
mod id_key_map {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(
        map: &BTreeMap<u32, String>,
        s: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        s.collect_map(map.iter().map(|(k, v)| (k.to_string(), v)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<BTreeMap<u32, String>, D::Error> {
        let raw = BTreeMap::<String, String>::deserialize(d)?;
        raw.into_iter()
            .map(|(k, v)| {
                k.parse::<u32>()
                    .map(|k| (k, v))
                    .map_err(|_| serde::de::Error::custom(format!("student id key '{k}' is not an integer")))
            })
            .collect()
    }
}

/// One eye-tracking sample with its labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GazeRecord {
    /// Milliseconds since session start.
    pub timestamp: u64,
    /// Gaze screen coordinate, pixels.
    pub gaze_x: f64,
    /// Gaze screen coordinate, pixels.
    pub gaze_y: f64,
    /// Left pupil diameter, millimeters (strictly positive).
    pub left_pupil_dia: f64,
    /// Right pupil diameter, millimeters (strictly positive).
    pub right_pupil_dia: f64,
    /// Head position, millimeters.
    pub head_x: f64,
    /// Head position, millimeters.
    pub head_y: f64,
    /// Head position, millimeters.
    pub head_z: f64,
    /// Game difficulty level, in `{1, 2, 3}`.
    pub game_level: u8,
    /// Diagnosis label (e.g. `"MDI"`, `"DD"`).
    pub diagnosis: String,
    /// Student identifier, `≥ 1`.
    pub student_id: u32,
}

impl GazeRecord {
    /// The record's feature vector in the fixed [`FEATURE_NAMES`] order.
    pub fn features(&self) -> [f64; N_FEATURES] {
        [
            self.gaze_x,
            self.gaze_y,
            self.left_pupil_dia,
            self.right_pupil_dia,
            self.head_x,
            self.head_y,
            self.head_z,
        ]
    }

    /// Whether the record satisfies the domain invariants: level in
    /// `{1,2,3}`, strictly positive pupil diameters, student id ≥ 1,
    /// all features finite.
    pub fn is_valid(&self) -> bool {
        (1..=3).contains(&self.game_level)
            && self.left_pupil_dia > 0.0
            && self.right_pupil_dia > 0.0
            && self.student_id >= 1
            && !self.diagnosis.is_empty()
            && self.features().iter().all(|v| v.is_finite())
    }

    /// Hashable identity of the full row (bit-exact floats), used for
    /// duplicate dropping.
    fn dedup_key(&self) -> (u64, [u64; N_FEATURES], u8, String, u32) {
        (
            self.timestamp,
            self.features().map(f64::to_bits),
            self.game_level,
            self.diagnosis.clone(),
            self.student_id,
        )
    }
}

/// Maps the logical columns onto CSV header names. Defaults are the
/// canonical names; override fields to ingest files with different headers.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnSchema {
    pub timestamp: String,
    pub gaze_x: String,
    pub gaze_y: String,
    pub left_pupil_dia: String,
    pub right_pupil_dia: String,
    pub head_x: String,
    pub head_y: String,
    pub head_z: String,
    pub game_level: String,
    pub diagnosis: String,
    pub student_id: String,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        ColumnSchema {
            timestamp: "timestamp".into(),
            gaze_x: "gaze_x".into(),
            gaze_y: "gaze_y".into(),
            left_pupil_dia: "left_pupil_dia".into(),
            right_pupil_dia: "right_pupil_dia".into(),
            head_x: "head_x".into(),
            head_y: "head_y".into(),
            head_z: "head_z".into(),
            game_level: "game_level".into(),
            diagnosis: "diagnosis".into(),
            student_id: "student_id".into(),
        }
    }
}

impl ColumnSchema {
    /// Column names in serialization order.
    fn ordered(&self) -> [&str; 11] {
        [
            &self.timestamp,
            &self.gaze_x,
            &self.gaze_y,
            &self.left_pupil_dia,
            &self.right_pupil_dia,
            &self.head_x,
            &self.head_y,
            &self.head_z,
            &self.game_level,
            &self.diagnosis,
            &self.student_id,
        ]
    }
}

/// A cleaned, ordered collection of [`GazeRecord`]s. Immutable after
/// construction; shareable across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<GazeRecord>,
}

/// Result of [`load_dataset`]: the cleaned data plus drop counts.
#[derive(Debug)]
pub struct LoadReport {
    pub dataset: Dataset,
    /// Rows dropped because a required field was missing, non-parsable, or
    /// violated a domain invariant.
    pub dropped_invalid: usize,
    /// Rows dropped because they duplicated an earlier row exactly.
    pub dropped_duplicates: usize,
}

impl Dataset {
    /// Wraps records into a dataset. Errors on an empty collection or any
    /// invariant-violating record (use [`load_dataset`] for lenient
    /// drop-and-count ingestion).
    pub fn new(records: Vec<GazeRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Data("dataset has no records".into()));
        }
        if let Some(i) = records.iter().position(|r| !r.is_valid()) {
            return Err(Error::Data(format!(
                "record {i} violates domain invariants"
            )));
        }
        Ok(Dataset { records })
    }

    pub fn records(&self) -> &[GazeRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// The `N × 7` feature matrix in [`FEATURE_NAMES`] order.
    pub fn feature_matrix(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.len(), N_FEATURES));
        for (i, rec) in self.records.iter().enumerate() {
            for (j, v) in rec.features().into_iter().enumerate() {
                m[[i, j]] = v;
            }
        }
        m
    }

    pub fn student_ids(&self) -> Vec<u32> {
        self.records.iter().map(|r| r.student_id).collect()
    }

    pub fn game_levels(&self) -> Vec<u8> {
        self.records.iter().map(|r| r.game_level).collect()
    }

    pub fn diagnoses(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.diagnosis.as_str()).collect()
    }

    /// Distinct student ids, ascending.
    pub fn distinct_student_ids(&self) -> Vec<u32> {
        let set: BTreeSet<u32> = self.records.iter().map(|r| r.student_id).collect();
        set.into_iter().collect()
    }

    /// Distinct game levels, ascending.
    pub fn distinct_levels(&self) -> Vec<u8> {
        let set: BTreeSet<u8> = self.records.iter().map(|r| r.game_level).collect();
        set.into_iter().collect()
    }

    /// New dataset holding the records at `indices` (in the given order).
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let mut records = Vec::with_capacity(indices.len());
        for &i in indices {
            let rec = self
                .records
                .get(i)
                .ok_or_else(|| Error::Data(format!("subset index {i} out of bounds")))?;
            records.push(rec.clone());
        }
        Dataset::new(records)
    }

    /// Serializes to CSV text using `schema` header names. Floats use
    /// shortest-roundtrip formatting, so load → serialize → load is
    /// bit-identical.
    pub fn to_csv_string(&self, schema: &ColumnSchema) -> String {
        let mut out = String::new();
        out.push_str(&schema.ordered().join(","));
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.timestamp,
                r.gaze_x,
                r.gaze_y,
                r.left_pupil_dia,
                r.right_pupil_dia,
                r.head_x,
                r.head_y,
                r.head_z,
                r.game_level,
                r.diagnosis,
                r.student_id
            );
        }
        out
    }

    /// Writes the dataset as CSV (atomically: temp file + rename).
    pub fn write_csv(&self, path: &Path, schema: &ColumnSchema) -> Result<()> {
        crate::report::write_atomic(path, self.to_csv_string(schema).as_bytes())
    }
}

/// Loads and cleans a CSV gaze dataset.
///
/// Rows with a missing/non-parsable required field or an invariant violation
/// are dropped and counted; exact duplicates (all eleven columns bit-equal)
/// of an earlier surviving row are dropped and counted separately. Errors if
/// the file is unreadable, the header lacks a mapped column, or zero rows
/// survive cleaning.
pub fn load_dataset(path: &Path, schema: &ColumnSchema) -> Result<LoadReport> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::Data(format!("cannot open CSV {}: {e}", path.display())))?;

    let headers = reader
        .headers()
        .map_err(|e| Error::Data(format!("cannot read CSV header: {e}")))?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("header is missing mapped column '{name}'")))
    };
    let idx_timestamp = col(&schema.timestamp)?;
    let idx_features = [
        col(&schema.gaze_x)?,
        col(&schema.gaze_y)?,
        col(&schema.left_pupil_dia)?,
        col(&schema.right_pupil_dia)?,
        col(&schema.head_x)?,
        col(&schema.head_y)?,
        col(&schema.head_z)?,
    ];
    let idx_level = col(&schema.game_level)?;
    let idx_diagnosis = col(&schema.diagnosis)?;
    let idx_student = col(&schema.student_id)?;

    let mut records = Vec::new();
    let mut dropped_invalid = 0usize;
    let mut dropped_duplicates = 0usize;
    let mut seen = HashSet::new();

    for row in reader.records() {
        let row = match row {
            Ok(r) => r,
            Err(_) => {
                dropped_invalid += 1;
                continue;
            }
        };
        let field = |i: usize| row.get(i).map(str::trim).filter(|s| !s.is_empty());
        let parsed = (|| -> Option<GazeRecord> {
            let mut feats = [0f64; N_FEATURES];
            for (slot, &i) in feats.iter_mut().zip(&idx_features) {
                *slot = field(i)?.parse().ok()?;
            }
            Some(GazeRecord {
                timestamp: field(idx_timestamp)?.parse().ok()?,
                gaze_x: feats[0],
                gaze_y: feats[1],
                left_pupil_dia: feats[2],
                right_pupil_dia: feats[3],
                head_x: feats[4],
                head_y: feats[5],
                head_z: feats[6],
                game_level: field(idx_level)?.parse().ok()?,
                diagnosis: field(idx_diagnosis)?.to_string(),
                student_id: field(idx_student)?.parse().ok()?,
            })
        })();
        match parsed {
            Some(rec) if rec.is_valid() => {
                if seen.insert(rec.dedup_key()) {
                    records.push(rec);
                } else {
                    dropped_duplicates += 1;
                }
            }
            _ => dropped_invalid += 1,
        }
    }

    if records.is_empty() {
        return Err(Error::Data(format!(
            "no rows survived cleaning in {}",
            path.display()
        )));
    }
    Ok(LoadReport {
        dataset: Dataset { records },
        dropped_invalid,
        dropped_duplicates,
    })
}

/// Configuration for [`generate_synthetic`].
///
/// `signature_separation` is the per-feature effect size between student
/// means: the generator places the means so that the *minimum pairwise
/// Euclidean distance* equals `signature_separation · √7` with unit noise
/// variance per feature — i.e. every pair of students differs by at least
/// `signature_separation` pooled standard deviations per feature on average.
/// `level_drift` adds `level_drift · (level − 1)` pooled standard deviations
/// per feature to every mean, modeling distribution shift across game
/// difficulty levels.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    /// Number of students `S`; ids are `1..=S`.
    pub n_students: u32,
    /// Game levels to generate, each in `{1,2,3}`.
    pub levels: Vec<u8>,
    /// Records per (student, level) cell.
    pub records_per_student_per_level: usize,
    /// Per-feature effect size between student signature means (≥ 0).
    pub signature_separation: f64,
    /// Per-feature mean shift per level step (≥ 0).
    pub level_drift: f64,
    /// Diagnosis label per student id; must cover exactly `1..=n_students`.
    #[serde(with = "id_key_map")]
    pub diagnosis_assignment: BTreeMap<u32, String>,
    /// Top-level RNG seed.
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        let mut diagnosis_assignment = BTreeMap::new();
        for s in 1..=9u32 {
            let label = if s <= 5 { "MDI" } else { "DD" };
            diagnosis_assignment.insert(s, label.to_string());
        }
        SyntheticConfig {
            n_students: 9,
            levels: vec![1, 2, 3],
            records_per_student_per_level: 100,
            signature_separation: 4.0,
            level_drift: 2.0,
            diagnosis_assignment,
            seed: 42,
        }
    }
}

impl SyntheticConfig {
    /// Validates field ranges and the diagnosis assignment domain.
    pub fn validate(&self) -> Result<()> {
        if self.n_students < 1 {
            return Err(Error::Config("n_students must be ≥ 1".into()));
        }
        if self.levels.is_empty() {
            return Err(Error::Config("levels must be non-empty".into()));
        }
        let distinct: BTreeSet<u8> = self.levels.iter().copied().collect();
        if distinct.len() != self.levels.len() {
            return Err(Error::Config("levels must be distinct".into()));
        }
        if let Some(l) = self.levels.iter().find(|l| !(1..=3).contains(*l)) {
            return Err(Error::Config(format!("level {l} outside {{1,2,3}}")));
        }
        if self.records_per_student_per_level == 0 {
            return Err(Error::Config(
                "records_per_student_per_level must be ≥ 1".into(),
            ));
        }
        if !(self.signature_separation.is_finite() && self.signature_separation >= 0.0) {
            return Err(Error::Config("signature_separation must be ≥ 0".into()));
        }
        if !(self.level_drift.is_finite() && self.level_drift >= 0.0) {
            return Err(Error::Config("level_drift must be ≥ 0".into()));
        }
        for s in 1..=self.n_students {
            if !self.diagnosis_assignment.contains_key(&s) {
                return Err(Error::Config(format!(
                    "diagnosis_assignment is missing student {s}"
                )));
            }
        }
        if let Some(extra) = self
            .diagnosis_assignment
            .keys()
            .find(|s| **s < 1 || **s > self.n_students)
        {
            return Err(Error::Config(format!(
                "diagnosis_assignment references unknown student {extra}"
            )));
        }
        if self.diagnosis_assignment.values().any(|d| d.is_empty()) {
            return Err(Error::Config("diagnosis labels must be non-empty".into()));
        }
        Ok(())
    }
}

/// Generates a seeded synthetic gaze dataset; a pure function of the config.
///
/// Each student's signature mean is a scaled standard-normal draw: the draws
/// are rescaled so the minimum pairwise distance between means equals
/// `signature_separation · √7`, then per-record features add unit Gaussian
/// noise. With `signature_separation = 0` all means collapse to the origin
/// and students are statistically indistinguishable.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Dataset> {
    config.validate()?;
    let s_count = config.n_students as usize;
    let mut rng = named_stream(config.seed, "synthetic");

    // Deterministic mean placement from the seed.
    let mut raw_means = vec![[0f64; N_FEATURES]; s_count];
    for mean in raw_means.iter_mut() {
        for slot in mean.iter_mut() {
            *slot = rng.sample(StandardNormal);
        }
    }
    let means: Vec<[f64; N_FEATURES]> = if config.signature_separation > 0.0 && s_count >= 2 {
        let mut min_dist = f64::INFINITY;
        for i in 0..s_count {
            for j in (i + 1)..s_count {
                let d2: f64 = (0..N_FEATURES)
                    .map(|k| (raw_means[i][k] - raw_means[j][k]).powi(2))
                    .sum();
                min_dist = min_dist.min(d2.sqrt());
            }
        }
        if min_dist <= f64::EPSILON {
            return Err(Error::Data(
                "degenerate mean placement (coincident draws); use another seed".into(),
            ));
        }
        let scale = config.signature_separation * (N_FEATURES as f64).sqrt() / min_dist;
        raw_means
            .iter()
            .map(|m| m.map(|v| v * scale))
            .collect()
    } else {
        vec![[0f64; N_FEATURES]; s_count]
    };

    let mut levels = config.levels.clone();
    levels.sort_unstable();

    // Pupil diameters must stay strictly positive. A per-dataset affine
    // offset (constant per column) preserves the signature geometry exactly —
    // downstream scalers are per-column affine-invariant — while pushing the
    // pupil columns ≥ 8 noise standard deviations above zero.
    let mut pupil_offset = 0f64;
    for mean in &means {
        for &level in &levels {
            let shift =
                config.level_drift * f64::from(level - 1) * (N_FEATURES as f64).sqrt();
            for j in [2usize, 3] {
                pupil_offset = pupil_offset.max(-(mean[j] + shift));
            }
        }
    }
    let pupil_offset = pupil_offset + 8.0;

    let mut records =
        Vec::with_capacity(s_count * levels.len() * config.records_per_student_per_level);
    let mut row_index = 0u64;
    for s in 1..=config.n_students {
        let mean = means[(s - 1) as usize];
        let diagnosis = &config.diagnosis_assignment[&s];
        for &level in &levels {
            let shift =
                config.level_drift * f64::from(level - 1) * (N_FEATURES as f64).sqrt();
            for _ in 0..config.records_per_student_per_level {
                let mut feats = [0f64; N_FEATURES];
                for (k, slot) in feats.iter_mut().enumerate() {
                    let noise: f64 = rng.sample(StandardNormal);
                    *slot = mean[k] + shift + noise;
                }
                // The clamp is a formal guarantee only: the offset places it
                // > 8 noise standard deviations away.
                let left_pupil = (feats[2] + pupil_offset).max(1e-3);
                let right_pupil = (feats[3] + pupil_offset).max(1e-3);
                records.push(GazeRecord {
                    timestamp: row_index * 20,
                    gaze_x: feats[0],
                    gaze_y: feats[1],
                    left_pupil_dia: left_pupil,
                    right_pupil_dia: right_pupil,
                    head_x: feats[4],
                    head_y: feats[5],
                    head_z: feats[6],
                    game_level: level,
                    diagnosis: diagnosis.clone(),
                    student_id: s,
                });
                row_index += 1;
            }
        }
    }
    Dataset::new(records)
}

/// Which label column to encode for supervised runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelTarget {
    Diagnosis,
    StudentId,
}

/// Bijective map between label strings and 0-based indices, ordered
/// lexicographically for determinism across runs and languages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    labels: Vec<String>,
}

impl LabelMap {
    /// Builds the map from an iterator of label strings (duplicates fine).
    pub fn from_labels<I: IntoIterator<Item = String>>(labels: I) -> Self {
        let set: BTreeSet<String> = labels.into_iter().collect();
        LabelMap {
            labels: set.into_iter().collect(),
        }
    }

    /// Number of distinct labels.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// All labels in index order.
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Index of `label`.
    pub fn encode(&self, label: &str) -> Result<usize> {
        self.labels
            .binary_search_by(|l| l.as_str().cmp(label))
            .map_err(|_| Error::Data(format!("label '{label}' not in label map")))
    }

    /// Label at `index`.
    pub fn decode(&self, index: usize) -> Result<&str> {
        self.labels
            .get(index)
            .map(String::as_str)
            .ok_or_else(|| Error::Data(format!("label index {index} outside map of size {}", self.labels.len())))
    }
}

/// Extracts the `N × 7` feature matrix and encodes the chosen label column.
/// `game_level` and `student_id` are never part of the feature matrix.
pub fn encode_labels(
    dataset: &Dataset,
    target: LabelTarget,
) -> Result<(Array2<f64>, Vec<usize>, LabelMap)> {
    if dataset.is_empty() {
        return Err(Error::Data("cannot encode labels of an empty dataset".into()));
    }
    let raw: Vec<String> = match target {
        LabelTarget::Diagnosis => dataset
            .records()
            .iter()
            .map(|r| r.diagnosis.clone())
            .collect(),
        LabelTarget::StudentId => dataset
            .records()
            .iter()
            .map(|r| r.student_id.to_string())
            .collect(),
    };
    let map = LabelMap::from_labels(raw.iter().cloned());
    let y = raw
        .iter()
        .map(|l| map.encode(l))
        .collect::<Result<Vec<_>>>()?;
    Ok((dataset.feature_matrix(), y, map))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_count_arithmetic() {
        let cfg = SyntheticConfig::default();
        let ds = generate_synthetic(&cfg).unwrap();
        assert_eq!(ds.len(), 9 * 3 * 100);
    }

    #[test]
    fn synthetic_is_deterministic() {
        let cfg = SyntheticConfig::default();
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(
            a.to_csv_string(&ColumnSchema::default()),
            b.to_csv_string(&ColumnSchema::default())
        );
    }

    #[test]
    fn synthetic_rejects_missing_diagnosis() {
        let mut cfg = SyntheticConfig::default();
        cfg.diagnosis_assignment.remove(&3);
        let err = generate_synthetic(&cfg).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "got {err}");
    }

    #[test]
    fn synthetic_zero_separation_collapses_means() {
        let cfg = SyntheticConfig {
            signature_separation: 0.0,
            level_drift: 0.0,
            ..SyntheticConfig::default()
        };
        let ds = generate_synthetic(&cfg).unwrap();
        // Per-student feature means should all be near the shared origin.
        let x = ds.feature_matrix();
        let ids = ds.student_ids();
        for s in 1..=9u32 {
            let rows: Vec<usize> = (0..ds.len()).filter(|&i| ids[i] == s).collect();
            let mean_x: f64 = rows.iter().map(|&i| x[[i, 0]]).sum::<f64>() / rows.len() as f64;
            assert!(mean_x.abs() < 0.5, "student {s} gaze_x mean {mean_x}");
        }
    }

    #[test]
    fn encode_labels_lexicographic_and_bijective() {
        let cfg = SyntheticConfig::default();
        let ds = generate_synthetic(&cfg).unwrap();
        let (_, _, map) = encode_labels(&ds, LabelTarget::Diagnosis).unwrap();
        assert_eq!(map.labels(), &["DD".to_string(), "MDI".to_string()]);
        assert_eq!(map.encode("DD").unwrap(), 0);
        assert_eq!(map.encode("MDI").unwrap(), 1);
        for (i, l) in map.labels().iter().enumerate() {
            assert_eq!(map.decode(map.encode(l).unwrap()).unwrap(), l);
            assert_eq!(map.encode(map.decode(i).unwrap()).unwrap(), i);
        }

        let (_, y, ids) = encode_labels(&ds, LabelTarget::StudentId).unwrap();
        assert_eq!(ids.len(), 9);
        assert!(y.iter().all(|&v| v < 9));
        assert!(ids.decode(9).is_err());
    }

    #[test]
    fn pupils_strictly_positive() {
        let cfg = SyntheticConfig {
            signature_separation: 8.0,
            ..SyntheticConfig::default()
        };
        let ds = generate_synthetic(&cfg).unwrap();
        assert!(ds
            .records()
            .iter()
            .all(|r| r.left_pupil_dia > 0.0 && r.right_pupil_dia > 0.0));
    }
}
