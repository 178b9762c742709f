//! Experiment orchestration: wires data, preprocessing, models, the
//! identity vault and federated training into the runnable commands.
//!
//! Each command writes its artifacts into `<out_dir>/<command>/` and is a
//! pure function of (config, dataset, seed) except for the `generated_at`
//! timestamp inside `provenance.json` and the vault store's issuance
//! timestamps.
//!
//! Phase-1 scenario artifacts demonstrate re-identification *attacks*, so
//! they legitimately contain true student ids. Phase-2 artifacts must not:
//! its provenance redacts the id-keyed diagnosis assignment, its labels are
//! vault dummies throughout, and a privacy audit over the whole phase-2
//! output directory is part of the command itself.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::cluster::{
    kmeans_fit, novelty_threshold, pca_fit, pca_project, silhouette, wcss_curve, KMeansModel,
    NoveltyThreshold,
};
use crate::config::{DatasetSource, ExperimentConfig, ScenarioParams};
use crate::data::{
    encode_labels, generate_synthetic, load_dataset, ColumnSchema, Dataset, LabelTarget,
    FEATURE_NAMES,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, cv_mean, EvalReport};
use crate::federated::{partition_clients, run_federated, RoundRecord};
use crate::id_assign::{
    cluster_assign, ensemble_assign, feature_hash_id, outlier_assign, sequential_assign,
    similarity_assign, AssignmentDecision, EnsembleContext,
};
use crate::iforest::isolation_forest_fit;
use crate::nn::build_model;
use crate::preprocess::{
    random_stratified_split, split_by_level, stratified_kfold, FittedScaler, ScalerKind,
    SplitPlan,
};
use crate::report::{audit_true_id_tokens, write_atomic, write_json};
use crate::rng::derive_seed;
use crate::trees::{fit_forest, fit_tree, predict_forest, predict_tree};
use crate::vault::Vault;

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

/// Counts-only description of the loaded dataset (safe for any provenance).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n_records: usize,
    pub n_students: usize,
    pub levels: Vec<u8>,
    pub n_diagnoses: usize,
    pub dropped_invalid: usize,
    pub dropped_duplicates: usize,
}

fn summarize(ds: &Dataset, dropped_invalid: usize, dropped_duplicates: usize) -> DatasetSummary {
    let diagnoses: BTreeSet<&str> = ds.diagnoses().into_iter().collect();
    DatasetSummary {
        n_records: ds.len(),
        n_students: ds.distinct_student_ids().len(),
        levels: ds.distinct_levels(),
        n_diagnoses: diagnoses.len(),
        dropped_invalid,
        dropped_duplicates,
    }
}

/// Loads the configured dataset (CSV) or generates it (synthetic).
pub fn load_data(config: &ExperimentConfig) -> Result<(Dataset, DatasetSummary)> {
    match &config.dataset {
        DatasetSource::Synthetic { config: sc } => {
            let ds = generate_synthetic(sc)?;
            let summary = summarize(&ds, 0, 0);
            Ok((ds, summary))
        }
        DatasetSource::Csv { path, schema } => {
            let report = load_dataset(path, schema)?;
            let summary = summarize(
                &report.dataset,
                report.dropped_invalid,
                report.dropped_duplicates,
            );
            Ok((report.dataset, summary))
        }
    }
}

fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Writes `provenance.json`: command, timestamp, seed, the resolved config
/// snapshot and a dataset summary. With `redact_ids` the id-keyed synthetic
/// diagnosis assignment is replaced by a marker so no true-id token appears.
fn write_provenance(
    dir: &Path,
    command: &str,
    config: &ExperimentConfig,
    summary: &DatasetSummary,
    redact_ids: bool,
) -> Result<PathBuf> {
    let mut snapshot = serde_json::to_value(config)
        .map_err(|e| Error::Data(format!("config serialization failed: {e}")))?;
    if redact_ids {
        if let Some(slot) = snapshot.pointer_mut("/dataset/config/diagnosis_assignment") {
            *slot = serde_json::Value::String("redacted".into());
        }
    }
    let value = serde_json::json!({
        "command": command,
        "generated_at_unix": now_unix(),
        "seed": config.seed,
        "config": snapshot,
        "dataset": summary,
    });
    let path = dir.join("provenance.json");
    write_json(&path, &value)?;
    Ok(path)
}

fn take_rows(x: &ArrayView2<f64>, idx: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((idx.len(), x.ncols()));
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).assign(&x.row(i));
    }
    out
}

fn take_labels(y: &[usize], idx: &[usize]) -> Vec<usize> {
    idx.iter().map(|&i| y[i]).collect()
}

/// Fits the scaler on the training rows of `plan` and returns the scaled
/// train/test matrices plus the fitted scaler.
fn scale_split(
    x: &ArrayView2<f64>,
    plan: &SplitPlan,
    kind: ScalerKind,
) -> Result<(Array2<f64>, Array2<f64>, FittedScaler)> {
    let train_raw = take_rows(x, &plan.train_indices);
    let test_raw = take_rows(x, &plan.test_indices);
    let scaler = FittedScaler::fit(&train_raw.view(), kind)?;
    let train = scaler.transform(&train_raw.view())?;
    let test = scaler.transform(&test_raw.view())?;
    Ok((train, test, scaler))
}

// ---------------------------------------------------------------------------
// Tree-model suite (scenarios 1-3)
// ---------------------------------------------------------------------------

/// One model's full scenario report: cross-validation on the training
/// split plus held-out evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelReport {
    pub model: String,
    pub cv_accuracies: Vec<f64>,
    pub cv_mean: f64,
    pub test: EvalReport,
    pub feature_importance: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TreeKind {
    Forest,
    Tree,
}

impl TreeKind {
    fn name(self) -> &'static str {
        match self {
            TreeKind::Forest => "random_forest",
            TreeKind::Tree => "decision_tree",
        }
    }
}

fn fit_predict(
    kind: TreeKind,
    params: &ScenarioParams,
    seed: u64,
    train_x: &ArrayView2<f64>,
    train_y: &[usize],
    test_x: &ArrayView2<f64>,
    n_classes: usize,
) -> Result<(Vec<usize>, Vec<f64>)> {
    match kind {
        TreeKind::Forest => {
            let mut config = params.forest.clone();
            config.seed = seed;
            let model = fit_forest(train_x, train_y, n_classes, &config)?;
            Ok((predict_forest(&model, test_x)?, model.feature_importance()))
        }
        TreeKind::Tree => {
            let mut config = params.tree.clone();
            config.seed = seed;
            let model = fit_tree(train_x, train_y, n_classes, &config)?;
            Ok((predict_tree(&model, test_x)?, model.feature_importance()))
        }
    }
}

fn accuracy_of(y_true: &[usize], y_pred: &[usize]) -> f64 {
    let hits = y_true.iter().zip(y_pred).filter(|(a, b)| a == b).count();
    hits as f64 / y_true.len().max(1) as f64
}

/// Cross-validates on the training split and evaluates on the test split.
fn run_tree_model(
    kind: TreeKind,
    params: &ScenarioParams,
    seed: u64,
    train_x: &ArrayView2<f64>,
    train_y: &[usize],
    test_x: &ArrayView2<f64>,
    test_y: &[usize],
    labels: &[String],
) -> Result<ModelReport> {
    let n_classes = labels.len();
    let folds = stratified_kfold(
        train_y,
        params.cv_folds,
        derive_seed(seed, &format!("cv-folds-{}", kind.name())),
    )?;
    let mut cv_accuracies = Vec::with_capacity(folds.k());
    for fold in 0..folds.k() {
        let (tr, va) = folds.train_test(fold)?;
        let fx = take_rows(train_x, &tr);
        let fy = take_labels(train_y, &tr);
        let vx = take_rows(train_x, &va);
        let vy = take_labels(train_y, &va);
        let (pred, _) = fit_predict(
            kind,
            params,
            derive_seed(seed, &format!("cv-{}-{fold}", kind.name())),
            &fx.view(),
            &fy,
            &vx.view(),
            n_classes,
        )?;
        cv_accuracies.push(accuracy_of(&vy, &pred));
    }
    let (pred, importance) = fit_predict(
        kind,
        params,
        derive_seed(seed, &format!("final-{}", kind.name())),
        train_x,
        train_y,
        test_x,
        n_classes,
    )?;
    let test = evaluate(test_y, &pred, labels)?;
    Ok(ModelReport {
        model: kind.name().to_string(),
        cv_mean: cv_mean(&cv_accuracies)?,
        cv_accuracies,
        test,
        feature_importance: importance,
    })
}

fn importance_csv(importance: &[f64]) -> String {
    let mut out = String::from("feature,weight\n");
    for (name, w) in FEATURE_NAMES.iter().zip(importance) {
        let _ = writeln!(out, "{name},{w}");
    }
    out
}

/// Artifacts and headline numbers of one scenario run.
#[derive(Debug, Clone, Serialize)]
pub struct ScenarioOutput {
    pub scenario: String,
    pub random_forest: ModelReport,
    pub decision_tree: ModelReport,
    pub out_dir: PathBuf,
    pub files: Vec<String>,
}

/// Scenario-2 vs scenario-3 accuracy gap for one model family.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapEntry {
    pub scenario2_accuracy: f64,
    pub scenario3_accuracy: f64,
    pub gap: f64,
}

/// The combined split-strategy gap report emitted by scenario 3.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapReport {
    pub random_forest: GapEntry,
    pub decision_tree: GapEntry,
}

fn run_scenario_bundle(
    name: &str,
    config: &ExperimentConfig,
    ds: &Dataset,
    summary: &DatasetSummary,
    target: LabelTarget,
    plan: &SplitPlan,
) -> Result<ScenarioOutput> {
    let params = &config.scenario;
    let (x, y, label_map) = encode_labels(ds, target)?;
    let scaler_kind = params.scaler.unwrap_or(ScalerKind::MinMax);
    let (train, test, _) = scale_split(&x.view(), plan, scaler_kind)?;
    let train_y = take_labels(&y, &plan.train_indices);
    let test_y = take_labels(&y, &plan.test_indices);
    let labels = label_map.labels().to_vec();
    let seed = derive_seed(config.seed, name);

    let dir = config.out_dir.join(name);
    let mut files = Vec::new();
    let mut reports = Vec::new();
    for kind in [TreeKind::Forest, TreeKind::Tree] {
        let report = run_tree_model(
            kind,
            params,
            seed,
            &train.view(),
            &train_y,
            &test.view(),
            &test_y,
            &labels,
        )?;
        let base = kind.name();
        let report_path = dir.join(format!("report_{base}.json"));
        write_json(&report_path, &report)?;
        files.push(format!("report_{base}.json"));
        write_atomic(
            &dir.join(format!("confusion_{base}.csv")),
            report.test.confusion_csv().as_bytes(),
        )?;
        files.push(format!("confusion_{base}.csv"));
        write_atomic(
            &dir.join(format!("importance_{base}.csv")),
            importance_csv(&report.feature_importance).as_bytes(),
        )?;
        files.push(format!("importance_{base}.csv"));
        reports.push(report);
    }
    write_provenance(&dir, name, config, summary, false)?;
    files.push("provenance.json".into());
    let decision_tree = reports.pop().expect("two model reports");
    let random_forest = reports.pop().expect("two model reports");
    Ok(ScenarioOutput {
        scenario: name.to_string(),
        random_forest,
        decision_tree,
        out_dir: dir,
        files,
    })
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

/// Result of `synth`: where the CSV landed and how big it is.
#[derive(Debug, Clone, Serialize)]
pub struct SynthOutput {
    pub csv_path: PathBuf,
    pub n_records: usize,
}

/// Generates the configured synthetic dataset and writes it as CSV with
/// the default column schema, plus provenance.
pub fn cmd_synth(config: &ExperimentConfig) -> Result<SynthOutput> {
    config.validate()?;
    let synth = match &config.dataset {
        DatasetSource::Synthetic { config } => config,
        DatasetSource::Csv { .. } => {
            return Err(Error::Config(
                "synth requires a synthetic dataset source".into(),
            ))
        }
    };
    let ds = generate_synthetic(synth)?;
    let dir = config.out_dir.join("synth");
    let csv_path = dir.join("data.csv");
    ds.write_csv(&csv_path, &ColumnSchema::default())?;
    let summary = summarize(&ds, 0, 0);
    write_provenance(&dir, "synth", config, &summary, false)?;
    Ok(SynthOutput {
        csv_path,
        n_records: ds.len(),
    })
}

/// Scenario 1: diagnosis classification across the level split
/// (train on levels 1-2, evaluate on level 3).
pub fn cmd_scenario1(config: &ExperimentConfig) -> Result<ScenarioOutput> {
    config.validate()?;
    let (ds, summary) = load_data(config)?;
    let plan = split_by_level(
        &ds,
        &config.scenario.train_levels,
        &config.scenario.test_levels,
    )?;
    run_scenario_bundle(
        "scenario1",
        config,
        &ds,
        &summary,
        LabelTarget::Diagnosis,
        &plan,
    )
}

/// Scenario 2: student re-identification across the level split — the
/// distribution-shift attack.
pub fn cmd_scenario2(config: &ExperimentConfig) -> Result<ScenarioOutput> {
    config.validate()?;
    let (ds, summary) = load_data(config)?;
    let plan = split_by_level(
        &ds,
        &config.scenario.train_levels,
        &config.scenario.test_levels,
    )?;
    run_scenario_bundle(
        "scenario2",
        config,
        &ds,
        &summary,
        LabelTarget::StudentId,
        &plan,
    )
}

/// Scenario 3: student re-identification on a stratified random split,
/// plus the gap report against the scenario-2 level split.
pub fn cmd_scenario3(config: &ExperimentConfig) -> Result<(ScenarioOutput, GapReport)> {
    config.validate()?;
    let (ds, summary) = load_data(config)?;
    let (_, y, _) = encode_labels(&ds, LabelTarget::StudentId)?;
    let plan = random_stratified_split(
        &y,
        config.scenario.train_frac,
        derive_seed(config.seed, "scenario3-split"),
    )?;
    let output = run_scenario_bundle(
        "scenario3",
        config,
        &ds,
        &summary,
        LabelTarget::StudentId,
        &plan,
    )?;

    // Gap vs the level split: rerun the two final models under the
    // scenario-2 split and compare held-out accuracies.
    let level_plan = split_by_level(
        &ds,
        &config.scenario.train_levels,
        &config.scenario.test_levels,
    )?;
    let (x, _, _) = encode_labels(&ds, LabelTarget::StudentId)?;
    let scaler_kind = config.scenario.scaler.unwrap_or(ScalerKind::MinMax);
    let (ltrain, ltest, _) = scale_split(&x.view(), &level_plan, scaler_kind)?;
    let ltrain_y = take_labels(&y, &level_plan.train_indices);
    let ltest_y = take_labels(&y, &level_plan.test_indices);
    let n_classes = ds.distinct_student_ids().len();
    let seed = derive_seed(config.seed, "scenario2");
    let mut gap_entries = Vec::new();
    for (kind, s3_acc) in [
        (TreeKind::Forest, output.random_forest.test.accuracy),
        (TreeKind::Tree, output.decision_tree.test.accuracy),
    ] {
        let (pred, _) = fit_predict(
            kind,
            &config.scenario,
            derive_seed(seed, &format!("final-{}", kind.name())),
            &ltrain.view(),
            &ltrain_y,
            &ltest.view(),
            n_classes,
        )?;
        let s2_acc = accuracy_of(&ltest_y, &pred);
        gap_entries.push(GapEntry {
            scenario2_accuracy: s2_acc,
            scenario3_accuracy: s3_acc,
            gap: s3_acc - s2_acc,
        });
    }
    let gap = GapReport {
        decision_tree: gap_entries.pop().expect("two entries"),
        random_forest: gap_entries.pop().expect("two entries"),
    };
    write_json(&output.out_dir.join("gap_report.json"), &gap)?;
    Ok((output, gap))
}

/// One held-out sample's decisions under every assignment strategy.
#[derive(Debug, Clone, Serialize)]
pub struct QueryDecisions {
    pub query_index: usize,
    pub true_student_id: u32,
    pub decisions: BTreeMap<String, AssignmentDecision>,
}

/// Headline numbers of the scenario-4 novelty run.
#[derive(Debug, Clone, Serialize)]
pub struct Scenario4Output {
    pub held_out_id: u32,
    pub known_ids: Vec<u32>,
    pub chosen_k: usize,
    pub silhouette_by_k: Vec<(usize, f64)>,
    pub tau: f64,
    pub tau_source: String,
    pub n_queries: usize,
    /// Fraction of held-out samples assigned a new id, per strategy.
    pub new_id_fraction: BTreeMap<String, f64>,
    /// Run-local paths, not part of the written report.
    #[serde(skip)]
    pub out_dir: PathBuf,
    #[serde(skip)]
    pub files: Vec<String>,
}

/// Scenario 4: hold out the highest-id student as "entirely new", fit the
/// detection toolkit (k-means + novelty threshold, isolation forest, 1-NN)
/// on the rest, and run all six identity-assignment strategies on every
/// held-out sample.
pub fn cmd_scenario4(config: &ExperimentConfig) -> Result<Scenario4Output> {
    config.validate()?;
    let params = &config.scenario;
    let (ds, summary) = load_data(config)?;
    let ids = ds.student_ids();
    let distinct = ds.distinct_student_ids();
    if distinct.len() < 2 {
        return Err(Error::Data(
            "scenario 4 needs at least 2 students (one to hold out)".into(),
        ));
    }
    let held_out_id = *distinct.last().expect("non-empty");
    let known_idx: Vec<usize> = (0..ds.len()).filter(|&i| ids[i] != held_out_id).collect();
    let query_idx: Vec<usize> = (0..ds.len()).filter(|&i| ids[i] == held_out_id).collect();

    let x = ds.feature_matrix();
    let scaler_kind = params.scaler.unwrap_or(ScalerKind::ZScore);
    let known_raw = take_rows(&x.view(), &known_idx);
    let scaler = FittedScaler::fit(&known_raw.view(), scaler_kind)?;
    let known = scaler.transform(&known_raw.view())?;
    let query_raw = take_rows(&x.view(), &query_idx);
    let queries = scaler.transform(&query_raw.view())?;
    let known_ids: Vec<u32> = known_idx.iter().map(|&i| ids[i]).collect();
    let existing: BTreeSet<u32> = known_ids.iter().copied().collect();

    let seed = derive_seed(config.seed, "scenario4");

    // Model selection: silhouette argmax over the k sweep (ties toward the
    // smaller k), with the WCSS elbow curve emitted alongside.
    let mut k_range = params.kmeans_k_range.clone();
    k_range.sort_unstable();
    k_range.dedup();
    k_range.retain(|&k| k < known.nrows());
    if k_range.is_empty() {
        return Err(Error::Data("no feasible k in kmeans_k_range".into()));
    }
    let mut silhouette_by_k = Vec::new();
    let mut best: Option<(usize, f64, KMeansModel)> = None;
    for &k in &k_range {
        let model = kmeans_fit(
            &known.view(),
            k,
            params.kmeans_n_init,
            params.kmeans_max_iter,
            derive_seed(seed, &format!("kmeans-k{k}")),
        )?;
        let score = silhouette(&known.view(), &model.assignments(&known.view()))?;
        silhouette_by_k.push((k, score));
        if best.as_ref().map(|(_, s, _)| score > *s).unwrap_or(true) {
            best = Some((k, score, model));
        }
    }
    let (chosen_k, _, kmeans) = best.expect("k_range is non-empty");
    let wcss = wcss_curve(
        &known.view(),
        &k_range,
        params.kmeans_n_init,
        params.kmeans_max_iter,
        derive_seed(seed, "wcss-curve"),
    )?;

    let (threshold, tau_source) = match params.tau_override {
        Some(tau) => (
            NoveltyThreshold {
                tau,
                percentile: 95.0,
                source_distances: Vec::new(),
            },
            "manual_override".to_string(),
        ),
        None => (
            novelty_threshold(&known.view(), &kmeans)?,
            "p95_of_known_novelty_scores".to_string(),
        ),
    };
    let iforest = isolation_forest_fit(
        &known.view(),
        params.iforest_trees,
        params.iforest_subsample,
        derive_seed(seed, "iforest"),
    )?;
    let ctx = EnsembleContext {
        known_x: known.view(),
        known_ids: &known_ids,
        confidence_threshold: params.confidence_threshold,
        iforest: &iforest,
        kmeans: &kmeans,
        novelty: &threshold,
    };

    let mut decisions_out = Vec::with_capacity(query_idx.len());
    let mut new_counts: BTreeMap<String, usize> = BTreeMap::new();
    for (qi, &row_index) in query_idx.iter().enumerate() {
        let q: Vec<f64> = queries.row(qi).to_vec();
        let q_raw: Vec<f64> = query_raw.row(qi).to_vec();
        let mut decisions = BTreeMap::new();
        decisions.insert("sequential".to_string(), sequential_assign(&existing)?);
        decisions.insert(
            "similarity".to_string(),
            similarity_assign(&q, &known.view(), &known_ids, params.confidence_threshold)?,
        );
        decisions.insert(
            "outlier".to_string(),
            outlier_assign(&q, &iforest, &known.view(), &known_ids)?,
        );
        decisions.insert(
            "clustering".to_string(),
            cluster_assign(&q, &kmeans, &threshold, &known.view(), &known_ids)?,
        );
        // Hashing uses the raw (pre-scaling) features: the canonical string
        // must not depend on the fitted scaler.
        decisions.insert("feature_hash".to_string(), feature_hash_id(&q_raw, &existing)?);
        decisions.insert("ensemble".to_string(), ensemble_assign(&q, &ctx)?);
        for (name, d) in &decisions {
            if d.outcome.is_new() {
                *new_counts.entry(name.clone()).or_insert(0) += 1;
            } else {
                new_counts.entry(name.clone()).or_insert(0);
            }
        }
        decisions_out.push(QueryDecisions {
            query_index: row_index,
            true_student_id: held_out_id,
            decisions,
        });
    }

    let dir = config.out_dir.join("scenario4");
    let mut files = Vec::new();
    write_json(&dir.join("decisions.json"), &decisions_out)?;
    files.push("decisions.json".into());

    let mut wcss_csv = String::from("k,wcss\n");
    for (k, v) in &wcss {
        let _ = writeln!(wcss_csv, "{k},{v}");
    }
    write_atomic(&dir.join("wcss_curve.csv"), wcss_csv.as_bytes())?;
    files.push("wcss_curve.csv".into());

    let mut sil_csv = String::from("k,silhouette\n");
    for (k, s) in &silhouette_by_k {
        let _ = writeln!(sil_csv, "{k},{s}");
    }
    write_atomic(&dir.join("silhouette.csv"), sil_csv.as_bytes())?;
    files.push("silhouette.csv".into());

    // PCA projection of known + held-out samples for visual inspection.
    let pca = pca_fit(&known.view(), 2)?;
    let known_proj = pca_project(&pca, &known.view())?;
    let query_proj = pca_project(&pca, &queries.view())?;
    let mut pca_csv = String::from("role,student_id,pc1,pc2\n");
    for (r, &i) in known_idx.iter().enumerate() {
        let _ = writeln!(
            pca_csv,
            "known,{},{},{}",
            ids[i],
            known_proj[(r, 0)],
            known_proj[(r, 1)]
        );
    }
    for (r, &i) in query_idx.iter().enumerate() {
        let _ = writeln!(
            pca_csv,
            "held_out,{},{},{}",
            ids[i],
            query_proj[(r, 0)],
            query_proj[(r, 1)]
        );
    }
    write_atomic(&dir.join("pca_projection.csv"), pca_csv.as_bytes())?;
    files.push("pca_projection.csv".into());

    let n_queries = query_idx.len();
    let new_id_fraction: BTreeMap<String, f64> = new_counts
        .into_iter()
        .map(|(k, c)| (k, c as f64 / n_queries.max(1) as f64))
        .collect();
    let output = Scenario4Output {
        held_out_id,
        known_ids: existing.iter().copied().collect(),
        chosen_k,
        silhouette_by_k,
        tau: threshold.tau,
        tau_source,
        n_queries,
        new_id_fraction,
        out_dir: dir.clone(),
        files: files.clone(),
    };
    write_json(&dir.join("summary.json"), &output)?;
    write_provenance(&dir, "scenario4", config, &summary, false)?;
    Ok(output)
}

// ---------------------------------------------------------------------------
// Phase 2
// ---------------------------------------------------------------------------

/// Headline numbers of a phase-2 secure run.
#[derive(Debug, Clone, Serialize)]
pub struct Phase2Output {
    pub final_test_accuracy: f64,
    pub round_test_accuracies: Vec<f64>,
    pub n_dummies: usize,
    pub dummy_labels: Vec<String>,
    pub audit_passed: bool,
    pub vault_path: PathBuf,
    pub out_dir: PathBuf,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
struct Phase2Report {
    final_test_accuracy: f64,
    rounds: Vec<RoundSummaryRow>,
    evaluation: EvalReport,
    aggregation: crate::federated::Aggregation,
    n_clients: usize,
    n_folds: usize,
    epochs: usize,
}

#[derive(Debug, Clone, Serialize)]
struct RoundSummaryRow {
    round: usize,
    client_val_accuracies: Vec<f64>,
    test_accuracy: f64,
}

fn progression_csv(records: &[RoundRecord]) -> String {
    let n_clients = records.first().map(|r| r.client_val_accuracies.len()).unwrap_or(0);
    let mut out = String::from("round");
    for c in 1..=n_clients {
        let _ = write!(out, ",client_{c}_val_accuracy");
    }
    out.push_str(",global_test_accuracy\n");
    for r in records {
        let _ = write!(out, "{}", r.round);
        for acc in &r.client_val_accuracies {
            let _ = write!(out, ",{acc}");
        }
        let _ = writeln!(out, ",{}", r.test_accuracy);
    }
    out
}

/// Phase 2: the dual-layer defense pipeline. Creates the identity vault
/// (key file beside it), replaces every student id with an epoch-0 dummy,
/// trains the residual classifier federatively on the train levels, and
/// evaluates on the held-out levels — emitting only dummy-labeled
/// artifacts, verified by an in-run privacy audit.
pub fn cmd_phase2(config: &ExperimentConfig, passphrase: &str) -> Result<Phase2Output> {
    config.validate()?;
    let p = &config.phase2;
    let (ds, summary) = load_data(config)?;
    let dir = config.out_dir.join("phase2");

    // Vault setup: refuse to clobber an existing store.
    let vault_path = config.vault_path();
    if vault_path.exists() {
        return Err(Error::Config(format!(
            "vault already exists at {}; use a fresh --out or remove it first",
            vault_path.display()
        )));
    }
    let mut vault = Vault::create(&vault_path, passphrase, p.vault_iterations, config.seed)?;
    let ek1 = vault.load_ek1()?;
    let true_ids = ds.distinct_student_ids();
    let mut dummy_of: BTreeMap<u32, String> = BTreeMap::new();
    for &id in &true_ids {
        dummy_of.insert(id, vault.issue_dummy(id, &ek1)?);
    }
    vault.save()?;

    // From here on, labels are dummies only.
    let dummy_labels: Vec<String> = {
        let set: BTreeSet<&String> = dummy_of.values().collect();
        set.into_iter().cloned().collect()
    };
    let label_index: BTreeMap<&str, usize> = dummy_labels
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let record_ids = ds.student_ids();
    let y: Vec<usize> = record_ids
        .iter()
        .map(|id| label_index[dummy_of[id].as_str()])
        .collect();
    let num_classes = dummy_labels.len();

    let plan = split_by_level(&ds, &p.train_levels, &p.test_levels)?;
    let x = ds.feature_matrix();
    let (train, test, _) = scale_split(&x.view(), &plan, ScalerKind::ZScore)?;
    let train_y = take_labels(&y, &plan.train_indices);
    let test_y = take_labels(&y, &plan.test_indices);

    let clients = partition_clients(
        &train.view(),
        &train_y,
        p.n_clients,
        derive_seed(config.seed, "phase2-partition"),
    )?;
    let records = run_federated(
        &clients,
        &test.view(),
        &test_y,
        num_classes,
        p.rounds,
        p.folds,
        p.epochs,
        p.aggregation,
        derive_seed(config.seed, "phase2-federated"),
    )?;

    let mut files = Vec::new();
    write_atomic(&dir.join("progression.csv"), progression_csv(&records).as_bytes())?;
    files.push("progression.csv".into());

    let final_record = records.last().expect("rounds >= 1");
    let final_weights = final_record
        .weights
        .as_ref()
        .expect("run_federated keeps weights");
    for r in &records {
        let path = dir.join(format!("weights_round_{}.bin", r.round));
        r.weights
            .as_ref()
            .expect("run_federated keeps weights")
            .save(&path)?;
        files.push(format!("weights_round_{}.bin", r.round));
    }

    // Final evaluation with dummy-name axes.
    let mut model = build_model(
        test.ncols(),
        num_classes,
        derive_seed(config.seed, "phase2-eval-model"),
    )?;
    model.set_weights(final_weights)?;
    let probs = model.forward_infer(&test.view())?;
    let pred: Vec<usize> = probs
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect();
    let evaluation = evaluate(&test_y, &pred, &dummy_labels)?;
    write_atomic(&dir.join("confusion.csv"), evaluation.confusion_csv().as_bytes())?;
    files.push("confusion.csv".into());

    let report = Phase2Report {
        final_test_accuracy: final_record.test_accuracy,
        rounds: records
            .iter()
            .map(|r| RoundSummaryRow {
                round: r.round,
                client_val_accuracies: r.client_val_accuracies.clone(),
                test_accuracy: r.test_accuracy,
            })
            .collect(),
        evaluation,
        aggregation: p.aggregation,
        n_clients: p.n_clients,
        n_folds: p.folds,
        epochs: p.epochs,
    };
    write_json(&dir.join("report.json"), &report)?;
    files.push("report.json".into());

    write_provenance(&dir, "phase2", config, &summary, true)?;
    files.push("provenance.json".into());

    // Privacy audit over everything phase 2 emitted. The audit file itself
    // is written after the scan; a failed audit fails the command.
    let audit = audit_true_id_tokens(&dir, &true_ids)?;
    write_json(&dir.join("privacy_audit.json"), &audit)?;
    files.push("privacy_audit.json".into());
    if !audit.passed() {
        return Err(Error::Data(format!(
            "privacy audit failed: {} true-id token(s) found in emitted artifacts",
            audit.matches.len()
        )));
    }

    Ok(Phase2Output {
        final_test_accuracy: final_record.test_accuracy,
        round_test_accuracies: records.iter().map(|r| r.test_accuracy).collect(),
        n_dummies: num_classes,
        dummy_labels,
        audit_passed: audit.passed(),
        vault_path,
        out_dir: dir,
        files,
    })
}
