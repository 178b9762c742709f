//! Run configuration: a single JSON document drives every command.
//!
//! Unknown keys are rejected at every level so a typo'd field fails fast
//! instead of silently falling back to a default. Precedence is
//! flag > file > default: the CLI parses the file (or starts from the
//! defaults) and then applies explicit flag overrides.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::data::{ColumnSchema, SyntheticConfig};
use crate::error::{Error, Result};
use crate::federated::Aggregation;
use crate::preprocess::ScalerKind;
use crate::trees::{ForestConfig, TreeConfig};

/// Where the run's dataset comes from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// Generate data in-process.
    Synthetic {
        #[serde(default)]
        config: SyntheticConfig,
    },
    /// Load a CSV file with the given column schema.
    Csv {
        path: PathBuf,
        #[serde(default)]
        schema: ColumnSchema,
    },
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic {
            config: SyntheticConfig::default(),
        }
    }
}

/// Parameters shared by the four attack scenarios.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioParams {
    /// Game levels used for training in level-split scenarios.
    pub train_levels: Vec<u8>,
    /// Game levels held out for evaluation.
    pub test_levels: Vec<u8>,
    /// Train fraction of the scenario-3 stratified random split.
    pub train_frac: f64,
    /// Cross-validation folds on the training split.
    pub cv_folds: usize,
    /// Feature scaler; `None` picks the per-scenario default
    /// (min-max for scenarios 1-3, z-score for scenario 4).
    pub scaler: Option<ScalerKind>,
    pub forest: ForestConfig,
    pub tree: TreeConfig,
    /// Candidate cluster counts for the elbow/silhouette sweep.
    pub kmeans_k_range: Vec<usize>,
    pub kmeans_n_init: usize,
    pub kmeans_max_iter: usize,
    /// Similarity-strategy acceptance threshold on exp(-distance).
    pub confidence_threshold: f64,
    pub iforest_trees: usize,
    pub iforest_subsample: usize,
    /// Manual novelty threshold; `None` uses the 95th-percentile rule.
    pub tau_override: Option<f64>,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        ScenarioParams {
            train_levels: vec![1, 2],
            test_levels: vec![3],
            train_frac: 0.6,
            cv_folds: 5,
            scaler: None,
            forest: ForestConfig::default(),
            tree: TreeConfig::default(),
            kmeans_k_range: (2..=8).collect(),
            kmeans_n_init: 10,
            kmeans_max_iter: 300,
            confidence_threshold: 0.5,
            iforest_trees: 100,
            iforest_subsample: 256,
            tau_override: None,
        }
    }
}

/// Parameters of the secure phase-2 pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Phase2Params {
    pub n_clients: usize,
    pub rounds: usize,
    pub folds: usize,
    pub epochs: usize,
    pub aggregation: Aggregation,
    /// Levels distributed to clients for training.
    pub train_levels: Vec<u8>,
    /// Held-out evaluation levels.
    pub test_levels: Vec<u8>,
    /// Vault location; `None` puts `vault.json` in the output directory.
    pub vault_path: Option<PathBuf>,
    /// PBKDF2 iteration count for the vault's derived key.
    pub vault_iterations: u32,
}

impl Default for Phase2Params {
    fn default() -> Self {
        Phase2Params {
            n_clients: 2,
            rounds: 5,
            folds: 3,
            epochs: 25,
            aggregation: Aggregation::WeightedBySize,
            train_levels: vec![1, 2],
            test_levels: vec![3],
            vault_path: None,
            vault_iterations: crate::vault::DEFAULT_ITERATIONS,
        }
    }
}

/// The complete run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub scenario: ScenarioParams,
    pub phase2: Phase2Params,
    /// Top-level seed; all stage randomness derives from it through named
    /// sub-streams.
    pub seed: u64,
    /// Output directory for reports and artifacts.
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSource::default(),
            scenario: ScenarioParams::default(),
            phase2: Phase2Params::default(),
            seed: 42,
            out_dir: PathBuf::from("runs"),
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates a JSON config file.
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    /// Applies CLI flag overrides (flag > file > default). `--seed` also
    /// re-seeds a synthetic dataset source so one flag controls the whole
    /// run; `--data` switches the source to a CSV with the default schema.
    pub fn apply_overrides(
        &mut self,
        seed: Option<u64>,
        out: Option<PathBuf>,
        data: Option<PathBuf>,
    ) {
        if let Some(s) = seed {
            self.seed = s;
            if let DatasetSource::Synthetic { config } = &mut self.dataset {
                config.seed = s;
            }
        }
        if let Some(o) = out {
            self.out_dir = o;
        }
        if let Some(d) = data {
            self.dataset = DatasetSource::Csv {
                path: d,
                schema: ColumnSchema::default(),
            };
        }
    }

    /// Field-range validation; called by [`ExperimentConfig::load`] and by
    /// commands before any computation.
    pub fn validate(&self) -> Result<()> {
        if let DatasetSource::Synthetic { config } = &self.dataset {
            config.validate()?;
        }
        let s = &self.scenario;
        if s.train_levels.is_empty() || s.test_levels.is_empty() {
            return Err(Error::Config("train_levels and test_levels must be non-empty".into()));
        }
        if !(s.train_frac > 0.0 && s.train_frac < 1.0) {
            return Err(Error::Config(format!(
                "train_frac must lie in (0, 1), got {}",
                s.train_frac
            )));
        }
        if s.cv_folds < 2 {
            return Err(Error::Config("cv_folds must be at least 2".into()));
        }
        if s.kmeans_k_range.is_empty() || s.kmeans_k_range.iter().any(|&k| k < 2) {
            return Err(Error::Config(
                "kmeans_k_range must be non-empty with every k >= 2".into(),
            ));
        }
        if !(s.confidence_threshold > 0.0 && s.confidence_threshold < 1.0) {
            return Err(Error::Config(format!(
                "confidence_threshold must lie in (0, 1), got {}",
                s.confidence_threshold
            )));
        }
        if s.kmeans_n_init == 0 || s.kmeans_max_iter == 0 {
            return Err(Error::Config(
                "kmeans_n_init and kmeans_max_iter must be positive".into(),
            ));
        }
        if s.iforest_trees == 0 || s.iforest_subsample < 2 {
            return Err(Error::Config(
                "iforest_trees must be positive and iforest_subsample at least 2".into(),
            ));
        }
        let p = &self.phase2;
        if p.n_clients < 2 {
            return Err(Error::Config("phase2.n_clients must be at least 2".into()));
        }
        if p.rounds == 0 || p.epochs == 0 {
            return Err(Error::Config("phase2.rounds and phase2.epochs must be positive".into()));
        }
        if p.folds < 2 {
            return Err(Error::Config("phase2.folds must be at least 2".into()));
        }
        if p.train_levels.is_empty() || p.test_levels.is_empty() {
            return Err(Error::Config(
                "phase2 train_levels and test_levels must be non-empty".into(),
            ));
        }
        if p.vault_iterations == 0 {
            return Err(Error::Config("phase2.vault_iterations must be positive".into()));
        }
        Ok(())
    }

    /// The vault path for this run (default: `<out_dir>/vault.json`).
    pub fn vault_path(&self) -> PathBuf {
        self.phase2
            .vault_path
            .clone()
            .unwrap_or_else(|| self.out_dir.join("vault.json"))
    }
}
