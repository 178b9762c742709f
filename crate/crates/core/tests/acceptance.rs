//! Acceptance gate: one test per release criterion, numbered a01-a11.
//!
//! Each test prints a single `acceptance aNN <name>: PASS — <detail>` line
//! on success (run with `--nocapture` to see them); the per-test ok/FAILED
//! line from the harness is the machine-readable gate. Criteria with a
//! runtime budget assert the elapsed wall time too.
//!
//! Real gaze corpora are private, so the quantitative criteria run on
//! synthetic data with a known structure:
//! nine students, three game levels, seven features. `level_drift`
//! shifts every feature by a common offset per level, which is the
//! distribution-shift mechanism behind the scenario-2/3 gap; criteria that
//! need a transferable signal (a02, a09) therefore run with drift 0,
//! criteria about the gap itself (a01) run with drift 2.

use ndarray::{Array1, Array2, ArrayView2};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::{Duration, Instant};

use gazelab::cluster::{kmeans_fit, knn1_match, novelty_score, novelty_threshold};
use gazelab::config::{DatasetSource, ExperimentConfig};
use gazelab::data::{generate_synthetic, Dataset, SyntheticConfig};
use gazelab::error::Error;
use gazelab::experiments::{cmd_phase2, cmd_scenario1, cmd_scenario3};
use gazelab::federated::{fedavg, fedavg_coefficients, fedavg_delta};
use gazelab::id_assign::feature_hash_id;
use gazelab::nn::{build_model, gradient_check, Mode, ModelWeights, TrainConfig};
use gazelab::preprocess::{
    random_stratified_split, stratified_kfold, FittedScaler, ScalerKind,
};
use gazelab::rng::derive_seed;
use gazelab::vault::{is_valid_dummy, Vault, VaultKeys};

fn pass(id: &str, name: &str, detail: &str) {
    println!("acceptance {id} {name}: PASS — {detail}");
}

fn synthetic_config(
    n_students: u32,
    records: usize,
    separation: f64,
    drift: f64,
    seed: u64,
) -> SyntheticConfig {
    SyntheticConfig {
        n_students,
        records_per_student_per_level: records,
        signature_separation: separation,
        level_drift: drift,
        seed,
        diagnosis_assignment: (1..=n_students)
            .map(|s| {
                let label = if s <= n_students.div_ceil(2) { "MDI" } else { "DD" };
                (s, label.to_string())
            })
            .collect(),
        ..SyntheticConfig::default()
    }
}

fn experiment_config(out: &Path, synth: SyntheticConfig, seed: u64) -> ExperimentConfig {
    let mut config = ExperimentConfig::default();
    config.dataset = DatasetSource::Synthetic { config: synth };
    config.seed = seed;
    config.out_dir = out.to_path_buf();
    config
}

/// Criterion 1 — scenario-gap reproduction: across five seeds, the random
/// split recovers student identity (accuracy >= 0.95) while the cross-level
/// split trails it by >= 0.15, within 2 minutes per seed.
#[test]
fn a01_scenario_gap_reproduction() {
    for seed in [101u64, 102, 103, 104, 105] {
        let started = Instant::now();
        let tmp = tempfile::TempDir::new().unwrap();
        let config = experiment_config(
            tmp.path(),
            synthetic_config(9, 100, 4.0, 2.0, seed),
            seed,
        );
        let (out, gap) = cmd_scenario3(&config).unwrap();
        let s3 = gap.random_forest.scenario3_accuracy;
        let s2 = gap.random_forest.scenario2_accuracy;
        assert!(
            s3 >= 0.95,
            "seed {seed}: scenario-3 accuracy {s3:.4} below 0.95"
        );
        assert!(
            s3 - s2 >= 0.15,
            "seed {seed}: gap {:.4} below 0.15 (s3 {s3:.4}, s2 {s2:.4})",
            s3 - s2
        );
        assert_eq!(out.random_forest.test.accuracy, s3);
        let elapsed = started.elapsed();
        assert!(
            elapsed <= Duration::from_secs(120),
            "seed {seed}: took {elapsed:?}, budget 2 min"
        );
    }
    pass(
        "a01",
        "scenario-gap reproduction",
        "5 seeds: random-split accuracy >= 0.95 and gap over level split >= 0.15",
    );
}

/// Criterion 2 — diagnosis classification: both tree models reach >= 0.97
/// level-3 accuracy on separable diagnosis labels, with a 5-entry CV list,
/// within 1 minute.
#[test]
fn a02_diagnosis_classification() {
    let started = Instant::now();
    let tmp = tempfile::TempDir::new().unwrap();
    let config = experiment_config(tmp.path(), synthetic_config(9, 100, 6.0, 0.0, 21), 21);
    let out = cmd_scenario1(&config).unwrap();
    for report in [&out.random_forest, &out.decision_tree] {
        assert!(
            report.test.accuracy >= 0.97,
            "{} accuracy {:.4} below 0.97",
            report.model,
            report.test.accuracy
        );
        assert_eq!(
            report.cv_accuracies.len(),
            5,
            "{} CV list must have 5 entries",
            report.model
        );
    }
    let elapsed = started.elapsed();
    assert!(elapsed <= Duration::from_secs(60), "took {elapsed:?}, budget 1 min");
    pass(
        "a02",
        "diagnosis classification",
        &format!(
            "RF {:.4}, DT {:.4}, both >= 0.97 with 5-entry CV",
            out.random_forest.test.accuracy, out.decision_tree.test.accuracy
        ),
    );
}

/// Criterion 3 — KNN confidence law: confidence = exp(-distance), verified
/// at distance 0 (exactly 1) and at the reference point 2.69.
#[test]
fn a03_knn_confidence_law() {
    let train = Array2::from_shape_vec((1, 2), vec![0.0, 0.0]).unwrap();
    let ids = vec![7u32];

    let (id, distance, confidence) = knn1_match(&train.view(), &ids, &[0.0, 0.0]).unwrap();
    assert_eq!(id, 7);
    assert_eq!(distance, 0.0);
    assert_eq!(confidence, 1.0);

    let (_, distance, confidence) = knn1_match(&train.view(), &ids, &[2.69, 0.0]).unwrap();
    assert_eq!(distance, 2.69);
    assert_eq!(confidence, (-2.69f64).exp());
    assert!(
        (confidence - 0.0679).abs() <= 2e-4,
        "exp(-2.69) = {confidence} not within 2e-4 of 0.0679"
    );
    pass(
        "a03",
        "knn confidence law",
        &format!("exp(-0) = 1 exactly; exp(-2.69) = {confidence:.6} within 2e-4 of 0.0679"),
    );
}

/// Splits a 9-student dataset into students 1-8 (known) and student 9.
fn known_and_ninth(ds: &Dataset) -> (Vec<usize>, Vec<usize>) {
    let ids = ds.student_ids();
    let known = (0..ds.len()).filter(|&i| ids[i] != 9).collect();
    let ninth = (0..ds.len()).filter(|&i| ids[i] == 9).collect();
    (known, ninth)
}

fn rows_of(x: &ArrayView2<f64>, idx: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((idx.len(), x.ncols()));
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).assign(&x.row(i));
    }
    out
}

/// Criterion 4 — novelty detection: a far ninth student scores above the
/// 95th-percentile tau on >= 95% of samples; a ninth cloned from student 1
/// on <= 10%. Ten fixed seeds.
#[test]
fn a04_novelty_detection() {
    for seed in 0u64..10 {
        // Students 1-9 at mutual separation >= 6 pooled stds; 1-8 enrolled.
        let far_ds = generate_synthetic(&synthetic_config(9, 20, 6.0, 0.0, seed)).unwrap();
        let (known_idx, far_idx) = known_and_ninth(&far_ds);
        let x = far_ds.feature_matrix();
        let known_raw = rows_of(&x.view(), &known_idx);
        let scaler = FittedScaler::fit(&known_raw.view(), ScalerKind::ZScore).unwrap();
        let known = scaler.transform(&known_raw.view()).unwrap();
        let far = scaler
            .transform(&rows_of(&x.view(), &far_idx).view())
            .unwrap();

        let kmeans = kmeans_fit(&known.view(), 8, 10, 300, derive_seed(seed, "a04-kmeans")).unwrap();
        let threshold = novelty_threshold(&known.view(), &kmeans).unwrap();

        let far_flagged = far
            .rows()
            .into_iter()
            .filter(|r| novelty_score(r.as_slice().unwrap(), &kmeans) > threshold.tau)
            .count();
        let far_rate = far_flagged as f64 / far.nrows() as f64;
        assert!(
            far_rate >= 0.95,
            "seed {seed}: far ninth flagged on only {far_rate:.3} of samples"
        );

        // A "new" student whose signature is student 1's: hold back every
        // other student-1 row of a single generation as the queries, so
        // they are fresh noise around exactly the enrolled student-1 mean.
        // Scenario scale (100 records per level) keeps the query count high
        // enough that the exceedance estimate is stable.
        let clone_ds = generate_synthetic(&synthetic_config(
            8,
            100,
            6.0,
            0.0,
            derive_seed(seed, "a04-clone"),
        ))
        .unwrap();
        let clone_ids = clone_ds.student_ids();
        let mut enrolled_idx = Vec::new();
        let mut query_idx = Vec::new();
        let mut s1_seen = 0usize;
        for i in 0..clone_ds.len() {
            if clone_ids[i] == 1 {
                if s1_seen % 2 == 0 {
                    enrolled_idx.push(i);
                } else {
                    query_idx.push(i);
                }
                s1_seen += 1;
            } else {
                enrolled_idx.push(i);
            }
        }
        let cx = clone_ds.feature_matrix();
        let enrolled_raw = rows_of(&cx.view(), &enrolled_idx);
        let clone_scaler = FittedScaler::fit(&enrolled_raw.view(), ScalerKind::ZScore).unwrap();
        let enrolled = clone_scaler.transform(&enrolled_raw.view()).unwrap();
        let clone_kmeans = kmeans_fit(
            &enrolled.view(),
            8,
            10,
            300,
            derive_seed(seed, "a04-clone-kmeans"),
        )
        .unwrap();
        let clone_threshold = novelty_threshold(&enrolled.view(), &clone_kmeans).unwrap();
        let clone = clone_scaler
            .transform(&rows_of(&cx.view(), &query_idx).view())
            .unwrap();
        let clone_flagged = clone
            .rows()
            .into_iter()
            .filter(|r| novelty_score(r.as_slice().unwrap(), &clone_kmeans) > clone_threshold.tau)
            .count();
        let clone_rate = clone_flagged as f64 / clone.nrows() as f64;
        assert!(
            clone_rate <= 0.10,
            "seed {seed}: cloned ninth flagged on {clone_rate:.3} of samples"
        );
    }
    pass(
        "a04",
        "novelty detection",
        "10 seeds: far ninth > tau on >= 95%, cloned ninth on <= 10% of samples",
    );
}

/// Criterion 5 — feature-hash ID: pinned digests for three canonical
/// strings, range always [0, 10000), collision chain by constructed fixture.
#[test]
fn a05_feature_hash_id() {
    // Pinned against an independent MD5 oracle over the canonical string
    // (features formatted at six decimals, comma-joined):
    //   md5("1.000000,2.000000")[..8]                                   % 10000 = 5007
    //   md5("100.000000,200.000000,3.500000,3.600000,10.000000,
    //        20.000000,30.000000")[..8]                                 % 10000 = 5053
    //   md5("-1.500000,2.250000")[..8]                                  % 10000 = 2685
    let empty = BTreeSet::new();
    let cases: [(&[f64], u32, &str); 3] = [
        (&[1.0, 2.0], 5007, "1.000000,2.000000"),
        (
            &[100.0, 200.0, 3.5, 3.6, 10.0, 20.0, 30.0],
            5053,
            "100.000000,200.000000,3.500000,3.600000,10.000000,20.000000,30.000000",
        ),
        (&[-1.5, 2.25], 2685, "-1.500000,2.250000"),
    ];
    for (features, expected, canonical) in cases {
        let decision = feature_hash_id(features, &empty).unwrap();
        assert_eq!(decision.outcome.id(), expected, "features {features:?}");
        assert_eq!(
            decision.evidence.canonical_string.as_deref(),
            Some(canonical)
        );
    }

    // Range: many arbitrary vectors, all ids in [0, 10000).
    for i in 0..500 {
        let features = [i as f64 * 0.37 - 90.0, (i * i) as f64 * 0.011, -(i as f64)];
        let id = feature_hash_id(&features, &empty).unwrap().outcome.id();
        assert!(id < 10_000, "id {id} out of range for case {i}");
    }

    // Collision chain: with 5007, 5008, 5009 taken, the probe walks to 5010.
    let taken: BTreeSet<u32> = [5007, 5008, 5009].into_iter().collect();
    let id = feature_hash_id(&[1.0, 2.0], &taken).unwrap().outcome.id();
    assert_eq!(id, 5010);
    // Wrap-around at the top of the range: 9999 hashes forward into 0.
    let mut wrap: BTreeSet<u32> = (0..10_000).collect();
    wrap.remove(&3);
    let id = feature_hash_id(&[1.0, 2.0], &wrap).unwrap().outcome.id();
    assert_eq!(id, 3, "probe must wrap modulo 10000 to the only free id");
    pass(
        "a05",
        "feature-hash id",
        "3 pinned digests, 500-case range check, collision chain and wrap verified",
    );
}

/// Criterion 6 — vault property suite: 10,000 issue/resolve trials with
/// injectivity, rotation inequality, wrong-key rejection and an append-only
/// audit log, within 10 seconds.
#[test]
fn a06_vault_property_suite() {
    let started = Instant::now();
    let tmp = tempfile::TempDir::new().unwrap();
    let path = tmp.path().join("vault.json");
    // The KDF iteration count is a deployment knob; the properties under
    // test are independent of it, so the suite runs at a low count to stay
    // inside the 10-second budget.
    let passphrase = "acceptance-admin";
    let mut vault = Vault::create(&path, passphrase, 10, 42).unwrap();
    let ek1 = vault.load_ek1().unwrap();
    let keys = VaultKeys {
        ek1,
        ek2: vault.derive_ek2(passphrase).unwrap(),
    };
    let mut wrong = keys.ek2;
    wrong[0] ^= 0x5a;
    let bad_keys = VaultKeys { ek1, ek2: wrong };

    const TRIALS: u32 = 10_000;
    let mut epoch0 = BTreeMap::new();
    for id in 1..=TRIALS {
        epoch0.insert(id, vault.issue_dummy(id, &ek1).unwrap());
    }
    // Injectivity: 10,000 distinct names.
    let distinct: BTreeSet<&String> = epoch0.values().collect();
    assert_eq!(distinct.len(), TRIALS as usize, "dummy names must be injective");

    // Roundtrip + wrong-ek2 rejection on every trial.
    let audit_before = vault.audit_log().len();
    for (&id, dummy) in &epoch0 {
        assert_eq!(vault.resolve_dummy(dummy, 0, &keys, passphrase).unwrap(), id);
        let denied = vault.resolve_dummy(dummy, 0, &bad_keys, passphrase);
        assert!(
            matches!(denied, Err(Error::Auth(_))),
            "wrong ek2 must always be rejected, got {denied:?}"
        );
    }

    // Audit log: appended once per attempt, existing entries untouched.
    let audit_after = vault.audit_log().len();
    assert_eq!(audit_after - audit_before, 2 * TRIALS as usize);
    let prefix: Vec<_> = vault.audit_log()[..audit_before].to_vec();
    let _ = vault
        .resolve_dummy(epoch0.get(&1).unwrap(), 0, &keys, passphrase)
        .unwrap();
    assert_eq!(vault.audit_log().len(), audit_after + 1);
    assert_eq!(&vault.audit_log()[..audit_before], &prefix[..]);

    // Epoch rotation: the new mapping differs from the old one.
    assert_eq!(vault.rotate_epoch(), 1);
    let mut epoch1 = BTreeMap::new();
    for id in 1..=TRIALS {
        epoch1.insert(id, vault.issue_dummy(id, &ek1).unwrap());
    }
    assert_ne!(epoch0, epoch1, "consecutive epoch mappings must differ");
    let changed = epoch0
        .iter()
        .filter(|(id, dummy)| epoch1.get(id) != Some(dummy))
        .count();
    assert!(
        changed as f64 >= 0.99 * TRIALS as f64,
        "only {changed} of {TRIALS} ids changed names after rotation"
    );
    // Prior epochs stay resolvable after rotation.
    assert_eq!(
        vault
            .resolve_dummy(epoch0.get(&42).unwrap(), 0, &keys, passphrase)
            .unwrap(),
        42
    );

    let elapsed = started.elapsed();
    assert!(elapsed <= Duration::from_secs(10), "took {elapsed:?}, budget 10 s");
    pass(
        "a06",
        "vault property suite",
        &format!(
            "10,000 trials: injective, roundtrip-exact, wrong-ek2 rejected, \
             {changed} names changed on rotation, audit append-only, {elapsed:?}"
        ),
    );
}

/// Criterion 7 — neural-net checks: gradient error <= 1e-4 against central
/// differences, softmax rows sum to 1 +- 1e-6, and a 64-sample batch is
/// memorized within 200 epochs.
#[test]
fn a07_neural_net_checks() {
    // Gradient check on the full architecture at its production width.
    let mut model = build_model(7, 9, 33).unwrap();
    let n = 6;
    let x = Array2::from_shape_fn((n, 7), |(i, j)| ((i * 7 + j) as f64 * 0.83).sin());
    let y: Vec<usize> = (0..n).map(|i| (i * 4) % 9).collect();
    let max_rel = gradient_check(&mut model, &x.view(), &y, 0.001, 4).unwrap();
    assert!(max_rel <= 1e-4, "max relative gradient error {max_rel:e}");

    // Softmax rows sum to 1 within 1e-6.
    let probs = model.forward(&x.view(), Mode::Infer).unwrap();
    for (i, row) in probs.rows().into_iter().enumerate() {
        let sum: f64 = row.sum();
        assert!((sum - 1.0).abs() <= 1e-6, "row {i} sums to {sum}");
    }

    // Overfit-a-batch: 64 separable samples, 4 classes, 100% train accuracy.
    let classes = 4usize;
    let per = 16usize;
    let x = Array2::from_shape_fn((classes * per, 7), |(i, j)| {
        let class = i / per;
        10.0 * ((class * 7 + j) as f64 * 1.7).cos() + ((i * 13 + j) as f64 * 0.71).sin()
    });
    let y: Vec<usize> = (0..classes * per).map(|i| i / per).collect();
    let mut model = build_model(7, classes, 5).unwrap();
    let config = TrainConfig {
        epochs: 200,
        batch_size: 16,
        early_stopping_patience: 200,
        ..TrainConfig::default()
    };
    let history = model
        .train(&x.view(), &y, &x.view(), &y, &config)
        .unwrap();
    let best_train_acc = history
        .records
        .iter()
        .map(|r| r.train_accuracy)
        .fold(0.0, f64::max);
    assert_eq!(
        best_train_acc, 1.0,
        "batch not memorized within 200 epochs (best {best_train_acc})"
    );
    pass(
        "a07",
        "neural-net checks",
        &format!("gradient error {max_rel:.2e} <= 1e-4, softmax rows sum to 1, batch memorized"),
    );
}

fn constant_weights(template: &ModelWeights, value: f64) -> ModelWeights {
    ModelWeights {
        layout: template.layout.clone(),
        tensors: template
            .tensors
            .iter()
            .map(|t| vec![value; t.len()])
            .collect(),
    }
}

/// Criterion 8 — FedAvg algebra: fixed point on identical inputs, the
/// (3,1) worked example, delta-form equivalence, coefficient normalization.
#[test]
fn a08_fedavg_algebra() {
    let model = build_model(3, 4, 17).unwrap();
    let w = model.get_weights();

    // Identical clients: aggregation is an exact fixed point.
    let avg = fedavg(&[w.clone(), w.clone()], Some(&[5, 5])).unwrap();
    assert_eq!(avg.tensors, w.tensors, "identical-weights fixed point must be exact");

    // Worked example: values 2 and 4 at sizes (3,1) -> 0.75*2 + 0.25*4 = 2.5.
    let a = constant_weights(&w, 2.0);
    let b = constant_weights(&w, 4.0);
    let avg = fedavg(&[a.clone(), b.clone()], Some(&[3, 1])).unwrap();
    for tensor in &avg.tensors {
        for &v in tensor {
            assert_eq!(v, 2.5, "sizes (3,1) average of 2 and 4 must be exactly 2.5");
        }
    }

    // Delta aggregation equals direct weight aggregation within 1e-9.
    let global = constant_weights(&w, 1.0);
    let direct = fedavg(&[a.clone(), b.clone()], Some(&[3, 1])).unwrap();
    let via_delta = fedavg_delta(&global, &[a, b], Some(&[3, 1])).unwrap();
    for (td, tv) in direct.tensors.iter().zip(&via_delta.tensors) {
        for (d, v) in td.iter().zip(tv) {
            assert!((d - v).abs() <= 1e-9, "delta form diverges: {d} vs {v}");
        }
    }

    // Coefficients always sum to 1 within 1e-12.
    for sizes in [vec![1usize, 1], vec![3, 1], vec![7, 11, 13], vec![1000, 1, 1]] {
        let coeffs = fedavg_coefficients(Some(&sizes), sizes.len()).unwrap();
        let sum: f64 = coeffs.iter().sum();
        assert!((sum - 1.0).abs() <= 1e-12, "sizes {sizes:?}: sum {sum}");
    }
    let uniform = fedavg_coefficients(None, 3).unwrap();
    let sum: f64 = uniform.iter().sum();
    assert!((sum - 1.0).abs() <= 1e-12);
    pass(
        "a08",
        "fedavg algebra",
        "fixed point exact, (3,1) example = 2.5 exact, delta form within 1e-9, coefficients normalized",
    );
}

/// Criterion 9 — phase-2 end to end: 2 clients, 5 rounds, 3 folds, 25
/// epochs on separable synthetic data; final level-3 accuracy >= 0.97,
/// progression monotone up to noise, dummy-formatted labels, zero-match
/// privacy audit. Budget 10 minutes.
#[test]
fn a09_phase2_end_to_end() {
    let started = Instant::now();
    let tmp = tempfile::TempDir::new().unwrap();
    let mut config = experiment_config(tmp.path(), synthetic_config(9, 100, 6.0, 0.0, 77), 77);
    config.phase2.n_clients = 2;
    config.phase2.rounds = 5;
    config.phase2.folds = 3;
    config.phase2.epochs = 25;
    let out = cmd_phase2(&config, "acceptance-phase2-admin").unwrap();

    assert!(
        out.final_test_accuracy >= 0.97,
        "final accuracy {:.4} below 0.97",
        out.final_test_accuracy
    );
    let round1 = out.round_test_accuracies[0];
    assert!(
        out.final_test_accuracy >= round1 - 0.02,
        "final {:.4} fell more than 0.02 below round 1 {round1:.4}",
        out.final_test_accuracy
    );
    assert_eq!(out.round_test_accuracies.len(), 5);

    // Confusion axes are dummy names of the shape <word><3 digits>.
    let confusion =
        std::fs::read_to_string(out.out_dir.join("confusion.csv")).unwrap();
    let header: Vec<&str> = confusion.lines().next().unwrap().split(',').collect();
    assert_eq!(header.len(), 10, "9 dummy labels plus the corner cell");
    for name in &header[1..] {
        assert!(is_valid_dummy(name), "label {name} is not dummy-formatted");
        let digits = &name[name.len() - 3..];
        assert!(
            digits.chars().all(|c| c.is_ascii_digit())
                && name[..name.len() - 3]
                    .chars()
                    .all(|c| c.is_ascii_lowercase()),
            "label {name} does not match <lowercase word><3 digits>"
        );
    }

    // The in-run audit greps every emitted artifact for true-id tokens.
    assert!(out.audit_passed, "privacy audit found true-id tokens");
    let elapsed = started.elapsed();
    assert!(elapsed <= Duration::from_secs(600), "took {elapsed:?}, budget 10 min");
    pass(
        "a09",
        "phase-2 end to end",
        &format!(
            "final accuracy {:.4} (round 1 {round1:.4}), dummy labels, clean audit, {elapsed:?}",
            out.final_test_accuracy
        ),
    );
}

/// Collects relative paths of all files under `root`, skipping the
/// timestamp-bearing files (provenance, vault store).
fn artifact_files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(dir: &Path, root: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(&path, root, out);
                continue;
            }
            let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
            let name = path.file_name().unwrap().to_string_lossy();
            if name == "provenance.json" || name == "vault.json" {
                continue; // carry wall-clock timestamps by design
            }
            out.insert(rel, std::fs::read(&path).unwrap());
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

/// Criterion 10 — determinism: every command, re-run with the same config
/// and seed into a fresh directory, emits byte-identical artifacts
/// (timestamp-bearing provenance/vault-store files excluded).
#[test]
fn a10_determinism() {
    let bin = env!("CARGO_BIN_EXE_gazelab");
    let tmp = tempfile::TempDir::new().unwrap();
    let config_path = tmp.path().join("config.json");
    std::fs::write(
        &config_path,
        r#"{
  "dataset": {
    "kind": "synthetic",
    "config": {
      "n_students": 4,
      "levels": [1, 2, 3],
      "records_per_student_per_level": 10,
      "signature_separation": 6.0,
      "level_drift": 2.0,
      "diagnosis_assignment": {"1": "MDI", "2": "DD", "3": "MDI", "4": "DD"},
      "seed": 13
    }
  },
  "scenario": {"cv_folds": 3, "kmeans_k_range": [2, 3, 4], "iforest_trees": 25},
  "phase2": {"rounds": 2, "folds": 2, "epochs": 3, "vault_iterations": 25},
  "seed": 13,
  "out_dir": "unused"
}"#,
    )
    .unwrap();

    let mut resolve_outputs = Vec::new();
    let run_dirs: Vec<_> = ["first", "second"]
        .iter()
        .map(|label| {
            let out_dir = tmp.path().join(label);
            for cmd in ["synth", "scenario1", "scenario2", "scenario3", "scenario4", "phase2"] {
                let output = std::process::Command::new(bin)
                    .args([
                        "--config",
                        config_path.to_str().unwrap(),
                        "--out",
                        out_dir.to_str().unwrap(),
                        cmd,
                    ])
                    .env("GAZELAB_ADMIN_CREDENTIAL", "determinism-check")
                    .output()
                    .unwrap();
                assert!(
                    output.status.success(),
                    "{label}/{cmd}: {}",
                    String::from_utf8_lossy(&output.stderr)
                );
            }
            // Resolve the same dummy in both runs; the printed id must match.
            let confusion =
                std::fs::read_to_string(out_dir.join("phase2/confusion.csv")).unwrap();
            let dummy = confusion
                .lines()
                .next()
                .unwrap()
                .split(',')
                .nth(1)
                .unwrap()
                .to_string();
            let output = std::process::Command::new(bin)
                .args([
                    "--config",
                    config_path.to_str().unwrap(),
                    "--out",
                    out_dir.to_str().unwrap(),
                    "resolve",
                    &dummy,
                ])
                .env("GAZELAB_ADMIN_CREDENTIAL", "determinism-check")
                .output()
                .unwrap();
            assert!(output.status.success());
            resolve_outputs.push((dummy, String::from_utf8_lossy(&output.stdout).into_owned()));
            out_dir
        })
        .collect();

    let first = artifact_files(&run_dirs[0]);
    let second = artifact_files(&run_dirs[1]);
    let names: Vec<&String> = first.keys().collect();
    assert_eq!(
        names,
        second.keys().collect::<Vec<_>>(),
        "runs emitted different file sets"
    );
    let mut compared = 0;
    for (name, bytes) in &first {
        assert_eq!(
            bytes,
            second.get(name).unwrap(),
            "artifact {name} differs between identical runs"
        );
        compared += 1;
    }
    assert!(compared >= 25, "only {compared} artifacts compared");
    assert_eq!(resolve_outputs[0], resolve_outputs[1]);
    pass(
        "a10",
        "determinism",
        &format!("{compared} artifacts byte-identical across re-runs of all commands"),
    );
}

/// Criterion 11 — preprocessing invariants: stratified splits and folds
/// deviate by at most one sample per class, folds partition the data, and
/// scaler moments hit their targets within 1e-9.
#[test]
fn a11_preprocessing_invariants() {
    // Uneven class sizes: 10, 11, 23, 40.
    let mut labels = Vec::new();
    for (class, count) in [(0usize, 10usize), (1, 11), (2, 23), (3, 40)] {
        labels.extend(std::iter::repeat(class).take(count));
    }

    let plan = random_stratified_split(&labels, 0.6, 2024).unwrap();
    let mut train_counts = BTreeMap::new();
    for &i in &plan.train_indices {
        *train_counts.entry(labels[i]).or_insert(0usize) += 1;
    }
    for (class, count) in [(0usize, 10usize), (1, 11), (2, 23), (3, 40)] {
        let got = train_counts[&class] as f64;
        let exact = 0.6 * count as f64;
        assert!(
            (got - exact).abs() <= 1.0,
            "class {class}: train count {got} deviates from {exact} by more than 1"
        );
    }
    assert_eq!(plan.train_indices.len() + plan.test_indices.len(), labels.len());

    let folds = stratified_kfold(&labels, 5, 2024).unwrap();
    let mut seen = BTreeSet::new();
    for fold in &folds.folds {
        for &i in fold {
            assert!(seen.insert(i), "index {i} appears in two folds");
        }
    }
    assert_eq!(seen.len(), labels.len(), "folds must cover every sample");
    for class in 0..4usize {
        let per_fold: Vec<usize> = folds
            .folds
            .iter()
            .map(|f| f.iter().filter(|&&i| labels[i] == class).count())
            .collect();
        let min = per_fold.iter().min().unwrap();
        let max = per_fold.iter().max().unwrap();
        assert!(
            max - min <= 1,
            "class {class} fold counts {per_fold:?} deviate by more than 1"
        );
    }

    // Scaler moments on an arbitrary matrix.
    let x = Array2::from_shape_fn((48, 7), |(i, j)| {
        ((i * 31 + j * 17) as f64 * 0.734).sin() * (j as f64 + 1.0) * 3.0 + j as f64
    });
    let z = FittedScaler::fit(&x.view(), ScalerKind::ZScore)
        .unwrap()
        .transform(&x.view())
        .unwrap();
    for j in 0..z.ncols() {
        let col: Array1<f64> = z.column(j).to_owned();
        let mean = col.sum() / col.len() as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
        assert!(mean.abs() <= 1e-9, "zscore column {j} mean {mean}");
        assert!((var - 1.0).abs() <= 1e-9, "zscore column {j} variance {var}");
    }
    let m = FittedScaler::fit(&x.view(), ScalerKind::MinMax)
        .unwrap()
        .transform(&x.view())
        .unwrap();
    for j in 0..m.ncols() {
        let col = m.column(j);
        let min = col.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(min.abs() <= 1e-9, "minmax column {j} min {min}");
        assert!((max - 1.0).abs() <= 1e-9, "minmax column {j} max {max}");
    }
    pass(
        "a11",
        "preprocessing invariants",
        "split/fold class deviations <= 1, folds partition the data, scaler moments within 1e-9",
    );
}
