//! Simulated multi-client federated training.
//!
//! Clients hold disjoint stratified shares of the training data, labeled
//! only with dummy-identity indices — true identities never enter this
//! module. Each round the server broadcasts the global weights, every
//! client runs k-fold local training and returns its best fold, and the
//! server aggregates the client weights into the next global model
//! (federated averaging), then scores it on a held-out test set.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{build_model, ModelWeights, TrainConfig};
use crate::preprocess::stratified_kfold;
use crate::rng::indexed_stream;

/// One client's local dataset. Labels are dummy-identity indices.
#[derive(Debug, Clone)]
pub struct ClientDataset {
    pub client_id: usize,
    pub x: Array2<f64>,
    pub y: Vec<usize>,
}

impl ClientDataset {
    pub fn size(&self) -> usize {
        self.y.len()
    }
}

/// Outcome of one client's local k-fold training.
#[derive(Debug, Clone)]
pub struct LocalTrainResult {
    /// Weights of the best-validation fold.
    pub weights: ModelWeights,
    /// That fold's validation accuracy.
    pub val_accuracy: f64,
    /// Validation accuracy of every fold, in fold order.
    pub fold_accuracies: Vec<f64>,
}

/// One federated round's record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 1-based round index.
    pub round: usize,
    /// Best local validation accuracy per client, in client order.
    pub client_val_accuracies: Vec<f64>,
    /// Global test accuracy after aggregation.
    pub test_accuracy: f64,
    /// The aggregated global weights.
    #[serde(skip)]
    pub weights: Option<ModelWeights>,
}

/// How client weights combine into the global model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Convex combination weighted by client dataset size (default).
    WeightedBySize,
    /// Uniform average, computed in delta form against the previous
    /// global weights where one exists.
    UniformDelta,
}

/// Splits `(x, y)` into `n_clients` stratified near-equal shares:
/// per-class client counts differ by at most one. Deterministic by seed.
pub fn partition_clients(
    x: &ArrayView2<f64>,
    y: &[usize],
    n_clients: usize,
    seed: u64,
) -> Result<Vec<ClientDataset>> {
    if n_clients < 2 {
        return Err(Error::Config(format!(
            "need at least 2 clients, got {n_clients}"
        )));
    }
    if x.nrows() != y.len() {
        return Err(Error::Data(format!(
            "{} rows but {} labels",
            x.nrows(),
            y.len()
        )));
    }
    let mut by_class: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, &label) in y.iter().enumerate() {
        by_class.entry(label).or_default().push(i);
    }
    for (c, idx) in &by_class {
        if idx.len() < n_clients {
            return Err(Error::Data(format!(
                "class {c} has {} sample(s); need at least one per client ({n_clients})",
                idx.len()
            )));
        }
    }
    let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); n_clients];
    for (rank, idx) in by_class.values().enumerate() {
        let mut idx = idx.clone();
        let mut rng = indexed_stream(seed, "fl-partition", rank as u64);
        for i in (1..idx.len()).rev() {
            let j = rng.random_range(0..=i);
            idx.swap(i, j);
        }
        // Rotate the dealing start per class so leftover samples spread
        // across clients instead of always landing on client 0.
        let start = rank % n_clients;
        for (pos, sample) in idx.into_iter().enumerate() {
            assigned[(start + pos) % n_clients].push(sample);
        }
    }
    Ok(assigned
        .into_iter()
        .enumerate()
        .map(|(client_id, mut rows)| {
            rows.sort_unstable();
            let mut cx = Array2::zeros((rows.len(), x.ncols()));
            let mut cy = Vec::with_capacity(rows.len());
            for (r, &i) in rows.iter().enumerate() {
                cx.row_mut(r).assign(&x.row(i));
                cy.push(y[i]);
            }
            ClientDataset {
                client_id,
                x: cx,
                y: cy,
            }
        })
        .collect())
}

fn sub_seed(seed: u64, name: &str, index: u64) -> u64 {
    indexed_stream(seed, name, index).random()
}

/// Trains one client with stratified k-fold cross-validation and returns
/// the weights of the best-validation fold (ties break toward the lowest
/// fold index). When `global_weights` is provided each fold's model starts
/// from it; a layout mismatch falls back to training from scratch instead
/// of failing.
pub fn local_train_kfold(
    client: &ClientDataset,
    global_weights: Option<&ModelWeights>,
    num_classes: usize,
    n_folds: usize,
    epochs: usize,
    seed: u64,
) -> Result<LocalTrainResult> {
    let plan = stratified_kfold(&client.y, n_folds, sub_seed(seed, "fl-fold-plan", 0))?;
    let mut best: Option<(usize, f64, ModelWeights)> = None;
    let mut fold_accuracies = Vec::with_capacity(n_folds);
    for fold in 0..plan.k() {
        let (train_idx, val_idx) = plan.train_test(fold)?;
        let (tx, ty) = take(&client.x, &client.y, &train_idx);
        let (vx, vy) = take(&client.x, &client.y, &val_idx);
        let model_seed = sub_seed(seed, "fl-fold-model", fold as u64);
        let mut model = build_model(client.x.ncols(), num_classes, model_seed)?;
        if let Some(w) = global_weights {
            // Algorithm-2 fallback: an incompatible snapshot means this
            // fold trains from scratch rather than aborting.
            let _ = model.set_weights(w);
        }
        let config = TrainConfig {
            epochs,
            seed: model_seed,
            ..TrainConfig::default()
        };
        model.train(&tx.view(), &ty, &vx.view(), &vy, &config)?;
        let (_, val_acc) = model.evaluate(&vx.view(), &vy, config.l2_lambda)?;
        fold_accuracies.push(val_acc);
        if best.as_ref().map(|(_, acc, _)| val_acc > *acc).unwrap_or(true) {
            best = Some((fold, val_acc, model.get_weights()));
        }
    }
    let (_, val_accuracy, weights) = best.expect("k >= 2 folds ran");
    Ok(LocalTrainResult {
        weights,
        val_accuracy,
        fold_accuracies,
    })
}

fn take(x: &Array2<f64>, y: &[usize], idx: &[usize]) -> (Array2<f64>, Vec<usize>) {
    let mut ox = Array2::zeros((idx.len(), x.ncols()));
    let mut oy = Vec::with_capacity(idx.len());
    for (r, &i) in idx.iter().enumerate() {
        ox.row_mut(r).assign(&x.row(i));
        oy.push(y[i]);
    }
    (ox, oy)
}

/// Aggregation coefficients: proportional to `sizes` when given, else
/// uniform `1/n`. They always sum to 1.
pub fn fedavg_coefficients(sizes: Option<&[usize]>, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::Config("fedavg: empty weight list".into()));
    }
    match sizes {
        None => Ok(vec![1.0 / n as f64; n]),
        Some(sizes) => {
            if sizes.len() != n {
                return Err(Error::Config(format!(
                    "fedavg: {} weight sets but {} sizes",
                    n,
                    sizes.len()
                )));
            }
            if sizes.iter().any(|&s| s == 0) {
                return Err(Error::Config("fedavg: client sizes must be positive".into()));
            }
            let total: f64 = sizes.iter().map(|&s| s as f64).sum();
            Ok(sizes.iter().map(|&s| s as f64 / total).collect())
        }
    }
}

fn check_layouts(weights_list: &[ModelWeights]) -> Result<()> {
    let first = &weights_list[0];
    for (i, w) in weights_list.iter().enumerate().skip(1) {
        if w.layout != first.layout {
            return Err(Error::Data(format!(
                "fedavg: client {i} weight layout differs from client 0"
            )));
        }
    }
    Ok(())
}

/// Federated averaging: the elementwise convex combination of client
/// weights (batch-norm running statistics included), weighted by dataset
/// size when `sizes` is given and uniformly otherwise.
pub fn fedavg(weights_list: &[ModelWeights], sizes: Option<&[usize]>) -> Result<ModelWeights> {
    let coeffs = fedavg_coefficients(sizes, weights_list.len())?;
    check_layouts(weights_list)?;
    debug_assert!((coeffs.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    let mut out = ModelWeights {
        layout: weights_list[0].layout.clone(),
        tensors: weights_list[0]
            .tensors
            .iter()
            .map(|t| vec![0.0; t.len()])
            .collect(),
    };
    for (w, &c) in weights_list.iter().zip(&coeffs) {
        for (acc, tensor) in out.tensors.iter_mut().zip(&w.tensors) {
            for (a, v) in acc.iter_mut().zip(tensor) {
                *a += c * v;
            }
        }
    }
    Ok(out)
}

/// Delta-form federated update: `global + sum_s c_s * (w_s - global)`.
/// Algebraically equal to [`fedavg`] when every client started from
/// `global`; kept as the literal uniform-delta update rule.
pub fn fedavg_delta(
    global: &ModelWeights,
    weights_list: &[ModelWeights],
    sizes: Option<&[usize]>,
) -> Result<ModelWeights> {
    let coeffs = fedavg_coefficients(sizes, weights_list.len())?;
    check_layouts(weights_list)?;
    for (i, w) in weights_list.iter().enumerate() {
        if w.layout != global.layout {
            return Err(Error::Data(format!(
                "fedavg: client {i} weight layout differs from the global model"
            )));
        }
    }
    let mut out = global.clone();
    for (w, &c) in weights_list.iter().zip(&coeffs) {
        for (acc, (tensor, base)) in out
            .tensors
            .iter_mut()
            .zip(w.tensors.iter().zip(&global.tensors))
        {
            for (a, (v, g)) in acc.iter_mut().zip(tensor.iter().zip(base)) {
                *a += c * (v - g);
            }
        }
    }
    Ok(out)
}

/// Runs the full federated simulation: per round, broadcast the global
/// weights (round 1 starts every client from scratch), train each client
/// sequentially with k-fold local training, aggregate, and score the
/// global model on the held-out test set. Any client failure aborts the
/// round with a diagnostic — there is no partial aggregation.
#[allow(clippy::too_many_arguments)]
pub fn run_federated(
    clients: &[ClientDataset],
    test_x: &ArrayView2<f64>,
    test_y: &[usize],
    num_classes: usize,
    n_rounds: usize,
    n_folds: usize,
    epochs: usize,
    aggregation: Aggregation,
    seed: u64,
) -> Result<Vec<RoundRecord>> {
    if clients.len() < 2 {
        return Err(Error::Config(format!(
            "need at least 2 clients, got {}",
            clients.len()
        )));
    }
    if n_rounds == 0 {
        return Err(Error::Config("need at least 1 round".into()));
    }
    let input_dim = test_x.ncols();
    for c in clients {
        if c.x.ncols() != input_dim {
            return Err(Error::Data(format!(
                "client {} has {} features, test set has {input_dim}",
                c.client_id,
                c.x.ncols()
            )));
        }
    }
    let mut eval_model = build_model(input_dim, num_classes, sub_seed(seed, "fl-eval-model", 0))?;
    let mut global: Option<ModelWeights> = None;
    let mut records = Vec::with_capacity(n_rounds);
    for round in 1..=n_rounds {
        let mut client_weights = Vec::with_capacity(clients.len());
        let mut client_accs = Vec::with_capacity(clients.len());
        let sizes: Vec<usize> = clients.iter().map(|c| c.size()).collect();
        for client in clients {
            let client_seed = sub_seed(
                seed,
                "fl-round-client",
                (round as u64) << 32 | client.client_id as u64,
            );
            let result = local_train_kfold(
                client,
                global.as_ref(),
                num_classes,
                n_folds,
                epochs,
                client_seed,
            )
            .map_err(|e| {
                Error::Data(format!(
                    "round {round}, client {}: local training failed: {e}",
                    client.client_id
                ))
            })?;
            client_weights.push(result.weights);
            client_accs.push(result.val_accuracy);
        }
        let aggregated = match (aggregation, &global) {
            (Aggregation::WeightedBySize, _) => fedavg(&client_weights, Some(&sizes))?,
            (Aggregation::UniformDelta, Some(g)) => fedavg_delta(g, &client_weights, None)?,
            (Aggregation::UniformDelta, None) => fedavg(&client_weights, None)?,
        };
        eval_model.set_weights(&aggregated)?;
        let (_, test_accuracy) =
            eval_model.evaluate(test_x, test_y, TrainConfig::default().l2_lambda)?;
        global = Some(aggregated.clone());
        records.push(RoundRecord {
            round,
            client_val_accuracies: client_accs,
            test_accuracy,
            weights: Some(aggregated),
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn blobs(n_classes: usize, per_class: usize, dim: usize, seed: u64) -> (Array2<f64>, Vec<usize>) {
        let mut rng = crate::rng::named_stream(seed, "fl-test-blobs");
        let mut x = Array2::zeros((n_classes * per_class, dim));
        let mut y = Vec::new();
        for c in 0..n_classes {
            for i in 0..per_class {
                for j in 0..dim {
                    let noise: f64 = rng.sample(StandardNormal);
                    x[(c * per_class + i, j)] =
                        if j == c % dim { 8.0 } else { 0.0 } + 0.3 * noise;
                }
            }
            y.extend(std::iter::repeat(c).take(per_class));
        }
        (x, y)
    }

    fn toy_weights(values: &[f64]) -> ModelWeights {
        ModelWeights {
            layout: vec![crate::nn::TensorSpec {
                name: "t".into(),
                shape: vec![values.len()],
            }],
            tensors: vec![values.to_vec()],
        }
    }

    #[test]
    fn partition_is_stratified_and_deterministic() {
        // 900 samples, 9 balanced classes, 2 clients -> 450 each,
        // 50 per class per client.
        let (x, y) = blobs(9, 100, 3, 1);
        let clients = partition_clients(&x.view(), &y, 2, 7).unwrap();
        assert_eq!(clients.len(), 2);
        for c in &clients {
            assert_eq!(c.size(), 450);
            let mut counts = std::collections::BTreeMap::new();
            for &label in &c.y {
                *counts.entry(label).or_insert(0usize) += 1;
            }
            assert_eq!(counts.len(), 9);
            assert!(counts.values().all(|&n| n == 50), "counts {counts:?}");
        }
        // Disjoint and covering: total rows match and no feature row of
        // client 0 appears in client 1 (blob noise makes rows unique).
        let again = partition_clients(&x.view(), &y, 2, 7).unwrap();
        for (a, b) in clients.iter().zip(&again) {
            assert_eq!(a.x, b.x);
            assert_eq!(a.y, b.y);
        }
        let other = partition_clients(&x.view(), &y, 2, 8).unwrap();
        assert_ne!(clients[0].x, other[0].x);
    }

    #[test]
    fn partition_spreads_odd_classes_and_rejects_tiny_ones() {
        // 3 classes of 3 samples, 2 clients: per-class counts differ by
        // <= 1 and the rotation spreads the extras (sizes 5 and 4, not 6/3).
        let (x, y) = blobs(3, 3, 2, 2);
        let clients = partition_clients(&x.view(), &y, 2, 1).unwrap();
        let mut sizes: Vec<usize> = clients.iter().map(|c| c.size()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![4, 5]);
        for c in &clients {
            let mut counts = std::collections::BTreeMap::new();
            for &label in &c.y {
                *counts.entry(label).or_insert(0usize) += 1;
            }
            assert!(counts.values().all(|&n| n == 1 || n == 2));
        }

        // A class with a single sample cannot reach both clients.
        let x1 = ndarray::array![[0.0, 0.0], [1.0, 1.0], [1.1, 0.9]];
        let y1 = vec![0usize, 1, 1];
        assert!(partition_clients(&x1.view(), &y1, 2, 1).is_err());
        assert!(partition_clients(&x.view(), &y, 1, 1).is_err());
    }

    #[test]
    fn fedavg_identity_and_analytic_examples() {
        let w = toy_weights(&[2.0, -3.5, 0.25]);
        // Identical weights are a fixed point (uniform coefficients).
        let avg = fedavg(&[w.clone(), w.clone()], None).unwrap();
        assert_eq!(avg, w);
        // Equal sizes, scalars 2 and 4 -> 3.
        let avg = fedavg(
            &[toy_weights(&[2.0]), toy_weights(&[4.0])],
            Some(&[5, 5]),
        )
        .unwrap();
        assert_eq!(avg.tensors[0][0], 3.0);
        // Sizes (3, 1): 0.75*2 + 0.25*4 = 2.5 exactly.
        let avg = fedavg(
            &[toy_weights(&[2.0]), toy_weights(&[4.0])],
            Some(&[3, 1]),
        )
        .unwrap();
        assert_eq!(avg.tensors[0][0], 2.5);
    }

    #[test]
    fn fedavg_coefficients_sum_to_one() {
        for sizes in [vec![1usize, 1], vec![3, 1], vec![7, 11, 13], vec![450, 450]] {
            let coeffs = fedavg_coefficients(Some(&sizes), sizes.len()).unwrap();
            let sum: f64 = coeffs.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12, "sizes {sizes:?} sum {sum}");
        }
        let coeffs = fedavg_coefficients(None, 3).unwrap();
        assert!((coeffs.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        assert!(fedavg_coefficients(None, 0).is_err());
        assert!(fedavg_coefficients(Some(&[1, 0]), 2).is_err());
        assert!(fedavg_coefficients(Some(&[1]), 2).is_err());
    }

    #[test]
    fn fedavg_rejects_layout_mismatch_and_empty() {
        let a = toy_weights(&[1.0, 2.0]);
        let b = toy_weights(&[1.0]);
        assert!(fedavg(&[a.clone(), b], None).is_err());
        assert!(fedavg(&[], None).is_err());
        assert!(fedavg_delta(&a, &[toy_weights(&[1.0])], None).is_err());
    }

    #[test]
    fn delta_form_matches_weighted_average() {
        // theta + sum c_s (w_s - theta) == sum c_s w_s when all clients
        // start from theta; the two float paths agree within 1e-9.
        let mut rng = crate::rng::named_stream(5, "fl-delta-test");
        let rand_w = |rng: &mut rand_chacha::ChaCha8Rng| {
            let vals: Vec<f64> = (0..64).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            toy_weights(&vals)
        };
        let global = rand_w(&mut rng);
        let clients = [rand_w(&mut rng), rand_w(&mut rng), rand_w(&mut rng)];
        for sizes in [None, Some([3usize, 1, 4].as_slice())] {
            let direct = fedavg(&clients, sizes).unwrap();
            let delta = fedavg_delta(&global, &clients, sizes).unwrap();
            for (a, b) in direct.tensors[0].iter().zip(&delta.tensors[0]) {
                assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn local_kfold_learns_separable_data_and_survives_bad_global() {
        let (x, y) = blobs(3, 12, 4, 3);
        let client = ClientDataset {
            client_id: 0,
            x,
            y,
        };
        let result = local_train_kfold(&client, None, 3, 2, 30, 11).unwrap();
        assert_eq!(result.fold_accuracies.len(), 2);
        assert_eq!(result.val_accuracy, 1.0);
        // Selection rule: the reported accuracy is the max over folds.
        let max = result
            .fold_accuracies
            .iter()
            .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        assert_eq!(result.val_accuracy, max);

        // A snapshot from an incompatible model (wrong class count) forces
        // the scratch fallback, and the call still succeeds.
        let wrong = build_model(4, 7, 1).unwrap().get_weights();
        let fallback = local_train_kfold(&client, Some(&wrong), 3, 2, 30, 11).unwrap();
        assert_eq!(fallback.val_accuracy, result.val_accuracy);
        assert_eq!(fallback.weights, result.weights);
    }

    #[test]
    fn one_round_with_identical_clients_is_a_fixed_point() {
        let (x, y) = blobs(3, 9, 4, 4);
        let client = ClientDataset {
            client_id: 0,
            x: x.clone(),
            y: y.clone(),
        };
        // Two byte-identical clients (same id ensures the same local seed,
        // so both produce the same weights; aggregation must return them).
        let twin = ClientDataset {
            client_id: 0,
            x: x.clone(),
            y: y.clone(),
        };
        let (tx, ty) = blobs(3, 4, 4, 5);
        let records = run_federated(
            &[client.clone(), twin],
            &tx.view(),
            &ty,
            3,
            1,
            2,
            8,
            Aggregation::WeightedBySize,
            9,
        )
        .unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].round, 1);
        // Identical clients with identical seeds -> aggregate equals the
        // single client's local weights, so the global accuracy equals the
        // single-client accuracy.
        let local = local_train_kfold(
            &client,
            None,
            3,
            2,
            8,
            sub_seed(9, "fl-round-client", 1u64 << 32),
        )
        .unwrap();
        let agg = records[0].weights.as_ref().unwrap();
        assert_eq!(agg, &local.weights);
    }

    #[test]
    fn rounds_are_contiguous_and_deterministic() {
        let (x, y) = blobs(3, 8, 3, 6);
        let clients = partition_clients(&x.view(), &y, 2, 6).unwrap();
        let (tx, ty) = blobs(3, 3, 3, 7);
        let run = |agg| {
            run_federated(&clients, &tx.view(), &ty, 3, 2, 2, 4, agg, 13).unwrap()
        };
        let records = run(Aggregation::WeightedBySize);
        assert_eq!(
            records.iter().map(|r| r.round).collect::<Vec<_>>(),
            vec![1, 2]
        );
        assert!(records
            .iter()
            .all(|r| r.client_val_accuracies.len() == 2));
        let again = run(Aggregation::WeightedBySize);
        for (a, b) in records.iter().zip(&again) {
            assert_eq!(a.weights, b.weights);
            assert_eq!(a.test_accuracy, b.test_accuracy);
        }
        // The uniform-delta mode also runs end to end.
        let uniform = run(Aggregation::UniformDelta);
        assert_eq!(uniform.len(), 2);
    }

    #[test]
    fn client_failure_aborts_the_round() {
        let (x, y) = blobs(3, 8, 3, 8);
        let mut clients = partition_clients(&x.view(), &y, 2, 8).unwrap();
        // Starve client 1 of one class so its fold plan fails.
        let keep: Vec<usize> = clients[1]
            .y
            .iter()
            .enumerate()
            .filter(|(_, &l)| l != 2)
            .map(|(i, _)| i)
            .collect();
        let (nx, ny) = take(&clients[1].x, &clients[1].y, &keep);
        clients[1].x = nx;
        clients[1].y = ny;
        clients[1].y.push(2); // one lone sample of class 2
        let mut grown = Array2::zeros((clients[1].x.nrows() + 1, 3));
        for (r, row) in clients[1].x.rows().into_iter().enumerate() {
            grown.row_mut(r).assign(&row);
        }
        clients[1].x = grown;
        let (tx, ty) = blobs(3, 3, 3, 9);
        let err = run_federated(
            &clients,
            &tx.view(),
            &ty,
            3,
            1,
            2,
            2,
            Aggregation::WeightedBySize,
            10,
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("client 1"), "diagnostic was: {msg}");
    }
}
