//! Residual feed-forward classifier and its training loop.
//!
//! The architecture is fixed: an input batch-norm, a 256-wide and a
//! 128-wide dense block (each dense -> batch-norm -> LeakyReLU(0.1) ->
//! dropout), one residual block of two 128-wide dense sub-blocks whose
//! output is added back to the block input, a final dropout, and a dense
//! softmax head. Training uses mini-batch Adam on sparse categorical
//! cross-entropy plus an L2 penalty on dense kernels only, with
//! reduce-on-plateau learning-rate decay and early stopping that restores
//! the best validation weights.
//!
//! Everything runs in 64-bit floats and is deterministic per seed: dense
//! kernels draw from keyed init streams, dropout masks from the model's
//! own RNG stream, and batch shuffling from a per-epoch keyed stream.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::{indexed_stream, named_stream};

/// Batch-norm variance stabilizer.
const BN_EPS: f64 = 1e-3;
/// Batch-norm running-statistics momentum: `running = m*running + (1-m)*batch`.
const BN_MOMENTUM: f64 = 0.99;
/// LeakyReLU negative-side slope.
const LEAKY_ALPHA: f64 = 0.1;
/// Magic bytes of the binary weight container.
const WEIGHTS_MAGIC: &[u8; 4] = b"GZNW";

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
enum Layer {
    Dense {
        /// Kernel, `in x out`.
        w: Array2<f64>,
        b: Array1<f64>,
    },
    BatchNorm {
        gamma: Array1<f64>,
        beta: Array1<f64>,
        running_mean: Array1<f64>,
        running_var: Array1<f64>,
    },
    LeakyRelu,
    Dropout {
        rate: f64,
    },
    /// Remembers the current activation as the residual skip input.
    SaveSkip,
    /// Adds the remembered skip activation back in.
    AddSkip,
}

impl Layer {
    fn dense(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Layer {
        // Glorot/Xavier uniform: U(-limit, limit), limit = sqrt(6/(in+out)).
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = Array2::from_shape_fn((fan_in, fan_out), |_| {
            (rng.random::<f64>() * 2.0 - 1.0) * limit
        });
        Layer::Dense {
            w,
            b: Array1::zeros(fan_out),
        }
    }

    fn batch_norm(width: usize) -> Layer {
        Layer::BatchNorm {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
        }
    }

    /// Mutable views of the trainable tensors (order: kernel, bias / gamma,
    /// beta). Running statistics are not trainable.
    fn trainable_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Layer::Dense { w, b } => vec![
                w.as_slice_mut().expect("dense kernel is contiguous"),
                b.as_slice_mut().expect("bias is contiguous"),
            ],
            Layer::BatchNorm { gamma, beta, .. } => vec![
                gamma.as_slice_mut().expect("gamma is contiguous"),
                beta.as_slice_mut().expect("beta is contiguous"),
            ],
            _ => Vec::new(),
        }
    }

    fn n_trainable_tensors(&self) -> usize {
        match self {
            Layer::Dense { .. } | Layer::BatchNorm { .. } => 2,
            _ => 0,
        }
    }
}

/// Per-layer gradients produced by one backward pass.
#[derive(Debug, Clone)]
enum LayerGrad {
    Dense { dw: Array2<f64>, db: Array1<f64> },
    BatchNorm { dgamma: Array1<f64>, dbeta: Array1<f64> },
}

impl LayerGrad {
    fn slices(&self) -> Vec<&[f64]> {
        match self {
            LayerGrad::Dense { dw, db } => vec![
                dw.as_slice().expect("contiguous"),
                db.as_slice().expect("contiguous"),
            ],
            LayerGrad::BatchNorm { dgamma, dbeta } => vec![
                dgamma.as_slice().expect("contiguous"),
                dbeta.as_slice().expect("contiguous"),
            ],
        }
    }
}

/// Forward-pass cache for one layer.
#[derive(Debug, Default)]
struct TapeEntry {
    /// Layer input (dense, leaky-relu).
    input: Option<Array2<f64>>,
    /// Batch-norm normalized activations and 1/sqrt(var+eps).
    bn: Option<(Array2<f64>, Array1<f64>)>,
    /// Inverted dropout mask (already scaled by 1/keep).
    mask: Option<Array2<f64>>,
}

/// Forward-pass mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, dropout active (unless disabled), running stats
    /// updated.
    Train,
    /// Running statistics, no dropout, no mutation.
    Infer,
}

// ---------------------------------------------------------------------------
// Weights container
// ---------------------------------------------------------------------------

/// Shape descriptor of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

/// A flat, ordered snapshot of every model parameter, including batch-norm
/// running statistics. The layout descriptor makes transfers between
/// compatible models explicit and rejects everything else.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelWeights {
    pub layout: Vec<TensorSpec>,
    pub tensors: Vec<Vec<f64>>,
}

impl ModelWeights {
    /// Writes the weights to a binary container: magic, version, a JSON
    /// layout header, then the raw little-endian f64 tensor data.
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = serde_json::to_vec(&self.layout)
            .map_err(|e| Error::Data(format!("weight layout serialization failed: {e}")))?;
        let mut bytes = Vec::new();
        bytes.extend_from_slice(WEIGHTS_MAGIC);
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&header);
        for tensor in &self.tensors {
            for v in tensor {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        crate::report::write_atomic(path, &bytes)
    }

    /// Reads a container written by [`ModelWeights::save`].
    pub fn load(path: &Path) -> Result<ModelWeights> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let fail = |msg: &str| Error::Data(format!("{}: {msg}", path.display()));
        if bytes.len() < 16 || &bytes[..4] != WEIGHTS_MAGIC {
            return Err(fail("not a weight container (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != 1 {
            return Err(fail(&format!("unsupported weight container version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let data_start = 16 + header_len;
        if bytes.len() < data_start {
            return Err(fail("truncated layout header"));
        }
        let layout: Vec<TensorSpec> = serde_json::from_slice(&bytes[16..data_start])
            .map_err(|e| fail(&format!("malformed layout header: {e}")))?;
        let expected: usize = layout
            .iter()
            .map(|s| s.shape.iter().product::<usize>())
            .sum();
        let data = &bytes[data_start..];
        if data.len() != expected * 8 {
            return Err(fail("tensor data length does not match the layout"));
        }
        let mut tensors = Vec::with_capacity(layout.len());
        let mut offset = 0;
        for spec in &layout {
            let len: usize = spec.shape.iter().product();
            let mut tensor = Vec::with_capacity(len);
            for _ in 0..len {
                tensor.push(f64::from_le_bytes(
                    data[offset..offset + 8].try_into().unwrap(),
                ));
                offset += 8;
            }
            tensors.push(tensor);
        }
        Ok(ModelWeights { layout, tensors })
    }
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

/// The residual classifier. Build with [`build_model`]; the layer stack is
/// fixed.
#[derive(Debug, Clone)]
pub struct NeuralNetModel {
    layers: Vec<Layer>,
    input_dim: usize,
    num_classes: usize,
    seed: u64,
    /// Dedicated stream for dropout masks.
    rng: ChaCha8Rng,
    /// Test hook: when false, dropout layers pass through even in train
    /// mode (used by the gradient check).
    dropout_enabled: bool,
}

/// Builds the fixed architecture for the given input width and class count.
/// Dense kernels use Glorot-uniform initialization from per-layer keyed
/// streams of `seed`; batch-norm starts at identity with running stats
/// (0, 1).
pub fn build_model(input_dim: usize, num_classes: usize, seed: u64) -> Result<NeuralNetModel> {
    if input_dim < 1 {
        return Err(Error::Config("input_dim must be at least 1".into()));
    }
    if num_classes < 2 {
        return Err(Error::Config("num_classes must be at least 2".into()));
    }
    let mut dense_idx = 0u64;
    let mut next_dense = |fan_in: usize, fan_out: usize| {
        let mut rng = indexed_stream(seed, "nn-dense-init", dense_idx);
        dense_idx += 1;
        Layer::dense(&mut rng, fan_in, fan_out)
    };
    let layers = vec![
        Layer::batch_norm(input_dim),
        next_dense(input_dim, 256),
        Layer::batch_norm(256),
        Layer::LeakyRelu,
        Layer::Dropout { rate: 0.3 },
        next_dense(256, 128),
        Layer::batch_norm(128),
        Layer::LeakyRelu,
        Layer::Dropout { rate: 0.2 },
        Layer::SaveSkip,
        next_dense(128, 128),
        Layer::batch_norm(128),
        Layer::LeakyRelu,
        Layer::Dropout { rate: 0.2 },
        next_dense(128, 128),
        Layer::batch_norm(128),
        Layer::LeakyRelu,
        Layer::AddSkip,
        Layer::Dropout { rate: 0.2 },
        next_dense(128, num_classes),
    ];
    Ok(NeuralNetModel {
        layers,
        input_dim,
        num_classes,
        seed,
        rng: named_stream(seed, "nn-dropout"),
        dropout_enabled: true,
    })
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

impl NeuralNetModel {
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Enables or disables dropout in train-mode forwards (test hook).
    pub fn set_dropout_enabled(&mut self, enabled: bool) {
        self.dropout_enabled = enabled;
    }

    /// `(trainable, running_stats, total)` parameter counts.
    pub fn parameter_counts(&self) -> (usize, usize, usize) {
        let mut trainable = 0;
        let mut running = 0;
        for layer in &self.layers {
            match layer {
                Layer::Dense { w, b } => trainable += w.len() + b.len(),
                Layer::BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                } => {
                    trainable += gamma.len() + beta.len();
                    running += running_mean.len() + running_var.len();
                }
                _ => {}
            }
        }
        (trainable, running, trainable + running)
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim {
            return Err(Error::Data(format!(
                "input has {} features, model expects {}",
                x.ncols(),
                self.input_dim
            )));
        }
        if x.nrows() == 0 {
            return Err(Error::Data("empty input batch".into()));
        }
        Ok(())
    }

    /// Forward pass returning class probabilities (rows sum to 1).
    pub fn forward(&mut self, x: &ArrayView2<f64>, mode: Mode) -> Result<Array2<f64>> {
        match mode {
            Mode::Infer => self.forward_infer(x),
            Mode::Train => {
                let use_dropout = self.dropout_enabled;
                let (probs, _) = self.forward_tape(x, true, use_dropout)?;
                Ok(probs)
            }
        }
    }

    /// Inference forward: running statistics, no dropout, no mutation.
    pub fn forward_infer(&self, x: &ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.infer_core(x)?.0)
    }

    /// Inference forward that also reports the residual-block boundary
    /// activations: `(probabilities, skip_saved, after_add)`.
    pub fn infer_with_taps(
        &self,
        x: &ArrayView2<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>, Array2<f64>)> {
        let (probs, saved, added) = self.infer_core(x)?;
        let saved = saved.ok_or_else(|| Error::Data("model has no residual block".into()))?;
        let added = added.ok_or_else(|| Error::Data("model has no residual block".into()))?;
        Ok((probs, saved, added))
    }

    #[allow(clippy::type_complexity)]
    fn infer_core(
        &self,
        x: &ArrayView2<f64>,
    ) -> Result<(Array2<f64>, Option<Array2<f64>>, Option<Array2<f64>>)> {
        self.check_input(x)?;
        let mut cur = x.to_owned();
        let mut skip: Option<Array2<f64>> = None;
        let mut tap_saved = None;
        let mut tap_added = None;
        for layer in &self.layers {
            cur = match layer {
                Layer::Dense { w, b } => cur.dot(w) + b,
                Layer::BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                } => {
                    let mut out = cur;
                    for (j, mut col) in out.columns_mut().into_iter().enumerate() {
                        let inv = 1.0 / (running_var[j] + BN_EPS).sqrt();
                        for v in col.iter_mut() {
                            *v = (*v - running_mean[j]) * inv * gamma[j] + beta[j];
                        }
                    }
                    out
                }
                Layer::LeakyRelu => cur.mapv(|v| if v > 0.0 { v } else { LEAKY_ALPHA * v }),
                Layer::Dropout { .. } => cur,
                Layer::SaveSkip => {
                    skip = Some(cur.clone());
                    tap_saved = Some(cur.clone());
                    cur
                }
                Layer::AddSkip => {
                    let s = skip.take().ok_or_else(|| {
                        Error::Data("residual add without a saved skip".into())
                    })?;
                    if s.dim() != cur.dim() {
                        return Err(Error::Data(format!(
                            "residual add width mismatch: {:?} vs {:?}",
                            s.dim(),
                            cur.dim()
                        )));
                    }
                    let added = cur + s;
                    tap_added = Some(added.clone());
                    added
                }
            };
        }
        Ok((softmax_rows(&cur), tap_saved, tap_added))
    }

    /// Training-mode forward with a full cache tape for backprop.
    /// `update_running` controls the batch-norm running-stat side effect
    /// (the gradient check turns it off so repeated evaluations see the
    /// same function).
    fn forward_tape(
        &mut self,
        x: &ArrayView2<f64>,
        update_running: bool,
        use_dropout: bool,
    ) -> Result<(Array2<f64>, Vec<TapeEntry>)> {
        self.check_input(x)?;
        let n = x.nrows() as f64;
        let mut cur = x.to_owned();
        let mut skip: Option<Array2<f64>> = None;
        let mut tape = Vec::with_capacity(self.layers.len());
        for layer in &mut self.layers {
            let mut entry = TapeEntry::default();
            cur = match layer {
                Layer::Dense { w, b } => {
                    entry.input = Some(cur.clone());
                    cur.dot(&*w) + &*b
                }
                Layer::BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                } => {
                    let mean = cur.mean_axis(Axis(0)).expect("non-empty batch");
                    // Population variance (divisor N), matching the
                    // normalization used in the backward pass.
                    let mut var = Array1::zeros(cur.ncols());
                    for (j, col) in cur.columns().into_iter().enumerate() {
                        var[j] = col.iter().map(|v| (v - mean[j]).powi(2)).sum::<f64>() / n;
                    }
                    if update_running {
                        for j in 0..cur.ncols() {
                            running_mean[j] =
                                BN_MOMENTUM * running_mean[j] + (1.0 - BN_MOMENTUM) * mean[j];
                            running_var[j] =
                                BN_MOMENTUM * running_var[j] + (1.0 - BN_MOMENTUM) * var[j];
                        }
                    }
                    let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
                    let mut xhat = cur;
                    for (j, mut col) in xhat.columns_mut().into_iter().enumerate() {
                        for v in col.iter_mut() {
                            *v = (*v - mean[j]) * inv_std[j];
                        }
                    }
                    let mut out = xhat.clone();
                    for (j, mut col) in out.columns_mut().into_iter().enumerate() {
                        for v in col.iter_mut() {
                            *v = *v * gamma[j] + beta[j];
                        }
                    }
                    entry.bn = Some((xhat, inv_std));
                    out
                }
                Layer::LeakyRelu => {
                    entry.input = Some(cur.clone());
                    cur.mapv(|v| if v > 0.0 { v } else { LEAKY_ALPHA * v })
                }
                Layer::Dropout { rate } => {
                    if use_dropout && *rate > 0.0 {
                        let keep = 1.0 - *rate;
                        let mask = Array2::from_shape_fn(cur.dim(), |_| {
                            if self.rng.random::<f64>() < keep {
                                1.0 / keep
                            } else {
                                0.0
                            }
                        });
                        let out = &cur * &mask;
                        entry.mask = Some(mask);
                        out
                    } else {
                        cur
                    }
                }
                Layer::SaveSkip => {
                    skip = Some(cur.clone());
                    cur
                }
                Layer::AddSkip => {
                    let s = skip.take().ok_or_else(|| {
                        Error::Data("residual add without a saved skip".into())
                    })?;
                    if s.dim() != cur.dim() {
                        return Err(Error::Data(format!(
                            "residual add width mismatch: {:?} vs {:?}",
                            s.dim(),
                            cur.dim()
                        )));
                    }
                    cur + s
                }
            };
            tape.push(entry);
        }
        Ok((softmax_rows(&cur), tape))
    }

    /// Backward pass from softmax + cross-entropy. Returns per-layer
    /// gradients; dense kernels include the `2*lambda*W` L2 term.
    fn backward(
        &self,
        tape: &[TapeEntry],
        probs: &Array2<f64>,
        y: &[usize],
        lambda: f64,
    ) -> Vec<Option<LayerGrad>> {
        let n = probs.nrows() as f64;
        // d(mean CE)/d(logits) = (p - onehot) / N.
        let mut grad = probs.clone();
        for (i, &label) in y.iter().enumerate() {
            grad[(i, label)] -= 1.0;
        }
        grad /= n;

        let mut grads: Vec<Option<LayerGrad>> = (0..self.layers.len()).map(|_| None).collect();
        let mut skip_grad: Option<Array2<f64>> = None;
        for idx in (0..self.layers.len()).rev() {
            match &self.layers[idx] {
                Layer::Dense { w, .. } => {
                    let input = tape[idx].input.as_ref().expect("dense cache");
                    let mut dw = input.t().dot(&grad);
                    if lambda != 0.0 {
                        dw = dw + &(w * (2.0 * lambda));
                    }
                    let db = grad.sum_axis(Axis(0));
                    grads[idx] = Some(LayerGrad::Dense { dw, db });
                    grad = grad.dot(&w.t());
                }
                Layer::BatchNorm { gamma, .. } => {
                    let (xhat, inv_std) = tape[idx].bn.as_ref().expect("bn cache");
                    let m = grad.nrows() as f64;
                    let dgamma = (&grad * xhat).sum_axis(Axis(0));
                    let dbeta = grad.sum_axis(Axis(0));
                    // Fused batch-norm input gradient:
                    // dx = gamma*inv_std/m * (m*dy - sum(dy) - xhat*sum(dy*xhat))
                    let mut dx = Array2::zeros(grad.dim());
                    for j in 0..grad.ncols() {
                        let sum_dy = dbeta[j];
                        let sum_dy_xhat = dgamma[j];
                        let scale = gamma[j] * inv_std[j] / m;
                        for i in 0..grad.nrows() {
                            dx[(i, j)] = scale
                                * (m * grad[(i, j)] - sum_dy - xhat[(i, j)] * sum_dy_xhat);
                        }
                    }
                    grads[idx] = Some(LayerGrad::BatchNorm { dgamma, dbeta });
                    grad = dx;
                }
                Layer::LeakyRelu => {
                    let input = tape[idx].input.as_ref().expect("lrelu cache");
                    grad.zip_mut_with(input, |g, &v| {
                        if v <= 0.0 {
                            *g *= LEAKY_ALPHA;
                        }
                    });
                }
                Layer::Dropout { .. } => {
                    if let Some(mask) = &tape[idx].mask {
                        grad = &grad * mask;
                    }
                }
                Layer::AddSkip => {
                    // The sum distributes the gradient to both the branch
                    // (continues below) and the skip source (applied at
                    // SaveSkip).
                    skip_grad = Some(grad.clone());
                }
                Layer::SaveSkip => {
                    if let Some(s) = skip_grad.take() {
                        grad = grad + s;
                    }
                }
            }
        }
        grads
    }

    /// Sum of squared dense-kernel entries (the L2 penalty base).
    fn kernel_l2_sum(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Dense { w, .. } => w.iter().map(|v| v * v).sum(),
                _ => 0.0,
            })
            .sum()
    }

    /// Snapshot of all parameters including running statistics.
    pub fn get_weights(&self) -> ModelWeights {
        let mut layout = Vec::new();
        let mut tensors = Vec::new();
        for (idx, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Dense { w, b } => {
                    layout.push(TensorSpec {
                        name: format!("layer{idx}.kernel"),
                        shape: vec![w.nrows(), w.ncols()],
                    });
                    tensors.push(w.iter().copied().collect());
                    layout.push(TensorSpec {
                        name: format!("layer{idx}.bias"),
                        shape: vec![b.len()],
                    });
                    tensors.push(b.to_vec());
                }
                Layer::BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                } => {
                    for (suffix, t) in [
                        ("gamma", gamma),
                        ("beta", beta),
                        ("running_mean", running_mean),
                        ("running_var", running_var),
                    ] {
                        layout.push(TensorSpec {
                            name: format!("layer{idx}.{suffix}"),
                            shape: vec![t.len()],
                        });
                        tensors.push(t.to_vec());
                    }
                }
                _ => {}
            }
        }
        ModelWeights { layout, tensors }
    }

    /// Installs a parameter snapshot. The layout (names and shapes) must
    /// match this model exactly; a mismatch is an error the caller may
    /// catch to fall back to training from scratch.
    pub fn set_weights(&mut self, weights: &ModelWeights) -> Result<()> {
        let own = self.get_weights().layout;
        if own != weights.layout {
            return Err(Error::Data(format!(
                "weight layout mismatch: model has {} tensors, snapshot has {}",
                own.len(),
                weights.layout.len()
            )));
        }
        let mut cursor = 0usize;
        for layer in self.layers.iter_mut() {
            match layer {
                Layer::Dense { w, b } => {
                    let data = &weights.tensors[cursor];
                    *w = Array2::from_shape_vec(w.dim(), data.clone())
                        .expect("layout check guarantees the shape");
                    *b = Array1::from_vec(weights.tensors[cursor + 1].clone());
                    cursor += 2;
                }
                Layer::BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                } => {
                    *gamma = Array1::from_vec(weights.tensors[cursor].clone());
                    *beta = Array1::from_vec(weights.tensors[cursor + 1].clone());
                    *running_mean = Array1::from_vec(weights.tensors[cursor + 2].clone());
                    *running_var = Array1::from_vec(weights.tensors[cursor + 3].clone());
                    cursor += 4;
                }
                _ => {}
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Training hyperparameters. Defaults mirror the reference setup: Adam at
/// 1e-3, batch 64, early stopping patience 10 with best-weight restore,
/// reduce-on-plateau patience 5 / factor 0.5 / floor 1e-6, and L2 0.001 on
/// dense kernels.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub l2_lambda: f64,
    pub early_stopping_patience: usize,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub min_learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 25,
            batch_size: 64,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            l2_lambda: 0.001,
            early_stopping_patience: 10,
            plateau_patience: 5,
            plateau_factor: 0.5,
            min_learning_rate: 1e-6,
            seed: 42,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "epochs and batch_size must be positive".into(),
            ));
        }
        if self.learning_rate <= 0.0 || self.min_learning_rate <= 0.0 {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return Err(Error::Config("plateau_factor must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// One epoch's record in a training history.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

/// The full trace of a training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

/// Reduce-on-plateau schedule, folded out for direct testing.
#[derive(Debug, Clone)]
pub struct LrSchedule {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    wait: usize,
}

impl LrSchedule {
    pub fn new(lr: f64, factor: f64, patience: usize, min_lr: f64) -> Self {
        LrSchedule {
            lr,
            factor,
            patience,
            min_lr,
            wait: 0,
        }
    }

    /// Feeds one epoch's improved/not-improved signal; returns the learning
    /// rate to use next. The rate halves after `patience` consecutive
    /// non-improvements and never drops below `min_lr`.
    pub fn observe(&mut self, improved: bool) -> f64 {
        if improved {
            self.wait = 0;
        } else {
            self.wait += 1;
            if self.wait >= self.patience {
                self.lr = (self.lr * self.factor).max(self.min_lr);
                self.wait = 0;
            }
        }
        self.lr
    }
}

/// Early stopping with best-weight restore, folded out for direct testing.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    pub patience: usize,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping { patience, wait: 0 }
    }

    /// Returns true when training should halt.
    pub fn observe(&mut self, improved: bool) -> bool {
        if improved {
            self.wait = 0;
            false
        } else {
            self.wait += 1;
            self.wait >= self.patience
        }
    }
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    fn new(model: &NeuralNetModel) -> Adam {
        let mut m = Vec::new();
        for layer in &model.layers {
            match layer {
                Layer::Dense { w, b } => {
                    m.push(vec![0.0; w.len()]);
                    m.push(vec![0.0; b.len()]);
                }
                Layer::BatchNorm { gamma, beta, .. } => {
                    m.push(vec![0.0; gamma.len()]);
                    m.push(vec![0.0; beta.len()]);
                }
                _ => {}
            }
        }
        Adam {
            v: m.clone(),
            m,
            t: 0,
        }
    }

    fn step(
        &mut self,
        model: &mut NeuralNetModel,
        grads: &[Option<LayerGrad>],
        lr: f64,
        config: &TrainConfig,
    ) {
        self.t += 1;
        let bc1 = 1.0 - config.beta1.powi(self.t as i32);
        let bc2 = 1.0 - config.beta2.powi(self.t as i32);
        let mut slot = 0usize;
        for (idx, layer) in model.layers.iter_mut().enumerate() {
            let n_tensors = layer.n_trainable_tensors();
            if n_tensors == 0 {
                continue;
            }
            let grad = grads[idx].as_ref().expect("gradient for trainable layer");
            let grad_slices = grad.slices();
            for (params, gslice) in layer.trainable_mut().into_iter().zip(grad_slices) {
                let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
                for ((p, g), (mi, vi)) in params
                    .iter_mut()
                    .zip(gslice)
                    .zip(m.iter_mut().zip(v.iter_mut()))
                {
                    *mi = config.beta1 * *mi + (1.0 - config.beta1) * g;
                    *vi = config.beta2 * *vi + (1.0 - config.beta2) * g * g;
                    let m_hat = *mi / bc1;
                    let v_hat = *vi / bc2;
                    *p -= lr * m_hat / (v_hat.sqrt() + config.adam_epsilon);
                }
                slot += 1;
            }
        }
    }
}

/// Mean cross-entropy of softmax probabilities against integer labels,
/// without clamping (softmax outputs are strictly positive).
fn ce_loss(probs: &Array2<f64>, y: &[usize]) -> f64 {
    let n = probs.nrows();
    let total: f64 = y
        .iter()
        .enumerate()
        .map(|(i, &label)| -probs[(i, label)].ln())
        .sum();
    total / n as f64
}

fn accuracy(probs: &Array2<f64>, y: &[usize]) -> f64 {
    let hits = probs
        .rows()
        .into_iter()
        .zip(y)
        .filter(|(row, &label)| {
            let mut best = 0usize;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best == label
        })
        .count();
    hits as f64 / y.len() as f64
}

fn validate_labels(y: &[usize], n_rows: usize, num_classes: usize, what: &str) -> Result<()> {
    if y.len() != n_rows {
        return Err(Error::Data(format!(
            "{what}: {} rows but {} labels",
            n_rows,
            y.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::Data(format!("{what}: empty set")));
    }
    if let Some(&bad) = y.iter().find(|&&l| l >= num_classes) {
        return Err(Error::Data(format!(
            "{what}: label {bad} outside 0..{num_classes}"
        )));
    }
    Ok(())
}

impl NeuralNetModel {
    /// Inference-mode loss (cross-entropy plus the L2 penalty) and accuracy.
    pub fn evaluate(
        &self,
        x: &ArrayView2<f64>,
        y: &[usize],
        lambda: f64,
    ) -> Result<(f64, f64)> {
        validate_labels(y, x.nrows(), self.num_classes, "evaluate")?;
        let probs = self.forward_infer(x)?;
        Ok((
            ce_loss(&probs, y) + lambda * self.kernel_l2_sum(),
            accuracy(&probs, y),
        ))
    }

    /// Trains with mini-batch Adam per the config, recording one history
    /// entry per epoch. Early stopping restores the weights of the best
    /// validation loss; the restored weights are also left installed when
    /// training runs to completion.
    pub fn train(
        &mut self,
        train_x: &ArrayView2<f64>,
        train_y: &[usize],
        val_x: &ArrayView2<f64>,
        val_y: &[usize],
        config: &TrainConfig,
    ) -> Result<TrainHistory> {
        config.validate()?;
        self.check_input(train_x)?;
        self.check_input(val_x)?;
        validate_labels(train_y, train_x.nrows(), self.num_classes, "train set")?;
        validate_labels(val_y, val_x.nrows(), self.num_classes, "validation set")?;

        let n = train_x.nrows();
        let mut adam = Adam::new(self);
        let mut schedule = LrSchedule::new(
            config.learning_rate,
            config.plateau_factor,
            config.plateau_patience,
            config.min_learning_rate,
        );
        let mut stopper = EarlyStopping::new(config.early_stopping_patience);
        let mut best_val = f64::INFINITY;
        let mut best_epoch = 0usize;
        let mut best_weights = self.get_weights();
        let mut records = Vec::with_capacity(config.epochs);
        let mut stopped_early = false;
        let mut lr = config.learning_rate;

        for epoch in 0..config.epochs {
            let mut order: Vec<usize> = (0..n).collect();
            let mut shuffle_rng = indexed_stream(config.seed, "nn-epoch-shuffle", epoch as u64);
            for i in (1..n).rev() {
                let j = shuffle_rng.random_range(0..=i);
                order.swap(i, j);
            }
            for batch in order.chunks(config.batch_size) {
                let bx = take_rows(train_x, batch);
                let by: Vec<usize> = batch.iter().map(|&i| train_y[i]).collect();
                let use_dropout = self.dropout_enabled;
                let (probs, tape) = self.forward_tape(&bx.view(), true, use_dropout)?;
                let grads = self.backward(&tape, &probs, &by, config.l2_lambda);
                adam.step(self, &grads, lr, config);
            }

            let (train_loss, train_acc) = self.evaluate(train_x, train_y, config.l2_lambda)?;
            let (val_loss, val_acc) = self.evaluate(val_x, val_y, config.l2_lambda)?;
            records.push(EpochRecord {
                epoch,
                learning_rate: lr,
                train_loss,
                train_accuracy: train_acc,
                val_loss,
                val_accuracy: val_acc,
            });

            let improved = val_loss < best_val;
            if improved {
                best_val = val_loss;
                best_epoch = epoch;
                best_weights = self.get_weights();
            }
            lr = schedule.observe(improved);
            if stopper.observe(improved) {
                stopped_early = true;
                break;
            }
        }

        self.set_weights(&best_weights)?;
        Ok(TrainHistory {
            records,
            best_epoch,
            best_val_loss: best_val,
            stopped_early,
        })
    }
}

fn take_rows(x: &ArrayView2<f64>, indices: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((indices.len(), x.ncols()));
    for (r, &i) in indices.iter().enumerate() {
        out.row_mut(r).assign(&x.row(i));
    }
    out
}

// ---------------------------------------------------------------------------
// Gradient check
// ---------------------------------------------------------------------------

/// Sign pattern (`> 0`) of every leaky-relu pre-activation on a tape.
/// Probes whose perturbation changes this pattern cross a kink, where
/// central differences measure a blend of the two one-sided slopes rather
/// than the derivative.
fn leaky_sign_pattern(layers: &[Layer], tape: &[TapeEntry]) -> Vec<bool> {
    let mut out = Vec::new();
    for (layer, entry) in layers.iter().zip(tape) {
        if matches!(layer, Layer::LeakyRelu) {
            let input = entry.input.as_ref().expect("leaky-relu records its input");
            out.extend(input.iter().map(|&v| v > 0.0));
        }
    }
    out
}

/// Compares analytic gradients against central finite differences
/// (`h = 1e-4`) on a keyed random subsample of up to `per_tensor` entries
/// of every trainable tensor, with dropout forced off and batch-norm in
/// batch mode without running-stat updates. Probes whose perturbation
/// pushes a leaky-relu pre-activation across zero are skipped: the loss is
/// not differentiable there, so the finite difference is not comparable.
/// Returns the maximum relative error over the valid probes.
pub fn gradient_check(
    model: &mut NeuralNetModel,
    x: &ArrayView2<f64>,
    y: &[usize],
    lambda: f64,
    per_tensor: usize,
) -> Result<f64> {
    validate_labels(y, x.nrows(), model.num_classes, "gradient check")?;
    let h = 1e-4;
    let (probs, tape) = model.forward_tape(x, false, false)?;
    let grads = model.backward(&tape, &probs, y, lambda);
    let base_pattern = leaky_sign_pattern(&model.layers, &tape);

    let mut analytic: Vec<Vec<f64>> = Vec::new();
    for idx in 0..model.layers.len() {
        if let Some(g) = &grads[idx] {
            for s in g.slices() {
                analytic.push(s.to_vec());
            }
        }
    }

    let mut rng = named_stream(model.seed, "grad-check");
    let mut max_rel = 0.0f64;
    let mut slot = 0usize;
    for layer_idx in 0..model.layers.len() {
        let n_tensors = model.layers[layer_idx].n_trainable_tensors();
        for tensor_i in 0..n_tensors {
            let len = model.layers[layer_idx].trainable_mut()[tensor_i].len();
            let mut picks: Vec<usize> = if len <= per_tensor {
                (0..len).collect()
            } else {
                (0..per_tensor).map(|_| rng.random_range(0..len)).collect()
            };
            picks.sort_unstable();
            picks.dedup();
            for p in picks {
                let eval = |m: &mut NeuralNetModel| -> Result<(f64, Vec<bool>)> {
                    let (probs, tape) = m.forward_tape(x, false, false)?;
                    let pattern = leaky_sign_pattern(&m.layers, &tape);
                    Ok((ce_loss(&probs, y) + lambda * m.kernel_l2_sum(), pattern))
                };
                let original = model.layers[layer_idx].trainable_mut()[tensor_i][p];
                model.layers[layer_idx].trainable_mut()[tensor_i][p] = original + h;
                let (plus, plus_pattern) = eval(model)?;
                model.layers[layer_idx].trainable_mut()[tensor_i][p] = original - h;
                let (minus, minus_pattern) = eval(model)?;
                model.layers[layer_idx].trainable_mut()[tensor_i][p] = original;
                if plus_pattern != base_pattern || minus_pattern != base_pattern {
                    continue; // probe crosses a leaky-relu kink
                }
                let numeric = (plus - minus) / (2.0 * h);
                let a = analytic[slot][p];
                // Relative error with an absolute floor: coordinates whose
                // true gradient is zero measure only finite-difference
                // cancellation noise (~machine-eps * loss / h ~= 1e-11), so
                // they compare absolutely against 1e-6 * threshold instead
                // of amplifying that noise.
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                max_rel = max_rel.max(rel);
            }
            slot += 1;
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand_distr::StandardNormal;

    /// Hand-built tiny stack for oracle tests: BN -> Dense(4) -> LReLU ->
    /// SaveSkip -> Dense(4) -> LReLU -> AddSkip -> Dense(C).
    fn tiny_model(input_dim: usize, num_classes: usize, seed: u64) -> NeuralNetModel {
        let mut d = 0u64;
        let mut dense = |fi: usize, fo: usize| {
            let mut rng = indexed_stream(seed, "tiny-dense", d);
            d += 1;
            Layer::dense(&mut rng, fi, fo)
        };
        NeuralNetModel {
            layers: vec![
                Layer::batch_norm(input_dim),
                dense(input_dim, 4),
                Layer::batch_norm(4),
                Layer::LeakyRelu,
                Layer::Dropout { rate: 0.2 },
                Layer::SaveSkip,
                dense(4, 4),
                Layer::batch_norm(4),
                Layer::LeakyRelu,
                Layer::AddSkip,
                dense(4, num_classes),
            ],
            input_dim,
            num_classes,
            seed,
            rng: named_stream(seed, "nn-dropout"),
            dropout_enabled: true,
        }
    }

    fn gaussian_batch(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = crate::rng::named_stream(seed, "nn-test-batch");
        Array2::from_shape_fn((n, d), |_| rng.sample(StandardNormal))
    }

    #[test]
    fn parameter_count_matches_hand_arithmetic() {
        // Hand oracle for input 7, classes 9:
        //   BN(7)=14  D(7x256+256)=2048  BN(256)=512  D(256x128+128)=32896
        //   BN(128)=256  D(128x128+128)=16512  BN(128)=256  D=16512
        //   BN(128)=256  D(128x9+9)=1161  -> trainable 70423
        //   running stats: 2*(7+256+128+128+128) = 1294 -> total 71717
        let model = build_model(7, 9, 42).unwrap();
        let (trainable, running, total) = model.parameter_counts();
        assert_eq!(trainable, 70_423);
        assert_eq!(running, 1_294);
        assert_eq!(total, 71_717);
    }

    #[test]
    fn builds_are_deterministic_and_validate_inputs() {
        let a = build_model(7, 9, 1).unwrap();
        let b = build_model(7, 9, 1).unwrap();
        assert_eq!(a.get_weights(), b.get_weights());
        let c = build_model(7, 9, 2).unwrap();
        assert_ne!(a.get_weights(), c.get_weights());

        assert!(build_model(0, 9, 1).is_err());
        assert!(build_model(7, 1, 1).is_err());
    }

    #[test]
    fn forward_rows_are_probabilities() {
        let mut model = build_model(7, 9, 3).unwrap();
        let zeros = Array2::zeros((5, 7));
        for mode in [Mode::Infer, Mode::Train] {
            let probs = model.forward(&zeros.view(), mode).unwrap();
            assert_eq!(probs.dim(), (5, 9));
            for row in probs.rows() {
                let sum: f64 = row.sum();
                assert!((sum - 1.0).abs() <= 1e-6, "row sums to {sum}");
                assert!(row.iter().all(|&p| p > 0.0 && p < 1.0));
            }
        }
        // Width mismatch is rejected.
        let bad = Array2::zeros((2, 6));
        assert!(model.forward_infer(&bad.view()).is_err());
    }

    #[test]
    fn infer_is_pure_and_repeatable() {
        let model = build_model(7, 9, 4).unwrap();
        let x = gaussian_batch(8, 7, 1);
        let a = model.forward_infer(&x.view()).unwrap();
        let b = model.forward_infer(&x.view()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn train_mode_reduces_to_infer_without_dropout_and_fresh_stats() {
        // With dropout off and batch statistics equal to the running
        // statistics, the train-mode forward computes the same function as
        // inference. Use a stack with a single (input) batch-norm and a
        // batch whose columns have mean 0 and population variance 1 --
        // exactly the initial running stats.
        let mut model = NeuralNetModel {
            layers: vec![
                Layer::batch_norm(2),
                Layer::dense(&mut named_stream(5, "tv-dense-0"), 2, 4),
                Layer::LeakyRelu,
                Layer::Dropout { rate: 0.5 },
                Layer::dense(&mut named_stream(5, "tv-dense-1"), 4, 3),
            ],
            input_dim: 2,
            num_classes: 3,
            seed: 5,
            rng: named_stream(5, "nn-dropout"),
            dropout_enabled: false,
        };
        let x = array![[1.0, -1.0], [-1.0, 1.0]]; // mean 0, var 1 per column
        let infer = model.forward_infer(&x.view()).unwrap();
        let train = model.forward(&x.view(), Mode::Train).unwrap();
        for (a, b) in infer.iter().zip(train.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn residual_block_is_identity_when_branch_is_zeroed() {
        let mut model = build_model(7, 9, 6).unwrap();
        // Zero the two dense layers between SaveSkip and AddSkip.
        let mut inside = false;
        for layer in model.layers.iter_mut() {
            match layer {
                Layer::SaveSkip => inside = true,
                Layer::AddSkip => inside = false,
                Layer::Dense { w, b } if inside => {
                    w.fill(0.0);
                    b.fill(0.0);
                }
                _ => {}
            }
        }
        let x = gaussian_batch(6, 7, 2);
        let (_, saved, added) = model.infer_with_taps(&x.view()).unwrap();
        assert_eq!(saved, added);
    }

    #[test]
    fn gradient_check_tiny_net() {
        let mut model = tiny_model(3, 3, 7);
        let x = gaussian_batch(8, 3, 3);
        let y = vec![0, 1, 2, 0, 1, 2, 0, 1];
        let max_rel = gradient_check(&mut model, &x.view(), &y, 0.001, usize::MAX).unwrap();
        assert!(max_rel <= 1e-4, "max relative error {max_rel}");
    }

    #[test]
    fn gradient_check_full_architecture() {
        let mut model = build_model(7, 9, 8).unwrap();
        let x = gaussian_batch(8, 7, 4);
        let y = vec![0, 1, 2, 3, 4, 5, 6, 7];
        let max_rel = gradient_check(&mut model, &x.view(), &y, 0.001, 5).unwrap();
        assert!(max_rel <= 1e-4, "max relative error {max_rel}");
    }

    #[test]
    fn zero_final_layer_gives_uniform_softmax_and_analytic_gradient() {
        let mut model = tiny_model(3, 4, 9);
        // Zero the head: logits 0 -> uniform probabilities.
        if let Some(Layer::Dense { w, b }) = model.layers.last_mut() {
            w.fill(0.0);
            b.fill(0.0);
        }
        let x = gaussian_batch(6, 3, 5);
        let y = vec![0, 1, 2, 3, 0, 1];
        let (probs, tape) = model.forward_tape(&x.view(), false, false).unwrap();
        for p in probs.iter() {
            assert_abs_diff_eq!(*p, 0.25, epsilon = 1e-12);
        }
        // Head bias gradient = column sums of (p - onehot)/N exactly.
        let grads = model.backward(&tape, &probs, &y, 0.0);
        let head = grads.last().unwrap().as_ref().unwrap();
        if let LayerGrad::Dense { db, .. } = head {
            let n = y.len() as f64;
            let mut expected = vec![0.0f64; 4];
            for (i, &label) in y.iter().enumerate() {
                for (c, e) in expected.iter_mut().enumerate() {
                    *e += (probs[(i, c)] - if c == label { 1.0 } else { 0.0 }) / n;
                }
            }
            for (a, e) in db.iter().zip(&expected) {
                assert_abs_diff_eq!(a, e, epsilon = 1e-12);
            }
        } else {
            panic!("head gradient is not dense");
        }
    }

    #[test]
    fn l2_gradient_is_exactly_two_lambda_w() {
        // A single dense layer fed zeros: the data term of dW vanishes,
        // leaving only the L2 term.
        let mut model = NeuralNetModel {
            layers: vec![Layer::dense(
                &mut named_stream(1, "l2-test"),
                3,
                2,
            )],
            input_dim: 3,
            num_classes: 2,
            seed: 1,
            rng: named_stream(1, "nn-dropout"),
            dropout_enabled: false,
        };
        let x = Array2::zeros((4, 3));
        let y = vec![0, 1, 0, 1];
        let lambda = 0.001;
        let (probs, tape) = model.forward_tape(&x.view(), false, false).unwrap();
        let grads = model.backward(&tape, &probs, &y, lambda);
        if let Some(LayerGrad::Dense { dw, .. }) = &grads[0] {
            if let Layer::Dense { w, .. } = &model.layers[0] {
                for (g, wv) in dw.iter().zip(w.iter()) {
                    assert_abs_diff_eq!(*g, 2.0 * lambda * wv, epsilon = 1e-15);
                }
            }
        } else {
            panic!("missing dense gradient");
        }
    }

    #[test]
    fn weights_roundtrip_and_layout_mismatch() {
        let mut model = build_model(7, 9, 10).unwrap();
        let x = gaussian_batch(5, 7, 6);
        let before = model.forward_infer(&x.view()).unwrap();
        let snapshot = model.get_weights();
        model.set_weights(&snapshot).unwrap();
        let after = model.forward_infer(&x.view()).unwrap();
        assert_eq!(before, after);

        // A 5-class snapshot does not fit a 9-class model.
        let other = build_model(7, 5, 10).unwrap();
        let err = model.set_weights(&other.get_weights());
        assert!(err.is_err());
        // The caller can catch it and keep the original weights working.
        let still = model.forward_infer(&x.view()).unwrap();
        assert_eq!(before, still);
    }

    #[test]
    fn weights_binary_container_roundtrip() {
        let dir = tempfile::TempDir::new().unwrap();
        let path = dir.path().join("weights.bin");
        let model = build_model(7, 9, 11).unwrap();
        let w = model.get_weights();
        w.save(&path).unwrap();
        let loaded = ModelWeights::load(&path).unwrap();
        assert_eq!(w, loaded);

        std::fs::write(&path, b"not a weight container").unwrap();
        assert!(ModelWeights::load(&path).is_err());
    }

    #[test]
    fn lr_schedule_and_early_stopping_rules() {
        // 20 halvings from 1e-3 would be ~9.5e-10; the floor holds at 1e-6.
        let mut sched = LrSchedule::new(1e-3, 0.5, 5, 1e-6);
        let mut lr = sched.lr;
        for _ in 0..20 {
            for _ in 0..5 {
                lr = sched.observe(false);
            }
        }
        assert_eq!(lr, 1e-6);
        // An improvement resets the wait counter.
        let mut sched = LrSchedule::new(1e-3, 0.5, 5, 1e-6);
        for _ in 0..4 {
            sched.observe(false);
        }
        assert_eq!(sched.observe(true), 1e-3);

        // Constant loss -> halt after exactly `patience` non-improvements.
        let mut stop = EarlyStopping::new(10);
        assert!(!stop.observe(true));
        let mut halted_at = None;
        for i in 0..12 {
            if stop.observe(false) {
                halted_at = Some(i);
                break;
            }
        }
        assert_eq!(halted_at, Some(9)); // the 10th consecutive failure
    }

    fn separable_blobs(
        n_classes: usize,
        per_class: usize,
        dim: usize,
        seed: u64,
    ) -> (Array2<f64>, Vec<usize>) {
        let mut rng = crate::rng::named_stream(seed, "nn-blobs");
        let mut x = Array2::zeros((n_classes * per_class, dim));
        let mut y = Vec::new();
        for c in 0..n_classes {
            for i in 0..per_class {
                for j in 0..dim {
                    let z: f64 = rng.sample(StandardNormal);
                    x[(c * per_class + i, j)] =
                        if j == c % dim { 8.0 * (c / dim + 1) as f64 } else { 0.0 } + 0.3 * z;
                }
            }
            y.extend(std::iter::repeat(c).take(per_class));
        }
        (x, y)
    }

    #[test]
    fn overfits_64_separable_points() {
        let (x, y) = separable_blobs(4, 16, 4, 12);
        let mut model = build_model(4, 4, 12).unwrap();
        let config = TrainConfig {
            epochs: 200,
            early_stopping_patience: 200, // don't trigger
            plateau_patience: 200,
            seed: 12,
            ..TrainConfig::default()
        };
        let history = model
            .train(&x.view(), &y, &x.view(), &y, &config)
            .unwrap();
        let (_, train_acc) = model.evaluate(&x.view(), &y, config.l2_lambda).unwrap();
        assert_eq!(train_acc, 1.0, "history tail: {:?}", history.records.last());
    }

    #[test]
    fn early_stopping_restores_the_best_validation_weights() {
        let (x, y) = separable_blobs(3, 20, 4, 13);
        let (vx, vy) = separable_blobs(3, 10, 4, 14);
        let mut model = build_model(4, 3, 13).unwrap();
        let config = TrainConfig {
            epochs: 40,
            seed: 13,
            ..TrainConfig::default()
        };
        let history = model.train(&x.view(), &y, &vx.view(), &vy, &config).unwrap();
        let min_val = history
            .records
            .iter()
            .map(|r| r.val_loss)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(history.best_val_loss, min_val);
        // The restored model reproduces the recorded best validation loss.
        let (val_loss, _) = model.evaluate(&vx.view(), &vy, config.l2_lambda).unwrap();
        assert_abs_diff_eq!(val_loss, min_val, epsilon = 1e-12);
        // The learning rate never fell below the floor.
        assert!(history
            .records
            .iter()
            .all(|r| r.learning_rate >= config.min_learning_rate));
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let (x, y) = separable_blobs(3, 10, 4, 15);
        let run = || {
            let mut model = build_model(4, 3, 15).unwrap();
            let config = TrainConfig {
                epochs: 5,
                seed: 15,
                ..TrainConfig::default()
            };
            model.train(&x.view(), &y, &x.view(), &y, &config).unwrap();
            model.get_weights()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn train_rejects_degenerate_inputs() {
        let mut model = build_model(4, 3, 16).unwrap();
        let x = Array2::zeros((4, 4));
        let y = vec![0usize, 1, 2, 0];
        let empty_x = Array2::zeros((0, 4));
        let config = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        assert!(model
            .train(&empty_x.view(), &[], &x.view(), &y, &config)
            .is_err());
        assert!(model
            .train(&x.view(), &y, &empty_x.view(), &[], &config)
            .is_err());
        // Out-of-range label.
        let bad = vec![0usize, 1, 3, 0];
        assert!(model
            .train(&x.view(), &bad, &x.view(), &y, &config)
            .is_err());
    }
}
