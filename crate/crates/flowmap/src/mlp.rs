//! From-scratch fully connected network: tanh hidden layers, identity output,
//! exact reverse-mode gradients, and Adam mini-batch training.
//!
//! The output layer has no activation on purpose — the network's job here is
//! to model flow-map residues, which carry either sign and arbitrary scale.
//! Training is fully deterministic given `init_seed` and `shuffle_seed`: a
//! held-out validation slice is carved off the *end* of the provided data
//! before training starts, and the shuffle stream only ever touches training
//! indices, so validation content cannot perturb the trained parameters.

use std::fs;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::fmt_f64;
use crate::state::StateVector;
use crate::textio::LineCursor;

/// Parameters of a fully connected feedforward network.
///
/// `layer_sizes = [n_in, h_1, ..., h_L, n_out]`; `weights[l]` maps layer `l`
/// to layer `l+1` (shape `sizes[l+1] x sizes[l]`). Hidden layers apply tanh,
/// the output layer is affine.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    layer_sizes: Vec<usize>,
    weights: Vec<DMatrix<f64>>,
    biases: Vec<DVector<f64>>,
}

impl MlpParams {
    /// All-zero parameters (the network computes the zero map).
    pub fn zeros(layer_sizes: &[usize]) -> Self {
        assert!(
            layer_sizes.len() >= 2 && layer_sizes.iter().all(|&s| s > 0),
            "layer_sizes needs at least input and output widths, all positive"
        );
        let weights = layer_sizes
            .windows(2)
            .map(|w| DMatrix::zeros(w[1], w[0]))
            .collect();
        let biases = layer_sizes[1..]
            .iter()
            .map(|&s| DVector::zeros(s))
            .collect();
        MlpParams {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
        }
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn weights(&self) -> &[DMatrix<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[DVector<f64>] {
        &self.biases
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Number of layer transitions (hidden count + 1).
    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Flatten all parameters (per layer: weights row-major, then bias).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            for r in 0..w.nrows() {
                for c in 0..w.ncols() {
                    out.push(w[(r, c)]);
                }
            }
            out.extend(b.iter().copied());
        }
        out
    }

    /// Rebuild parameters from a flat vector (inverse of [`Self::to_flat`]).
    pub fn from_flat(layer_sizes: &[usize], flat: &[f64]) -> Self {
        let mut params = MlpParams::zeros(layer_sizes);
        assert_eq!(flat.len(), params.num_params(), "flat length mismatch");
        let mut idx = 0;
        for (w, b) in params.weights.iter_mut().zip(&mut params.biases) {
            for r in 0..w.nrows() {
                for c in 0..w.ncols() {
                    w[(r, c)] = flat[idx];
                    idx += 1;
                }
            }
            for r in 0..b.len() {
                b[r] = flat[idx];
                idx += 1;
            }
        }
        params
    }

    /// Evaluate the network at one state.
    pub fn forward(&self, x: &StateVector) -> Result<StateVector> {
        x.check_dim(self.input_dim())?;
        let col = DMatrix::from_column_slice(x.dim(), 1, x.as_slice());
        let out = self.forward_cols(&col);
        Ok(StateVector::new(out.column(0).iter().copied().collect()))
    }

    /// Evaluate on a batch stored as matrix columns.
    pub(crate) fn forward_cols(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut a = x.clone();
        let last = self.num_layers() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w * &a;
            for mut col in z.column_iter_mut() {
                col += b;
            }
            a = if l < last { z.map(|v| v.tanh()) } else { z };
        }
        a
    }
}

/// Gradients with the same shapes as [`MlpParams`].
#[derive(Clone, Debug)]
pub struct Gradients {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

impl Gradients {
    /// Flatten in the same order as [`MlpParams::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            for r in 0..w.nrows() {
                for c in 0..w.ncols() {
                    out.push(w[(r, c)]);
                }
            }
            out.extend(b.iter().copied());
        }
        out
    }
}

/// Initialize a network: weights i.i.d. Gaussian with std `1/sqrt(fan_in)`
/// (keeps tanh pre-activations O(1)), biases exactly zero. Deterministic for a
/// given seed; draws happen layer by layer, row-major within each matrix.
pub fn init_network(layer_sizes: &[usize], init_seed: u64) -> MlpParams {
    let mut params = MlpParams::zeros(layer_sizes);
    let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
    for w in &mut params.weights {
        let std = 1.0 / (w.ncols() as f64).sqrt();
        for r in 0..w.nrows() {
            for c in 0..w.ncols() {
                let z: f64 = StandardNormal.sample(&mut rng);
                w[(r, c)] = std * z;
            }
        }
    }
    params
}

/// Mean-squared-error loss over a batch and its exact parameter gradients.
///
/// The loss is `mean_j |target_j - net(input_j)|^2` — squared Euclidean norm
/// over the full output, averaged over the batch, with no per-dimension
/// normalization.
pub fn loss_and_gradients(
    params: &MlpParams,
    batch: &[(StateVector, StateVector)],
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::EmptyData);
    }
    let n_in = params.input_dim();
    let n_out = params.output_dim();
    let bsz = batch.len();
    for (x, t) in batch {
        x.check_dim(n_in)?;
        t.check_dim(n_out)?;
    }

    // Pack the batch into columns.
    let x = DMatrix::from_fn(n_in, bsz, |r, c| batch[c].0[r]);
    let t = DMatrix::from_fn(n_out, bsz, |r, c| batch[c].1[r]);

    // Forward pass, keeping every layer's activations.
    let last = params.num_layers() - 1;
    let mut acts: Vec<DMatrix<f64>> = Vec::with_capacity(params.num_layers() + 1);
    acts.push(x);
    for (l, (w, b)) in params.weights.iter().zip(&params.biases).enumerate() {
        let mut z = w * &acts[l];
        for mut col in z.column_iter_mut() {
            col += b;
        }
        acts.push(if l < last { z.map(|v| v.tanh()) } else { z });
    }

    let out = &acts[params.num_layers()];
    let diff = out - &t;
    let loss = diff.iter().map(|v| v * v).sum::<f64>() / bsz as f64;
    if !loss.is_finite() {
        let batch_index = (0..bsz)
            .find(|&c| out.column(c).iter().any(|v| !v.is_finite()))
            .unwrap_or(0);
        return Err(Error::NonFiniteLoss { batch_index });
    }

    // Backward pass.
    let mut gw: Vec<DMatrix<f64>> = Vec::with_capacity(params.num_layers());
    let mut gb: Vec<DVector<f64>> = Vec::with_capacity(params.num_layers());
    let mut delta = diff * (2.0 / bsz as f64);
    for l in (0..params.num_layers()).rev() {
        gw.push(&delta * acts[l].transpose());
        gb.push(delta.column_sum());
        if l > 0 {
            // tanh'(z) = 1 - tanh(z)^2, and acts[l] stores tanh(z).
            let dact = acts[l].map(|a| 1.0 - a * a);
            delta = (params.weights[l].transpose() * delta).component_mul(&dact);
        }
    }
    gw.reverse();
    gb.reverse();
    Ok((
        loss,
        Gradients {
            weights: gw,
            biases: gb,
        },
    ))
}

/// Loss over a whole data set (no gradients).
pub fn dataset_loss(params: &MlpParams, data: &[(StateVector, StateVector)]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    let n_in = params.input_dim();
    let n_out = params.output_dim();
    for (x, t) in data {
        x.check_dim(n_in)?;
        t.check_dim(n_out)?;
    }
    let x = DMatrix::from_fn(n_in, data.len(), |r, c| data[c].0[r]);
    let t = DMatrix::from_fn(n_out, data.len(), |r, c| data[c].1[r]);
    let out = params.forward_cols(&x);
    Ok((out - t).iter().map(|v| v * v).sum::<f64>() / data.len() as f64)
}

/// Training hyperparameters. Serialized into run metadata so experiments are
/// reproducible from their artifacts alone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Fraction of the data held out for validation (taken from the end of
    /// the provided order, fixed before training, scored but never trained on).
    pub validation_fraction: f64,
    pub shuffle_seed: u64,
    pub init_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            batch_size: 10,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            validation_fraction: 0.1,
            shuffle_seed: 0,
            init_seed: 0,
        }
    }
}

impl TrainConfig {
    pub(crate) fn validate(&self, data_len: usize) -> Result<()> {
        if self.batch_size == 0 || self.batch_size > data_len {
            return Err(Error::Config(format!(
                "batch_size must be in 1..={data_len}, got {}",
                self.batch_size
            )));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config(format!(
                "validation_fraction must be in [0, 1), got {}",
                self.validation_fraction
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Config("adam betas must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// What happened during training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainRecord {
    /// Loss over the full training slice, evaluated after each epoch.
    pub train_loss: Vec<f64>,
    /// Loss over the validation slice after each epoch (empty when the
    /// validation fraction is zero).
    pub val_loss: Vec<f64>,
    /// Total number of Adam updates performed.
    pub updates: usize,
    /// Set to the failing epoch index if the loss became non-finite.
    pub diverged: Option<usize>,
    /// rms of the network output magnitude over all provided inputs, after
    /// training (the "network norm" of the final parameters).
    pub final_network_norm: f64,
    pub wall_seconds: f64,
}

impl TrainRecord {
    pub fn final_train_loss(&self) -> Option<f64> {
        self.train_loss.last().copied()
    }

    pub fn final_val_loss(&self) -> Option<f64> {
        self.val_loss.last().copied()
    }
}

struct AdamState {
    m_w: Vec<DMatrix<f64>>,
    v_w: Vec<DMatrix<f64>>,
    m_b: Vec<DVector<f64>>,
    v_b: Vec<DVector<f64>>,
    t: u64,
}

impl AdamState {
    fn new(params: &MlpParams) -> Self {
        AdamState {
            m_w: params.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect(),
            v_w: params.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect(),
            m_b: params.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
            v_b: params.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
            t: 0,
        }
    }

    fn update(&mut self, params: &mut MlpParams, grads: &Gradients, cfg: &TrainConfig) {
        self.t += 1;
        let b1 = cfg.adam_beta1;
        let b2 = cfg.adam_beta2;
        let corr1 = 1.0 - b1.powi(self.t as i32);
        let corr2 = 1.0 - b2.powi(self.t as i32);
        let scale = cfg.learning_rate / corr1;

        let step = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= scale * *m / ((*v / corr2).sqrt() + cfg.adam_eps);
        };

        for l in 0..params.weights.len() {
            let w = &mut params.weights[l];
            let (mw, vw) = (&mut self.m_w[l], &mut self.v_w[l]);
            for i in 0..w.len() {
                step(&mut w[i], &mut mw[i], &mut vw[i], grads.weights[l][i]);
            }
            let b = &mut params.biases[l];
            let (mb, vb) = (&mut self.m_b[l], &mut self.v_b[l]);
            for i in 0..b.len() {
                step(&mut b[i], &mut mb[i], &mut vb[i], grads.biases[l][i]);
            }
        }
    }
}

/// Train with Adam over shuffled mini-batches.
///
/// The last `floor(validation_fraction * J)` samples are the validation slice;
/// the rest are shuffled anew each epoch (last partial batch included, not
/// dropped). After every epoch the full training-slice loss and validation
/// loss are recorded. If a batch loss turns non-finite, training aborts and
/// the partial record carries `diverged = Some(epoch)`. With `epochs = 0` the
/// parameters come back bitwise unchanged.
pub fn train(
    params: &MlpParams,
    data: &[(StateVector, StateVector)],
    cfg: &TrainConfig,
) -> Result<(MlpParams, TrainRecord)> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    cfg.validate(data.len())?;

    let started = Instant::now();
    let val_count = (data.len() as f64 * cfg.validation_fraction).floor() as usize;
    let train_count = data.len() - val_count;
    let (train_slice, val_slice) = data.split_at(train_count);

    let mut current = params.clone();
    let mut record = TrainRecord {
        train_loss: Vec::with_capacity(cfg.epochs),
        val_loss: Vec::with_capacity(if val_count > 0 { cfg.epochs } else { 0 }),
        updates: 0,
        diverged: None,
        final_network_norm: 0.0,
        wall_seconds: 0.0,
    };

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    let mut adam = AdamState::new(&current);
    let mut indices: Vec<usize> = (0..train_count).collect();
    let mut batch_buf: Vec<(StateVector, StateVector)> = Vec::with_capacity(cfg.batch_size);

    'epochs: for epoch in 0..cfg.epochs {
        indices.shuffle(&mut shuffle_rng);
        for chunk in indices.chunks(cfg.batch_size) {
            batch_buf.clear();
            batch_buf.extend(chunk.iter().map(|&i| train_slice[i].clone()));
            match loss_and_gradients(&current, &batch_buf) {
                Ok((_, grads)) => {
                    adam.update(&mut current, &grads, cfg);
                    record.updates += 1;
                }
                Err(Error::NonFiniteLoss { .. }) => {
                    record.diverged = Some(epoch);
                    break 'epochs;
                }
                Err(other) => return Err(other),
            }
        }

        let train_loss = dataset_loss(&current, train_slice)?;
        if !train_loss.is_finite() {
            record.diverged = Some(epoch);
            break 'epochs;
        }
        record.train_loss.push(train_loss);
        if val_count > 0 {
            record.val_loss.push(dataset_loss(&current, val_slice)?);
        }
    }

    record.final_network_norm = output_rms(&current, data.iter().map(|(x, _)| x))?;
    record.wall_seconds = started.elapsed().as_secs_f64();
    Ok((current, record))
}

/// rms of `|net(x)|` over a set of inputs.
pub(crate) fn output_rms<'a>(
    params: &MlpParams,
    inputs: impl Iterator<Item = &'a StateVector>,
) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for x in inputs {
        let out = params.forward(x)?;
        sum += out.iter().map(|v| v * v).sum::<f64>();
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyData);
    }
    Ok((sum / count as f64).sqrt())
}

// ---- plain-text serialization ---------------------------------------------
//
//   2 30 30 30 2          layer sizes
//   <weight row 0>        per layer: fan_out rows of fan_in numbers,
//   ...                   then one bias row of fan_out numbers
//   <bias row>
//   ...

impl MlpParams {
    /// Append the layered text format to `out`.
    pub fn write_text(&self, out: &mut String) {
        let sizes: Vec<String> = self.layer_sizes.iter().map(|s| s.to_string()).collect();
        out.push_str(&sizes.join(" "));
        out.push('\n');
        for (w, b) in self.weights.iter().zip(&self.biases) {
            for r in 0..w.nrows() {
                let row: Vec<String> = (0..w.ncols()).map(|c| fmt_f64(w[(r, c)])).collect();
                out.push_str(&row.join(" "));
                out.push('\n');
            }
            let bias: Vec<String> = b.iter().map(|&v| fmt_f64(v)).collect();
            out.push_str(&bias.join(" "));
            out.push('\n');
        }
    }

    /// Parse the layered text format from a cursor.
    pub(crate) fn read_text(cur: &mut LineCursor) -> Result<Self> {
        let sizes: Vec<usize> = cur.next_values()?;
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(cur.error("invalid layer sizes"));
        }
        let mut params = MlpParams::zeros(&sizes);
        for l in 0..params.num_layers() {
            let (rows, cols) = (sizes[l + 1], sizes[l]);
            for r in 0..rows {
                let vals: Vec<f64> = cur.next_exact(cols)?;
                for (c, v) in vals.into_iter().enumerate() {
                    params.weights[l][(r, c)] = v;
                }
            }
            let bias: Vec<f64> = cur.next_exact(rows)?;
            for (r, v) in bias.into_iter().enumerate() {
                params.biases[l][r] = v;
            }
        }
        Ok(params)
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = String::new();
        self.write_text(&mut text);
        fs::write(path, text)?;
        Ok(())
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut cur = LineCursor::new("network parameter file", &text);
        Self::read_text(&mut cur)
    }
}
