//! Fully connected regression network mapping model outputs to predicted
//! Jacobian singular values.
//!
//! Reference architecture: [m, 300, 300, 300, m] with LeakyReLU(α=0.1) on the
//! first two hidden layers, ReLU on the third, and ReLU at the output so
//! predictions are elementwise non-negative. Training minimizes the mean
//! squared error plus κ‖w‖² with per-parameter adaptive moments, inverted
//! dropout between hidden layers, and validation-loss early stopping.

use nalgebra::{DMatrix, DVector, RowDVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::TrainingSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu { alpha: f64 },
    Relu,
}

impl Activation {
    #[inline]
    fn apply(&self, z: f64) -> f64 {
        match self {
            Activation::LeakyRelu { alpha } => {
                if z >= 0.0 {
                    z
                } else {
                    alpha * z
                }
            }
            Activation::Relu => z.max(0.0),
        }
    }

    #[inline]
    fn derivative(&self, z: f64) -> f64 {
        match self {
            Activation::LeakyRelu { alpha } => {
                if z >= 0.0 {
                    1.0
                } else {
                    *alpha
                }
            }
            Activation::Relu => {
                if z >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Per-feature input standardization fitted on the training split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Normalizer {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Normalizer { shift: vec![0.0; dim], scale: vec![1.0; dim] }
    }

    fn fit(rows: &DMatrix<f64>, indices: &[usize]) -> Self {
        let dim = rows.ncols();
        let n = indices.len().max(1) as f64;
        let mut shift = vec![0.0; dim];
        let mut scale = vec![0.0; dim];
        for &i in indices {
            for j in 0..dim {
                shift[j] += rows[(i, j)];
            }
        }
        for s in shift.iter_mut() {
            *s /= n;
        }
        for &i in indices {
            for j in 0..dim {
                let d = rows[(i, j)] - shift[j];
                scale[j] += d * d;
            }
        }
        for s in scale.iter_mut() {
            *s = (*s / n).sqrt().max(1e-12);
        }
        Normalizer { shift, scale }
    }

    fn apply_rows(&self, rows: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = rows.clone();
        for mut row in out.row_iter_mut() {
            for j in 0..row.ncols() {
                row[j] = (row[j] - self.shift[j]) / self.scale[j];
            }
        }
        out
    }
}

/// Weights are stored input-major: layer i maps activations (b × d_i) to
/// (b × d_{i+1}) via X·W + 1·bᵀ.
#[derive(Debug, Clone)]
pub struct MLPModel {
    layer_dims: Vec<usize>,
    weights: Vec<DMatrix<f64>>,
    biases: Vec<DVector<f64>>,
    hidden_activations: Vec<Activation>,
    output_activation: Activation,
    normalizer: Normalizer,
}

/// Reference hidden width from the architecture description.
pub const HIDDEN_WIDTH: usize = 300;

impl MLPModel {
    /// Reference architecture for measurement dimension `m`:
    /// [m, 300, 300, 300, m], LeakyReLU(0.1)+LeakyReLU(0.1)+ReLU hidden,
    /// ReLU output. Weights use scaled uniform fan-in initialization.
    pub fn reference(m: usize, seed: u64) -> Self {
        Self::with_dims(
            vec![m, HIDDEN_WIDTH, HIDDEN_WIDTH, HIDDEN_WIDTH, m],
            vec![
                Activation::LeakyRelu { alpha: 0.1 },
                Activation::LeakyRelu { alpha: 0.1 },
                Activation::Relu,
            ],
            Activation::Relu,
            seed,
        )
    }

    pub fn with_dims(
        layer_dims: Vec<usize>,
        hidden_activations: Vec<Activation>,
        output_activation: Activation,
        seed: u64,
    ) -> Self {
        assert!(layer_dims.len() >= 2, "need at least input and output layers");
        assert_eq!(
            hidden_activations.len(),
            layer_dims.len() - 2,
            "one activation per hidden layer"
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in layer_dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            weights.push(DMatrix::from_fn(fan_in, fan_out, |_, _| rng.gen_range(-bound..bound)));
            biases.push(DVector::zeros(fan_out));
        }
        let input_dim = layer_dims[0];
        MLPModel {
            layer_dims,
            weights,
            biases,
            hidden_activations,
            output_activation,
            normalizer: Normalizer::identity(input_dim),
        }
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    pub fn set_normalizer(&mut self, normalizer: Normalizer) {
        assert_eq!(normalizer.shift.len(), self.input_dim());
        self.normalizer = normalizer;
    }

    /// Direct access for tests and persistence.
    pub fn weights_mut(&mut self) -> (&mut Vec<DMatrix<f64>>, &mut Vec<DVector<f64>>) {
        (&mut self.weights, &mut self.biases)
    }

    pub fn weights(&self) -> (&[DMatrix<f64>], &[DVector<f64>]) {
        (&self.weights, &self.biases)
    }

    fn n_layers(&self) -> usize {
        self.weights.len()
    }

    fn activation_for(&self, layer: usize) -> Activation {
        if layer + 1 == self.n_layers() {
            self.output_activation
        } else {
            self.hidden_activations[layer]
        }
    }

    /// Batched forward pass on already-normalized rows; returns pre- and
    /// post-activation values per layer for backpropagation. `dropout` is
    /// (rate, rng) and applies inverted dropout to hidden activations.
    fn forward_cached(
        &self,
        x: &DMatrix<f64>,
        mut dropout: Option<(f64, &mut ChaCha8Rng)>,
    ) -> ForwardCache {
        let mut activations = vec![x.clone()];
        let mut zs = Vec::with_capacity(self.n_layers());
        let mut masks: Vec<Option<DMatrix<f64>>> = Vec::with_capacity(self.n_layers());
        for layer in 0..self.n_layers() {
            let prev = activations.last().unwrap();
            let mut z = prev * &self.weights[layer];
            for mut row in z.row_iter_mut() {
                row += self.biases[layer].transpose();
            }
            let act = self.activation_for(layer);
            let mut a = z.map(|v| act.apply(v));
            let mask = if layer + 1 < self.n_layers() {
                if let Some((rate, ref mut rng)) = dropout {
                    let keep = 1.0 - rate;
                    let m = DMatrix::from_fn(a.nrows(), a.ncols(), |_, _| {
                        if rng.gen::<f64>() < rate {
                            0.0
                        } else {
                            1.0 / keep
                        }
                    });
                    a.component_mul_assign(&m);
                    Some(m)
                } else {
                    None
                }
            } else {
                None
            };
            zs.push(z);
            masks.push(mask);
            activations.push(a);
        }
        ForwardCache { activations, zs, masks }
    }

    /// Forward pass for a single input vector. With dropout enabled, hidden
    /// units are zeroed with the given probability and survivors scaled by
    /// 1/(1-rate); with dropout disabled the pass is deterministic.
    pub fn forward(
        &self,
        x: &DVector<f64>,
        dropout: Option<(f64, &mut ChaCha8Rng)>,
    ) -> Result<DVector<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::contract(format!(
                "input has {} entries, model expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        let row = DMatrix::from_rows(&[RowDVector::from_row_slice(x.as_slice())]);
        let normalized = self.normalizer.apply_rows(&row);
        let cache = self.forward_cached(&normalized, dropout);
        Ok(cache.activations.last().unwrap().row(0).transpose())
    }

    /// Mean (over batch and vector entries) squared error plus κ‖w‖² over all
    /// weight matrices (biases excluded). Dropout is disabled.
    pub fn loss(&self, inputs: &DMatrix<f64>, targets: &DMatrix<f64>, l2_kappa: f64) -> Result<f64> {
        if inputs.nrows() != targets.nrows()
            || inputs.ncols() != self.input_dim()
            || targets.ncols() != self.output_dim()
        {
            return Err(Error::contract("loss input/target shapes do not match the model"));
        }
        let normalized = self.normalizer.apply_rows(inputs);
        let cache = self.forward_cached(&normalized, None);
        let pred = cache.activations.last().unwrap();
        let diff = pred - targets;
        let data = diff.iter().map(|v| v * v).sum::<f64>() / (diff.nrows() * diff.ncols()) as f64;
        let penalty: f64 =
            l2_kappa * self.weights.iter().map(|w| w.iter().map(|v| v * v).sum::<f64>()).sum::<f64>();
        Ok(data + penalty)
    }

    /// Non-negative singular-value prediction in the anchor's index order
    /// (descending by the initial singular values). Dropout disabled.
    pub fn predict_singular_values(&self, model_output: &DVector<f64>) -> Result<DVector<f64>> {
        self.forward(model_output, None)
    }

    /// Gradients of `loss` with respect to every weight and bias, computed by
    /// backpropagation on a batch of already-normalized rows.
    fn gradients(
        &self,
        normalized_inputs: &DMatrix<f64>,
        targets: &DMatrix<f64>,
        l2_kappa: f64,
        dropout: Option<(f64, &mut ChaCha8Rng)>,
    ) -> (Vec<DMatrix<f64>>, Vec<DVector<f64>>, f64) {
        let cache = self.forward_cached(normalized_inputs, dropout);
        let batch = normalized_inputs.nrows() as f64;
        let entries = batch * self.output_dim() as f64;
        let pred = cache.activations.last().unwrap();
        let diff = pred - targets;
        let data_loss = diff.iter().map(|v| v * v).sum::<f64>() / entries;
        let penalty: f64 =
            l2_kappa * self.weights.iter().map(|w| w.iter().map(|v| v * v).sum::<f64>()).sum::<f64>();

        let mut d_weights = Vec::with_capacity(self.n_layers());
        let mut d_biases = Vec::with_capacity(self.n_layers());
        // Upstream gradient at the post-activation output.
        let mut d_act = diff * (2.0 / entries);
        for layer in (0..self.n_layers()).rev() {
            if let Some(mask) = &cache.masks[layer] {
                d_act.component_mul_assign(mask);
            }
            let act = self.activation_for(layer);
            let z = &cache.zs[layer];
            let mut dz = d_act;
            dz.zip_apply(z, |g, zv| *g *= act.derivative(zv));
            let x = &cache.activations[layer];
            let mut dw = x.transpose() * &dz;
            dw += &self.weights[layer] * (2.0 * l2_kappa);
            let db = dz.row_sum().transpose();
            d_act = &dz * self.weights[layer].transpose();
            d_weights.push(dw);
            d_biases.push(db);
        }
        d_weights.reverse();
        d_biases.reverse();
        (d_weights, d_biases, data_loss + penalty)
    }
}

struct ForwardCache {
    activations: Vec<DMatrix<f64>>,
    zs: Vec<DMatrix<f64>>,
    masks: Vec<Option<DMatrix<f64>>>,
}

/// Training hyperparameters (reference values from the architecture
/// description; the early-stop criterion is the relative validation-loss
/// change sustained over `early_stop_patience` epochs).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub initial_lr: f64,
    pub l2_kappa: f64,
    pub dropout_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_tol: f64,
    pub early_stop_patience: usize,
    /// epochs without validation improvement before the rate is halved
    pub lr_plateau_patience: usize,
    pub rng_seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            initial_lr: 1e-5,
            l2_kappa: 1e-3,
            dropout_rate: 0.2,
            batch_size: 64,
            max_epochs: 500,
            early_stop_tol: 1e-2,
            early_stop_patience: 3,
            lr_plateau_patience: 5,
            rng_seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dropout_rate >= 0.0 && self.dropout_rate < 1.0) {
            return Err(Error::config("dropout rate must lie in [0, 1)"));
        }
        if !(self.initial_lr > 0.0) || self.l2_kappa < 0.0 {
            return Err(Error::config("learning rate must be positive and kappa non-negative"));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::config("batch size and max epochs must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

pub struct TrainedModel {
    pub model: MLPModel,
    pub history: Vec<EpochStats>,
}

/// Adam state per parameter tensor.
struct Adam {
    m_w: Vec<DMatrix<f64>>,
    v_w: Vec<DMatrix<f64>>,
    m_b: Vec<DVector<f64>>,
    v_b: Vec<DVector<f64>>,
    t: u64,
}

impl Adam {
    fn new(model: &MLPModel) -> Self {
        Adam {
            m_w: model.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect(),
            v_w: model.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect(),
            m_b: model.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
            v_b: model.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
            t: 0,
        }
    }

    fn step(&mut self, model: &mut MLPModel, dw: &[DMatrix<f64>], db: &[DVector<f64>], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t as i32);
        let c2 = 1.0 - B2.powi(self.t as i32);
        for layer in 0..model.weights.len() {
            let (m, v) = (&mut self.m_w[layer], &mut self.v_w[layer]);
            let g = &dw[layer];
            m.zip_apply(g, |mv, gv| *mv = B1 * *mv + (1.0 - B1) * gv);
            v.zip_apply(g, |vv, gv| *vv = B2 * *vv + (1.0 - B2) * gv * gv);
            let w = &mut model.weights[layer];
            for i in 0..w.nrows() {
                for j in 0..w.ncols() {
                    let mh = m[(i, j)] / c1;
                    let vh = v[(i, j)] / c2;
                    w[(i, j)] -= lr * mh / (vh.sqrt() + EPS);
                }
            }
            let (mb, vb) = (&mut self.m_b[layer], &mut self.v_b[layer]);
            let gb = &db[layer];
            mb.zip_apply(gb, |mv, gv| *mv = B1 * *mv + (1.0 - B1) * gv);
            vb.zip_apply(gb, |vv, gv| *vv = B2 * *vv + (1.0 - B2) * gv * gv);
            let b = &mut model.biases[layer];
            for i in 0..b.len() {
                let mh = mb[i] / c1;
                let vh = vb[i] / c2;
                b[i] -= lr * mh / (vh.sqrt() + EPS);
            }
        }
    }
}

/// Trains the model on the dataset's train split, monitoring the validation
/// split. The input normalizer is fitted on the training rows. Deterministic
/// for a fixed seed.
pub fn train(mut model: MLPModel, data: &TrainingSet, config: &TrainingConfig) -> Result<TrainedModel> {
    config.validate()?;
    if data.inputs.nrows() != data.targets.nrows() || data.split.len() != data.inputs.nrows() {
        return Err(Error::contract("dataset row counts disagree"));
    }
    let train_idx = data.train_indices();
    let val_idx = data.val_indices();
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::config("dataset must contain training and validation rows"));
    }
    if data.dim() != model.input_dim() || data.targets.ncols() != model.output_dim() {
        return Err(Error::contract("dataset dimension does not match the model"));
    }

    model.set_normalizer(Normalizer::fit(&data.inputs, &train_idx));
    let select = |rows: &DMatrix<f64>, idx: &[usize]| -> DMatrix<f64> {
        let mut out = DMatrix::zeros(idx.len(), rows.ncols());
        for (r, &i) in idx.iter().enumerate() {
            out.set_row(r, &rows.row(i));
        }
        out
    };
    let train_in_norm = model.normalizer.apply_rows(&select(&data.inputs, &train_idx));
    let train_tg = select(&data.targets, &train_idx);
    let val_in = select(&data.inputs, &val_idx);
    let val_tg = select(&data.targets, &val_idx);

    let mut adam = Adam::new(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed.wrapping_add(0x5EED));
    let mut lr = config.initial_lr;
    let mut history: Vec<EpochStats> = Vec::new();
    let mut order: Vec<usize> = (0..train_idx.len()).collect();
    let mut plateau = 0usize;
    let mut best_val = f64::INFINITY;
    let mut stable_epochs = 0usize;

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let xb = select(&train_in_norm, chunk);
            let yb = select(&train_tg, chunk);
            let dropout = if config.dropout_rate > 0.0 {
                Some((config.dropout_rate, &mut rng))
            } else {
                None
            };
            let (dw, db, batch_loss) = model.gradients(&xb, &yb, config.l2_kappa, dropout);
            adam.step(&mut model, &dw, &db, lr);
            epoch_loss += batch_loss;
            batches += 1;
        }
        let train_loss = epoch_loss / batches as f64;
        let val_loss = model.loss(&val_in, &val_tg, config.l2_kappa)?;
        history.push(EpochStats { epoch, train_loss, val_loss, lr });

        if !train_loss.is_finite() || !val_loss.is_finite() {
            let hist = history.iter().map(|h| (h.epoch, h.train_loss, h.val_loss, h.lr)).collect();
            return Err(Error::TrainingDiverged { epoch, history: hist });
        }

        // Plateau-halved learning rate.
        if val_loss < best_val * (1.0 - 1e-12) {
            best_val = val_loss;
            plateau = 0;
        } else {
            plateau += 1;
            if plateau >= config.lr_plateau_patience {
                lr *= 0.5;
                plateau = 0;
            }
        }

        // Early stop on a sustained small relative validation change.
        if history.len() >= 2 {
            let prev = history[history.len() - 2].val_loss;
            let rel = (val_loss - prev).abs() / prev.max(1e-300);
            if rel < config.early_stop_tol {
                stable_epochs += 1;
            } else {
                stable_epochs = 0;
            }
            if stable_epochs >= config.early_stop_patience {
                break;
            }
        }
    }
    Ok(TrainedModel { model, history })
}

/// Writes the training history as CSV (epoch, train_loss, val_loss, lr).
pub fn history_to_csv(history: &[EpochStats], w: &mut impl std::io::Write) -> Result<()> {
    writeln!(w, "epoch,train_loss,val_loss,lr")?;
    for h in history {
        writeln!(w, "{},{:.17e},{:.17e},{:.17e}", h.epoch, h.train_loss, h.val_loss, h.lr)?;
    }
    Ok(())
}

// --- Weight persistence -------------------------------------------------------

const MAGIC: &[u8; 4] = b"NNQN";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct WeightHeader {
    layer_dims: Vec<usize>,
    hidden_activations: Vec<Activation>,
    output_activation: Activation,
    normalizer: Normalizer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    training_config: Option<TrainingConfig>,
}

/// Binary weight file: magic "NNQN", version, length-prefixed JSON header
/// (dims, activations, normalizer, training-config echo), then all weights
/// and biases as little-endian f64 (weights row-major, layer by layer).
pub fn save_weights(
    model: &MLPModel,
    config_echo: Option<&TrainingConfig>,
    w: &mut impl std::io::Write,
) -> Result<()> {
    let header = WeightHeader {
        layer_dims: model.layer_dims.clone(),
        hidden_activations: model.hidden_activations.clone(),
        output_activation: model.output_activation,
        normalizer: model.normalizer.clone(),
        training_config: config_echo.copied(),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for layer in 0..model.weights.len() {
        let wm = &model.weights[layer];
        for i in 0..wm.nrows() {
            for j in 0..wm.ncols() {
                w.write_all(&wm[(i, j)].to_le_bytes())?;
            }
        }
        for v in model.biases[layer].iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_weights(r: &mut impl std::io::Read) -> Result<MLPModel> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| Error::format("weight file truncated (magic)"))?;
    if &magic != MAGIC {
        return Err(Error::format("not a weight file (bad magic)"));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word).map_err(|_| Error::format("weight file truncated (version)"))?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(Error::format(format!("unsupported weight file version {version}")));
    }
    r.read_exact(&mut word).map_err(|_| Error::format("weight file truncated (header length)"))?;
    let len = u32::from_le_bytes(word) as usize;
    let mut header_bytes = vec![0u8; len];
    r.read_exact(&mut header_bytes).map_err(|_| Error::format("weight file truncated (header)"))?;
    let header: WeightHeader = serde_json::from_slice(&header_bytes)?;
    if header.layer_dims.len() < 2 {
        return Err(Error::format("weight header declares fewer than two layers"));
    }
    if header.hidden_activations.len() != header.layer_dims.len() - 2 {
        return Err(Error::format("weight header activation count inconsistent with dims"));
    }
    if header.normalizer.shift.len() != header.layer_dims[0]
        || header.normalizer.scale.len() != header.layer_dims[0]
    {
        return Err(Error::format("weight header normalizer inconsistent with input dim"));
    }
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for dims in header.layer_dims.windows(2) {
        let (rows, cols) = (dims[0], dims[1]);
        let mut buf = vec![0u8; (rows * cols + cols) * 8];
        r.read_exact(&mut buf).map_err(|_| {
            Error::format("weight file truncated (payload shorter than declared dims)")
        })?;
        let mut wm = DMatrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                let off = (i * cols + j) * 8;
                wm[(i, j)] = f64::from_le_bytes(buf[off..off + 8].try_into().unwrap());
            }
        }
        let mut b = DVector::zeros(cols);
        for j in 0..cols {
            let off = (rows * cols + j) * 8;
            b[j] = f64::from_le_bytes(buf[off..off + 8].try_into().unwrap());
        }
        weights.push(wm);
        biases.push(b);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(Error::Io)? != 0 {
        return Err(Error::format("weight file has trailing bytes beyond declared dims"));
    }
    Ok(MLPModel {
        layer_dims: header.layer_dims,
        weights,
        biases,
        hidden_activations: header.hidden_activations,
        output_activation: header.output_activation,
        normalizer: header.normalizer,
    })
}
