//! Miniature from-scratch CNN for BMDR prediction from QR-domain features.
//!
//! Fixed stack for a `2N x 2N` input: Conv(1->32, 2x2, same) -> Conv(32->16,
//! 2x2, same) -> Conv(16->8, 2x2, valid) -> Flatten -> FC(8) -> FC(4) ->
//! FC(1), ReLU everywhere, stride 1. For an 8x8 input this is 5929 trainable
//! parameters. "Same" padding follows the bottom/right convention for even
//! kernels.
//!
//! Training minimizes the (normalized) mean absolute error over three views
//! of every sample - identity, `R D` and `D R` with fresh random sign
//! diagonals - which the estimator invariances guarantee share the label.
//! Gradients are exact; the optimizer is Adam; everything is 64-bit so the
//! finite-difference check is meaningful (models can be stored at 32-bit).

use crate::linalg::RealMatrix;
use crate::rng::{Purpose, RngStream};
use rayon::prelude::*;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CnnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("normalized loss undefined: zero-valued label at index {0}")]
    DivisionByZeroLabel(usize),
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("bad magic bytes (expected BMDM)")]
    BadMagic,
    #[error("unsupported model version {0}")]
    VersionMismatch(u32),
    #[error("architecture mismatch: {0}")]
    ArchMismatch(String),
    #[error("file truncated")]
    TruncatedFile,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

const CONV_CHANNELS: [usize; 3] = [32, 16, 8];
const FC_DIMS: [usize; 3] = [8, 4, 1];
const KERNEL: usize = 2;

#[derive(Debug, Clone, Copy)]
struct ConvSpec {
    in_c: usize,
    out_c: usize,
    in_side: usize,
    out_side: usize,
    w_off: usize,
    b_off: usize,
}

#[derive(Debug, Clone, Copy)]
struct FcSpec {
    in_d: usize,
    out_d: usize,
    w_off: usize,
    b_off: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    convs: [ConvSpec; 3],
    fcs: [FcSpec; 3],
    total: usize,
}

fn layout(side: usize) -> Layout {
    let mut off = 0;
    let mut convs =
        [ConvSpec { in_c: 0, out_c: 0, in_side: 0, out_side: 0, w_off: 0, b_off: 0 }; 3];
    let mut in_c = 1;
    let mut cur_side = side;
    for (i, &out_c) in CONV_CHANNELS.iter().enumerate() {
        let same = i < 2;
        let out_side = if same { cur_side } else { cur_side - 1 };
        let w_len = out_c * in_c * KERNEL * KERNEL;
        convs[i] =
            ConvSpec { in_c, out_c, in_side: cur_side, out_side, w_off: off, b_off: off + w_len };
        off += w_len + out_c;
        in_c = out_c;
        cur_side = out_side;
    }
    let flat = cur_side * cur_side * CONV_CHANNELS[2];
    let mut fcs = [FcSpec { in_d: 0, out_d: 0, w_off: 0, b_off: 0 }; 3];
    let mut in_d = flat;
    for (i, &out_d) in FC_DIMS.iter().enumerate() {
        fcs[i] = FcSpec { in_d, out_d, w_off: off, b_off: off + in_d * out_d };
        off += in_d * out_d + out_d;
        in_d = out_d;
    }
    Layout { convs, fcs, total: off }
}

/// The trainable model: architecture is implied by the input side length,
/// parameters live in one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    pub side: usize,
    pub params: Vec<f64>,
}

impl CnnModel {
    /// All-zero parameters (predicts 0 everywhere).
    pub fn zeros(side: usize) -> Self {
        let l = layout(side);
        Self { side, params: vec![0.0; l.total] }
    }

    /// He-uniform initialization, deterministic under the stream.
    pub fn new_random(side: usize, rng: &RngStream) -> Self {
        let l = layout(side);
        let mut params = vec![0.0; l.total];
        let mut wrng = rng.substream(Purpose::Init, 0);
        for c in &l.convs {
            let fan_in = (c.in_c * KERNEL * KERNEL) as f64;
            let bound = (6.0 / fan_in).sqrt();
            for i in 0..c.out_c * c.in_c * KERNEL * KERNEL {
                params[c.w_off + i] = wrng.uniform_range(-bound, bound);
            }
        }
        for f in &l.fcs {
            let bound = (6.0 / f.in_d as f64).sqrt();
            for i in 0..f.in_d * f.out_d {
                params[f.w_off + i] = wrng.uniform_range(-bound, bound);
            }
        }
        Self { side, params }
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Per-layer output shapes for a batch of `b`, in layer order, matching
    /// the architecture table (input included).
    pub fn layer_shapes(&self, b: usize) -> Vec<(String, Vec<usize>)> {
        let l = layout(self.side);
        let mut out = vec![("input".to_string(), vec![b, self.side, self.side, 1])];
        for (i, c) in l.convs.iter().enumerate() {
            out.push((format!("conv{}", i + 1), vec![b, c.out_side, c.out_side, c.out_c]));
        }
        out.push(("flatten".to_string(), vec![b, l.fcs[0].in_d]));
        for (i, f) in l.fcs.iter().enumerate() {
            out.push((format!("fc{}", i + 1), vec![b, f.out_d]));
        }
        out
    }

    fn check_input(&self, feature: &RealMatrix) -> Result<(), CnnError> {
        if feature.rows != self.side || feature.cols != self.side {
            return Err(CnnError::ShapeMismatch(format!(
                "feature is {}x{}, model expects {}x{}",
                feature.rows, feature.cols, self.side, self.side
            )));
        }
        Ok(())
    }

    /// Raw network output (non-negative, unbounded above).
    pub fn forward_raw(&self, feature: &RealMatrix) -> Result<f64, CnnError> {
        self.check_input(feature)?;
        Ok(self.forward_cached(feature).0)
    }

    /// Prediction clamped to the label range [0, 1].
    pub fn forward(&self, feature: &RealMatrix) -> Result<f64, CnnError> {
        Ok(self.forward_raw(feature)?.clamp(0.0, 1.0))
    }

    fn forward_cached(&self, feature: &RealMatrix) -> (f64, Cache) {
        let l = layout(self.side);
        let input = feature.data.clone();

        let mut conv_inputs = Vec::with_capacity(3);
        let mut conv_pres = Vec::with_capacity(3);
        let mut cur = input;
        for c in &l.convs {
            let (pre, post) = self.conv_forward(&cur, c);
            conv_inputs.push(cur);
            conv_pres.push(pre);
            cur = post;
        }
        let mut fc_inputs = Vec::with_capacity(3);
        let mut fc_pres = Vec::with_capacity(3);
        let mut vec_in = cur;
        for f in &l.fcs {
            let mut pre = vec![0.0; f.out_d];
            for o in 0..f.out_d {
                let mut acc = self.params[f.b_off + o];
                let row = f.w_off + o * f.in_d;
                for i in 0..f.in_d {
                    acc += self.params[row + i] * vec_in[i];
                }
                pre[o] = acc;
            }
            let post: Vec<f64> = pre.iter().map(|&x| x.max(0.0)).collect();
            fc_inputs.push(vec_in);
            fc_pres.push(pre);
            vec_in = post;
        }
        (vec_in[0], Cache { conv_inputs, conv_pres, fc_inputs, fc_pres })
    }

    /// Convolution over channel planes as shifted row-wise accumulations:
    /// the inner loops run over contiguous slices. "Same" padding is the
    /// bottom/right zero convention, expressed through the loop bounds.
    fn conv_forward(&self, input: &[f64], c: &ConvSpec) -> (Vec<f64>, Vec<f64>) {
        let is = c.in_side;
        let os = c.out_side;
        let mut pre = vec![0.0; os * os * c.out_c];
        for co in 0..c.out_c {
            let plane = &mut pre[co * os * os..(co + 1) * os * os];
            plane.fill(self.params[c.b_off + co]);
            for ci in 0..c.in_c {
                let in_plane = &input[ci * is * is..(ci + 1) * is * is];
                for ky in 0..KERNEL {
                    let y_max = os.min(is - ky);
                    for kx in 0..KERNEL {
                        let x_max = os.min(is - kx);
                        let w = self.params
                            [c.w_off + ((co * c.in_c + ci) * KERNEL + ky) * KERNEL + kx];
                        for y in 0..y_max {
                            let out_row = &mut plane[y * os..y * os + x_max];
                            let in_row =
                                &in_plane[(y + ky) * is + kx..(y + ky) * is + kx + x_max];
                            for (o, &i) in out_row.iter_mut().zip(in_row.iter()) {
                                *o += w * i;
                            }
                        }
                    }
                }
            }
        }
        let post: Vec<f64> = pre.iter().map(|&v| v.max(0.0)).collect();
        (pre, post)
    }

    /// Accumulate `d(dl_dpred * pred)/d(params)` into `grad`.
    pub fn accumulate_grad(
        &self,
        feature: &RealMatrix,
        dl_dpred: f64,
        grad: &mut [f64],
    ) -> Result<f64, CnnError> {
        self.check_input(feature)?;
        debug_assert_eq!(grad.len(), self.params.len());
        let l = layout(self.side);
        let (pred, cache) = self.forward_cached(feature);

        // Backprop through FC stack.
        let mut d_out = vec![dl_dpred];
        for (i, f) in l.fcs.iter().enumerate().rev() {
            let pre = &cache.fc_pres[i];
            let input = &cache.fc_inputs[i];
            let mut d_pre = vec![0.0; f.out_d];
            for o in 0..f.out_d {
                d_pre[o] = if pre[o] > 0.0 { d_out[o] } else { 0.0 };
            }
            let mut d_in = vec![0.0; f.in_d];
            for o in 0..f.out_d {
                let dp = d_pre[o];
                if dp == 0.0 {
                    continue;
                }
                grad[f.b_off + o] += dp;
                let row = f.w_off + o * f.in_d;
                for i2 in 0..f.in_d {
                    grad[row + i2] += dp * input[i2];
                    d_in[i2] += dp * self.params[row + i2];
                }
            }
            d_out = d_in;
        }

        // Backprop through conv stack, plane by plane.
        let mut d_post = d_out;
        for (i, c) in l.convs.iter().enumerate().rev() {
            let pre = &cache.conv_pres[i];
            let input = &cache.conv_inputs[i];
            let is = c.in_side;
            let os = c.out_side;
            let mut d_pre = d_post;
            for (dp, &p) in d_pre.iter_mut().zip(pre.iter()) {
                if p <= 0.0 {
                    *dp = 0.0;
                }
            }
            let mut d_in = vec![0.0; is * is * c.in_c];
            for co in 0..c.out_c {
                let dp_plane = &d_pre[co * os * os..(co + 1) * os * os];
                grad[c.b_off + co] += dp_plane.iter().sum::<f64>();
                for ci in 0..c.in_c {
                    let in_plane = &input[ci * is * is..(ci + 1) * is * is];
                    let din_plane = &mut d_in[ci * is * is..(ci + 1) * is * is];
                    for ky in 0..KERNEL {
                        let y_max = os.min(is - ky);
                        for kx in 0..KERNEL {
                            let x_max = os.min(is - kx);
                            let widx =
                                c.w_off + ((co * c.in_c + ci) * KERNEL + ky) * KERNEL + kx;
                            let w = self.params[widx];
                            let mut dw = 0.0;
                            for y in 0..y_max {
                                let dp_row = &dp_plane[y * os..y * os + x_max];
                                let base = (y + ky) * is + kx;
                                let in_row = &in_plane[base..base + x_max];
                                let din_row = &mut din_plane[base..base + x_max];
                                for x in 0..x_max {
                                    dw += dp_row[x] * in_row[x];
                                    din_row[x] += w * dp_row[x];
                                }
                            }
                            grad[widx] += dw;
                        }
                    }
                }
            }
            d_post = d_in;
        }
        Ok(pred)
    }
}

struct Cache {
    conv_inputs: Vec<Vec<f64>>,
    conv_pres: Vec<Vec<f64>>,
    fc_inputs: Vec<Vec<f64>>,
    fc_pres: Vec<Vec<f64>>,
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossMode {
    /// mean |y_true - y_pred| / |y_true|; requires nonzero labels.
    Normalized,
    /// mean |y_true - y_pred|; used when zero labels exist.
    Absolute,
}

/// Mean (normalized) absolute error over a batch.
pub fn loss(y_true: &[f64], y_pred: &[f64], mode: LossMode) -> Result<f64, CnnError> {
    assert_eq!(y_true.len(), y_pred.len());
    let mut acc = 0.0;
    for (i, (&t, &p)) in y_true.iter().zip(y_pred.iter()).enumerate() {
        acc += match mode {
            LossMode::Normalized => {
                if t == 0.0 {
                    return Err(CnnError::DivisionByZeroLabel(i));
                }
                (t - p).abs() / t.abs()
            }
            LossMode::Absolute => (t - p).abs(),
        };
    }
    Ok(acc / y_true.len() as f64)
}

/// d loss / d y_pred for one element (without the 1/n batch factor).
fn loss_grad_elem(t: f64, p: f64, mode: LossMode) -> f64 {
    let sign = if p > t {
        1.0
    } else if p < t {
        -1.0
    } else {
        0.0
    };
    match mode {
        LossMode::Normalized => sign / t.abs(),
        LossMode::Absolute => sign,
    }
}

// ---------------------------------------------------------------------------
// Sign-diagonal augmentation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentSide {
    /// `D * R`: row sign flips.
    Left,
    /// `R * D`: column sign flips.
    Right,
}

/// Apply a +-1 diagonal to an upper-triangular feature; triangularity is
/// preserved on both sides.
pub fn apply_sign_diag(feature: &RealMatrix, d: &[f64], side: AugmentSide) -> RealMatrix {
    assert_eq!(feature.rows, d.len());
    let mut out = feature.clone();
    match side {
        AugmentSide::Right => {
            for col in 0..out.cols {
                if d[col] < 0.0 {
                    for row in 0..out.rows {
                        let v = -out.get(row, col);
                        out.set(row, col, v);
                    }
                }
            }
        }
        AugmentSide::Left => {
            for row in 0..out.rows {
                if d[row] < 0.0 {
                    for col in 0..out.cols {
                        let v = -out.get(row, col);
                        out.set(row, col, v);
                    }
                }
            }
        }
    }
    out
}

/// Draw a fresh sign diagonal and apply it.
pub fn augment_sign(feature: &RealMatrix, side: AugmentSide, rng: &mut RngStream) -> RealMatrix {
    let d: Vec<f64> = (0..feature.rows).map(|_| rng.sign()).collect();
    apply_sign_diag(feature, &d, side)
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// One training sample: a feature matrix and its (single-user) label.
#[derive(Debug, Clone)]
pub struct TrainPair {
    pub features: RealMatrix,
    pub label: f64,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub loss_mode: LossMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_epochs: 200,
            patience: 10,
            seed: 0,
            loss_mode: LossMode::Normalized,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn save_csv<P: AsRef<Path>>(&self, path: P) -> Result<(), CnnError> {
        let mut f = BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "epoch,train_loss,val_loss")?;
        for e in &self.epochs {
            writeln!(f, "{},{},{}", e.epoch, e.train_loss, e.val_loss)?;
        }
        f.flush()?;
        Ok(())
    }
}

/// Batch loss and gradient over the three views (identity, `R D`, `D R`),
/// averaged as `1/(3 |batch|)`. The sign diagonals come pre-drawn so the
/// per-sample work can run in parallel deterministically.
pub fn batch_loss_and_grad(
    model: &CnnModel,
    batch: &[&TrainPair],
    diags: &[(Vec<f64>, Vec<f64>)],
    mode: LossMode,
) -> Result<(f64, Vec<f64>), CnnError> {
    assert_eq!(batch.len(), diags.len());
    let n_views = 3.0 * batch.len() as f64;

    const CHUNK: usize = 16;
    let chunks: Vec<(usize, &[&TrainPair])> = batch
        .chunks(CHUNK)
        .enumerate()
        .map(|(i, c)| (i * CHUNK, c))
        .collect();
    let partials: Vec<Result<(f64, Vec<f64>), CnnError>> = chunks
        .par_iter()
        .map(|&(start, chunk)| {
            let mut grad = vec![0.0; model.params.len()];
            let mut loss_acc = 0.0;
            for (off, pair) in chunk.iter().enumerate() {
                let (d_right, d_left) = &diags[start + off];
                if pair.label == 0.0 && mode == LossMode::Normalized {
                    return Err(CnnError::DivisionByZeroLabel(start + off));
                }
                let views = [
                    pair.features.clone(),
                    apply_sign_diag(&pair.features, d_right, AugmentSide::Right),
                    apply_sign_diag(&pair.features, d_left, AugmentSide::Left),
                ];
                for v in &views {
                    // Two passes keep the code simple: forward for the loss
                    // sign, then backward with the scaled upstream.
                    let pred = model.forward_raw(v)?;
                    let dl = loss_grad_elem(pair.label, pred, mode) / n_views;
                    model.accumulate_grad(v, dl, &mut grad)?;
                    loss_acc += match mode {
                        LossMode::Normalized => {
                            (pair.label - pred).abs() / pair.label.abs()
                        }
                        LossMode::Absolute => (pair.label - pred).abs(),
                    };
                }
            }
            Ok((loss_acc, grad))
        })
        .collect();

    let mut grad = vec![0.0; model.params.len()];
    let mut total = 0.0;
    for p in partials {
        let (l, g) = p?;
        total += l;
        for (a, b) in grad.iter_mut().zip(g.iter()) {
            *a += b;
        }
    }
    Ok((total / n_views, grad))
}

/// Mean loss over a set without augmentation (validation metric).
pub fn evaluate(model: &CnnModel, set: &[TrainPair], mode: LossMode) -> Result<f64, CnnError> {
    if set.is_empty() {
        return Ok(f64::NAN);
    }
    let preds: Result<Vec<f64>, CnnError> = set
        .par_iter()
        .map(|p| model.forward_raw(&p.features))
        .collect();
    let preds = preds?;
    let labels: Vec<f64> = set.iter().map(|p| p.label).collect();
    loss(&labels, &preds, mode)
}

/// Train with mini-batch Adam, triple-view augmentation, and early stopping
/// on the validation loss. Returns the best model seen and the history.
pub fn train(
    model: CnnModel,
    train_set: &[TrainPair],
    val_set: &[TrainPair],
    cfg: &TrainConfig,
) -> Result<(CnnModel, TrainHistory), CnnError> {
    if train_set.is_empty() {
        return Err(CnnError::EmptyTrainingSet);
    }
    let rng = RngStream::new(cfg.seed);
    let n_params = model.params.len();
    let mut current = model;
    let mut m = vec![0.0; n_params];
    let mut v = vec![0.0; n_params];
    let mut step = 0u64;

    let mut history = TrainHistory::default();
    let mut best = current.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut since_best = 0usize;

    for epoch in 0..cfg.max_epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut shuffle_rng = rng.substream(Purpose::Shuffle, epoch as u64);
        shuffle_rng.shuffle(&mut order);
        let mut aug_rng = rng.substream(Purpose::Symbols, epoch as u64);

        let mut epoch_loss = 0.0;
        let mut n_batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&TrainPair> = chunk.iter().map(|&i| &train_set[i]).collect();
            // Pre-draw the sign diagonals sequentially for determinism.
            let diags: Vec<(Vec<f64>, Vec<f64>)> = batch
                .iter()
                .map(|p| {
                    let side = p.features.rows;
                    let right: Vec<f64> = (0..side).map(|_| aug_rng.sign()).collect();
                    let left: Vec<f64> = (0..side).map(|_| aug_rng.sign()).collect();
                    (right, left)
                })
                .collect();
            let (batch_loss, grad) =
                batch_loss_and_grad(&current, &batch, &diags, cfg.loss_mode)?;
            epoch_loss += batch_loss;
            n_batches += 1;

            // Adam update.
            step += 1;
            let b1t = 1.0 - cfg.beta1.powi(step as i32);
            let b2t = 1.0 - cfg.beta2.powi(step as i32);
            for i in 0..n_params {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
                let m_hat = m[i] / b1t;
                let v_hat = v[i] / b2t;
                current.params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
        }
        let train_loss = epoch_loss / n_batches.max(1) as f64;
        let val_loss = if val_set.is_empty() {
            train_loss
        } else {
            evaluate(&current, val_set, cfg.loss_mode)?
        };
        history.epochs.push(EpochStats { epoch, train_loss, val_loss });

        if val_loss < best_val {
            best_val = val_loss;
            best = current.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    history.best_epoch = best_epoch;
    if history.epochs.is_empty() {
        // Zero-epoch training: the initialization is the result.
        best = current;
    }
    Ok((best, history))
}

/// Predict one feature (clamped to [0, 1]).
pub fn predict(model: &CnnModel, feature: &RealMatrix) -> Result<f64, CnnError> {
    model.forward(feature)
}

/// Predict from a raw channel and power draw: the feature is computed
/// internally along the same path as label generation.
pub fn predict_channel(
    model: &CnnModel,
    ch: &crate::channel::ChannelRealization,
    sys: &crate::channel::System,
    rho: &[f64],
) -> Result<f64, CnnError> {
    let feature = crate::dataset::channel_feature(ch, sys, rho)
        .map_err(|e| CnnError::ShapeMismatch(format!("feature computation failed: {e}")))?;
    model.forward(&feature)
}

/// Batch prediction.
pub fn predict_batch(model: &CnnModel, features: &[RealMatrix]) -> Result<Vec<f64>, CnnError> {
    features.iter().map(|f| model.forward(f)).collect()
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

const MODEL_MAGIC: &[u8; 4] = b"BMDM";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F64,
    F32,
}

pub fn save_model<P: AsRef<Path>>(
    model: &CnnModel,
    path: P,
    precision: Precision,
) -> Result<(), CnnError> {
    let mut f = BufWriter::new(std::fs::File::create(path)?);
    f.write_all(MODEL_MAGIC)?;
    f.write_all(&MODEL_VERSION.to_le_bytes())?;
    f.write_all(&(model.side as u32).to_le_bytes())?;
    f.write_all(&[match precision {
        Precision::F64 => 0u8,
        Precision::F32 => 1u8,
    }])?;
    f.write_all(&(model.params.len() as u64).to_le_bytes())?;
    for &p in &model.params {
        match precision {
            Precision::F64 => f.write_all(&p.to_le_bytes())?,
            Precision::F32 => f.write_all(&(p as f32).to_le_bytes())?,
        }
    }
    f.flush()?;
    Ok(())
}

pub fn load_model<P: AsRef<Path>>(path: P) -> Result<CnnModel, CnnError> {
    let mut f = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact(&mut f, &mut magic)?;
    if &magic != MODEL_MAGIC {
        return Err(CnnError::BadMagic);
    }
    let version = read_u32(&mut f)?;
    if version != MODEL_VERSION {
        return Err(CnnError::VersionMismatch(version));
    }
    let side = read_u32(&mut f)? as usize;
    let mut prec = [0u8; 1];
    read_exact(&mut f, &mut prec)?;
    let count = {
        let mut b = [0u8; 8];
        read_exact(&mut f, &mut b)?;
        u64::from_le_bytes(b) as usize
    };
    let expected = layout(side).total;
    if count != expected {
        return Err(CnnError::ArchMismatch(format!(
            "file has {count} parameters, side {side} implies {expected}"
        )));
    }
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let p = match prec[0] {
            0 => {
                let mut b = [0u8; 8];
                read_exact(&mut f, &mut b)?;
                f64::from_le_bytes(b)
            }
            1 => {
                let mut b = [0u8; 4];
                read_exact(&mut f, &mut b)?;
                f32::from_le_bytes(b) as f64
            }
            other => {
                return Err(CnnError::ArchMismatch(format!("unknown precision flag {other}")))
            }
        };
        params.push(p);
    }
    Ok(CnnModel { side, params })
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), CnnError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            CnnError::TruncatedFile
        } else {
            CnnError::Io(e)
        }
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, CnnError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}
