//! Trainable scoring head: optional linear hidden layer, optional batch
//! normalization, then an affine layer with one sigmoid output per phone.
//!
//! Pipeline in train mode:
//!
//! ```text
//! input -> dropout -> [hidden linear -> dropout] -> [batchnorm] -> affine -> sigmoid
//! ```
//!
//! Dropout is inverted (kept units scaled by `1 / (1 - rate)`), so eval mode
//! skips it entirely. Batchnorm uses batch statistics in train mode and the
//! running statistics in eval mode.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{FrameMatrix, MatrixKind};
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadConfig {
    pub input_dim: usize,
    #[serde(default)]
    pub use_hidden: bool,
    #[serde(default = "default_hidden_dim")]
    pub hidden_dim: usize,
    #[serde(default)]
    pub use_batchnorm: bool,
    #[serde(default = "default_dropout")]
    pub dropout_rate: f64,
    pub n_phones: usize,
}

fn default_hidden_dim() -> usize {
    256
}

fn default_dropout() -> f64 {
    0.4
}

impl HeadConfig {
    /// Output-layer-only head over `input_dim` features.
    pub fn output_only(input_dim: usize, n_phones: usize) -> Self {
        Self {
            input_dim,
            use_hidden: false,
            hidden_dim: default_hidden_dim(),
            use_batchnorm: false,
            dropout_rate: 0.0,
            n_phones,
        }
    }

    /// Width of the features entering the output layer.
    pub fn feature_dim(&self) -> usize {
        if self.use_hidden {
            self.hidden_dim
        } else {
            self.input_dim
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.n_phones == 0 || (self.use_hidden && self.hidden_dim == 0) {
            return Err(Error::InvalidArgument(format!("head dimensions must be >= 1: {self:?}")));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub config: HeadConfig,
    /// `hidden_dim x input_dim`, no bias.
    pub hidden: Option<Array2<f64>>,
    pub batchnorm: Option<BatchNorm>,
    /// `n_phones x feature_dim`.
    pub output_weight: Array2<f64>,
    pub output_bias: Array1<f64>,
}

/// Weights uniform in `±1/sqrt(fan_in)`, zero biases, identity batchnorm.
pub fn init_params(config: &HeadConfig, seed: u64) -> Result<HeadParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |rows: usize, cols: usize| {
        let bound = 1.0 / (cols as f64).sqrt();
        Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..bound))
    };
    let hidden = config
        .use_hidden
        .then(|| uniform(config.hidden_dim, config.input_dim));
    let f = config.feature_dim();
    let output_weight = uniform(config.n_phones, f);
    let batchnorm = config.use_batchnorm.then(|| BatchNorm {
        gamma: Array1::ones(f),
        beta: Array1::zeros(f),
        running_mean: Array1::zeros(f),
        running_var: Array1::ones(f),
    });
    Ok(HeadParams {
        config: config.clone(),
        hidden,
        batchnorm,
        output_weight,
        output_bias: Array1::zeros(config.n_phones),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Inverted-dropout scale factors (0 or `1 / (1 - rate)`) for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    pub input: Option<Array2<f64>>,
    pub hidden: Option<Array2<f64>>,
}

impl DropoutMasks {
    pub fn none() -> Self {
        Self {
            input: None,
            hidden: None,
        }
    }

    pub fn sample(config: &HeadConfig, n_frames: usize, seed: u64) -> Self {
        let rate = config.dropout_rate;
        if rate == 0.0 {
            return Self::none();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = 1.0 / (1.0 - rate);
        let mut draw = |cols: usize| {
            Array2::from_shape_simple_fn((n_frames, cols), || if rng.random::<f64>() < rate { 0.0 } else { keep })
        };
        let input = Some(draw(config.input_dim));
        let hidden = config.use_hidden.then(|| draw(config.hidden_dim));
        Self { input, hidden }
    }
}

/// Intermediate values from a forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub mode: Mode,
    pub masks: DropoutMasks,
    /// Input after dropout.
    pub input: Array2<f64>,
    /// Features entering batchnorm (or the output layer when batchnorm is off).
    pub features: Array2<f64>,
    pub batch_mean: Option<Array1<f64>>,
    pub batch_var: Option<Array1<f64>>,
    pub normalized: Option<Array2<f64>>,
    /// Input to the affine output layer.
    pub output_input: Array2<f64>,
    pub logits: Array2<f64>,
    pub probabilities: Array2<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl HeadParams {
    /// Loads the hidden layer from an imported `hidden_dim x input_dim` matrix.
    pub fn import_hidden(&mut self, weights: &FrameMatrix) -> Result<()> {
        let Some(hidden) = self.hidden.as_mut() else {
            return Err(Error::InvalidArgument("head has no hidden layer to import into".into()));
        };
        if weights.n_frames() != hidden.nrows() || weights.dim() != hidden.ncols() {
            return Err(Error::Dimension(format!(
                "hidden weights are {}x{}, head expects {}x{}",
                weights.n_frames(),
                weights.dim(),
                hidden.nrows(),
                hidden.ncols()
            )));
        }
        for (dst, &src) in hidden.iter_mut().zip(weights.values()) {
            *dst = src as f64;
        }
        Ok(())
    }

    /// Forward pass with dropout masks drawn from `dropout_seed` in train mode.
    pub fn forward(&self, batch: ArrayView2<f64>, mode: Mode, dropout_seed: u64) -> Result<ForwardTrace> {
        let masks = match mode {
            Mode::Train => DropoutMasks::sample(&self.config, batch.nrows(), dropout_seed),
            Mode::Eval => DropoutMasks::none(),
        };
        self.forward_with_masks(batch, mode, masks)
    }

    /// Forward pass with explicit dropout masks (ignored in eval mode).
    pub fn forward_with_masks(&self, batch: ArrayView2<f64>, mode: Mode, masks: DropoutMasks) -> Result<ForwardTrace> {
        let cfg = &self.config;
        if batch.ncols() != cfg.input_dim {
            return Err(Error::Dimension(format!(
                "batch has {} columns, head expects {}",
                batch.ncols(),
                cfg.input_dim
            )));
        }
        let n = batch.nrows();
        if mode == Mode::Train && self.batchnorm.is_some() && n < 2 {
            return Err(Error::InvalidArgument(
                "train-mode batchnorm needs at least 2 frames".into(),
            ));
        }
        let masks = if mode == Mode::Eval { DropoutMasks::none() } else { masks };
        let check = |m: &Option<Array2<f64>>, cols: usize, what: &str| match m {
            Some(m) if m.dim() != (n, cols) => Err(Error::Dimension(format!(
                "{what} dropout mask is {:?}, expected ({n}, {cols})",
                m.dim()
            ))),
            _ => Ok(()),
        };
        check(&masks.input, cfg.input_dim, "input")?;
        check(&masks.hidden, cfg.hidden_dim, "hidden")?;

        let input = match &masks.input {
            Some(m) => &batch * m,
            None => batch.to_owned(),
        };
        let features = match &self.hidden {
            Some(w) => {
                let h = input.dot(&w.t());
                match &masks.hidden {
                    Some(m) => h * m,
                    None => h,
                }
            }
            None => input.clone(),
        };

        let (batch_mean, batch_var, normalized, output_input) = match &self.batchnorm {
            Some(bn) => {
                let (mean, var) = match mode {
                    Mode::Train => {
                        let mean = features.mean_axis(Axis(0)).unwrap();
                        let centered = &features - &mean;
                        let var = (&centered * &centered).mean_axis(Axis(0)).unwrap();
                        (mean, var)
                    }
                    Mode::Eval => (bn.running_mean.clone(), bn.running_var.clone()),
                };
                let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
                let xhat = (&features - &mean) * &inv_std;
                let out = &xhat * &bn.gamma + &bn.beta;
                let stats = mode == Mode::Train;
                (stats.then_some(mean), stats.then_some(var), Some(xhat), out)
            }
            None => (None, None, None, features.clone()),
        };

        let logits = output_input.dot(&self.output_weight.t()) + &self.output_bias;
        let probabilities = logits.mapv(sigmoid);
        Ok(ForwardTrace {
            mode,
            masks,
            input,
            features,
            batch_mean,
            batch_var,
            normalized,
            output_input,
            logits,
            probabilities,
        })
    }

    /// Eval-mode probabilities.
    pub fn predict(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward(batch, Mode::Eval, 0)?.probabilities)
    }

    /// Analytic gradients of a loss whose derivative with respect to the
    /// output probabilities is `frame_grads`.
    pub fn backward(&self, trace: &ForwardTrace, frame_grads: ArrayView2<f64>, trainable: Trainable) -> Result<HeadGrads> {
        if frame_grads.dim() != trace.probabilities.dim() {
            return Err(Error::Dimension(format!(
                "upstream gradient is {:?}, forward produced {:?}",
                frame_grads.dim(),
                trace.probabilities.dim()
            )));
        }
        let p = &trace.probabilities;
        let d_logits = &frame_grads * &p.mapv(|v| v * (1.0 - v));
        let output_weight = d_logits.t().dot(&trace.output_input);
        let output_bias = d_logits.sum_axis(Axis(0));
        let d_out_in = d_logits.dot(&self.output_weight);

        let (gamma, beta, d_features) = match (&self.batchnorm, &trace.normalized) {
            (Some(bn), Some(xhat)) => {
                let d_gamma = (&d_out_in * xhat).sum_axis(Axis(0));
                let d_beta = d_out_in.sum_axis(Axis(0));
                let d_xhat = &d_out_in * &bn.gamma;
                let d_features = match (&trace.batch_var, trace.mode) {
                    (Some(var), Mode::Train) => {
                        let n = xhat.nrows() as f64;
                        let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
                        let sum_dx = d_xhat.sum_axis(Axis(0));
                        let sum_dx_xhat = (&d_xhat * xhat).sum_axis(Axis(0));
                        ((&d_xhat * n - &sum_dx) - xhat * &sum_dx_xhat) * &(inv_std / n)
                    }
                    _ => {
                        let inv_std = bn.running_var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
                        d_xhat * &inv_std
                    }
                };
                (Some(d_gamma), Some(d_beta), d_features)
            }
            _ => (None, None, d_out_in),
        };

        let hidden = match (&self.hidden, trainable.hidden) {
            (Some(_), true) => {
                let d_h = match &trace.masks.hidden {
                    Some(m) => d_features * m,
                    None => d_features,
                };
                Some(d_h.t().dot(&trace.input))
            }
            _ => None,
        };
        Ok(HeadGrads {
            hidden,
            gamma,
            beta,
            output_weight,
            output_bias,
        })
    }

    /// Parameters currently being trained, with their gradients, by name.
    pub fn trainable_with_grads<'a>(
        &'a mut self,
        grads: &'a HeadGrads,
    ) -> Vec<(&'static str, &'a mut [f64], &'a [f64])> {
        let mut out: Vec<(&'static str, &mut [f64], &[f64])> = Vec::new();
        if let (Some(w), Some(g)) = (self.hidden.as_mut(), grads.hidden.as_ref()) {
            out.push(("hidden.weight", w.as_slice_mut().unwrap(), g.as_slice().unwrap()));
        }
        if let Some(bn) = self.batchnorm.as_mut() {
            if let (Some(gg), Some(gb)) = (grads.gamma.as_ref(), grads.beta.as_ref()) {
                out.push(("bn.gamma", bn.gamma.as_slice_mut().unwrap(), gg.as_slice().unwrap()));
                out.push(("bn.beta", bn.beta.as_slice_mut().unwrap(), gb.as_slice().unwrap()));
            }
        }
        out.push((
            "output.weight",
            self.output_weight.as_slice_mut().unwrap(),
            grads.output_weight.as_slice().unwrap(),
        ));
        out.push((
            "output.bias",
            self.output_bias.as_slice_mut().unwrap(),
            grads.output_bias.as_slice().unwrap(),
        ));
        out
    }

    fn named_tensors(&self) -> Vec<(&'static str, usize, usize, Vec<f64>)> {
        let mat = |a: &Array2<f64>| (a.nrows(), a.ncols(), a.iter().copied().collect::<Vec<_>>());
        let vec = |a: &Array1<f64>| (1, a.len(), a.to_vec());
        let mut out = Vec::new();
        if let Some(w) = &self.hidden {
            let (r, c, v) = mat(w);
            out.push(("hidden.weight", r, c, v));
        }
        if let Some(bn) = &self.batchnorm {
            for (name, a) in [
                ("bn.gamma", &bn.gamma),
                ("bn.beta", &bn.beta),
                ("bn.running_mean", &bn.running_mean),
                ("bn.running_var", &bn.running_var),
            ] {
                let (r, c, v) = vec(a);
                out.push((name, r, c, v));
            }
        }
        let (r, c, v) = mat(&self.output_weight);
        out.push(("output.weight", r, c, v));
        let (r, c, v) = vec(&self.output_bias);
        out.push(("output.bias", r, c, v));
        out
    }
}

/// Which optional blocks receive gradients. The output layer and batchnorm
/// are always trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Trainable {
    pub hidden: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    pub hidden: Option<Array2<f64>>,
    pub gamma: Option<Array1<f64>>,
    pub beta: Option<Array1<f64>>,
    pub output_weight: Array2<f64>,
    pub output_bias: Array1<f64>,
}

impl HeadGrads {
    pub fn max_abs(&self) -> f64 {
        let mut m = 0.0f64;
        let mut take = |it: &mut dyn Iterator<Item = &f64>| {
            for v in it {
                m = m.max(v.abs());
            }
        };
        if let Some(h) = &self.hidden {
            take(&mut h.iter());
        }
        if let Some(g) = &self.gamma {
            take(&mut g.iter());
        }
        if let Some(b) = &self.beta {
            take(&mut b.iter());
        }
        take(&mut self.output_weight.iter());
        take(&mut self.output_bias.iter());
        m
    }
}

/// `running <- (1 - momentum) * running + momentum * batch`.
pub fn update_running_stats(params: &mut HeadParams, batch_mean: &Array1<f64>, batch_var: &Array1<f64>, momentum: f64) {
    if let Some(bn) = params.batchnorm.as_mut() {
        bn.running_mean
            .zip_mut_with(batch_mean, |r, &b| *r = (1.0 - momentum) * *r + momentum * b);
        bn.running_var
            .zip_mut_with(batch_var, |r, &b| *r = (1.0 - momentum) * *r + momentum * b);
    }
}

/// Header line of a checkpoint file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format: String,
    pub config: HeadConfig,
    pub seed: u64,
    pub stage: String,
    pub epoch: usize,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    /// Byte offset of the tensor's FMAT block, counted from the first byte after the header line.
    pub offset: u64,
    pub length: u64,
}

pub const CHECKPOINT_FORMAT: &str = "phonescore-head/1";

/// Checkpoint bytes: one line of compact JSON header, then the tensors as
/// concatenated FMAT blocks located by the header's offset table. Values are
/// stored as f32.
pub fn checkpoint_bytes(params: &HeadParams, seed: u64, stage: &str, epoch: usize) -> Result<Vec<u8>> {
    let mut payload = Vec::new();
    let mut tensors = Vec::new();
    for (name, rows, cols, values) in params.named_tensors() {
        let m = FrameMatrix::new(
            MatrixKind::Activations,
            rows,
            cols,
            values.iter().map(|&v| v as f32).collect(),
        )
        .map_err(|e| Error::InvalidArgument(format!("tensor {name}: {e}")))?;
        let block = m.to_bytes();
        tensors.push(TensorEntry {
            name: name.to_string(),
            offset: payload.len() as u64,
            length: block.len() as u64,
        });
        payload.extend_from_slice(&block);
    }
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.to_string(),
        config: params.config.clone(),
        seed,
        stage: stage.to_string(),
        epoch,
        tensors,
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn save_checkpoint(path: &Path, params: &HeadParams, seed: u64, stage: &str, epoch: usize) -> Result<()> {
    let bytes = checkpoint_bytes(params, seed, stage, epoch)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointHeader, HeadParams)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let fail = |offset: usize, message: String| Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        message,
    };
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| fail(0, "missing checkpoint header line".into()))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| fail(0, format!("bad checkpoint header: {e}")))?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(fail(0, format!("unsupported checkpoint format {:?}", header.format)));
    }
    let payload = &bytes[nl + 1..];
    let mut params = init_params(&header.config, 0)?;
    let mut seen = Vec::new();
    for t in &header.tensors {
        let start = t.offset as usize;
        let end = start + t.length as usize;
        if end > payload.len() {
            return Err(fail(nl + 1 + start, format!("tensor {} runs past end of file", t.name)));
        }
        let m = FrameMatrix::from_bytes(&payload[start..end], path)?;
        let vals: Vec<f64> = m.values().iter().map(|&v| v as f64).collect();
        let shape_err = |want: (usize, usize)| {
            fail(
                nl + 1 + start,
                format!("tensor {} is {}x{}, expected {}x{}", t.name, m.n_frames(), m.dim(), want.0, want.1),
            )
        };
        let set2 = |dst: &mut Array2<f64>| -> Result<()> {
            if dst.dim() != (m.n_frames(), m.dim()) {
                return Err(shape_err(dst.dim()));
            }
            dst.as_slice_mut().unwrap().copy_from_slice(&vals);
            Ok(())
        };
        let set1 = |dst: &mut Array1<f64>| -> Result<()> {
            if (1, dst.len()) != (m.n_frames(), m.dim()) {
                return Err(shape_err((1, dst.len())));
            }
            dst.as_slice_mut().unwrap().copy_from_slice(&vals);
            Ok(())
        };
        let bn = params.batchnorm.as_mut();
        match (t.name.as_str(), bn) {
            ("hidden.weight", _) if params.hidden.is_some() => set2(params.hidden.as_mut().unwrap())?,
            ("output.weight", _) => set2(&mut params.output_weight)?,
            ("output.bias", _) => set1(&mut params.output_bias)?,
            ("bn.gamma", Some(bn)) => set1(&mut bn.gamma)?,
            ("bn.beta", Some(bn)) => set1(&mut bn.beta)?,
            ("bn.running_mean", Some(bn)) => set1(&mut bn.running_mean)?,
            ("bn.running_var", Some(bn)) => set1(&mut bn.running_var)?,
            (other, _) => return Err(fail(0, format!("unexpected tensor {other:?} for this config"))),
        }
        seen.push(t.name.clone());
    }
    let expected: Vec<&str> = params.named_tensors().iter().map(|t| t.0).collect();
    for name in expected {
        if !seen.iter().any(|s| s == name) {
            return Err(fail(0, format!("checkpoint is missing tensor {name}")));
        }
    }
    Ok((header, params))
}
