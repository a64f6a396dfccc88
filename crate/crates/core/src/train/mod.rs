//! Fine-tuning of the scoring head on labeled frames.

pub mod adam;
pub mod loss;
pub mod schedule;

use std::fmt;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState, Moments};
pub use loss::{batch_loss, FrameTarget, LossOutput, LossSpec, Weighting, PROB_CLAMP};
pub use schedule::lr_at_epoch;

use crate::data::{Corpus, MatrixKind};
use crate::error::{Error, Result};
use crate::head::{init_params, update_running_stats, HeadConfig, HeadParams, Mode, Trainable, BN_MOMENTUM};

/// Which layers are fine-tuned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    /// Output layer only.
    #[serde(rename = "layo")]
    OutputOnly,
    /// Output layer first, then the hidden layer is unfrozen as well.
    #[serde(rename = "layo+1")]
    OutputPlusHidden,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::OutputOnly => "layo",
            Stage::OutputPlusHidden => "layo+1",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Utterances per mini-batch.
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_initial: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub stage: Stage,
    /// Epochs of output-only training before the hidden layer is unfrozen.
    pub stage1_epochs: usize,
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 600,
            lr_initial: 0.01,
            lr_decay_factor: 0.9,
            lr_decay_every: 10,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            stage: Stage::OutputOnly,
            stage1_epochs: 100,
            checkpoint_every: 50,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.batch_size == 0 || self.epochs == 0 || self.lr_decay_every == 0 || self.checkpoint_every == 0 {
            return bad(format!("batch_size, epochs, lr_decay_every and checkpoint_every must be >= 1: {self:?}"));
        }
        if !(self.lr_initial > 0.0) || !(self.lr_decay_factor > 0.0) || !(self.adam_eps > 0.0) {
            return bad("learning rate, decay factor and adam eps must be positive".into());
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must be in [0, 1)".into());
        }
        if self.stage == Stage::OutputPlusHidden && self.stage1_epochs >= self.epochs {
            return bad(format!(
                "stage1_epochs ({}) must be < epochs ({})",
                self.stage1_epochs, self.epochs
            ));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    /// True when the hidden layer receives updates during `epoch` (0-based).
    pub fn hidden_trainable(&self, epoch: usize) -> bool {
        self.stage == Stage::OutputPlusHidden && epoch >= self.stage1_epochs
    }

    /// True when a checkpoint is due after `completed` epochs.
    pub fn checkpoint_due(&self, completed: usize) -> bool {
        completed % self.checkpoint_every == 0 || completed == self.epochs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Mean per-utterance loss over the epoch's batches.
    pub train_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,lr,train_loss\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{},{}\n", e.epoch, e.lr, e.train_loss));
        }
        out
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loss)
    }
}

/// Labeled, non-excluded frames of one utterance, pre-converted to f64.
struct Sample {
    rows: Vec<f64>,
    phones: Vec<usize>,
    labels: Vec<crate::data::Label>,
}

fn prepare(corpus: &Corpus, loss_spec: &LossSpec) -> Vec<Sample> {
    corpus
        .utterances
        .iter()
        .map(|u| {
            let mut s = Sample {
                rows: Vec::new(),
                phones: Vec::new(),
                labels: Vec::new(),
            };
            for (_, seg, label) in u.instances() {
                if loss_spec.excluded_phones.contains(&seg.phone) {
                    continue;
                }
                for t in seg.frames() {
                    s.rows.extend(u.frames.row(t).iter().map(|&v| v as f64));
                    s.phones.push(seg.phone);
                    s.labels.push(label);
                }
            }
            s
        })
        .collect()
}

/// Trains a freshly initialized head. See [`train_from`].
pub fn train(
    corpus: &Corpus,
    head_config: &HeadConfig,
    config: &TrainConfig,
    loss_spec: &LossSpec,
) -> Result<(HeadParams, TrainLog)> {
    let params = init_params(head_config, config.seed)?;
    train_from(corpus, params, config, loss_spec, |_, _| Ok(()))
}

/// Runs the full schedule starting from `params`.
///
/// Each epoch shuffles the utterances and walks them in mini-batches of
/// `batch_size` utterances. Frames of excluded phones are dropped from the
/// batch. The per-batch loss is averaged over the batch's utterances. For the
/// two-stage regime the hidden layer joins the optimizer at `stage1_epochs`
/// with fresh Adam moments; the learning-rate schedule is not reset.
///
/// `on_checkpoint(completed_epochs, params)` is called every
/// `checkpoint_every` epochs and after the last one.
pub fn train_from(
    corpus: &Corpus,
    mut params: HeadParams,
    config: &TrainConfig,
    loss_spec: &LossSpec,
    mut on_checkpoint: impl FnMut(usize, &HeadParams) -> Result<()>,
) -> Result<(HeadParams, TrainLog)> {
    config.validate()?;
    let head = params.config.clone();
    head.validate()?;
    if corpus.kind != MatrixKind::Activations {
        return Err(Error::InvalidArgument("training needs an activation corpus".into()));
    }
    if corpus.dim() != head.input_dim && !corpus.utterances.is_empty() {
        return Err(Error::Dimension(format!(
            "corpus dim {} but head input_dim {}",
            corpus.dim(),
            head.input_dim
        )));
    }
    if head.n_phones != corpus.phones.len() {
        return Err(Error::Dimension(format!(
            "head has {} outputs, phone set has {}",
            head.n_phones,
            corpus.phones.len()
        )));
    }
    if config.stage == Stage::OutputPlusHidden && !head.use_hidden {
        return Err(Error::InvalidArgument("two-stage training needs a head with a hidden layer".into()));
    }
    if let Some(p) = loss_spec.excluded_phones.iter().find(|&&p| p >= head.n_phones) {
        return Err(Error::InvalidArgument(format!("excluded phone {p} is not in the phone set")));
    }
    if (0..head.n_phones).all(|p| loss_spec.excluded_phones.contains(&p)) {
        return Err(Error::InvalidArgument("every phone is excluded; nothing to train".into()));
    }

    let samples = prepare(corpus, loss_spec);
    let dim = head.input_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x005e_ed0f_7a1e);
    let mut adam = AdamState::new(config.adam());
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut log = TrainLog::default();

    for epoch in 0..config.epochs {
        let lr = lr_at_epoch(config, epoch);
        let trainable = Trainable {
            hidden: config.hidden_trainable(epoch),
        };
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_utts = 0usize;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let dropout_seed = rng.next_u64();
            let n_rows: usize = chunk.iter().map(|&i| samples[i].phones.len()).sum();
            if n_rows == 0 || (head.use_batchnorm && n_rows < 2) {
                continue;
            }
            let mut data = Vec::with_capacity(n_rows * dim);
            let mut targets = Vec::with_capacity(n_rows);
            for &i in chunk {
                let s = &samples[i];
                for (&phone, &label) in s.phones.iter().zip(&s.labels) {
                    targets.push(FrameTarget {
                        frame: targets.len(),
                        phone,
                        label,
                    });
                }
                data.extend_from_slice(&s.rows);
            }
            let batch = Array2::from_shape_vec((n_rows, dim), data).expect("batch shape");
            let trace = params.forward(batch.view(), Mode::Train, dropout_seed)?;
            let out = batch_loss(trace.probabilities.view(), &targets, loss_spec)?;
            if !out.loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    message: format!("loss is {}", out.loss),
                });
            }
            if out.empty {
                continue;
            }
            let scale = 1.0 / chunk.len() as f64;
            let grads = out.dense_grads(&targets, trace.probabilities.dim()) * scale;
            let g = params.backward(&trace, grads.view(), trainable)?;
            if let (Some(mean), Some(var)) = (&trace.batch_mean, &trace.batch_var) {
                update_running_stats(&mut params, mean, var, BN_MOMENTUM);
            }
            adam.step(params.trainable_with_grads(&g), lr).map_err(|e| Error::Diverged {
                epoch,
                batch: b,
                message: e.to_string(),
            })?;
            epoch_loss += out.loss;
            epoch_utts += chunk.len();
        }
        let train_loss = if epoch_utts == 0 { 0.0 } else { epoch_loss / epoch_utts as f64 };
        log.epochs.push(EpochLog { epoch, lr, train_loss });
        if config.checkpoint_due(epoch + 1) {
            on_checkpoint(epoch + 1, &params)?;
        }
    }
    Ok((params, log))
}
