//! Phone- and class-weighted binary cross-entropy over aligned frames.

use std::collections::BTreeSet;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{Error, Result};

pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    /// Every frame has weight 1.
    Flat,
    /// Each (phone, class) cell has weight `1 / N` with `N` its frame count in the batch.
    Balanced,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossSpec {
    pub weighting: Weighting,
    /// Phones whose weights are forced to zero.
    pub excluded_phones: BTreeSet<usize>,
    pub clamp: f64,
}

impl LossSpec {
    pub fn new(weighting: Weighting) -> Self {
        Self {
            weighting,
            excluded_phones: BTreeSet::new(),
            clamp: PROB_CLAMP,
        }
    }

    pub fn excluding(mut self, phones: impl IntoIterator<Item = usize>) -> Self {
        self.excluded_phones.extend(phones);
        self
    }

    /// Excludes every phone of `0..n_phones` not in `eligible`.
    pub fn with_eligible(weighting: Weighting, n_phones: usize, eligible: &BTreeSet<usize>) -> Self {
        Self::new(weighting).excluding((0..n_phones).filter(|p| !eligible.contains(p)))
    }
}

/// A labeled frame: row `frame` of the batch, scored on output `phone`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameTarget {
    pub frame: usize,
    pub phone: usize,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    /// `dL/d(prob)` at each target's selected entry, aligned with the targets.
    pub grads: Vec<f64>,
    /// Set when there was nothing to score (loss is 0 by convention).
    pub empty: bool,
}

impl LossOutput {
    /// Scatters the per-target gradients into a dense `n_frames x n_phones` matrix.
    pub fn dense_grads(&self, targets: &[FrameTarget], shape: (usize, usize)) -> Array2<f64> {
        let mut out = Array2::zeros(shape);
        for (t, g) in targets.iter().zip(&self.grads) {
            out[[t.frame, t.phone]] += g;
        }
        out
    }
}

/// Weighted BCE over the selected entries `probabilities[frame][phone]`.
///
/// Loss is the plain sum over phones, classes and frames; callers average
/// over utterances if they want a per-sample value.
pub fn batch_loss(probabilities: ArrayView2<f64>, targets: &[FrameTarget], spec: &LossSpec) -> Result<LossOutput> {
    let (n_frames, n_phones) = probabilities.dim();
    for t in targets {
        if t.frame >= n_frames || t.phone >= n_phones {
            return Err(Error::Dimension(format!(
                "target (frame {}, phone {}) outside {n_frames}x{n_phones} probabilities",
                t.frame, t.phone
            )));
        }
    }

    let mut counts = vec![[0usize; 2]; n_phones];
    for t in targets {
        if !spec.excluded_phones.contains(&t.phone) {
            counts[t.phone][t.label.bit() as usize] += 1;
        }
    }
    let weight = |t: &FrameTarget| -> f64 {
        if spec.excluded_phones.contains(&t.phone) {
            return 0.0;
        }
        match spec.weighting {
            Weighting::Flat => 1.0,
            Weighting::Balanced => match counts[t.phone][t.label.bit() as usize] {
                0 => 0.0,
                n => 1.0 / n as f64,
            },
        }
    };

    let lo = spec.clamp;
    let hi = 1.0 - spec.clamp;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(targets.len());
    let mut scored = 0usize;
    for t in targets {
        let w = weight(t);
        if w == 0.0 {
            grads.push(0.0);
            continue;
        }
        scored += 1;
        let p = probabilities[[t.frame, t.phone]].clamp(lo, hi);
        // The clamped value is used for both loss and slope so saturated
        // outputs still receive a (small) gradient.
        match t.label {
            Label::Correct => {
                loss -= w * p.ln();
                grads.push(-w / p);
            }
            Label::Incorrect => {
                loss -= w * (1.0 - p).ln();
                grads.push(w / (1.0 - p));
            }
        }
    }
    Ok(LossOutput {
        loss,
        grads,
        empty: scored == 0,
    })
}
