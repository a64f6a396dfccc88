use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Alignment, Corpus, Label};
use crate::error::{Error, Result};
use crate::eval::InstanceScore;
use crate::gop::DEFAULT_FLOOR;
use crate::head::HeadParams;

/// How frame-level scores of a segment's target phone become one instance score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Arithmetic mean of the frame probabilities.
    MeanProb,
    /// Mean log probability, i.e. the negated GOP value.
    NegMeanLog,
}

/// One score per labeled segment, in segment order.
pub fn aggregate_scores(
    utterance_id: &str,
    frame_scores: ArrayView2<f64>,
    alignment: &Alignment,
    labels: &[Label],
    method: Aggregation,
) -> Result<Vec<InstanceScore>> {
    if labels.len() != alignment.len() {
        return Err(Error::InvalidArgument(format!(
            "{utterance_id}: {} labels for {} segments",
            labels.len(),
            alignment.len()
        )));
    }
    let (n_frames, n_phones) = frame_scores.dim();
    alignment
        .segments()
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (seg, &label))| {
            if seg.duration == 0 {
                return Err(Error::InvalidArgument(format!("{utterance_id}: segment {i} has zero duration")));
            }
            if seg.end() > n_frames || seg.phone >= n_phones {
                return Err(Error::Dimension(format!(
                    "{utterance_id}: segment {i} outside {n_frames}x{n_phones} score matrix"
                )));
            }
            let vals = seg.frames().map(|t| frame_scores[[t, seg.phone]]);
            let total: f64 = match method {
                Aggregation::MeanProb => vals.sum(),
                Aggregation::NegMeanLog => vals.map(|p| p.max(DEFAULT_FLOOR).ln()).sum(),
            };
            Ok(InstanceScore {
                utterance_id: utterance_id.to_string(),
                segment_index: i,
                phone: seg.phone,
                score: total / seg.duration as f64,
                label,
            })
        })
        .collect()
}

/// Scores every labeled segment of `corpus` with the head in eval mode, in
/// manifest order then segment order.
pub fn score_corpus(params: &HeadParams, corpus: &Corpus, method: Aggregation) -> Result<Vec<InstanceScore>> {
    let per_utt: Vec<Result<Vec<InstanceScore>>> = corpus
        .utterances
        .par_iter()
        .map(|u| {
            let frames = &u.frames;
            let x = Array2::from_shape_fn((frames.n_frames(), frames.dim()), |(t, d)| frames.row(t)[d] as f64);
            let probs = params.predict(x.view()).map_err(|e| e.for_utterance(&u.id))?;
            aggregate_scores(&u.id, probs.view(), &u.alignment, &u.labels, method)
        })
        .collect();
    let mut out = Vec::with_capacity(corpus.n_instances());
    for r in per_utt {
        out.extend(r?);
    }
    Ok(out)
}
