//! DNN-GOP baseline: senone posteriors are summed per phone and each aligned
//! target phone is scored by its negative mean log posterior.

use ndarray::Array2;
use rayon::prelude::*;

use crate::data::{Corpus, FrameMatrix, Label, MatrixKind, PhoneSet, Segment, SenonePhoneMap};
use crate::error::{Error, Result};
use crate::eval::InstanceScore;

/// Floor applied to posteriors before taking logs.
pub const DEFAULT_FLOOR: f64 = 1e-10;

/// Per-frame phone posteriors, `n_frames x n_phones`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhonePosteriorMatrix(pub Array2<f64>);

impl PhonePosteriorMatrix {
    pub fn n_frames(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_phones(&self) -> usize {
        self.0.ncols()
    }

    pub fn get(&self, frame: usize, phone: usize) -> f64 {
        self.0[[frame, phone]]
    }
}

/// Raw GOP value of one labeled segment; lower means closer to native.
#[derive(Debug, Clone, PartialEq)]
pub struct GopScore {
    pub utterance_id: String,
    pub segment_index: usize,
    pub phone: usize,
    pub value: f64,
    pub label: Label,
}

impl GopScore {
    /// Higher-is-better view shared with every other scorer.
    pub fn decision_score(&self) -> f64 {
        -self.value
    }

    pub fn to_instance(&self) -> InstanceScore {
        InstanceScore {
            utterance_id: self.utterance_id.clone(),
            segment_index: self.segment_index,
            phone: self.phone,
            score: self.decision_score(),
            label: self.label,
        }
    }
}

/// Sums senone posteriors into phone posteriors: `out[t][p] = sum of in[t][s] over map(s) = p`.
pub fn collapse_senones(
    posteriors: &FrameMatrix,
    map: &SenonePhoneMap,
    phones: &PhoneSet,
) -> Result<PhonePosteriorMatrix> {
    if posteriors.dim() != map.n_senones() {
        return Err(Error::Dimension(format!(
            "posterior dim {} but senone map covers {} senones",
            posteriors.dim(),
            map.n_senones()
        )));
    }
    let mut out = Array2::<f64>::zeros((posteriors.n_frames(), phones.len()));
    for (t, mut row) in out.rows_mut().into_iter().enumerate() {
        for (s, &v) in posteriors.row(t).iter().enumerate() {
            row[map.phone_of(s)] += v as f64;
        }
    }
    Ok(PhonePosteriorMatrix(out))
}

/// `-(1/D) * sum over the segment's frames of ln(max(P_t(p), floor))`.
pub fn gop_score(phone_post: &PhonePosteriorMatrix, segment: &Segment, floor: f64) -> Result<f64> {
    if !(floor > 0.0) {
        return Err(Error::InvalidArgument(format!("posterior floor must be > 0, got {floor}")));
    }
    if segment.duration == 0 {
        return Err(Error::InvalidArgument("segment has zero duration".into()));
    }
    if segment.end() > phone_post.n_frames() || segment.phone >= phone_post.n_phones() {
        return Err(Error::Dimension(format!(
            "segment (phone {}, frames [{}, {})) outside {}x{} posterior matrix",
            segment.phone,
            segment.start,
            segment.end(),
            phone_post.n_frames(),
            phone_post.n_phones()
        )));
    }
    let total: f64 = segment
        .frames()
        .map(|t| phone_post.get(t, segment.phone).max(floor).ln())
        .sum();
    Ok(-total / segment.duration as f64)
}

/// GOP for every labeled segment, in manifest order then segment order.
pub fn score_corpus_gop(corpus: &Corpus, floor: f64) -> Result<Vec<GopScore>> {
    if corpus.kind != MatrixKind::Posteriors {
        return Err(Error::InvalidArgument("GOP scoring needs a posterior corpus".into()));
    }
    let identity;
    let map = match &corpus.senone_map {
        Some(m) => m,
        None => {
            identity = SenonePhoneMap::identity(&corpus.phones);
            &identity
        }
    };
    let per_utt: Vec<Result<Vec<GopScore>>> = corpus
        .utterances
        .par_iter()
        .map(|u| {
            let pp = collapse_senones(&u.frames, map, &corpus.phones).map_err(|e| e.for_utterance(&u.id))?;
            u.instances()
                .map(|(i, seg, label)| {
                    Ok(GopScore {
                        utterance_id: u.id.clone(),
                        segment_index: i,
                        phone: seg.phone,
                        value: gop_score(&pp, seg, floor).map_err(|e| e.for_utterance(&u.id))?,
                        label,
                    })
                })
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(corpus.n_instances());
    for r in per_utt {
        out.extend(r?);
    }
    Ok(out)
}
