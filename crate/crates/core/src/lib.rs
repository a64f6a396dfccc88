//! Phone-level pronunciation scoring.
//!
//! Two scorers share one evaluation protocol:
//!
//! * [`gop`]: the DNN goodness-of-pronunciation baseline computed from an
//!   acoustic model's senone posteriors;
//! * [`head`] + [`train`]: a small sigmoid scoring head fine-tuned on
//!   annotated non-native speech with a phone/class weighted binary
//!   cross-entropy.
//!
//! [`eval`] turns frame scores into instance scores and computes AUC, the
//! `0.5 * FPR + FNR` cost with MinCost/ActCost threshold calibration, and a
//! speaker-grouped cross-validation harness. [`synth`] generates corpora for
//! exercising the whole pipeline.

pub mod data;
pub mod error;
pub mod eval;
pub mod gop;
pub mod head;
pub mod synth;
pub mod train;

pub use data::{
    eligible_phones, make_speaker_folds, Alignment, Corpus, FrameMatrix, Label, LabelCounts, MatrixKind, PhoneSet,
    Segment, SenonePhoneMap, SpeakerSplit,
};
pub use error::{Diagnostic, Error, Result};
pub use eval::{
    act_cost, aggregate_scores, auc, crossval, evaluate, fpr_fnr, min_cost, score_corpus, Aggregation, CostSpec,
    CrossvalOptions, CrossvalResult, EvaluationReport, InstanceScore, PhoneReport,
};
pub use gop::{collapse_senones, gop_score, score_corpus_gop, GopScore, PhonePosteriorMatrix};
pub use head::{init_params, HeadConfig, HeadParams, Mode};
pub use synth::{generate, synthesize, SynthKind, SynthSpec};
pub use train::{batch_loss, lr_at_epoch, train, LossSpec, Stage, TrainConfig, Weighting};
