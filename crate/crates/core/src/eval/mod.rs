//! Phone-instance scores, detection metrics, threshold calibration,
//! reports and the speaker-grouped cross-validation harness.

pub mod aggregate;
pub mod crossval;
pub mod metrics;
pub mod report;
pub mod scores_csv;

use serde::{Deserialize, Serialize};

pub use aggregate::{aggregate_scores, score_corpus, Aggregation};
pub use crossval::{crossval, CrossvalOptions, CrossvalResult, EpochMetrics};
pub use metrics::{act_cost, auc, cost_at, fpr_fnr, min_cost, CostSpec, Operating};
pub use report::{evaluate, EvaluationReport, PhoneReport, ReportAverages};
pub use scores_csv::{read_scores_csv, write_scores_csv, ScoreRow};

use crate::data::Label;

/// Score of one target-phone instance; higher means more likely correct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceScore {
    pub utterance_id: String,
    pub segment_index: usize,
    pub phone: usize,
    pub score: f64,
    pub label: Label,
}
