//! AUC and the weighted detection cost `fpr_weight * FPR + fnr_weight * FNR`.
//!
//! The positive class is "correctly pronounced": an instance is accepted as
//! correct iff `score >= threshold`. FPR is the fraction of incorrect
//! instances accepted, FNR the fraction of correct instances rejected.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::InstanceScore;

/// Costs closer than this are treated as equal when picking thresholds.
const COST_TIE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostSpec {
    pub fpr_weight: f64,
    pub fnr_weight: f64,
}

impl Default for CostSpec {
    fn default() -> Self {
        Self {
            fpr_weight: 0.5,
            fnr_weight: 1.0,
        }
    }
}

impl CostSpec {
    pub fn validate(&self) -> Result<()> {
        if self.fpr_weight > 0.0 && self.fnr_weight > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("cost weights must be > 0: {self:?}")))
        }
    }

    pub fn cost(&self, fpr: f64, fnr: f64) -> f64 {
        self.fpr_weight * fpr + self.fnr_weight * fnr
    }

    /// Cost of the best trivial system (always accept or always reject).
    pub fn trivial_cost(&self) -> f64 {
        self.fpr_weight.min(self.fnr_weight)
    }

    /// Cost divided by the best trivial cost; a system that always accepts scores 1.
    pub fn normalized(&self, cost: f64) -> f64 {
        cost / self.trivial_cost()
    }
}

/// A threshold together with the error rates and cost it produces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Operating {
    pub threshold: f64,
    pub fpr: f64,
    pub fnr: f64,
    pub cost: f64,
}

fn split(scores: &[InstanceScore]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut correct = Vec::new();
    let mut incorrect = Vec::new();
    for s in scores {
        if !s.score.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "non-finite score for {} segment {}",
                s.utterance_id, s.segment_index
            )));
        }
        if s.label.is_correct() {
            correct.push(s.score);
        } else {
            incorrect.push(s.score);
        }
    }
    if correct.is_empty() || incorrect.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "need both classes, got {} correct and {} incorrect",
            correct.len(),
            incorrect.len()
        )));
    }
    Ok((correct, incorrect))
}

pub fn fpr_fnr(scores: &[InstanceScore], threshold: f64) -> Result<(f64, f64)> {
    let (correct, incorrect) = split(scores)?;
    Ok(rates(&correct, &incorrect, threshold))
}

fn rates(correct: &[f64], incorrect: &[f64], threshold: f64) -> (f64, f64) {
    let fp = incorrect.iter().filter(|&&s| s >= threshold).count();
    let fnn = correct.iter().filter(|&&s| s < threshold).count();
    (fp as f64 / incorrect.len() as f64, fnn as f64 / correct.len() as f64)
}

pub fn cost_at(scores: &[InstanceScore], threshold: f64, spec: &CostSpec) -> Result<Operating> {
    let (fpr, fnr) = fpr_fnr(scores, threshold)?;
    Ok(Operating {
        threshold,
        fpr,
        fnr,
        cost: spec.cost(fpr, fnr),
    })
}

/// Probability that a random correct instance outscores a random incorrect
/// one, ties counting one half.
pub fn auc(scores: &[InstanceScore]) -> Result<f64> {
    let (correct, incorrect) = split(scores)?;
    let mut all: Vec<(f64, bool)> = correct
        .iter()
        .map(|&s| (s, true))
        .chain(incorrect.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Twice the concordance count, kept integral.
    let mut twice_concordant: u128 = 0;
    let mut incorrect_below: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        let (mut c, mut w) = (0u128, 0u128);
        while j < all.len() && all[j].0 == all[i].0 {
            if all[j].1 {
                c += 1;
            } else {
                w += 1;
            }
            j += 1;
        }
        twice_concordant += 2 * c * incorrect_below + c * w;
        incorrect_below += w;
        i = j;
    }
    let pairs = (correct.len() as u128) * (incorrect.len() as u128);
    Ok(twice_concordant as f64 / (2.0 * pairs as f64))
}

/// Candidate thresholds: below the minimum, midpoints of adjacent distinct
/// scores, above the maximum. Ascending.
fn candidates(sorted_unique: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(sorted_unique.len() + 1);
    let (first, last) = (sorted_unique[0], sorted_unique[sorted_unique.len() - 1]);
    out.push(first - 1.0 - first.abs() * 1e-9);
    for w in sorted_unique.windows(2) {
        let mid = w[0] + (w[1] - w[0]) / 2.0;
        // Adjacent floats: the midpoint may round onto the lower score.
        out.push(if mid > w[0] { mid } else { w[1] });
    }
    out.push(last + 1.0 + last.abs() * 1e-9);
    out
}

/// Minimum cost over the candidate thresholds, ties going to the lower FNR
/// and then the lower threshold.
pub fn min_cost(scores: &[InstanceScore], spec: &CostSpec) -> Result<Operating> {
    spec.validate()?;
    let (mut correct, mut incorrect) = split(scores)?;
    correct.sort_by(f64::total_cmp);
    incorrect.sort_by(f64::total_cmp);
    let mut unique: Vec<f64> = correct.iter().chain(&incorrect).copied().collect();
    unique.sort_by(f64::total_cmp);
    unique.dedup();
    let (n1, n0) = (correct.len() as f64, incorrect.len() as f64);

    // Sweep ascending thresholds; rejected = scores strictly below threshold.
    let (mut ci, mut ii) = (0usize, 0usize);
    let mut best: Option<Operating> = None;
    for theta in candidates(&unique) {
        while ci < correct.len() && correct[ci] < theta {
            ci += 1;
        }
        while ii < incorrect.len() && incorrect[ii] < theta {
            ii += 1;
        }
        let fnr = ci as f64 / n1;
        let fpr = (incorrect.len() - ii) as f64 / n0;
        let op = Operating {
            threshold: theta,
            fpr,
            fnr,
            cost: spec.cost(fpr, fnr),
        };
        best = match best {
            None => Some(op),
            Some(b) if op.cost < b.cost - COST_TIE => Some(op),
            Some(b) if (op.cost - b.cost).abs() <= COST_TIE && op.fnr < b.fnr => Some(op),
            keep => keep,
        };
    }
    Ok(best.expect("at least two candidates"))
}

/// Cost on `eval_scores` at the threshold that minimizes cost on `dev_scores`.
pub fn act_cost(eval_scores: &[InstanceScore], dev_scores: &[InstanceScore], spec: &CostSpec) -> Result<Operating> {
    let dev = min_cost(dev_scores, spec)?;
    cost_at(eval_scores, dev.threshold, spec)
}
