use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::Result;
use crate::eval::metrics::{auc, cost_at, min_cost, CostSpec};
use crate::eval::InstanceScore;

/// Per-phone evaluation record. ActCost fields are `None` when the phone
/// lacks one of the classes in the development scores.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhoneReport {
    pub phone: usize,
    pub n_correct: usize,
    pub n_incorrect: usize,
    pub auc: f64,
    pub min_cost: f64,
    pub min_cost_threshold: f64,
    pub act_cost: Option<f64>,
    pub act_threshold: Option<f64>,
    pub fpr_at_act: Option<f64>,
    pub fnr_at_act: Option<f64>,
}

impl PhoneReport {
    pub fn one_minus_auc(&self) -> f64 {
        1.0 - self.auc
    }
}

/// Unweighted means over the reported phones (act fields over phones that have them).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportAverages {
    pub n_phones: usize,
    pub n_correct: usize,
    pub n_incorrect: usize,
    pub one_minus_auc: f64,
    pub min_cost: f64,
    pub act_cost: Option<f64>,
    pub fpr_at_act: Option<f64>,
    pub fnr_at_act: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub cost: CostSpec,
    pub phones: Vec<PhoneReport>,
    pub average: ReportAverages,
}

fn by_phone(scores: &[InstanceScore]) -> BTreeMap<usize, Vec<InstanceScore>> {
    let mut out: BTreeMap<usize, Vec<InstanceScore>> = BTreeMap::new();
    for s in scores {
        out.entry(s.phone).or_default().push(s.clone());
    }
    out
}

fn both_classes(scores: &[InstanceScore]) -> bool {
    scores.iter().any(|s| s.label.is_correct()) && scores.iter().any(|s| !s.label.is_correct())
}

fn mean(vals: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = vals.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Per-phone AUC and MinCost on `eval_scores`, plus ActCost with thresholds
/// calibrated on `dev_scores`, for every phone in `eligible`.
pub fn evaluate(
    eval_scores: &[InstanceScore],
    dev_scores: Option<&[InstanceScore]>,
    cost: &CostSpec,
    eligible: &BTreeSet<usize>,
) -> Result<EvaluationReport> {
    cost.validate()?;
    let eval = by_phone(eval_scores);
    let dev = dev_scores.map(by_phone).unwrap_or_default();
    let mut phones = Vec::new();
    for &p in eligible {
        let Some(e) = eval.get(&p).filter(|e| both_classes(e)) else {
            continue;
        };
        let best = min_cost(e, cost)?;
        let act = match dev.get(&p).filter(|d| both_classes(d)) {
            Some(d) => Some(cost_at(e, min_cost(d, cost)?.threshold, cost)?),
            None => None,
        };
        phones.push(PhoneReport {
            phone: p,
            n_correct: e.iter().filter(|s| s.label.is_correct()).count(),
            n_incorrect: e.iter().filter(|s| !s.label.is_correct()).count(),
            auc: auc(e)?,
            min_cost: best.cost,
            min_cost_threshold: best.threshold,
            act_cost: act.map(|a| a.cost),
            act_threshold: act.map(|a| a.threshold),
            fpr_at_act: act.map(|a| a.fpr),
            fnr_at_act: act.map(|a| a.fnr),
        });
    }
    let average = ReportAverages {
        n_phones: phones.len(),
        n_correct: phones.iter().map(|r| r.n_correct).sum(),
        n_incorrect: phones.iter().map(|r| r.n_incorrect).sum(),
        one_minus_auc: mean(phones.iter().map(PhoneReport::one_minus_auc)).unwrap_or(f64::NAN),
        min_cost: mean(phones.iter().map(|r| r.min_cost)).unwrap_or(f64::NAN),
        act_cost: mean(phones.iter().filter_map(|r| r.act_cost)),
        fpr_at_act: mean(phones.iter().filter_map(|r| r.fpr_at_act)),
        fnr_at_act: mean(phones.iter().filter_map(|r| r.fnr_at_act)),
    };
    Ok(EvaluationReport {
        cost: *cost,
        phones,
        average,
    })
}

pub const REPORT_HEADER: &str =
    "phone,n_correct,n_incorrect,one_minus_auc,min_cost,min_cost_threshold,act_cost,act_threshold,fpr_at_act,fnr_at_act";

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl EvaluationReport {
    /// Average MinCost divided by the cost of always accepting.
    pub fn normalized_min_cost(&self) -> f64 {
        self.cost.normalized(self.average.min_cost)
    }

    pub fn normalized_act_cost(&self) -> Option<f64> {
        self.average.act_cost.map(|c| self.cost.normalized(c))
    }

    /// Report CSV with one row per phone and a final `AVERAGE` row. Counts
    /// in the average row are totals; thresholds are left empty. With
    /// `normalize`, cost columns are divided by the best trivial cost.
    pub fn to_csv(&self, symbol: impl Fn(usize) -> String, normalize: bool) -> String {
        let scale = if normalize { 1.0 / self.cost.trivial_cost() } else { 1.0 };
        let mut out = String::new();
        out.push_str(REPORT_HEADER);
        out.push('\n');
        for r in &self.phones {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                symbol(r.phone),
                r.n_correct,
                r.n_incorrect,
                r.one_minus_auc(),
                r.min_cost * scale,
                r.min_cost_threshold,
                opt(r.act_cost.map(|c| c * scale)),
                opt(r.act_threshold),
                opt(r.fpr_at_act),
                opt(r.fnr_at_act),
            );
        }
        let a = &self.average;
        let _ = writeln!(
            out,
            "AVERAGE,{},{},{},{},,{},,{},{}",
            a.n_correct,
            a.n_incorrect,
            a.one_minus_auc,
            a.min_cost * scale,
            opt(a.act_cost.map(|c| c * scale)),
            opt(a.fpr_at_act),
            opt(a.fnr_at_act),
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Label;

    fn inst(phone: usize, score: f64, correct: bool, i: usize) -> InstanceScore {
        InstanceScore {
            utterance_id: format!("u{i}"),
            segment_index: 0,
            phone,
            score,
            label: if correct { Label::Correct } else { Label::Incorrect },
        }
    }

    #[test]
    fn separated_scores_give_zero_costs() {
        let mut s = Vec::new();
        for p in 0..3 {
            for i in 0..20 {
                s.push(inst(p, 1.0 + i as f64, true, i));
                s.push(inst(p, -1.0 - i as f64, false, i));
            }
        }
        let r = evaluate(&s, Some(&s), &CostSpec::default(), &BTreeSet::from([0, 1, 2])).unwrap();
        assert_eq!(r.phones.len(), 3);
        for p in &r.phones {
            assert_eq!(p.min_cost, 0.0);
            assert_eq!(p.one_minus_auc(), 0.0);
            assert_eq!(p.act_cost, Some(0.0));
        }
        assert_eq!(r.average.min_cost, 0.0);
        let csv = r.to_csv(|p| format!("P{p}"), false);
        assert!(csv.starts_with(REPORT_HEADER));
        assert!(csv.lines().last().unwrap().starts_with("AVERAGE,60,60,0,0,,0,,"));
    }

    #[test]
    fn missing_dev_class_is_absent_not_zero() {
        let eval = vec![inst(0, 0.9, true, 0), inst(0, 0.1, false, 1)];
        let dev = vec![inst(0, 0.9, true, 0)];
        let r = evaluate(&eval, Some(&dev), &CostSpec::default(), &BTreeSet::from([0])).unwrap();
        assert_eq!(r.phones[0].act_cost, None);
        assert_eq!(r.average.act_cost, None);
        let csv = r.to_csv(|_| "A".into(), false);
        assert!(csv.lines().nth(1).unwrap().ends_with(",,,,"));
    }

    #[test]
    fn averages_are_per_phone() {
        // phone 0: perfect; phone 1: inverted (cost 0.5 = accept all)
        let mut s = Vec::new();
        for i in 0..10 {
            s.push(inst(0, 1.0, true, i));
            s.push(inst(0, 0.0, false, i));
        }
        s.push(inst(1, 0.0, true, 0));
        s.push(inst(1, 1.0, false, 1));
        let r = evaluate(&s, None, &CostSpec::default(), &BTreeSet::from([0, 1])).unwrap();
        assert_eq!(r.average.min_cost, 0.25);
        assert_eq!(r.average.one_minus_auc, 0.5);
        assert_eq!(r.normalized_min_cost(), 0.5);
    }
}
