//! Speaker-grouped k-fold cross-validation with per-checkpoint pooling.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::Serialize;

use crate::data::{Corpus, SpeakerSplit};
use crate::error::{Error, Result};
use crate::eval::aggregate::{score_corpus, Aggregation};
use crate::eval::metrics::CostSpec;
use crate::eval::report::evaluate;
use crate::eval::InstanceScore;
use crate::head::{init_params, HeadConfig, HeadParams};
use crate::train::{train_from, LossSpec, TrainConfig};

#[derive(Debug, Clone)]
pub struct CrossvalOptions {
    /// Minority-class count a phone needs to enter the averaged metrics.
    pub min_minority: usize,
    pub cost: CostSpec,
    /// Folds trained concurrently.
    pub jobs: usize,
    pub aggregation: Aggregation,
    /// Starting parameters for every fold (e.g. an imported hidden layer);
    /// a seeded random init when absent.
    pub initial: Option<HeadParams>,
}

impl Default for CrossvalOptions {
    fn default() -> Self {
        Self {
            min_minority: crate::data::corpus::DEFAULT_MIN_MINORITY,
            cost: CostSpec::default(),
            jobs: 1,
            aggregation: Aggregation::MeanProb,
            initial: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub avg_one_minus_auc: f64,
    pub avg_min_cost: f64,
}

#[derive(Debug, Clone)]
pub struct CrossvalResult {
    /// Pooled held-out scores at every checkpoint, keyed by completed epochs.
    pub pooled: BTreeMap<usize, Vec<InstanceScore>>,
    pub curve: Vec<EpochMetrics>,
    /// Checkpoint with the lowest average pooled MinCost.
    pub selected_epoch: usize,
}

impl CrossvalResult {
    pub fn selected_scores(&self) -> &[InstanceScore] {
        &self.pooled[&self.selected_epoch]
    }

    pub fn final_scores(&self) -> &[InstanceScore] {
        self.pooled.values().next_back().map_or(&[], Vec::as_slice)
    }

    pub fn curve_csv(&self) -> String {
        let mut out = String::from("epoch,avg_one_minus_auc,avg_min_cost\n");
        for m in &self.curve {
            out.push_str(&format!("{},{},{}\n", m.epoch, m.avg_one_minus_auc, m.avg_min_cost));
        }
        out
    }
}

/// Trains one model per fold on the other folds' speakers, scores the
/// held-out fold at every checkpoint, and pools the held-out scores.
/// Fold `k` trains with seed `train_config.seed + k`. Pooled scores are
/// ordered by fold index, then corpus order.
pub fn crossval(
    corpus: &Corpus,
    head_config: &HeadConfig,
    train_config: &TrainConfig,
    loss_spec: &LossSpec,
    split: &SpeakerSplit,
    options: &CrossvalOptions,
) -> Result<CrossvalResult> {
    for s in corpus.speakers() {
        if split.fold_of(&s).is_none() {
            return Err(Error::InvalidArgument(format!("speaker {s:?} is not assigned to a fold")));
        }
    }
    let folds: Vec<(Corpus, Corpus)> = (0..split.n_folds)
        .map(|k| {
            let held_out = corpus.with_speakers(&split.fold_speakers(k));
            let train = corpus.with_speakers(&split.training_speakers(k));
            if held_out.utterances.is_empty() || train.utterances.is_empty() {
                return Err(Error::InvalidArgument(format!("fold {k} has no utterances on one side")));
            }
            Ok((train, held_out))
        })
        .collect::<Result<_>>()?;

    let run_fold = |k: usize, (train, held_out): &(Corpus, Corpus)| -> Result<Vec<(usize, Vec<InstanceScore>)>> {
        let mut cfg = train_config.clone();
        cfg.seed = train_config.seed.wrapping_add(k as u64);
        let params = match &options.initial {
            Some(p) => p.clone(),
            None => init_params(head_config, cfg.seed)?,
        };
        let mut snapshots = Vec::new();
        train_from(train, params, &cfg, loss_spec, |epoch, p| {
            snapshots.push((epoch, score_corpus(p, held_out, options.aggregation)?));
            Ok(())
        })?;
        Ok(snapshots)
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let per_fold: Vec<Result<Vec<(usize, Vec<InstanceScore>)>>> =
        pool.install(|| folds.par_iter().enumerate().map(|(k, f)| run_fold(k, f)).collect());

    let mut pooled: BTreeMap<usize, Vec<InstanceScore>> = BTreeMap::new();
    for fold in per_fold {
        for (epoch, scores) in fold? {
            pooled.entry(epoch).or_default().extend(scores);
        }
    }

    let eligible: BTreeSet<usize> = corpus.label_counts().eligible(options.min_minority);
    let mut curve = Vec::with_capacity(pooled.len());
    for (&epoch, scores) in &pooled {
        let report = evaluate(scores, None, &options.cost, &eligible)?;
        curve.push(EpochMetrics {
            epoch,
            avg_one_minus_auc: report.average.one_minus_auc,
            avg_min_cost: report.average.min_cost,
        });
    }
    let selected_epoch = curve
        .iter()
        .filter(|m| m.avg_min_cost.is_finite())
        .min_by(|a, b| a.avg_min_cost.total_cmp(&b.avg_min_cost))
        .or(curve.last())
        .map(|m| m.epoch)
        .ok_or_else(|| Error::InvalidArgument("no checkpoints were produced".into()))?;
    Ok(CrossvalResult {
        pooled,
        curve,
        selected_epoch,
    })
}
