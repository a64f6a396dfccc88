use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Assignment of every speaker to exactly one cross-validation fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeakerSplit {
    pub n_folds: usize,
    pub assignments: BTreeMap<String, usize>,
}

impl SpeakerSplit {
    pub fn fold_of(&self, speaker: &str) -> Option<usize> {
        self.assignments.get(speaker).copied()
    }

    /// Speakers of fold `k`, sorted.
    pub fn fold_speakers(&self, k: usize) -> Vec<String> {
        self.assignments
            .iter()
            .filter(|(_, &f)| f == k)
            .map(|(s, _)| s.clone())
            .collect()
    }

    /// Speakers of every fold except `k`, sorted.
    pub fn training_speakers(&self, k: usize) -> Vec<String> {
        self.assignments
            .iter()
            .filter(|(_, &f)| f != k)
            .map(|(s, _)| s.clone())
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_folds];
        for &f in self.assignments.values() {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Shuffles the distinct speakers with `seed` and deals them round-robin
/// into `n_folds` folds, so fold sizes differ by at most one.
pub fn make_speaker_folds<S: AsRef<str>>(speaker_ids: &[S], n_folds: usize, seed: u64) -> Result<SpeakerSplit> {
    let unique: BTreeSet<&str> = speaker_ids.iter().map(AsRef::as_ref).collect();
    if n_folds < 2 || n_folds > unique.len() {
        return Err(Error::InvalidArgument(format!(
            "need 2 <= n_folds <= speakers, got {n_folds} folds for {} speakers",
            unique.len()
        )));
    }
    let mut order: Vec<&str> = unique.into_iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let assignments = order
        .into_iter()
        .enumerate()
        .map(|(i, s)| (s.to_string(), i % n_folds))
        .collect();
    Ok(SpeakerSplit { n_folds, assignments })
}
