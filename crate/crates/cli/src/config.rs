//! Per-command run configuration, loadable from `--config <json>`.
//! Flags override file values; unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use phonescore::{Aggregation, CostSpec, HeadConfig, TrainConfig, Weighting};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::Invalid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    #[default]
    All,
    Dev,
    Eval,
}

pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> anyhow::Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Invalid(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Invalid(format!("{}: {e}", path.display())).into())
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidateConfig {
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GopConfig {
    pub manifest: Option<PathBuf>,
    pub subset: Subset,
    pub floor: f64,
}

impl Default for GopConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            subset: Subset::All,
            floor: phonescore::gop::DEFAULT_FLOOR,
        }
    }
}

/// Head architecture; input and output sizes come from the corpus.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadOptions {
    pub use_hidden: bool,
    pub hidden_dim: usize,
    pub use_batchnorm: bool,
    pub dropout_rate: f64,
}

impl Default for HeadOptions {
    fn default() -> Self {
        let base = HeadConfig::output_only(1, 1);
        Self {
            use_hidden: false,
            hidden_dim: base.hidden_dim,
            use_batchnorm: false,
            dropout_rate: 0.0,
        }
    }
}

impl HeadOptions {
    pub fn resolve(&self, input_dim: usize, n_phones: usize) -> HeadConfig {
        HeadConfig {
            input_dim,
            use_hidden: self.use_hidden,
            hidden_dim: self.hidden_dim,
            use_batchnorm: self.use_batchnorm,
            dropout_rate: self.dropout_rate,
            n_phones,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainRunConfig {
    pub manifest: Option<PathBuf>,
    pub subset: Subset,
    pub head: HeadOptions,
    pub train: TrainConfig,
    pub weighting: Weighting,
    /// Phone symbols whose loss weight is forced to zero, on top of the
    /// phones that fail the minority-count rule.
    pub exclude_phones: Vec<String>,
    pub min_minority: usize,
    /// Optional `hidden_dim x input_dim` FMAT matrix for the hidden layer.
    pub hidden_init: Option<PathBuf>,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            subset: Subset::Dev,
            head: HeadOptions::default(),
            train: TrainConfig::default(),
            weighting: Weighting::Balanced,
            exclude_phones: Vec::new(),
            min_minority: phonescore::data::corpus::DEFAULT_MIN_MINORITY,
            hidden_init: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrossvalConfig {
    #[serde(flatten)]
    pub run: TrainRunConfig,
    pub n_folds: usize,
    /// Seed for the speaker shuffle; the training seed when absent.
    pub fold_seed: Option<u64>,
    pub aggregation: Aggregation,
    pub cost: CostSpec,
}

impl Default for CrossvalConfig {
    fn default() -> Self {
        Self {
            run: TrainRunConfig::default(),
            n_folds: 6,
            fold_seed: None,
            aggregation: Aggregation::MeanProb,
            cost: CostSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoreConfig {
    pub manifest: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub subset: Subset,
    pub aggregation: Aggregation,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            checkpoint: None,
            subset: Subset::All,
            aggregation: Aggregation::MeanProb,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateConfig {
    pub eval_scores: Option<PathBuf>,
    pub dev_scores: Option<PathBuf>,
    /// Phone set fixing row order; the sorted symbols of the eval scores otherwise.
    pub phones: Option<PathBuf>,
    pub cost: CostSpec,
    pub min_minority: usize,
    pub normalize_cost: bool,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            eval_scores: None,
            dev_scores: None,
            phones: None,
            cost: CostSpec::default(),
            min_minority: phonescore::data::corpus::DEFAULT_MIN_MINORITY,
            normalize_cost: false,
        }
    }
}
