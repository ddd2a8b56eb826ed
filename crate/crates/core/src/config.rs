//! Run configuration. Every section rejects unknown keys.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::LAYER_NORM_EPS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellKind {
    /// `h_t = tanh(W z_t + U h_{t-1} + b)`.
    SimpleTanh,
    /// LSTM cell with input, forget, candidate and output gates.
    Gated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    /// Mean over the (non-padding) attended rows.
    Mean,
    /// Forward half of the last row joined with the backward half of the first.
    FinalState,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassifierSharing {
    PerModality,
    Shared,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PositiveMode {
    /// Each anchor's only positive is its own counterpart.
    Paired,
    /// Every item sharing the anchor's class label is a positive.
    SameClass,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reduction {
    Mean,
    Sum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RetrievalLoss {
    /// Bidirectional BatchHard triplet loss.
    Triplet,
    /// Cosine embedding loss on paired and unpaired items.
    Cosine,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SemanticMode {
    /// Cross-entropy on both heads plus KL in both directions.
    Consistency,
    /// Cross-entropy on both heads only.
    ClassificationOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub word_dim: usize,
    /// Hidden size of one recurrent direction.
    pub hidden_dim: usize,
    pub sentence_dim: usize,
    pub image_dim: usize,
    pub joint_dim: usize,
    pub num_classes: usize,
    pub cell: CellKind,
    pub attention: bool,
    pub pooling: Pooling,
    pub classifier: ClassifierSharing,
    pub layer_norm_eps: f64,
    pub layer_norm_affine: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 4096,
            word_dim: 300,
            hidden_dim: 300,
            sentence_dim: 1024,
            image_dim: 2048,
            joint_dim: 1024,
            num_classes: 1047,
            cell: CellKind::Gated,
            attention: true,
            pooling: Pooling::Mean,
            classifier: ClassifierSharing::PerModality,
            layer_norm_eps: LAYER_NORM_EPS,
            layer_norm_affine: false,
        }
    }
}

impl ModelConfig {
    /// Width of the bidirectional sequence representation.
    pub fn sequence_dim(&self) -> usize {
        2 * self.hidden_dim
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("word_dim", self.word_dim),
            ("hidden_dim", self.hidden_dim),
            ("sentence_dim", self.sentence_dim),
            ("image_dim", self.image_dim),
            ("joint_dim", self.joint_dim),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model.{name} must be positive")));
        }
        if self.vocab_size < 2 {
            return Err(Error::Config(
                "model.vocab_size must leave room for padding id 0".into(),
            ));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("model.num_classes must be at least 2".into()));
        }
        if !(self.layer_norm_eps >= 0.0) {
            return Err(Error::Config("model.layer_norm_eps must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub retrieval: RetrievalLoss,
    pub margin: f64,
    pub positive_mode: PositiveMode,
    pub reduction: Reduction,
    pub semantic: SemanticMode,
    pub lambda: f64,
    pub cosine_margin: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            retrieval: RetrievalLoss::Triplet,
            margin: 0.3,
            positive_mode: PositiveMode::Paired,
            reduction: Reduction::Mean,
            semantic: SemanticMode::Consistency,
            lambda: 0.05,
            cosine_margin: 0.1,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0) {
            return Err(Error::Config("loss.margin must be nonnegative".into()));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Config("loss.lambda must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub decay_epoch: usize,
    pub decay_factor: f64,
    pub max_epochs: usize,
    pub seed: u64,
    /// Update the image and recipe sides on alternating batches.
    pub alternate: bool,
    /// Consecutive batches per side when alternating.
    pub alternation_period: usize,
    /// Pairs per validation subset used for model selection (capped at the split size).
    pub val_subset_size: usize,
    pub val_subsets: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            learning_rate: 1e-4,
            decay_epoch: 30,
            decay_factor: 0.1,
            max_epochs: 40,
            seed: 0,
            alternate: true,
            alternation_period: 1,
            val_subset_size: 1000,
            val_subsets: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config("train.batch_size must be at least 2".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("train.learning_rate must be positive".into()));
        }
        if self.decay_epoch == 0 {
            return Err(Error::Config("train.decay_epoch is 1-based".into()));
        }
        if self.alternation_period == 0 {
            return Err(Error::Config("train.alternation_period must be at least 1".into()));
        }
        if self.val_subsets == 0 || self.val_subset_size == 0 {
            return Err(Error::Config("validation subsets must be nonempty".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub subset_size: usize,
    pub subsets: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            subset_size: 1000,
            subsets: 10,
            seed: 0,
        }
    }
}

/// Everything a training run needs besides data.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.train.validate()
    }
}
