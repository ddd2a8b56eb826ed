//! Desk-scale synthetic experiments: the scaled reference configuration,
//! its ablation variants, and a generate → split → train → evaluate driver.

use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, RetrievalLoss, RunConfig, SemanticMode};
use crate::dataset::{split_dataset, synthetic_generate, FoodPairRecord, Split, SyntheticConfig};
use crate::error::Result;
use crate::retrieval::{intra_class_distance_report, sampled_eval, EvalReport, IntraClassReport};
use crate::trainer::{EpochRecord, Trainer};

/// Train / validation / test fractions. With 200 pairs this leaves the
/// 100-pair test subset.
pub const DESK_SPLIT: [f64; 3] = [0.4, 0.1, 0.5];

/// The reference configuration scaled to the synthetic corpus: 32-d joint
/// space, batch 16, 50 epochs.
pub fn desk_config(seed: u64) -> RunConfig {
    let mut c = RunConfig {
        model: ModelConfig {
            vocab_size: 200,
            word_dim: 32,
            hidden_dim: 32,
            sentence_dim: 32,
            image_dim: 64,
            joint_dim: 32,
            num_classes: 20,
            ..ModelConfig::default()
        },
        ..RunConfig::default()
    };
    c.loss.margin = 1.0;
    c.train.batch_size = 16;
    c.train.learning_rate = 3e-3;
    c.train.max_epochs = 50;
    c.train.seed = seed;
    c.train.val_subset_size = 20;
    c.eval.subset_size = 100;
    c.eval.subsets = 1;
    c.eval.seed = seed;
    c
}

pub fn desk_synthetic(seed: u64) -> SyntheticConfig {
    SyntheticConfig {
        seed,
        ..SyntheticConfig::default()
    }
}

/// One ablation cell: a retrieval loss, with or without attention, and
/// with no semantic term, classification only, or full consistency.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationCell {
    pub retrieval: RetrievalLoss,
    pub attention: bool,
    pub semantic: Option<SemanticMode>,
}

impl AblationCell {
    pub const fn new(retrieval: RetrievalLoss, attention: bool, semantic: Option<SemanticMode>) -> Self {
        Self {
            retrieval,
            attention,
            semantic,
        }
    }

    pub const TL: Self = Self::new(RetrievalLoss::Triplet, false, None);
    pub const TL_SA: Self = Self::new(RetrievalLoss::Triplet, true, None);
    pub const TL_CLS: Self = Self::new(RetrievalLoss::Triplet, false, Some(SemanticMode::ClassificationOnly));
    pub const TL_SC: Self = Self::new(RetrievalLoss::Triplet, false, Some(SemanticMode::Consistency));
    pub const SCAN: Self = Self::new(RetrievalLoss::Triplet, true, Some(SemanticMode::Consistency));

    /// Cosine-loss rows, then triplet-loss rows.
    pub fn all() -> Vec<AblationCell> {
        let mut cells = Vec::with_capacity(10);
        for retrieval in [RetrievalLoss::Cosine, RetrievalLoss::Triplet] {
            for (attention, semantic) in [
                (false, None),
                (true, None),
                (false, Some(SemanticMode::ClassificationOnly)),
                (false, Some(SemanticMode::Consistency)),
                (true, Some(SemanticMode::Consistency)),
            ] {
                cells.push(Self::new(retrieval, attention, semantic));
            }
        }
        cells
    }

    pub fn name(&self) -> String {
        if *self == Self::SCAN {
            return "SCAN".into();
        }
        let mut n = String::from(match self.retrieval {
            RetrievalLoss::Triplet => "TL",
            RetrievalLoss::Cosine => "CL",
        });
        match self.semantic {
            Some(SemanticMode::ClassificationOnly) => n.push_str("+cls"),
            Some(SemanticMode::Consistency) => n.push_str("+SC"),
            None => {}
        }
        if self.attention {
            n.push_str("+SA");
        }
        n
    }

    /// `cfg` with this cell's switches applied. Cells with a semantic term
    /// keep the configured λ; the others run with λ = 0.
    pub fn apply(&self, cfg: &RunConfig) -> RunConfig {
        let mut c = cfg.clone();
        c.loss.retrieval = self.retrieval;
        c.model.attention = self.attention;
        match self.semantic {
            Some(mode) => c.loss.semantic = mode,
            None => c.loss.lambda = 0.0,
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub seed: u64,
    pub lambda: f64,
    pub attention: bool,
    /// Epoch whose parameters were evaluated (best validation epoch).
    pub selected_epoch: usize,
    /// Every per-batch total loss, in training order.
    pub loss_trace: Vec<f64>,
    pub history: Vec<EpochRecord>,
    pub test: EvalReport,
    pub intra_class: IntraClassReport,
}

impl Outcome {
    pub fn test_r1(&self) -> f64 {
        self.test.mean.image_to_recipe.r1
    }

    pub fn test_medr(&self) -> f64 {
        self.test.mean.image_to_recipe.medr
    }
}

/// Trains on `split.train`, selects by validation, and evaluates the
/// selected parameters on `split.test`.
pub fn run_split(cfg: &RunConfig, split: &Split, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<Outcome> {
    let mut trainer = Trainer::new(cfg.clone())?;
    trainer.fit(&split.train, Some(&split.val), |rec| {
        on_epoch(rec);
        Ok(())
    })?;
    let params = trainer.selected_params()?;
    let refs: Vec<&FoodPairRecord> = split.test.records.iter().collect();
    let (images, recipes) = params.embed_records(&refs)?;
    let size = cfg.eval.subset_size.min(refs.len());
    let test = sampled_eval(&images, &recipes, size, cfg.eval.subsets, cfg.eval.seed)?;
    let labels: Vec<usize> = refs.iter().map(|r| r.class_label).collect();
    let intra_class = intra_class_distance_report(&labels, &images, &recipes)?;
    let state = trainer.state();
    Ok(Outcome {
        seed: cfg.train.seed,
        lambda: cfg.loss.lambda,
        attention: cfg.model.attention,
        selected_epoch: state.best.as_ref().map_or(state.epoch, |b| b.epoch),
        loss_trace: state
            .history
            .iter()
            .flat_map(|e| e.batch_totals.iter().copied())
            .collect(),
        history: state.history.clone(),
        test,
        intra_class,
    })
}

/// Generates the synthetic corpus, splits it with the training seed and runs.
pub fn run_synthetic(cfg: &RunConfig, synth: &SyntheticConfig, fractions: [f64; 3]) -> Result<Outcome> {
    let data = synthetic_generate(synth)?;
    let split = split_dataset(&data, fractions, cfg.train.seed)?;
    run_split(cfg, &split, |_| {})
}
