//! Mini-batch training with alternating image/recipe updates.
//!
//! Every batch computes the full loss and gradients for all parameters,
//! then applies Adam only to the parameters of the side whose turn it is.
//! The batch order of epoch `e` is a pure function of `(seed, e)`, so a
//! run can be resumed from any batch boundary without replaying RNG draws.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset::{Dataset, FoodPairRecord};
use crate::encoders::{ModelParams, Side};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::losses::{total_loss_graph, LossBreakdown};
use crate::optim::{lr_at_epoch, AdamState};
use crate::retrieval::{sampled_eval, SubsetMetrics};
use crate::tensor::Tensor;

/// Which parameters a batch updated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdatePhase {
    Image,
    Recipe,
    /// Alternation disabled: everything updates.
    Joint,
}

impl UpdatePhase {
    fn owns(self, side: Side) -> bool {
        match (self, side) {
            (UpdatePhase::Joint, _) | (_, Side::Both) => true,
            (UpdatePhase::Image, s) => s == Side::Image,
            (UpdatePhase::Recipe, s) => s == Side::Recipe,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub phase: UpdatePhase,
    pub loss: LossBreakdown,
}

/// One line of the run report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean of the per-batch loss components.
    pub loss: LossBreakdown,
    /// Per-batch total loss, in training order.
    pub batch_totals: Vec<f64>,
    pub image_updates: usize,
    pub recipe_updates: usize,
    /// Validation retrieval metrics, when a validation split is present.
    pub val: Option<SubsetMetrics>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BestModel {
    pub epoch: usize,
    pub params: Vec<Tensor>,
    pub val: SubsetMetrics,
}

/// Everything needed to continue training bit-identically.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub params: ModelParams,
    pub adam: AdamState,
    /// Epochs completed.
    pub epoch: usize,
    /// Batches already done inside the current (incomplete) epoch.
    pub batch_cursor: usize,
    /// Batches done over the whole run; drives alternation.
    pub global_batch: u64,
    pub history: Vec<EpochRecord>,
    /// Steps of the incomplete epoch, kept so its report line is whole.
    pub pending: Vec<StepRecord>,
    pub best: Option<BestModel>,
}

pub struct Trainer {
    config: RunConfig,
    state: TrainState,
}

/// Shuffled record indices for a 1-based epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Lower image-to-recipe MedR wins, then higher R@1; on a full tie the
/// later epoch wins.
fn better_or_equal(candidate: &SubsetMetrics, incumbent: &SubsetMetrics) -> bool {
    let (c, i) = (candidate.image_to_recipe, incumbent.image_to_recipe);
    c.medr < i.medr || (c.medr == i.medr && c.r1 >= i.r1)
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(&config.model, config.train.seed)?;
        let adam = AdamState::new(params.tensors());
        Ok(Self {
            config,
            state: TrainState {
                params,
                adam,
                epoch: 0,
                batch_cursor: 0,
                global_batch: 0,
                history: Vec::new(),
                pending: Vec::new(),
                best: None,
            },
        })
    }

    pub fn from_state(config: RunConfig, state: TrainState) -> Result<Self> {
        config.validate()?;
        if state.params.config() != &config.model {
            return Err(Error::Config("checkpoint model config differs from run config".into()));
        }
        Ok(Self { config, state })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    pub fn params(&self) -> &ModelParams {
        &self.state.params
    }

    /// Parameters of the best validation epoch, or the current ones.
    pub fn selected_params(&self) -> Result<ModelParams> {
        match &self.state.best {
            Some(b) => ModelParams::from_tensors(&self.config.model, b.params.clone()),
            None => Ok(self.state.params.clone()),
        }
    }

    fn phase_for(&self, batch: u64) -> UpdatePhase {
        let t = &self.config.train;
        if !t.alternate {
            return UpdatePhase::Joint;
        }
        if (batch / t.alternation_period as u64).is_multiple_of(2) {
            UpdatePhase::Image
        } else {
            UpdatePhase::Recipe
        }
    }

    /// Full batches of the given epoch; a trailing short batch is dropped.
    pub fn epoch_batches(&self, n: usize, epoch: usize) -> Result<Vec<Vec<usize>>> {
        let b = self.config.train.batch_size;
        if n < b {
            return Err(Error::Data(format!(
                "training split has {n} records, fewer than batch size {b}"
            )));
        }
        let order = epoch_order(n, self.config.train.seed, epoch);
        Ok(order.chunks_exact(b).map(<[usize]>::to_vec).collect())
    }

    /// Loss, backward pass and a single-side update for one batch.
    pub fn step(&mut self, batch: &[&FoodPairRecord], lr: f64) -> Result<StepRecord> {
        if batch.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        let phase = self.phase_for(self.state.global_batch);
        let mut g = Graph::new();
        let model = self.state.params.bind(&mut g, true);
        let out = total_loss_graph(&mut g, &model, batch, &self.config.loss)?;
        if !out.breakdown.total.is_finite() {
            return Err(Error::Data(format!(
                "non-finite loss at batch {} of epoch {}",
                self.state.batch_cursor,
                self.state.epoch + 1
            )));
        }
        let grads = g.backward(out.total)?;
        let specs = self.state.params.specs().to_vec();
        let vars = model.vars().to_vec();
        let tensors = self.state.params.tensors_mut();
        for (k, spec) in specs.iter().enumerate() {
            if !phase.owns(spec.side) {
                continue;
            }
            let zero;
            let grad = match grads.get(vars[k]) {
                Some(gr) => gr,
                None => {
                    zero = Tensor::zeros(&spec.shape);
                    &zero
                }
            };
            self.state.adam.update(k, &mut tensors[k], grad, lr)?;
        }
        self.state.global_batch += 1;
        Ok(StepRecord {
            phase,
            loss: out.breakdown,
        })
    }

    /// Runs up to `limit` batches from the current position, finishing
    /// epochs (without validation) as their batches run out.
    pub fn run_batches(&mut self, train: &Dataset, limit: usize) -> Result<Vec<StepRecord>> {
        let mut done = Vec::with_capacity(limit);
        while done.len() < limit {
            let epoch = self.state.epoch + 1;
            let batches = self.epoch_batches(train.len(), epoch)?;
            let lr = lr_at_epoch(&self.config.train, epoch);
            while self.state.batch_cursor < batches.len() && done.len() < limit {
                let batch: Vec<&FoodPairRecord> = batches[self.state.batch_cursor]
                    .iter()
                    .map(|&i| &train.records[i])
                    .collect();
                let rec = self.step(&batch, lr)?;
                self.state.batch_cursor += 1;
                self.state.pending.push(rec);
                done.push(rec);
            }
            if self.state.batch_cursor == batches.len() {
                self.close_epoch(None);
            }
        }
        Ok(done)
    }

    fn close_epoch(&mut self, val: Option<SubsetMetrics>) -> &EpochRecord {
        let epoch = self.state.epoch + 1;
        let steps = std::mem::take(&mut self.state.pending);
        let losses: Vec<LossBreakdown> = steps.iter().map(|s| s.loss).collect();
        let count = |p| {
            steps
                .iter()
                .filter(|s| s.phase == p || s.phase == UpdatePhase::Joint)
                .count()
        };
        self.state.history.push(EpochRecord {
            epoch,
            lr: lr_at_epoch(&self.config.train, epoch),
            loss: LossBreakdown::mean(&losses),
            batch_totals: losses.iter().map(|l| l.total).collect(),
            image_updates: count(UpdatePhase::Image),
            recipe_updates: count(UpdatePhase::Recipe),
            val,
        });
        self.state.epoch = epoch;
        self.state.batch_cursor = 0;
        self.state.history.last().expect("just pushed")
    }

    /// Finishes the current epoch and returns its per-batch trace.
    pub fn train_epoch(&mut self, train: &Dataset) -> Result<Vec<StepRecord>> {
        if train.is_empty() {
            return Err(Error::Data("empty training split".into()));
        }
        let epoch = self.state.epoch + 1;
        let batches = self.epoch_batches(train.len(), epoch)?;
        let lr = lr_at_epoch(&self.config.train, epoch);
        let mut trace = Vec::with_capacity(batches.len());
        for idx in &batches[self.state.batch_cursor..] {
            let batch: Vec<&FoodPairRecord> = idx.iter().map(|&i| &train.records[i]).collect();
            let rec = self.step(&batch, lr)?;
            self.state.batch_cursor += 1;
            self.state.pending.push(rec);
            trace.push(rec);
        }
        Ok(trace)
    }

    /// Validation metrics for the current parameters.
    pub fn validate(&self, val: &Dataset) -> Result<SubsetMetrics> {
        let refs: Vec<&FoodPairRecord> = val.records.iter().collect();
        let (i, r) = self.state.params.embed_records(&refs)?;
        let t = &self.config.train;
        let size = t.val_subset_size.min(val.len());
        Ok(sampled_eval(&i, &r, size, t.val_subsets, self.config.eval.seed)?.mean)
    }

    /// Trains until `max_epochs`, validating after every epoch and keeping
    /// the best-validation parameters. `on_epoch` sees each finished record.
    pub fn fit(
        &mut self,
        train: &Dataset,
        val: Option<&Dataset>,
        mut on_epoch: impl FnMut(&EpochRecord) -> Result<()>,
    ) -> Result<()> {
        let val = val.filter(|v| !v.is_empty());
        while self.state.epoch < self.config.train.max_epochs {
            self.train_epoch(train)?;
            let metrics = val.map(|v| self.validate(v)).transpose()?;
            let epoch = self.state.epoch + 1;
            if let Some(m) = metrics {
                let improved = self.state.best.as_ref().is_none_or(|b| better_or_equal(&m, &b.val));
                if improved {
                    self.state.best = Some(BestModel {
                        epoch,
                        params: self.state.params.tensors().to_vec(),
                        val: m,
                    });
                }
            }
            let record = self.close_epoch(metrics).clone();
            on_epoch(&record)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{CellKind, ModelConfig};
    use crate::dataset::{synthetic_generate, SyntheticConfig};

    fn tiny_config() -> RunConfig {
        let mut c = RunConfig {
            model: ModelConfig {
                vocab_size: 200,
                word_dim: 8,
                hidden_dim: 6,
                sentence_dim: 32,
                image_dim: 64,
                joint_dim: 8,
                num_classes: 20,
                cell: CellKind::Gated,
                ..ModelConfig::default()
            },
            ..RunConfig::default()
        };
        c.train.batch_size = 8;
        c.train.max_epochs = 1;
        c.train.learning_rate = 1e-3;
        c
    }

    fn data() -> Dataset {
        synthetic_generate(&SyntheticConfig {
            pairs_per_class: 2,
            ..SyntheticConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn alternation_pattern() {
        let t = Trainer::new(tiny_config()).unwrap();
        let p: Vec<_> = (0..4).map(|b| t.phase_for(b)).collect();
        use UpdatePhase::*;
        assert_eq!(p, vec![Image, Recipe, Image, Recipe]);
        let mut c = tiny_config();
        c.train.alternation_period = 2;
        let t = Trainer::new(c).unwrap();
        let p: Vec<_> = (0..4).map(|b| t.phase_for(b)).collect();
        assert_eq!(p, vec![Image, Image, Recipe, Recipe]);
    }

    #[test]
    fn image_step_leaves_recipe_side_untouched() {
        let ds = data();
        let mut t = Trainer::new(tiny_config()).unwrap();
        let before = t.params().clone();
        let batch: Vec<&FoodPairRecord> = ds.records.iter().take(8).collect();
        let rec = t.step(&batch, 1e-2).unwrap();
        assert_eq!(rec.phase, UpdatePhase::Image);
        let after = t.params().clone();
        for ((spec, a), b) in before.specs().iter().zip(before.tensors()).zip(after.tensors()) {
            match spec.side {
                Side::Recipe => assert_eq!(a, b, "{} changed", spec.name),
                Side::Image => assert_ne!(a, b, "{} unchanged", spec.name),
                Side::Both => {}
            }
        }
        let rec = t.step(&batch, 1e-2).unwrap();
        assert_eq!(rec.phase, UpdatePhase::Recipe);
        let third = t.params().clone();
        for ((spec, a), b) in after.specs().iter().zip(after.tensors()).zip(third.tensors()) {
            if spec.side == Side::Image {
                assert_eq!(a, b, "{} changed", spec.name);
            }
        }
    }

    #[test]
    fn zero_epochs_returns_initial_state() {
        let mut c = tiny_config();
        c.train.max_epochs = 0;
        let mut t = Trainer::new(c.clone()).unwrap();
        t.fit(&data(), None, |_| Ok(())).unwrap();
        assert!(t.state().history.is_empty());
        let fresh = Trainer::new(c).unwrap();
        assert_eq!(t.params().tensors(), fresh.params().tensors());
    }

    #[test]
    fn huge_margin_keeps_hinge_active() {
        let mut c = tiny_config();
        c.loss.lambda = 0.0;
        c.loss.margin = 1e3;
        let mut t = Trainer::new(c).unwrap();
        let trace = t.train_epoch(&data()).unwrap();
        assert!(trace.iter().all(|s| s.loss.total > 0.0));
    }

    #[test]
    fn short_split_is_a_data_error() {
        let mut c = tiny_config();
        c.train.batch_size = 64;
        let mut t = Trainer::new(c).unwrap();
        assert!(matches!(t.train_epoch(&data()), Err(Error::Data(_))));
    }

    #[test]
    fn epoch_order_depends_on_seed_and_epoch() {
        assert_eq!(epoch_order(30, 1, 2), epoch_order(30, 1, 2));
        assert_ne!(epoch_order(30, 1, 2), epoch_order(30, 1, 3));
        assert_ne!(epoch_order(30, 1, 2), epoch_order(30, 2, 2));
    }
}
