//! Browser bindings. Each exported call returns JSON for the page in `www/`.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use scan_core::config::RunConfig;
use scan_core::dataset::{split_dataset, synthetic_generate, FoodPairRecord, Split, SyntheticConfig};
use scan_core::encoders::AttentionMaps;
use scan_core::losses::{cross_entropy, kl_divergence, ClassProbabilities};
use scan_core::tensor::pairwise_distances;
use scan_core::trainer::{EpochRecord, Trainer};
use scan_core::{Error, Result};

fn corpus(seed: u64) -> SyntheticConfig {
    SyntheticConfig {
        num_classes: 6,
        pairs_per_class: 8,
        latent_dim: 4,
        vocab_size: 60,
        common_tokens: 8,
        class_tokens: 5,
        tokens_per_recipe: (5, 8),
        sentences_per_recipe: (2, 4),
        sentence_dim: 12,
        image_dim: 16,
        seed,
        ..SyntheticConfig::default()
    }
}

fn run_config(seed: u64) -> RunConfig {
    let mut c = RunConfig::default();
    let s = corpus(seed);
    c.model.vocab_size = s.vocab_size;
    c.model.word_dim = 12;
    c.model.hidden_dim = 12;
    c.model.sentence_dim = s.sentence_dim;
    c.model.image_dim = s.image_dim;
    c.model.joint_dim = 12;
    c.model.num_classes = s.num_classes;
    c.loss.margin = 1.0;
    c.train.batch_size = 8;
    c.train.learning_rate = 3e-3;
    c.train.max_epochs = 0;
    c.train.seed = seed;
    c.train.val_subset_size = 12;
    c.eval.seed = seed;
    c
}

/// A small model and synthetic corpus that train in the page.
pub struct Session {
    config: RunConfig,
    trainer: Option<Trainer>,
    split: Split,
}

#[derive(Serialize)]
struct AttentionView<'a> {
    pair_id: u64,
    class_label: usize,
    tokens: &'a [u32],
    weights: Option<Vec<Vec<f64>>>,
    received: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct Hit {
    pair_id: u64,
    class_label: usize,
    distance: f64,
}

#[derive(Serialize)]
struct Retrieval {
    query_pair: u64,
    query_class: usize,
    hits: Vec<Hit>,
}

impl Session {
    pub fn new(seed: u64) -> Result<Self> {
        let config = run_config(seed);
        let data = synthetic_generate(&corpus(seed))?;
        let split = split_dataset(&data, [0.5, 0.25, 0.25], seed)?;
        let trainer = Some(Trainer::new(config.clone())?);
        Ok(Self { config, trainer, split })
    }

    fn trainer(&self) -> &Trainer {
        self.trainer.as_ref().expect("trainer present between calls")
    }

    /// Trains `epochs` more epochs; returns their records.
    pub fn train(&mut self, epochs: usize) -> Result<Vec<EpochRecord>> {
        let state = self.trainer.take().expect("trainer present between calls").into_state();
        self.config.train.max_epochs = state.epoch + epochs;
        let mut trainer = Trainer::from_state(self.config.clone(), state)?;
        let mut out = Vec::with_capacity(epochs);
        let fitted = trainer.fit(&self.split.train, Some(&self.split.val), |r| {
            out.push(r.clone());
            Ok(())
        });
        self.trainer = Some(trainer);
        fitted.map(|_| out)
    }

    pub fn test_size(&self) -> usize {
        self.split.test.len()
    }

    fn test_record(&self, index: usize) -> Result<&FoodPairRecord> {
        self.split
            .test
            .records
            .get(index)
            .ok_or_else(|| Error::Data(format!("test recipe {index} of {}", self.split.test.len())))
    }

    /// Ingredient self-attention of one test recipe under the current parameters.
    pub fn attention(&self, index: usize) -> Result<String> {
        let record = self.test_record(index)?;
        let maps = self.trainer().params().attention_maps(record)?;
        let view = AttentionView {
            pair_id: record.pair_id,
            class_label: record.class_label,
            tokens: &maps.tokens,
            weights: maps
                .ingredient
                .as_ref()
                .map(|w| (0..w.rows()).map(|i| w.row(i).to_vec()).collect()),
            received: maps.ingredient.as_ref().map(AttentionMaps::received),
        };
        Ok(serde_json::to_string(&view).expect("view serializes"))
    }

    /// Nearest test recipes to the image of test pair `index`.
    pub fn retrieve(&self, index: usize, k: usize) -> Result<String> {
        let query = self.test_record(index)?;
        let refs: Vec<&FoodPairRecord> = self.split.test.records.iter().collect();
        let (images, recipes) = self.trainer().params().embed_records(&refs)?;
        let d = pairwise_distances(&images, &recipes)?;
        let mut order: Vec<usize> = (0..refs.len()).collect();
        order.sort_by(|&a, &b| d.at(index, a).total_cmp(&d.at(index, b)).then(a.cmp(&b)));
        let hits = order
            .into_iter()
            .take(k)
            .map(|j| Hit {
                pair_id: refs[j].pair_id,
                class_label: refs[j].class_label,
                distance: d.at(index, j),
            })
            .collect();
        let view = Retrieval {
            query_pair: query.pair_id,
            query_class: query.class_label,
            hits,
        };
        Ok(serde_json::to_string(&view).expect("view serializes"))
    }
}

#[derive(Debug, PartialEq, Serialize)]
pub struct SemanticTerms {
    pub p_image: Vec<f64>,
    pub p_recipe: Vec<f64>,
    pub ce_image: f64,
    pub ce_recipe: f64,
    /// `KL(p_recipe‖p_image)`, the image side's consistency term.
    pub kl_recipe_image: f64,
    pub kl_image_recipe: f64,
    pub total: f64,
}

/// Classification and consistency terms for one pair from raw logits.
pub fn semantic_terms(image_logits: &[f64], recipe_logits: &[f64], class: usize) -> Result<SemanticTerms> {
    if image_logits.len() != recipe_logits.len() || image_logits.is_empty() {
        return Err(Error::Dimension {
            op: "semantic_terms",
            left: vec![image_logits.len()],
            right: vec![recipe_logits.len()],
        });
    }
    let pi = ClassProbabilities::from_logits(image_logits);
    let pr = ClassProbabilities::from_logits(recipe_logits);
    let ce_image = cross_entropy(&pi, class)?;
    let ce_recipe = cross_entropy(&pr, class)?;
    let kl_recipe_image = kl_divergence(&pr, &pi)?;
    let kl_image_recipe = kl_divergence(&pi, &pr)?;
    Ok(SemanticTerms {
        total: ((ce_image + kl_recipe_image) + (ce_recipe + kl_image_recipe)) / 2.0,
        p_image: pi.probs,
        p_recipe: pr.probs,
        ce_image,
        ce_recipe,
        kl_recipe_image,
        kl_image_recipe,
    })
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Demo(Session);

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> std::result::Result<Demo, JsError> {
        Session::new(seed.into()).map(Demo).map_err(js)
    }

    /// JSON array of epoch records.
    pub fn train(&mut self, epochs: usize) -> std::result::Result<String, JsError> {
        let records = self.0.train(epochs).map_err(js)?;
        Ok(serde_json::to_string(&records).expect("records serialize"))
    }

    #[wasm_bindgen(js_name = testSize)]
    pub fn test_size(&self) -> usize {
        self.0.test_size()
    }

    pub fn attention(&self, index: usize) -> std::result::Result<String, JsError> {
        self.0.attention(index).map_err(js)
    }

    pub fn retrieve(&self, index: usize, k: usize) -> std::result::Result<String, JsError> {
        self.0.retrieve(index, k).map_err(js)
    }
}

#[wasm_bindgen(js_name = semanticTerms)]
pub fn semantic_terms_js(
    image_logits: &[f64],
    recipe_logits: &[f64],
    class: usize,
) -> std::result::Result<String, JsError> {
    let t = semantic_terms(image_logits, recipe_logits, class).map_err(js)?;
    Ok(serde_json::to_string(&t).expect("terms serialize"))
}
