use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetManifest, FoodPairRecord, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Parameters of the synthetic paired corpus.
///
/// Each class `k` owns a latent centre `c_k`; each pair draws an offset `u`.
/// Image features and every instruction sentence are fixed linear maps of
/// `c_k + u` plus Gaussian noise. Ingredient tokens mix a class-specific
/// token distribution with a background of common tokens shared by all
/// classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub num_classes: usize,
    pub pairs_per_class: usize,
    pub latent_dim: usize,
    /// Standard deviation of the observation noise.
    pub noise: f64,
    /// Standard deviation of the per-pair latent offset.
    pub pair_scale: f64,
    pub vocab_size: usize,
    /// Ids `1..=common_tokens` form the shared background pool.
    pub common_tokens: usize,
    /// Distinct tokens drawn into each class's pool.
    pub class_tokens: usize,
    /// Probability that a token comes from the background pool.
    pub common_weight: f64,
    /// How strongly the pair offset tilts the class token distribution.
    /// At 0 tokens carry class information only.
    pub token_coupling: f64,
    pub tokens_per_recipe: (usize, usize),
    pub sentences_per_recipe: (usize, usize),
    pub sentence_dim: usize,
    pub image_dim: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_classes: 20,
            pairs_per_class: 10,
            latent_dim: 8,
            noise: 0.1,
            pair_scale: 0.5,
            vocab_size: 200,
            common_tokens: 12,
            class_tokens: 8,
            common_weight: 0.5,
            token_coupling: 2.0,
            tokens_per_recipe: (6, 10),
            sentences_per_recipe: (2, 5),
            sentence_dim: 32,
            image_dim: 64,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_classes", self.num_classes),
            ("pairs_per_class", self.pairs_per_class),
            ("latent_dim", self.latent_dim),
            ("common_tokens", self.common_tokens),
            ("class_tokens", self.class_tokens),
            ("sentence_dim", self.sentence_dim),
            ("image_dim", self.image_dim),
            ("tokens_per_recipe.0", self.tokens_per_recipe.0),
            ("sentences_per_recipe.0", self.sentences_per_recipe.0),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("synthetic.{name} must be at least 1")));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("synthetic.num_classes must be at least 2".into()));
        }
        if !(self.noise >= 0.0) || !(self.pair_scale >= 0.0) || !(self.token_coupling >= 0.0) {
            return Err(Error::Config("synthetic noise scales must be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.common_weight) {
            return Err(Error::Config("synthetic.common_weight must lie in [0, 1]".into()));
        }
        if self.tokens_per_recipe.0 > self.tokens_per_recipe.1
            || self.sentences_per_recipe.0 > self.sentences_per_recipe.1
        {
            return Err(Error::Config(
                "synthetic ranges must be (min, max) with min <= max".into(),
            ));
        }
        let specific = self.vocab_size.saturating_sub(1 + self.common_tokens);
        if specific < self.class_tokens {
            return Err(Error::Config(format!(
                "synthetic.vocab_size {} too small for {} common and {} class tokens",
                self.vocab_size, self.common_tokens, self.class_tokens
            )));
        }
        Ok(())
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * normal(rng)).collect()
}

/// Narrow to f32 so values survive the on-disk format bit-exactly.
fn f32_exact(v: f64) -> f64 {
    v as f32 as f64
}

fn project(a: &[f64], rows: usize, z: &[f64]) -> Vec<f64> {
    let k = z.len();
    (0..rows)
        .map(|r| a[r * k..(r + 1) * k].iter().zip(z).map(|(x, y)| x * y).sum())
        .collect()
}

pub fn synthetic_generate(cfg: &SyntheticConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = cfg.latent_dim;
    let mix_scale = 1.0 / (k as f64).sqrt();
    let a_img = gaussian(&mut rng, cfg.image_dim * k, mix_scale);
    let a_ins = gaussian(&mut rng, cfg.sentence_dim * k, mix_scale);

    let first_specific = 1 + cfg.common_tokens;
    let specific = cfg.vocab_size - first_specific;
    // Per class: token ids and Zipf-like weights, so a few "main
    // ingredients" dominate each class.
    // The pair offset tilts these weights through a per-class map B_k.
    let class_pools: Vec<(Vec<u32>, Vec<f64>, Vec<f64>)> = (0..cfg.num_classes)
        .map(|_| {
            let ids = sample(&mut rng, specific, cfg.class_tokens)
                .into_iter()
                .map(|i| (first_specific + i) as u32)
                .collect();
            let log_weights = (0..cfg.class_tokens).map(|r| -((r + 1) as f64).ln()).collect();
            let tilt = gaussian(&mut rng, cfg.class_tokens * k, mix_scale);
            (ids, log_weights, tilt)
        })
        .collect();
    let centres: Vec<Vec<f64>> = (0..cfg.num_classes).map(|_| gaussian(&mut rng, k, 1.0)).collect();

    let mut records = Vec::with_capacity(cfg.num_classes * cfg.pairs_per_class);
    for (class, centre) in centres.iter().enumerate() {
        let (pool, log_weights, tilt) = &class_pools[class];
        for _ in 0..cfg.pairs_per_class {
            let offset = gaussian(&mut rng, k, cfg.pair_scale);
            let z: Vec<f64> = centre.iter().zip(&offset).map(|(c, u)| c + u).collect();
            let shift = project(tilt, cfg.class_tokens, &offset);
            let lw: Vec<f64> = log_weights
                .iter()
                .zip(&shift)
                .map(|(w, s)| w + cfg.token_coupling * s)
                .collect();

            let img_clean = project(&a_img, cfg.image_dim, &z);
            let image_features = img_clean
                .iter()
                .map(|v| f32_exact(v + cfg.noise * normal(&mut rng)))
                .collect::<Vec<f64>>();

            let ins_clean = project(&a_ins, cfg.sentence_dim, &z);
            let m = rng.random_range(cfg.sentences_per_recipe.0..=cfg.sentences_per_recipe.1);
            let mut sentences = Vec::with_capacity(m * cfg.sentence_dim);
            for _ in 0..m {
                for v in &ins_clean {
                    sentences.push(f32_exact(v + cfg.noise * normal(&mut rng)));
                }
            }

            let n = rng.random_range(cfg.tokens_per_recipe.0..=cfg.tokens_per_recipe.1);
            let from_class = (0..n).filter(|_| rng.random::<f64>() >= cfg.common_weight).count();
            // Distinct class tokens via Gumbel top-k on the tilted log-weights.
            let mut keyed: Vec<(f64, u32)> = lw
                .iter()
                .zip(pool)
                .map(|(w, &id)| {
                    let u = rng.random::<f64>().max(f64::MIN_POSITIVE);
                    (w - (-u.ln()).ln(), id)
                })
                .collect();
            keyed.sort_by(|a, b| b.0.total_cmp(&a.0));
            let mut ingredients: Vec<u32> = keyed.iter().take(from_class.min(pool.len())).map(|k| k.1).collect();
            while ingredients.len() < n {
                ingredients.push(1 + rng.random_range(0..cfg.common_tokens) as u32);
            }
            ingredients.shuffle(&mut rng);

            records.push(FoodPairRecord {
                pair_id: records.len() as u64,
                class_label: class,
                ingredients,
                instructions: Tensor::matrix(m, cfg.sentence_dim, sentences)?,
                image_features,
            });
        }
    }
    let dataset = Dataset {
        manifest: DatasetManifest {
            format_version: FORMAT_VERSION,
            split: "all".into(),
            record_count: records.len(),
            num_classes: cfg.num_classes,
            vocab_size: cfg.vocab_size,
            sentence_dim: cfg.sentence_dim,
            image_dim: cfg.image_dim,
            seed: Some(cfg.seed),
            records_file: "all.bin".into(),
        },
        records,
    };
    dataset.validate()?;
    Ok(dataset)
}
