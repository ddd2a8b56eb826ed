//! Paired image/recipe records, their on-disk format, a seeded synthetic
//! generator, and stratified splitting.

mod format;
mod split;
mod synth;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use format::{load_dataset, manifest_path, save_dataset, FORMAT_VERSION, RECORD_MAGIC};
pub use split::{split_dataset, Split};
pub use synth::{synthetic_generate, SyntheticConfig};

/// One image/recipe pair.
#[derive(Clone, Debug, PartialEq)]
pub struct FoodPairRecord {
    pub pair_id: u64,
    /// Shared by the image and the recipe of the pair.
    pub class_label: usize,
    /// Ingredient token ids; 0 is padding.
    pub ingredients: Vec<u32>,
    /// One pre-computed vector per instruction sentence, `m × d_s`.
    pub instructions: Tensor,
    pub image_features: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub split: String,
    pub record_count: usize,
    pub num_classes: usize,
    pub vocab_size: usize,
    pub sentence_dim: usize,
    pub image_dim: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    pub records_file: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub records: Vec<FoodPairRecord>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Checks every record invariant against the manifest.
    pub fn validate(&self) -> Result<()> {
        let m = &self.manifest;
        if m.record_count != self.records.len() {
            return Err(Error::Data(format!(
                "manifest lists {} records, found {}",
                m.record_count,
                self.records.len()
            )));
        }
        let mut seen = HashSet::with_capacity(self.records.len());
        for (index, r) in self.records.iter().enumerate() {
            let fail = |detail: String| Error::Validation {
                index,
                pair_id: r.pair_id,
                detail,
            };
            if !seen.insert(r.pair_id) {
                return Err(fail("duplicate pair id".into()));
            }
            if r.class_label >= m.num_classes {
                return Err(fail(format!(
                    "class {} out of range for {} classes",
                    r.class_label, m.num_classes
                )));
            }
            if r.ingredients.is_empty() {
                return Err(fail("no ingredient tokens".into()));
            }
            if let Some(&t) = r.ingredients.iter().find(|&&t| t as usize >= m.vocab_size) {
                return Err(fail(format!("token {t} outside vocabulary of {}", m.vocab_size)));
            }
            if r.instructions.rank() != 2 || r.instructions.cols() != m.sentence_dim {
                return Err(fail(format!(
                    "instruction shape {:?}, expected m x {}",
                    r.instructions.shape(),
                    m.sentence_dim
                )));
            }
            if r.image_features.len() != m.image_dim {
                return Err(fail(format!(
                    "image feature length {}, expected {}",
                    r.image_features.len(),
                    m.image_dim
                )));
            }
            if !r.instructions.is_finite() || r.image_features.iter().any(|v| !v.is_finite()) {
                return Err(fail("non-finite feature value".into()));
            }
        }
        Ok(())
    }

    /// A new dataset over a subset of records, renamed to `split`.
    pub fn subset(&self, split: &str, records: Vec<FoodPairRecord>) -> Dataset {
        Dataset {
            manifest: DatasetManifest {
                split: split.to_string(),
                record_count: records.len(),
                records_file: format!("{split}.bin"),
                ..self.manifest.clone()
            },
            records,
        }
    }
}
