use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use scan_core::config::{EvalConfig, LossConfig, ModelConfig, RunConfig, TrainConfig};
use scan_core::dataset::{load_dataset, split_dataset, synthetic_generate, Dataset, Split, SyntheticConfig};

use crate::CliError;

/// Where training data comes from. Without `dir` the `[synthetic]`
/// section is generated and split with `split` fractions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Directory holding `train.bin`, `val.bin` and `test.bin` (as written by `synth-data`).
    pub dir: Option<PathBuf>,
    /// Train / validation / test fractions for generated data.
    pub split: [f64; 3],
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dir: None,
            split: [0.8, 0.1, 0.1],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub data: DataConfig,
    pub synthetic: SyntheticConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))
            .map_err(CliError::Usage)?;
        let cfg: FileConfig = toml::from_str(&text)
            .with_context(|| format!("invalid config file {}", path.display()))
            .map_err(CliError::Usage)?;
        cfg.run()
            .validate()
            .and_then(|_| cfg.synthetic.validate())
            .with_context(|| format!("invalid config file {}", path.display()))
            .map_err(CliError::Usage)?;
        Ok(cfg)
    }

    /// Sets every seed in the file.
    pub fn override_seed(&mut self, seed: Option<u64>) {
        if let Some(s) = seed {
            self.synthetic.seed = s;
            self.train.seed = s;
            self.eval.seed = s;
        }
    }

    pub fn run(&self) -> RunConfig {
        RunConfig {
            model: self.model.clone(),
            loss: self.loss.clone(),
            train: self.train.clone(),
            eval: self.eval.clone(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Train / validation / test data, loaded or generated.
    pub fn data(&self) -> anyhow::Result<Split> {
        let split = match &self.data.dir {
            Some(dir) => {
                let part = |name: &str| load_dataset(&dir.join(format!("{name}.bin")));
                Split {
                    train: part("train")?,
                    val: part("val")?,
                    test: part("test")?,
                    warnings: Vec::new(),
                }
            }
            None => {
                let all = synthetic_generate(&self.synthetic)?;
                split_dataset(&all, self.data.split, self.synthetic.seed)?
            }
        };
        for w in &split.warnings {
            eprintln!("warning: {w}");
        }
        for part in [&split.train, &split.val, &split.test] {
            self.check_compatible(part)?;
        }
        Ok(split)
    }

    fn check_compatible(&self, data: &Dataset) -> anyhow::Result<()> {
        let (m, d) = (&self.model, &data.manifest);
        if d.sentence_dim != m.sentence_dim || d.image_dim != m.image_dim {
            bail!(
                "{} split has sentence/image dims {}/{}, model expects {}/{}",
                d.split,
                d.sentence_dim,
                d.image_dim,
                m.sentence_dim,
                m.image_dim
            );
        }
        if d.vocab_size > m.vocab_size || d.num_classes > m.num_classes {
            bail!(
                "{} split needs vocab {} and {} classes, model has {} and {}",
                d.split,
                d.vocab_size,
                d.num_classes,
                m.vocab_size,
                m.num_classes
            );
        }
        Ok(())
    }
}
