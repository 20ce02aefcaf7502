//! Experiment files: TOML documents describing data, model, training,
//! attack and analysis settings for one reproducible run.
//!
//! ```toml
//! schema_version = 1
//! name = "moons"
//! seeds = [0, 1]
//!
//! [data]
//! split = [0.6, 0.2, 0.2]
//!
//! [data.source]
//! kind = "two_moons"
//! n = 1000
//! noise = 0.25
//!
//! [model]
//! architecture = "mlp"
//! layer_sizes = [2, 32, 2]
//! input_shape = [2]
//! classes = 2
//!
//! [train]
//! epochs = 300
//! batch_size = 128
//! lr = 0.01
//! optimizer = { kind = "adam", beta1 = 0.9, beta2 = 0.999, eps = 1e-8 }
//!
//! [attack]
//! method = "dropattack"
//! epsilon_x = 5.0
//! epsilon_theta = 5.0
//! p_x = 0.7
//! p_theta = 0.7
//! k = 1
//! targets = ["input"]
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{GridSpec, SurrogateForm};
use crate::data::{gen_text_synthetic, gen_two_moons, load_mnist_idx, read_csv, split, subsample, Dataset, TextRule};
use crate::error::{Error, Result};
use crate::models::ModelSpec;
use crate::perturb::AttackConfig;
use crate::train::{Experiment, Regularizer, Splits, TrainConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum DataSource {
    TwoMoons {
        n: usize,
        noise: f64,
        #[serde(default)]
        seed: u64,
    },
    Text {
        vocab: usize,
        length: usize,
        n: usize,
        rule: TextRule,
        #[serde(default)]
        seed: u64,
    },
    Mnist {
        images: PathBuf,
        labels: PathBuf,
    },
    Csv {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub source: DataSource,
    /// Train/val/test fractions.
    #[serde(default = "default_split")]
    pub split: [f64; 3],
    #[serde(default)]
    pub split_seed: u64,
    /// Keep only this many training rows (a seeded, nested subsample).
    #[serde(default)]
    pub train_subset: Option<usize>,
    #[serde(default)]
    pub subset_seed: u64,
}

fn default_split() -> [f64; 3] {
    [0.6, 0.2, 0.2]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandscapeSection {
    pub grid: GridSpec,
    #[serde(default)]
    pub seed: u64,
    /// Evaluate on the first this-many test rows only.
    #[serde(default)]
    pub test_subset: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    pub epsilons: Vec<f64>,
    /// Random models to check, seeded `0..models`.
    pub models: usize,
    /// Rows of the training split used as the batch.
    pub batch: usize,
    #[serde(default)]
    pub form: SurrogateForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    pub data: DataSpec,
    pub model: ModelSpec,
    pub train: TrainConfig,
    #[serde(default)]
    pub attack: Option<AttackConfig>,
    #[serde(default)]
    pub landscape: Option<LandscapeSection>,
    #[serde(default)]
    pub verify: Option<VerifySection>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str, base_dir: PathBuf) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version: expected {SCHEMA_VERSION}, found {}",
                self.schema_version
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds: must list at least one seed".into()));
        }
        self.model
            .validate()
            .map_err(|e| Error::Config(format!("model: {e}")))?;
        if self.attack.is_some() && self.train.regularizer != Regularizer::None {
            return Err(Error::Config(
                "attack: cannot be combined with a train.regularizer other than none".into(),
            ));
        }
        self.train_config(self.seeds[0]).validate()?;
        if let Some(l) = &self.landscape {
            l.grid.validate()?;
        }
        if let Some(v) = &self.verify {
            if v.epsilons.is_empty() || v.models == 0 || v.batch == 0 {
                return Err(Error::Config("verify: epsilons, models and batch must be non-empty".into()));
            }
        }
        for p in self.referenced_files() {
            if !p.exists() {
                return Err(Error::Config(format!("data: file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn referenced_files(&self) -> Vec<PathBuf> {
        match &self.data.source {
            DataSource::Mnist { images, labels } => vec![self.resolve(images), self.resolve(labels)],
            DataSource::Csv { path } => vec![self.resolve(path)],
            _ => Vec::new(),
        }
    }

    /// Training settings with the attack folded into the regularizer.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let mut cfg = self.train.clone();
        cfg.seed = seed;
        if let Some(a) = &self.attack {
            cfg.regularizer = Regularizer::Attack(a.clone());
        }
        cfg
    }

    pub fn model_spec(&self, seed: u64) -> ModelSpec {
        ModelSpec {
            seed,
            ..self.model.clone()
        }
    }

    /// Full dataset before splitting.
    pub fn load_dataset(&self) -> Result<Dataset> {
        match &self.data.source {
            DataSource::TwoMoons { n, noise, seed } => gen_two_moons(*n, *noise, *seed),
            DataSource::Text {
                vocab,
                length,
                n,
                rule,
                seed,
            } => gen_text_synthetic(*vocab, *length, *n, *rule, *seed),
            DataSource::Mnist { images, labels } => load_mnist_idx(self.resolve(images), self.resolve(labels)),
            DataSource::Csv { path } => read_csv(self.resolve(path)),
        }
    }

    pub fn load_splits(&self) -> Result<Splits> {
        let data = self.load_dataset()?;
        let (mut train, val, test) = split(&data, self.data.split, self.data.split_seed)?;
        if let Some(k) = self.data.train_subset {
            train = subsample(&train, k, self.data.subset_seed)?;
        }
        Ok(Splits { train, val, test })
    }

    /// The replicate template used by sweeps and scaling studies.
    pub fn experiment(&self) -> Result<Experiment> {
        Ok(Experiment {
            model: self.model.clone(),
            splits: self.load_splits()?,
            train: self.train_config(self.seeds[0]),
        })
    }
}
