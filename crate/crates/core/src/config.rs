//! Run configuration documents (TOML).
//!
//! A single master `seed` drives everything: it overrides the `seed`
//! fields of the `[synth]` and `[train]` tables, and every consumer draws
//! from its own named stream derived from it.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::EmConfig;
use crate::datagen::SynthSpec;
use crate::error::{Error, Result};
use crate::model::{OutputMode, TrainConfig};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// Synthetic data, used when `[dataset]` is absent.
    pub synth: SynthSpec,
    pub dataset: Option<DatasetConfig>,
    pub split: SplitConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub baseline: BaselineConfig,
}

/// Edge list and label files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub edges: PathBuf,
    pub labels: PathBuf,
    #[serde(default)]
    pub classes: Option<usize>,
    /// Standardize each edge feature column before use.
    #[serde(default)]
    pub standardize: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// Number of labeled roots used for training; the rest is the test set.
    pub n_train: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { n_train: 1000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// `[K_1, …, K_D]`; the length is the model depth.
    pub level_sizes: Vec<usize>,
    pub output: OutputMode,
    /// Add a reversed copy of every edge before unfolding, so bipartite
    /// `item → user` data can be walked back to the users' other items.
    pub reverse_edges: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            level_sizes: vec![2],
            output: OutputMode::Classification,
            reverse_edges: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSet {
    /// Every labeled item (the unsupervised baselines need no training set).
    #[default]
    All,
    /// The held-out split only.
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub kos_iterations: usize,
    pub em: EmConfig,
    pub grade_iterations: usize,
    pub var_floor: f64,
    pub evaluate_on: EvalSet,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            kos_iterations: 20,
            em: EmConfig::default(),
            grade_iterations: 20,
            var_floor: 0.05,
            evaluate_on: EvalSet::All,
        }
    }
}

impl RunConfig {
    /// Parses a config document. A run report is accepted too: its
    /// embedded `[config]` table is used.
    pub fn from_toml(text: &str) -> Result<Self> {
        let value: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let table = match value.get("config") {
            Some(toml::Value::Table(t)) if value.contains_key("run") => t.clone(),
            _ => value,
        };
        table
            .try_into::<RunConfig>()
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io(path.to_owned(), e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies the master seed to the sub-configs and validates.
    pub fn resolve(mut self) -> Result<Self> {
        self.synth.seed = self.seed;
        self.train.seed = self.seed;
        self.validate()?;
        Ok(self)
    }

    pub fn depth(&self) -> usize {
        self.model.level_sizes.len()
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| Error::Config(e.to_string());
        if self.dataset.is_none() {
            self.synth.validate().map_err(cfg)?;
        }
        if self.model.level_sizes.is_empty() || self.model.level_sizes.contains(&0) {
            return Err(Error::Config("model.level_sizes must be non-empty and positive".into()));
        }
        self.train.validate(self.depth()).map_err(cfg)?;
        if self.model.output == OutputMode::Classification {
            let classes = match &self.dataset {
                Some(d) => d.classes,
                None => Some(2),
            };
            if let Some(c) = classes {
                if self.model.level_sizes[0] != c {
                    return Err(Error::Config(format!(
                        "model.level_sizes[0] = {} must equal the class count {c}",
                        self.model.level_sizes[0]
                    )));
                }
            }
        }
        if self.dataset.is_none() && self.split.n_train >= self.synth.n_items {
            return Err(Error::Config(format!(
                "split.n_train = {} leaves no test items out of {}",
                self.split.n_train, self.synth.n_items
            )));
        }
        if self.baseline.kos_iterations < 1 || self.baseline.grade_iterations < 1 {
            return Err(Error::Config("baseline iteration counts must be positive".into()));
        }
        if self.baseline.em.iters < 1 || !(self.baseline.em.alpha > 0.0 && self.baseline.em.beta > 0.0) {
            return Err(Error::Config("baseline.em needs iters >= 1 and positive alpha, beta".into()));
        }
        if self.baseline.var_floor.is_nan() || self.baseline.var_floor <= 0.0 {
            return Err(Error::Config("baseline.var_floor must be positive".into()));
        }
        Ok(())
    }
}
