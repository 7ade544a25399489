//! Run configuration: one TOML file that fully determines a run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{FactKeyMode, DEFAULT_FREQUENT_K};
use crate::distill::{AdaptationPlan, Strategy};
use crate::error::{Error, Result};
use crate::io::{read_file, write_atomic};
use crate::loss::LossConfig;
use crate::model::ModelConfig;
use crate::train::TrainConfig;

/// Overrides `paths.output_dir`.
pub const OUTPUT_DIR_ENV: &str = "DOCRE_OUTPUT_DIR";
/// Worker thread count for tensor kernels.
pub const THREADS_ENV: &str = "DOCRE_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub train: PathBuf,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub distant: Option<PathBuf>,
    /// Relation schema file. When unset, the sorted relation ids found in
    /// the train and distant corpora are used.
    pub schema: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            train: PathBuf::from("train.json"),
            dev: None,
            test: None,
            distant: None,
            schema: None,
            output_dir: PathBuf::from("runs"),
        }
    }
}

/// Per-stage optimizer settings. A stage table in a file only overrides the
/// fields it names; the rest keep that stage's defaults.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizerConfig {
    pub teacher: TrainConfig,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            teacher: TrainConfig {
                learning_rate: 5e-5,
                epochs: 30,
                ..TrainConfig::default()
            },
            pretrain: TrainConfig {
                learning_rate: 1e-5,
                epochs: 2,
                ..TrainConfig::default()
            },
            finetune: TrainConfig {
                learning_rate: 1e-6,
                epochs: 10,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct StageOverrides {
    epochs: Option<usize>,
    learning_rate: Option<f64>,
    warmup_fraction: Option<f64>,
    dropout: Option<f64>,
    max_grad_norm: Option<f64>,
    batch_size: Option<usize>,
    weight_decay: Option<f64>,
}

impl StageOverrides {
    fn apply(self, base: TrainConfig) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs.unwrap_or(base.epochs),
            learning_rate: self.learning_rate.unwrap_or(base.learning_rate),
            warmup_fraction: self.warmup_fraction.unwrap_or(base.warmup_fraction),
            dropout: self.dropout.unwrap_or(base.dropout),
            max_grad_norm: self.max_grad_norm.unwrap_or(base.max_grad_norm),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            weight_decay: self.weight_decay.unwrap_or(base.weight_decay),
        }
    }
}

#[derive(Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct OptimizerOverrides {
    teacher: StageOverrides,
    pretrain: StageOverrides,
    finetune: StageOverrides,
}

impl<'de> Deserialize<'de> for OptimizerConfig {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let o = OptimizerOverrides::deserialize(d)?;
        let base = Self::default();
        Ok(Self {
            teacher: o.teacher.apply(base.teacher),
            pretrain: o.pretrain.apply(base.pretrain),
            finetune: o.finetune.apply(base.finetune),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub fact_key_mode: FactKeyMode,
    /// Number of most frequent training relations counted as frequent.
    pub frequent_k: usize,
    pub binary: bool,
    /// Triples listed per category in error reports.
    pub error_samples: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            fact_key_mode: FactKeyMode::default(),
            frequent_k: DEFAULT_FREQUENT_K,
            binary: false,
            error_samples: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub adaptation: AdaptationPlan,
    pub optimizer: OptimizerConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            paths: PathsConfig::default(),
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            adaptation: AdaptationPlan::default(),
            optimizer: OptimizerConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    /// Toy-scale preset for the generated synthetic dataset: small model,
    /// larger learning rates and more epochs than the defaults.
    pub fn synthetic_preset() -> Self {
        let toy = |learning_rate: f64, epochs: usize| TrainConfig {
            learning_rate,
            epochs,
            ..TrainConfig::default()
        };
        Self {
            seed: 7,
            paths: PathsConfig {
                train: PathBuf::from("train.json"),
                dev: Some(PathBuf::from("dev.json")),
                test: Some(PathBuf::from("test.json")),
                distant: Some(PathBuf::from("distant.json")),
                schema: Some(PathBuf::from("schema.json")),
                output_dir: PathBuf::from("runs"),
            },
            adaptation: AdaptationPlan {
                strategy: Strategy::KdMse,
                kd_weight: 1.0,
            },
            optimizer: OptimizerConfig {
                teacher: toy(3e-3, 30),
                pretrain: toy(3e-3, 10),
                finetune: toy(1e-3, 5),
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.adaptation.validate()?;
        for (stage, c) in [
            ("teacher", &self.optimizer.teacher),
            ("pretrain", &self.optimizer.pretrain),
            ("finetune", &self.optimizer.finetune),
        ] {
            c.validate()
                .map_err(|e| Error::Config(format!("optimizer.{stage}: {e}")))?;
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file. Relative paths inside it are resolved against
    /// the file's directory, then the output-dir environment override is
    /// applied.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::Config(format!("{} is not UTF-8", path.display())))?;
        let mut config = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.paths.resolve(base);
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV) {
            config.paths.output_dir = PathBuf::from(dir);
        }
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_toml()?.as_bytes())
    }
}

impl PathsConfig {
    fn resolve(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.train);
        join(&mut self.output_dir);
        for p in [
            &mut self.dev,
            &mut self.test,
            &mut self.distant,
            &mut self.schema,
        ]
        .into_iter()
        .flatten()
        {
            join(p);
        }
    }

    /// Configured input files that do not exist.
    pub fn missing_inputs(&self) -> Vec<PathBuf> {
        std::iter::once(&self.train)
            .chain(self.dev.iter())
            .chain(self.test.iter())
            .chain(self.distant.iter())
            .chain(self.schema.iter())
            .filter(|p| !p.exists())
            .cloned()
            .collect()
    }
}
