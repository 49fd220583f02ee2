//! Declarative experiment description, read from TOML.
//!
//! Unknown keys anywhere in the document are rejected. Relative dataset paths
//! in a config file resolve against the directory holding that file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::annealing::AnnealSchedule;
use crate::error::{Error, Result};
use crate::nn::Activation;
use crate::optim::OptimizerConfig;
use crate::smoothing::{SmoothingConfig, SmoothingMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    FashionMnist,
    Cifar10,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    /// Directory holding the standard file names (`train-images-idx3-ubyte.gz`
    /// and friends, or `data_batch_{1..5}.bin` / `test_batch.bin`).
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub train_images: Option<PathBuf>,
    #[serde(default)]
    pub train_labels: Option<PathBuf>,
    #[serde(default)]
    pub test_images: Option<PathBuf>,
    #[serde(default)]
    pub test_labels: Option<PathBuf>,
    #[serde(default)]
    pub train_files: Vec<PathBuf>,
    #[serde(default)]
    pub test_files: Vec<PathBuf>,
    /// Fixed-size uniform subset of the train split, drawn before `ratio`.
    #[serde(default)]
    pub train_limit: Option<usize>,
    /// Partial-data ratio applied to the (possibly limited) train split.
    #[serde(default = "one")]
    pub ratio: f64,
    /// Fixed-size uniform subset of the test split used for validation.
    #[serde(default)]
    pub val_limit: Option<usize>,
    /// Seed for the subsets above; shared by every trial.
    #[serde(default)]
    pub seed: u64,
    /// Pad/crop/flip augmentation on training images (CIFAR-10 only).
    #[serde(default)]
    pub augment: bool,
}

fn one() -> f64 {
    1.0
}

impl DatasetConfig {
    pub fn fashion_mnist(dir: impl Into<PathBuf>) -> Self {
        Self {
            kind: DatasetKind::FashionMnist,
            dir: Some(dir.into()),
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
            train_files: Vec::new(),
            test_files: Vec::new(),
            train_limit: None,
            ratio: 1.0,
            val_limit: None,
            seed: 0,
            augment: false,
        }
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.dir,
            &mut self.train_images,
            &mut self.train_labels,
            &mut self.test_images,
            &mut self.test_labels,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        self.train_files
            .iter_mut()
            .chain(self.test_files.iter_mut())
            .for_each(fix);
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(Error::Config(format!(
                "dataset ratio must lie in (0, 1], got {}",
                self.ratio
            )));
        }
        if self.augment && self.kind != DatasetKind::Cifar10 {
            return Err(Error::Config("augmentation is only defined for cifar10".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Hidden layer widths; every hidden layer uses ReLU.
    pub hidden: Vec<usize>,
    pub output_activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256],
            output_activation: Activation::Softmax,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizerKind {
    None,
    Smoothing,
    LabelSmoothing,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegularizerConfig {
    pub kind: RegularizerKind,
    pub smoothing: SmoothingConfig,
    pub schedule: AnnealSchedule,
    pub label_smoothing: f64,
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        Self {
            kind: RegularizerKind::None,
            smoothing: SmoothingConfig::default(),
            schedule: AnnealSchedule::default(),
            label_smoothing: 0.1,
        }
    }
}

impl RegularizerConfig {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn smoothing(mode: SmoothingMode, alpha: f64, schedule: AnnealSchedule) -> Self {
        Self {
            kind: RegularizerKind::Smoothing,
            smoothing: SmoothingConfig {
                mode,
                alpha,
                ..SmoothingConfig::default()
            },
            schedule,
            ..Self::default()
        }
    }

    pub fn label_smoothing(epsilon: f64) -> Self {
        Self {
            kind: RegularizerKind::LabelSmoothing,
            label_smoothing: epsilon,
            ..Self::default()
        }
    }

    /// True when training runs the smoothing layer at all.
    pub fn smoothing_active(&self) -> bool {
        self.kind == RegularizerKind::Smoothing && self.smoothing.mode != SmoothingMode::Off
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            RegularizerKind::None => Ok(()),
            RegularizerKind::Smoothing => {
                self.smoothing.validate()?;
                self.schedule.validate()
            }
            RegularizerKind::LabelSmoothing => {
                if (0.0..1.0).contains(&self.label_smoothing) {
                    Ok(())
                } else {
                    Err(Error::Config(format!(
                        "label smoothing epsilon must lie in [0, 1), got {}",
                        self.label_smoothing
                    )))
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub b_values: Vec<f64>,
    pub alpha_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub regularizer: RegularizerConfig,
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub grid: Option<GridConfig>,
}

fn default_batch() -> usize {
    128
}

fn default_trials() -> usize {
    5
}

impl ExperimentConfig {
    pub fn new(dataset: DatasetConfig, epochs: usize) -> Self {
        Self {
            dataset,
            model: ModelConfig::default(),
            optimizer: OptimizerConfig::default(),
            regularizer: RegularizerConfig::default(),
            epochs,
            batch_size: default_batch(),
            trials: default_trials(),
            base_seed: 0,
            grid: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml(&text)?;
        if let Some(base) = path.parent() {
            config.dataset.resolve(base);
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.model.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        if let Some(grid) = &self.grid {
            if grid.b_values.is_empty() || grid.alpha_values.is_empty() {
                return Err(Error::Config("grid values must be non-empty".into()));
            }
        }
        self.dataset.validate()?;
        self.optimizer.validate()?;
        self.regularizer.validate()
    }
}
