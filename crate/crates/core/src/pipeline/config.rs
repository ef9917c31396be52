//! Run configuration, read from strict TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifier::RidgeMode;
use crate::error::{ensure, Error, Result};
use crate::features::FeatureExtractorConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Mnist,
    Cifar10,
}

impl DatasetKind {
    /// Default `(W, Q, D)` for the dataset.
    pub fn stage1_defaults(self) -> (usize, usize, usize) {
        match self {
            DatasetKind::Mnist => (7, 8, 2),
            DatasetKind::Cifar10 => (7, 7, 3),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: DatasetKind,
    /// Directory holding the canonical files; individual paths below
    /// override the default file names inside it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_images: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_images: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub train_batches: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub test_batches: Vec<PathBuf>,
    /// Keep only the first `train_limit` training images.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_limit: Option<usize>,
    /// Keep only the first `test_limit` test images.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_limit: Option<usize>,
}

impl DatasetConfig {
    fn in_dir(&self, explicit: &Option<PathBuf>, default: &str) -> Result<PathBuf> {
        match (explicit, &self.dir) {
            (Some(p), _) => Ok(p.clone()),
            (None, Some(d)) => Ok(d.join(default)),
            (None, None) => Err(Error::Config(format!("dataset needs `dir` or an explicit path for {default}"))),
        }
    }

    /// `(images, labels)` for an MNIST split.
    pub fn mnist_paths(&self, split: Split) -> Result<(PathBuf, PathBuf)> {
        match split {
            Split::Train => Ok((
                self.in_dir(&self.train_images, "train-images-idx3-ubyte")?,
                self.in_dir(&self.train_labels, "train-labels-idx1-ubyte")?,
            )),
            Split::Test => Ok((
                self.in_dir(&self.test_images, "t10k-images-idx3-ubyte")?,
                self.in_dir(&self.test_labels, "t10k-labels-idx1-ubyte")?,
            )),
        }
    }

    /// Batch files for a CIFAR-10 split.
    pub fn cifar_paths(&self, split: Split) -> Result<Vec<PathBuf>> {
        let (explicit, defaults): (&Vec<PathBuf>, Vec<String>) = match split {
            Split::Train => (&self.train_batches, (1..=5).map(|i| format!("data_batch_{i}.bin")).collect()),
            Split::Test => (&self.test_batches, vec!["test_batch.bin".into()]),
        };
        if !explicit.is_empty() {
            return Ok(explicit.clone());
        }
        let dir = self
            .dir
            .as_ref()
            .ok_or_else(|| Error::Config("dataset needs `dir` or explicit batch lists".into()))?;
        Ok(defaults.iter().map(|f| dir.join(f)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessConfig {
    #[serde(default = "yes")]
    pub scale: bool,
    /// Append a luminance channel to RGB images.
    #[serde(default)]
    pub greyscale: bool,
    /// Block-average images down to this side first.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub downsample: Option<usize>,
    #[serde(default)]
    pub zca: bool,
    #[serde(default = "default_zca_epsilon")]
    pub zca_epsilon: f64,
}

fn yes() -> bool {
    true
}

fn default_zca_epsilon() -> f64 {
    0.1
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            scale: true,
            greyscale: false,
            downsample: None,
            zca: false,
            zca_epsilon: default_zca_epsilon(),
        }
    }
}

/// One group of filters in the bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BankSpec {
    Bar {
        count: usize,
        #[serde(default = "one")]
        width: usize,
    },
    Corner {
        count: usize,
        arm: usize,
    },
    Square {
        sizes: Vec<usize>,
    },
    Patch {
        count: usize,
    },
    File {
        path: PathBuf,
    },
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    /// Filter side; defaults per dataset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Refuse to adapt imported banks to a different channel count.
    #[serde(default)]
    pub strict_channels: bool,
    pub banks: Vec<BankSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage1Config {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default = "default_p1")]
    pub p1: f64,
    #[serde(default = "default_p2")]
    pub p2: f64,
    #[serde(default = "default_epsilon_norm")]
    pub epsilon_norm: f64,
}

fn default_p1() -> f64 {
    2.0
}

fn default_p2() -> f64 {
    0.25
}

fn default_epsilon_norm() -> f64 {
    1e-12
}

impl Default for Stage1Config {
    fn default() -> Self {
        Stage1Config {
            q: None,
            d: None,
            p1: default_p1(),
            p2: default_p2(),
            epsilon_norm: default_epsilon_norm(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CMode {
    Heuristic,
    Fixed,
    Cv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage2Config {
    /// Hidden units `M`.
    pub hidden: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_c_mode")]
    pub c_mode: CMode,
    /// Ridge parameter for `c_mode = "fixed"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    /// Candidates for `c_mode = "cv"`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub grid: Vec<f64>,
    /// Add the heuristic value to the cross-validation grid.
    #[serde(default = "yes")]
    pub grid_heuristic: bool,
    #[serde(default = "default_holdout")]
    pub holdout: f64,
    /// Append a constant hidden unit.
    #[serde(default)]
    pub intercept: bool,
}

fn default_c_mode() -> CMode {
    CMode::Heuristic
}

fn default_holdout() -> f64 {
    0.1
}

impl Stage2Config {
    pub fn ridge_mode(&self) -> Result<RidgeMode> {
        match self.c_mode {
            CMode::Heuristic => Ok(RidgeMode::Heuristic),
            CMode::Fixed => {
                let c = self
                    .c
                    .ok_or_else(|| Error::Config("c_mode = \"fixed\" needs a value for `c`".into()))?;
                Ok(RidgeMode::Fixed(c))
            }
            CMode::Cv => {
                ensure!(
                    !self.grid.is_empty() || self.grid_heuristic,
                    Config,
                    "c_mode = \"cv\" needs a nonempty `grid` or grid_heuristic = true"
                );
                Ok(RidgeMode::CrossValidate {
                    grid: self.grid.clone(),
                    include_heuristic: self.grid_heuristic,
                    holdout: self.holdout,
                })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Images per extraction batch.
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Training images scored for the reported training error (0 skips it).
    #[serde(default = "default_train_error_samples")]
    pub train_error_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<PathBuf>,
}

fn default_batch_size() -> usize {
    5000
}

fn default_train_error_samples() -> usize {
    10_000
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            batch_size: default_batch_size(),
            train_error_samples: default_train_error_samples(),
            model: None,
            report: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub hidden: Vec<usize>,
    #[serde(default = "one")]
    pub repeats: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    pub filters: FilterConfig,
    #[serde(default)]
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.resolve_defaults();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Fill per-dataset stage-1 defaults so the echoed config is explicit.
    pub fn resolve_defaults(&mut self) {
        let (w, q, d) = self.dataset.name.stage1_defaults();
        self.filters.w.get_or_insert(w);
        self.stage1.q.get_or_insert(q);
        self.stage1.d.get_or_insert(d);
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.filters.banks.is_empty(), Config, "filters.banks is empty");
        ensure!(self.stage2.hidden >= 1, Config, "stage2.hidden must be at least 1");
        ensure!(self.run.batch_size >= 1, Config, "run.batch_size must be at least 1");
        ensure!(
            self.preprocess.zca_epsilon >= 0.0,
            Config,
            "preprocess.zca_epsilon must be nonnegative"
        );
        if let Some(s) = &self.sweep {
            ensure!(s.repeats >= 1, Config, "sweep.repeats must be at least 1");
            ensure!(!s.hidden.is_empty(), Config, "sweep.hidden is empty");
        }
        self.stage2.ridge_mode()?;
        self.stage1_config().validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// Stage-1 settings with defaults resolved.
    pub fn stage1_config(&self) -> FeatureExtractorConfig {
        let (w, q, d) = self.dataset.name.stage1_defaults();
        FeatureExtractorConfig {
            w: self.filters.w.unwrap_or(w),
            q: self.stage1.q.unwrap_or(q),
            d: self.stage1.d.unwrap_or(d),
            p1: self.stage1.p1,
            p2: self.stage1.p2,
            epsilon_norm: self.stage1.epsilon_norm,
        }
    }

    /// The configuration as TOML, suitable for re-running.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
