//! Run reports: TOML key/value records followed by a human summary table in
//! comment lines, so the whole file parses as TOML.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::PipelineConfig;
use crate::error::{Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub filters: u64,
    pub weights: u64,
}

/// Wall-clock seconds per phase.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub load: f64,
    pub preprocess: f64,
    pub filters: f64,
    /// Stage-1 extraction for training, test and scored images.
    pub features: f64,
    /// Extraction time divided by filters and scaled to 60000 images.
    pub features_per_filter_60k: f64,
    pub weights: f64,
    pub activations: f64,
    pub gram: f64,
    pub solve: f64,
    pub evaluate: f64,
    pub io: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub images: usize,
    pub errors: usize,
    pub error_rate: f64,
    /// `confusion[t][p]` counts true class `t` predicted as `p`.
    pub confusion: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub filters: usize,
    pub channels: usize,
    pub feature_len: usize,
    pub hidden: usize,
    pub c: f64,
    pub c_mode: String,
    pub gram_condition: f64,
    pub dead_units: usize,
    pub train_images: usize,
    /// `[c, validation error]` pairs from cross-validation.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cv_trials: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub hidden: usize,
    pub repeat: usize,
    pub seed: u64,
    pub c: f64,
    pub test_error: f64,
    pub train_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepMedian {
    pub hidden: usize,
    pub median_test_error: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Digests {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filters: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features_key: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub version: String,
    pub seeds: Seeds,
    pub timings: PhaseTimings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<SplitResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<SplitResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluated_split: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep: Vec<SweepRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep_medians: Vec<SweepMedian>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_extractions: Option<usize>,
    pub digests: Digests,
    pub config: Option<PipelineConfig>,
}

fn pct(rate: f64) -> String {
    format!("{:.2}%", 100.0 * rate)
}

impl RunReport {
    pub fn new(command: &str, config: &PipelineConfig) -> Self {
        RunReport {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seeds: Seeds {
                filters: config.filters.seed,
                weights: config.stage2.seed,
            },
            config: Some(config.clone()),
            ..Default::default()
        }
    }

    /// Human-readable summary lines.
    pub fn summary(&self) -> Vec<String> {
        let mut lines = vec![format!("shallowconv {} {}", self.command, self.version)];
        if let Some(m) = &self.model {
            lines.push(format!(
                "filters {}  channels {}  feature length {}  hidden {}  c {:.4e} ({})",
                m.filters, m.channels, m.feature_len, m.hidden, m.c, m.c_mode
            ));
        }
        for (name, split) in [("train", &self.train), ("test", &self.test)] {
            if let Some(s) = split {
                lines.push(format!(
                    "{name:<6} error {:>7}  ({} of {})  accuracy {}",
                    pct(s.error_rate),
                    s.errors,
                    s.images,
                    pct(1.0 - s.error_rate)
                ));
            }
        }
        if !self.sweep.is_empty() {
            lines.push(format!("{:>8} {:>6} {:>10} {:>10} {:>9}", "M", "repeat", "seed", "test err", "seconds"));
            for r in &self.sweep {
                lines.push(format!(
                    "{:>8} {:>6} {:>10} {:>10} {:>9.1}",
                    r.hidden,
                    r.repeat,
                    r.seed,
                    pct(r.test_error),
                    r.train_seconds
                ));
            }
            for m in &self.sweep_medians {
                lines.push(format!("median M={:<6} {}", m.hidden, pct(m.median_test_error)));
            }
        }
        let t = &self.timings;
        lines.push(format!(
            "seconds: features {:.1} ({:.2}/filter/60k)  weights {:.1}  activations {:.1}  gram {:.1}  solve {:.1}  io {:.1}  total {:.1}",
            t.features, t.features_per_filter_60k, t.weights, t.activations, t.gram, t.solve, t.io, t.total
        ));
        lines
    }

    pub fn to_text(&self) -> Result<String> {
        let body = toml::to_string(self).map_err(|e| Error::Format(format!("report serialization: {e}")))?;
        let mut out = String::new();
        for line in self.summary() {
            out.push_str("# ");
            out.push_str(&line);
            out.push('\n');
        }
        out.push('\n');
        out.push_str(&body);
        Ok(out)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(format!("report: {e}")))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()?).map_err(|e| Error::io(path, e))
    }
}
