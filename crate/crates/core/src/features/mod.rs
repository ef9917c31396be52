//! Stage-1 feature extraction.
//!
//! For image `k`, filter `i` and channel `c` the map
//! `g2(pool(g1(conv(x_{k,c}, h_{i,c}))))` is downsampled, the `C` channel
//! maps of a filter are concatenated into one block, the block is divided
//! by its sum, and blocks are stacked over filters into feature column `k`.
//!
//! Convolution is cross-correlation: the filter is not flipped.

mod extract;
mod sparse;

pub use extract::{extract_features, Extractor};
pub use sparse::{build_filter_matrix, build_pool_matrix, extract_features_sparse, CsrMatrix};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureExtractorConfig {
    /// Filter side `W`.
    pub w: usize,
    /// Pooling side `Q`.
    pub q: usize,
    /// Downsample factor `D`.
    pub d: usize,
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

impl FeatureExtractorConfig {
    pub fn new(w: usize, q: usize, d: usize) -> Self {
        FeatureExtractorConfig {
            w,
            q,
            d,
            p1: default_p1(),
            p2: default_p2(),
            epsilon_norm: default_epsilon_norm(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.w >= 1, Precondition, "filter side W must be at least 1");
        ensure!(self.q >= 1, Precondition, "pooling side Q must be at least 1");
        ensure!(self.d >= 1, Precondition, "downsample factor D must be at least 1");
        ensure!(self.p1 > 0.0 && self.p1.is_finite(), Precondition, "p1 must be positive, got {}", self.p1);
        ensure!(self.p2 > 0.0 && self.p2.is_finite(), Precondition, "p2 must be positive, got {}", self.p2);
        ensure!(
            self.epsilon_norm >= 0.0,
            Precondition,
            "epsilon_norm must be nonnegative, got {}",
            self.epsilon_norm
        );
        Ok(())
    }

    /// Side of the pooled map, `J − W + Q`.
    pub fn pooled_side(&self, j: usize) -> usize {
        j - self.w + self.q
    }

    /// Side of the downsampled map, `ceil((J − W + Q) / D)`.
    pub fn kept_side(&self, j: usize) -> usize {
        self.pooled_side(j).div_ceil(self.d)
    }

    /// Rows of the feature matrix, `P·C·ceil((J − W + Q) / D)²`.
    pub fn feature_len(&self, filters: usize, channels: usize, j: usize) -> usize {
        let s = self.kept_side(j);
        filters * channels * s * s
    }
}

/// How a feature column is partitioned: `filters` blocks, each `channels`
/// maps of `side×side`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureLayout {
    pub filters: usize,
    pub channels: usize,
    pub side: usize,
}

impl FeatureLayout {
    #[inline]
    pub fn block_len(&self) -> usize {
        self.channels * self.side * self.side
    }

    #[inline]
    pub fn feature_len(&self) -> usize {
        self.filters * self.block_len()
    }
}

/// `L̂×K` features, one column per image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    layout: FeatureLayout,
    values: Matrix,
}

impl FeatureMatrix {
    pub fn new(layout: FeatureLayout, values: Matrix) -> Result<Self> {
        ensure!(
            values.rows() == layout.feature_len(),
            Consistency,
            "feature matrix has {} rows, layout implies {}",
            values.rows(),
            layout.feature_len()
        );
        Ok(FeatureMatrix { layout, values })
    }

    #[inline]
    pub fn layout(&self) -> FeatureLayout {
        self.layout
    }

    #[inline]
    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn into_values(self) -> Matrix {
        self.values
    }

    /// Number of images `K`.
    #[inline]
    pub fn len(&self) -> usize {
        self.values.cols()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.cols() == 0
    }

    /// Feature dimension `L̂`.
    #[inline]
    pub fn feature_len(&self) -> usize {
        self.values.rows()
    }

    #[inline]
    pub fn column(&self, k: usize) -> &[f64] {
        self.values.col(k)
    }

    /// Block of filter `i` in column `k`.
    pub fn block(&self, k: usize, i: usize) -> &[f64] {
        let n = self.layout.block_len();
        &self.column(k)[i * n..(i + 1) * n]
    }

    /// Columns at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> FeatureMatrix {
        let l = self.feature_len();
        let mut data = Vec::with_capacity(l * indices.len());
        for &k in indices {
            data.extend_from_slice(self.column(k));
        }
        FeatureMatrix {
            layout: self.layout,
            values: Matrix::from_col_major(l, indices.len(), data).expect("sizes agree"),
        }
    }

    /// Join matrices with the same layout column-wise.
    pub fn hstack(parts: &[FeatureMatrix]) -> Result<FeatureMatrix> {
        let first = parts
            .first()
            .ok_or_else(|| crate::Error::Precondition("no feature matrices to join".into()))?;
        let mut data = Vec::new();
        let mut cols = 0;
        for p in parts {
            ensure!(
                p.layout == first.layout,
                Consistency,
                "cannot join feature matrices with different layouts"
            );
            data.extend_from_slice(p.values.as_slice());
            cols += p.len();
        }
        Ok(FeatureMatrix {
            layout: first.layout,
            values: Matrix::from_col_major(first.feature_len(), cols, data)?,
        })
    }

    /// Largest deviation of a block sum from 1, ignoring all-zero blocks.
    pub fn max_block_sum_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 0..self.len() {
            for i in 0..self.layout.filters {
                let b = self.block(k, i);
                if b.iter().any(|&v| v != 0.0) {
                    worst = worst.max((b.iter().sum::<f64>() - 1.0).abs());
                }
            }
        }
        worst
    }
}

/// Cross-correlate a `j×j` map with a `w×w` filter over fully overlapping
/// positions; the output side is `j − w + 1`.
pub fn conv2_valid(channel: &[f64], j: usize, filter: &[f64], w: usize) -> Result<Vec<f64>> {
    ensure!(channel.len() == j * j, Precondition, "map is not {j}x{j}");
    ensure!(filter.len() == w * w, Precondition, "filter is not {w}x{w}");
    ensure!(w >= 1 && w <= j, Precondition, "filter side {w} exceeds map side {j}");
    let s = j - w + 1;
    let mut out = vec![0.0; s * s];
    for r in 0..s {
        for c in 0..s {
            let mut acc = 0.0;
            for dr in 0..w {
                for dc in 0..w {
                    acc += filter[dr * w + dc] * channel[(r + dr) * j + c + dc];
                }
            }
            out[r * s + c] = acc;
        }
    }
    Ok(out)
}

/// Full correlation of an `s×s` map with the uniform `q×q` kernel of value
/// `1/q²`, zero-padded; the output side is `s + q − 1`.
pub fn pool_full(map: &[f64], s: usize, q: usize) -> Result<Vec<f64>> {
    ensure!(s >= 1 && q >= 1, Precondition, "pooling needs S >= 1 and Q >= 1");
    ensure!(map.len() == s * s, Precondition, "map is not {s}x{s}");
    let n = s + q - 1;
    let scale = 1.0 / (q * q) as f64;
    let mut out = vec![0.0; n * n];
    for t in 0..n {
        for u in 0..n {
            let mut acc = 0.0;
            for a in window(t, q, s) {
                for b in window(u, q, s) {
                    acc += map[a * s + b];
                }
            }
            out[t * n + u] = acc * scale;
        }
    }
    Ok(out)
}

/// Input indices that full pooling output `t` reads: `[t+1−q, t] ∩ [0, s)`.
#[inline]
pub(crate) fn window(t: usize, q: usize, s: usize) -> std::ops::Range<usize> {
    (t + 1).saturating_sub(q)..(t + 1).min(s)
}

/// Keep rows and columns `0, d, 2d, …` of an `s×s` map.
pub fn downsample_map(map: &[f64], s: usize, d: usize) -> Result<Vec<f64>> {
    ensure!(d >= 1, Precondition, "downsample factor must be at least 1");
    ensure!(map.len() == s * s, Precondition, "map is not {s}x{s}");
    let mut out = Vec::with_capacity(s.div_ceil(d).pow(2));
    for r in (0..s).step_by(d) {
        for c in (0..s).step_by(d) {
            out.push(map[r * s + c]);
        }
    }
    Ok(out)
}
