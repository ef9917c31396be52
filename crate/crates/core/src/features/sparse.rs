//! The network written as sparse products, `F = g2(W_pool · g1(W_filter · X))`.
//!
//! `W_filter` stacks one Toeplitz block per (filter, channel) pair and
//! `W_pool` pools and downsamples one map. This path is slow but follows
//! the matrix formulation literally, so it serves as a reference for the
//! direct path.

use super::extract::normalize_block;
use super::{window, FeatureExtractorConfig, FeatureLayout, FeatureMatrix};
use crate::dataset::ImageBatch;
use crate::error::{ensure, Error, Result};
use crate::filterbank::FilterBank;
use crate::linalg::Matrix;

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    fn with_cols(cols: usize) -> Self {
        CsrMatrix {
            rows: 0,
            cols,
            indptr: vec![0],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    fn push(&mut self, col: usize, value: f64) {
        debug_assert!(col < self.cols);
        self.indices.push(col);
        self.values.push(value);
    }

    fn end_row(&mut self) {
        self.rows += 1;
        self.indptr.push(self.indices.len());
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let span = self.indptr[i]..self.indptr[i + 1];
        (&self.indices[span.clone()], &self.values[span])
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "vector length");
        (0..self.rows)
            .map(|i| {
                let (idx, val) = self.row(i);
                idx.iter().zip(val).map(|(&j, &v)| v * x[j]).sum()
            })
            .collect()
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            let (idx, val) = self.row(i);
            for (&j, &v) in idx.iter().zip(val) {
                m[(i, j)] += v;
            }
        }
        m
    }
}

/// Convolution matrix for `j×j` images: rows are `(filter, channel, r, c)`
/// of the valid output, columns are `(channel, row, col)` of the input.
pub fn build_filter_matrix(bank: &FilterBank, j: usize) -> Result<CsrMatrix> {
    let (w, channels) = (bank.side(), bank.channels());
    ensure!(w <= j, Precondition, "filter side {w} exceeds image side {j}");
    let s0 = j - w + 1;
    let mut m = CsrMatrix::with_cols(channels * j * j);
    for i in 0..bank.len() {
        for c in 0..channels {
            let h = bank.slice(i, c);
            for r in 0..s0 {
                for col in 0..s0 {
                    for dr in 0..w {
                        for dc in 0..w {
                            let v = h[dr * w + dc];
                            if v != 0.0 {
                                m.push(c * j * j + (r + dr) * j + col + dc, v);
                            }
                        }
                    }
                    m.end_row();
                }
            }
        }
    }
    Ok(m)
}

/// Full uniform pooling of an `s×s` map followed by keeping every `d`-th
/// row and column.
pub fn build_pool_matrix(s: usize, q: usize, d: usize) -> Result<CsrMatrix> {
    ensure!(s >= 1 && q >= 1 && d >= 1, Precondition, "pool matrix needs S, Q, D >= 1");
    let kept = (s + q - 1).div_ceil(d);
    let scale = 1.0 / (q * q) as f64;
    let mut m = CsrMatrix::with_cols(s * s);
    for a in 0..kept {
        for b in 0..kept {
            for u in window(a * d, q, s) {
                for v in window(b * d, q, s) {
                    m.push(u * s + v, scale);
                }
            }
            m.end_row();
        }
    }
    Ok(m)
}

/// Feature extraction through the sparse matrices.
pub fn extract_features_sparse(
    batch: &ImageBatch,
    bank: &FilterBank,
    cfg: &FeatureExtractorConfig,
) -> Result<FeatureMatrix> {
    cfg.validate()?;
    ensure!(
        bank.channels() == batch.channels() && bank.side() == cfg.w,
        Precondition,
        "bank geometry {}x{}x{} does not match batch channels {} and W={}",
        bank.channels(),
        bank.side(),
        bank.side(),
        batch.channels(),
        cfg.w
    );
    let j = batch.side();
    let w_filter = build_filter_matrix(bank, j)?;
    let s0 = j - cfg.w + 1;
    let w_pool = build_pool_matrix(s0, cfg.q, cfg.d)?;
    let layout = FeatureLayout {
        filters: bank.len(),
        channels: batch.channels(),
        side: cfg.kept_side(j),
    };
    let maps = bank.len() * batch.channels();
    let mut values = Matrix::zeros(layout.feature_len(), batch.len());
    for k in 0..batch.len() {
        let x: Vec<f64> = batch.image(k).iter().map(|&v| v as f64).collect();
        let y: Vec<f64> = w_filter.matvec(&x).into_iter().map(|u| u.powf(cfg.p1)).collect();
        let col = values.col_mut(k);
        for (m, (dst, src)) in col.chunks_exact_mut(w_pool.rows()).zip(y.chunks_exact(s0 * s0)).enumerate() {
            debug_assert!(m < maps);
            for (o, v) in dst.iter_mut().zip(w_pool.matvec(src)) {
                if !(v >= 0.0) {
                    return Err(Error::Numeric(format!("pooled value {v} is negative")));
                }
                *o = v.powf(cfg.p2);
            }
        }
        for block in col.chunks_exact_mut(layout.block_len()) {
            normalize_block(block, cfg.epsilon_norm);
        }
    }
    FeatureMatrix::new(layout, values)
}
