//! Per-channel ZCA whitening fit on a training set.

use super::ImageBatch;
use crate::error::{ensure, Error, Result};
use crate::linalg::{matmul, pairwise_sum, symmetric_eigen, symmetrize_from_lower, syrk_lower_add, Matrix};

/// Images per block when streaming covariance and transform products.
const BLOCK: usize = 1024;

/// Eigenvalues (plus epsilon) below this fraction of the largest one make
/// the whitening transform undefined.
const SINGULAR_RATIO: f64 = 1e-12;

/// One `J²×J²` whitening matrix and mean vector per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ZcaTransform {
    pub side: usize,
    pub epsilon: f64,
    pub means: Vec<Vec<f64>>,
    pub matrices: Vec<Matrix>,
}

impl ZcaTransform {
    pub fn channels(&self) -> usize {
        self.means.len()
    }
}

/// Copy channel `c` of images `start..end` into a `J² × n` block, minus `mean`.
fn centered_block(batch: &ImageBatch, c: usize, start: usize, end: usize, mean: &[f64]) -> Matrix {
    let d = mean.len();
    let mut block = Matrix::zeros(d, end - start);
    for (j, k) in (start..end).enumerate() {
        let dst = block.col_mut(j);
        for ((o, &x), &m) in dst.iter_mut().zip(batch.channel(k, c)).zip(mean) {
            *o = x as f64 - m;
        }
    }
    block
}

/// Fit one whitening transform per channel: the covariance (normalized by
/// K) of mean-centered channel vectors is decomposed as `U Λ Uᵀ` and the
/// transform is `U diag((λ+ε)^{-1/2}) Uᵀ`.
pub fn zca_fit(train: &ImageBatch, epsilon: f64) -> Result<ZcaTransform> {
    let k = train.len();
    ensure!(k >= 2, Precondition, "ZCA needs at least 2 training images, got {k}");
    ensure!(epsilon >= 0.0, Precondition, "ZCA epsilon must be non-negative");
    let d = train.side() * train.side();
    let mut means = Vec::with_capacity(train.channels());
    let mut matrices = Vec::with_capacity(train.channels());
    let mut column = vec![0.0f64; k];
    for c in 0..train.channels() {
        let mean: Vec<f64> = (0..d)
            .map(|p| {
                for (slot, img) in column.iter_mut().zip(0..k) {
                    *slot = train.channel(img, c)[p] as f64;
                }
                pairwise_sum(&column) / k as f64
            })
            .collect();

        let mut cov = Matrix::zeros(d, d);
        for start in (0..k).step_by(BLOCK) {
            let block = centered_block(train, c, start, (start + BLOCK).min(k), &mean);
            syrk_lower_add(&mut cov, &block);
        }
        symmetrize_from_lower(&mut cov);
        cov.as_mut_slice().iter_mut().for_each(|v| *v /= k as f64);

        let (values, vectors) = symmetric_eigen(&cov)?;
        let top = values.last().copied().unwrap_or(0.0).max(0.0);
        let mut half = vectors;
        for (j, &lambda) in values.iter().enumerate() {
            let shifted = lambda.max(0.0) + epsilon;
            if shifted <= SINGULAR_RATIO * top || shifted <= 0.0 {
                return Err(Error::Numeric(format!(
                    "channel {c} covariance is singular (eigenvalue {lambda:e} with epsilon {epsilon}); use epsilon > 0"
                )));
            }
            let s = shifted.powf(-0.25);
            half.col_mut(j).iter_mut().for_each(|v| *v *= s);
        }
        // (U Λ^{-1/4})(U Λ^{-1/4})ᵀ, symmetric by construction.
        let mut t = Matrix::zeros(d, d);
        syrk_lower_add(&mut t, &half);
        symmetrize_from_lower(&mut t);
        means.push(mean);
        matrices.push(t);
    }
    Ok(ZcaTransform {
        side: train.side(),
        epsilon,
        means,
        matrices,
    })
}

/// Replace every channel vector `x` by `T (x − mean)`.
pub fn zca_apply(batch: &ImageBatch, t: &ZcaTransform) -> Result<ImageBatch> {
    ensure!(
        batch.side() == t.side && batch.channels() == t.channels(),
        Precondition,
        "batch is {}x{}x{}, transform expects {}x{}x{}",
        batch.channels(),
        batch.side(),
        batch.side(),
        t.channels(),
        t.side,
        t.side
    );
    let k = batch.len();
    let d = t.side * t.side;
    let n = batch.image_len();
    let mut pixels = vec![0.0f32; batch.pixels().len()];
    for c in 0..t.channels() {
        for start in (0..k).step_by(BLOCK) {
            let end = (start + BLOCK).min(k);
            let block = centered_block(batch, c, start, end, &t.means[c]);
            let out = matmul(&t.matrices[c], &block);
            for (j, img) in (start..end).enumerate() {
                let dst = &mut pixels[img * n + c * d..img * n + (c + 1) * d];
                for (o, &v) in dst.iter_mut().zip(out.col(j)) {
                    *o = v as f32;
                }
            }
        }
    }
    let mut out = ImageBatch::new(
        batch.channels(),
        batch.side(),
        batch.num_classes(),
        pixels,
        batch.labels().to_vec(),
        batch.meta.clone(),
    )?;
    out.meta.whitened = true;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::BatchMeta;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn batch_from(channels: usize, side: usize, pixels: Vec<f32>) -> ImageBatch {
        let k = pixels.len() / (channels * side * side);
        ImageBatch::new(channels, side, 1, pixels, vec![0; k], BatchMeta::default()).unwrap()
    }

    /// Covariance of channel `c` by direct loops, normalized by K.
    fn loop_covariance(b: &ImageBatch, c: usize) -> Matrix {
        let d = b.side() * b.side();
        let k = b.len();
        let mut mean = vec![0.0; d];
        for img in 0..k {
            for p in 0..d {
                mean[p] += b.channel(img, c)[p] as f64 / k as f64;
            }
        }
        Matrix::from_fn(d, d, |i, j| {
            (0..k)
                .map(|img| {
                    let x = b.channel(img, c);
                    (x[i] as f64 - mean[i]) * (x[j] as f64 - mean[j])
                })
                .sum::<f64>()
                / k as f64
        })
    }

    fn random_batch(seed: u64, channels: usize, side: usize, k: usize) -> ImageBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let px = (0..k * channels * side * side).map(|_| rng.random::<f32>()).collect();
        batch_from(channels, side, px)
    }

    #[test]
    fn transform_is_symmetric() {
        let t = zca_fit(&random_batch(1, 2, 3, 40), 0.1).unwrap();
        for m in &t.matrices {
            assert!(m.max_abs_diff(&m.transpose()) < 1e-8);
        }
    }

    #[test]
    fn white_data_gives_identity() {
        // Eight images ±2·e_i on a 2x2 channel: zero mean, identity covariance.
        let mut px = Vec::new();
        for i in 0..4 {
            for sign in [2.0f32, -2.0] {
                let mut v = [0.0f32; 4];
                v[i] = sign;
                px.extend_from_slice(&v);
            }
        }
        let b = batch_from(1, 2, px);
        let t = zca_fit(&b, 0.0).unwrap();
        assert!(t.matrices[0].max_abs_diff(&Matrix::identity(4)) < 1e-6);
    }

    #[test]
    fn toy_set_matches_hand_linear_algebra() {
        // 2x2 single channel, five images.
        let px: Vec<f32> = vec![
            1.0, 2.0, 0.0, 1.0, //
            3.0, 1.0, 1.0, 0.0, //
            0.0, 0.0, 2.0, 2.0, //
            2.0, 3.0, 1.0, 1.0, //
            1.0, 1.0, 3.0, 0.0,
        ];
        let b = batch_from(1, 2, px);
        let eps = 0.1;
        let t = zca_fit(&b, eps).unwrap();
        let mut reg = loop_covariance(&b, 0);
        for i in 0..4 {
            reg[(i, i)] += eps;
        }
        // T is the symmetric inverse square root: T·T·(C+εI) = I.
        let ttc = matmul(&matmul(&t.matrices[0], &t.matrices[0]), &reg);
        assert!(ttc.max_abs_diff(&Matrix::identity(4)) < 1e-10);
        let out = zca_apply(&b, &t).unwrap();
        // Hand computation of image 0.
        let mean = [7.0 / 5.0, 7.0 / 5.0, 7.0 / 5.0, 4.0 / 5.0];
        let x0 = [1.0, 2.0, 0.0, 1.0];
        for i in 0..4 {
            let expect: f64 = (0..4).map(|j| t.matrices[0][(i, j)] * (x0[j] - mean[j])).sum();
            assert!((out.channel(0, 0)[i] as f64 - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn whitened_training_set_has_identity_covariance() {
        let b = random_batch(7, 2, 3, 200);
        let t = zca_fit(&b, 0.0).unwrap();
        let w = zca_apply(&b, &t).unwrap();
        for c in 0..2 {
            let (vals, _) = symmetric_eigen(&loop_covariance(&w, c)).unwrap();
            for v in vals {
                assert!((v - 1.0).abs() <= 1e-4, "eigenvalue {v}");
            }
        }
    }

    #[test]
    fn epsilon_shrinks_eigenvalues() {
        let b = random_batch(9, 1, 3, 300);
        let eps = 0.05;
        let (lambda, _) = symmetric_eigen(&loop_covariance(&b, 0)).unwrap();
        let w = zca_apply(&b, &zca_fit(&b, eps).unwrap()).unwrap();
        let (got, _) = symmetric_eigen(&loop_covariance(&w, 0)).unwrap();
        for (l, g) in lambda.iter().zip(&got) {
            assert!((g - l / (l + eps)).abs() < 1e-4, "{g} vs {}", l / (l + eps));
        }
    }

    #[test]
    fn constant_image_at_mean_maps_to_zero() {
        let b = random_batch(3, 1, 2, 30);
        let t = zca_fit(&b, 0.1).unwrap();
        let at_mean = batch_from(1, 2, t.means[0].iter().map(|&m| m as f32).collect());
        let out = zca_apply(&at_mean, &t).unwrap();
        assert!(out.pixels().iter().all(|v| v.abs() < 1e-5));
    }

    #[test]
    fn identity_transform_passes_through() {
        let b = random_batch(4, 1, 2, 3);
        let t = ZcaTransform {
            side: 2,
            epsilon: 0.0,
            means: vec![vec![0.0; 4]],
            matrices: vec![Matrix::identity(4)],
        };
        assert_eq!(zca_apply(&b, &t).unwrap().pixels(), b.pixels());
    }

    #[test]
    fn rank_deficient_without_epsilon_is_numeric_error() {
        // Every image identical in pixels 2 and 3.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let px = (0..20)
            .flat_map(|_| {
                let a = rng.random::<f32>();
                let b = rng.random::<f32>();
                [a, b, 0.5, 0.5]
            })
            .collect();
        let b = batch_from(1, 2, px);
        assert!(matches!(zca_fit(&b, 0.0), Err(Error::Numeric(_))));
        assert!(zca_fit(&b, 0.1).is_ok());
    }

    #[test]
    fn preconditions() {
        assert!(zca_fit(&random_batch(1, 1, 2, 1), 0.1).is_err());
        let t = zca_fit(&random_batch(1, 1, 2, 10), 0.1).unwrap();
        assert!(zca_apply(&random_batch(2, 1, 3, 2), &t).is_err());
    }

    #[test]
    fn fit_is_independent_of_block_boundaries() {
        // More images than one block: result must match a single-pass loop.
        let b = random_batch(11, 1, 2, BLOCK + 37);
        let t = zca_fit(&b, 0.1).unwrap();
        let mut reg = loop_covariance(&b, 0);
        for i in 0..4 {
            reg[(i, i)] += 0.1;
        }
        let ttc = matmul(&matmul(&t.matrices[0], &t.matrices[0]), &reg);
        assert!(ttc.max_abs_diff(&Matrix::identity(4)) < 1e-10);
    }
}
