//! Direct extraction path: im2col plus one matrix product per channel for
//! the convolutions, then pooling evaluated only where the downsampler
//! keeps a sample.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use super::{window, FeatureExtractorConfig, FeatureLayout, FeatureMatrix};
use crate::dataset::ImageBatch;
use crate::error::{ensure, Error, Result};
use crate::filterbank::FilterBank;
use crate::linalg::{matmul_into, Matrix};

/// A filter bank bound to an image geometry, ready to extract features.
#[derive(Debug, Clone)]
pub struct Extractor {
    cfg: FeatureExtractorConfig,
    channels: usize,
    image_side: usize,
    /// Per channel, a `W²×P` matrix whose column `i` is filter `i`'s slice.
    kernels: Vec<Matrix>,
    layout: FeatureLayout,
}

struct Scratch {
    patches: Matrix,
    conv: Matrix,
    rows: Vec<f64>,
}

impl Extractor {
    pub fn new(bank: &FilterBank, cfg: &FeatureExtractorConfig, channels: usize, image_side: usize) -> Result<Self> {
        cfg.validate()?;
        ensure!(
            bank.channels() == channels,
            Precondition,
            "filter bank has {} channels, images have {channels}",
            bank.channels()
        );
        ensure!(
            bank.side() == cfg.w,
            Precondition,
            "filter side {} differs from configured W={}",
            bank.side(),
            cfg.w
        );
        ensure!(
            cfg.w <= image_side,
            Precondition,
            "filter side {} exceeds image side {image_side}",
            cfg.w
        );
        ensure!(!bank.is_empty(), Precondition, "empty filter bank");
        let taps = cfg.w * cfg.w;
        let kernels = (0..channels)
            .map(|c| Matrix::from_fn(taps, bank.len(), |t, i| bank.slice(i, c)[t]))
            .collect();
        Ok(Extractor {
            cfg: *cfg,
            channels,
            image_side,
            kernels,
            layout: FeatureLayout {
                filters: bank.len(),
                channels,
                side: cfg.kept_side(image_side),
            },
        })
    }

    /// Bind `bank` to the geometry of `batch`.
    pub fn for_batch(bank: &FilterBank, cfg: &FeatureExtractorConfig, batch: &ImageBatch) -> Result<Self> {
        Self::new(bank, cfg, batch.channels(), batch.side())
    }

    #[inline]
    pub fn layout(&self) -> FeatureLayout {
        self.layout
    }

    #[inline]
    pub fn feature_len(&self) -> usize {
        self.layout.feature_len()
    }

    #[inline]
    pub fn config(&self) -> &FeatureExtractorConfig {
        &self.cfg
    }

    fn check_batch(&self, batch: &ImageBatch) -> Result<()> {
        ensure!(
            batch.channels() == self.channels && batch.side() == self.image_side,
            Precondition,
            "batch of {}x{}x{} images does not match extractor geometry {}x{}x{}",
            batch.channels(),
            batch.side(),
            batch.side(),
            self.channels,
            self.image_side,
            self.image_side
        );
        Ok(())
    }

    pub fn extract(&self, batch: &ImageBatch) -> Result<FeatureMatrix> {
        let all: Vec<usize> = (0..batch.len()).collect();
        self.extract_indices(batch, &all)
    }

    /// Features of the images at `indices`, in that order.
    pub fn extract_indices(&self, batch: &ImageBatch, indices: &[usize]) -> Result<FeatureMatrix> {
        let mut values = Matrix::zeros(self.feature_len(), indices.len());
        self.extract_into(batch, indices, values.as_mut_slice())?;
        FeatureMatrix::new(self.layout, values)
    }

    /// Write the feature columns of `indices` into `out`, column-major.
    pub fn extract_into(&self, batch: &ImageBatch, indices: &[usize], out: &mut [f64]) -> Result<()> {
        self.check_batch(batch)?;
        let l = self.feature_len();
        ensure!(
            out.len() == l * indices.len(),
            Precondition,
            "output buffer holds {} values, {} needed",
            out.len(),
            l * indices.len()
        );
        if let Some(&bad) = indices.iter().find(|&&k| k >= batch.len()) {
            return Err(Error::Precondition(format!("image index {bad} out of range")));
        }
        if l == 0 {
            return Ok(());
        }
        #[cfg(feature = "parallel")]
        {
            out.par_chunks_mut(l)
                .zip(indices.par_iter())
                .try_for_each_init(|| self.scratch(), |s, (col, &k)| self.extract_image(batch.image(k), col, s))
        }
        #[cfg(not(feature = "parallel"))]
        {
            let mut s = self.scratch();
            out.chunks_mut(l)
                .zip(indices)
                .try_for_each(|(col, &k)| self.extract_image(batch.image(k), col, &mut s))
        }
    }

    fn scratch(&self) -> Scratch {
        let s0 = self.image_side - self.cfg.w + 1;
        Scratch {
            patches: Matrix::zeros(s0 * s0, self.cfg.w * self.cfg.w),
            conv: Matrix::zeros(s0 * s0, self.layout.filters),
            rows: vec![0.0; s0 * self.layout.side],
        }
    }

    fn extract_image(&self, image: &[f32], out: &mut [f64], s: &mut Scratch) -> Result<()> {
        let FeatureExtractorConfig { w, q, d, p1, p2, .. } = self.cfg;
        let j = self.image_side;
        let s0 = j - w + 1;
        let kept = self.layout.side;
        let plane = kept * kept;
        let block = self.layout.block_len();
        let scale = 1.0 / (q * q) as f64;

        for c in 0..self.channels {
            let x = &image[c * j * j..(c + 1) * j * j];
            for dr in 0..w {
                for dc in 0..w {
                    let col = s.patches.col_mut(dr * w + dc);
                    for r in 0..s0 {
                        let src = &x[(r + dr) * j + dc..(r + dr) * j + dc + s0];
                        for (dst, &v) in col[r * s0..(r + 1) * s0].iter_mut().zip(src) {
                            *dst = v as f64;
                        }
                    }
                }
            }
            matmul_into(&mut s.conv, &s.patches, &self.kernels[c]);

            for i in 0..self.layout.filters {
                let map = s.conv.col_mut(i);
                if p1 == 2.0 {
                    map.iter_mut().for_each(|u| *u *= *u);
                } else {
                    map.iter_mut().for_each(|u| *u = u.powf(p1));
                }
                // Horizontal window sums at kept columns, for every row.
                for r in 0..s0 {
                    let row = &map[r * s0..(r + 1) * s0];
                    for b in 0..kept {
                        s.rows[r * kept + b] = row[window(b * d, q, s0)].iter().sum();
                    }
                }
                let dst = &mut out[i * block + c * plane..i * block + (c + 1) * plane];
                for a in 0..kept {
                    for b in 0..kept {
                        let mut acc = 0.0;
                        for r in window(a * d, q, s0) {
                            acc += s.rows[r * kept + b];
                        }
                        let v = acc * scale;
                        if !(v >= 0.0) {
                            return Err(Error::Numeric(format!(
                                "pooled value {v} is outside the domain of the fractional power"
                            )));
                        }
                        dst[a * kept + b] = if p2 == 0.25 { v.sqrt().sqrt() } else { v.powf(p2) };
                    }
                }
            }
        }
        for f in out.chunks_exact_mut(block) {
            normalize_block(f, self.cfg.epsilon_norm);
        }
        Ok(())
    }
}

pub(crate) fn normalize_block(block: &mut [f64], epsilon: f64) {
    let sum: f64 = block.iter().sum();
    if sum < epsilon {
        block.fill(0.0);
    } else {
        block.iter_mut().for_each(|v| *v /= sum);
    }
}

/// Extract the feature matrix of a whole batch.
pub fn extract_features(batch: &ImageBatch, bank: &FilterBank, cfg: &FeatureExtractorConfig) -> Result<FeatureMatrix> {
    Extractor::for_batch(bank, cfg, batch)?.extract(batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::BatchMeta;
    use crate::features::{conv2_valid, downsample_map, pool_full};
    use crate::filterbank::{make_bar_filters, make_square_filters, FilterSource};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_batch(k: usize, channels: usize, side: usize, seed: u64) -> ImageBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pixels = (0..k * channels * side * side).map(|_| rng.random_range(0.0..1.0f32)).collect();
        ImageBatch::new(channels, side, 2, pixels, vec![0; k], BatchMeta::default()).unwrap()
    }

    fn random_bank(p: usize, channels: usize, w: usize, seed: u64) -> FilterBank {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coeffs = (0..p * channels * w * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        FilterBank::new(channels, w, coeffs, vec![FilterSource::Imported; p]).unwrap()
    }

    /// Composition of the single-map primitives, one image at a time.
    fn reference(batch: &ImageBatch, bank: &FilterBank, cfg: &FeatureExtractorConfig) -> Matrix {
        let j = batch.side();
        let s0 = j - cfg.w + 1;
        let sp = cfg.pooled_side(j);
        let mut cols = Vec::new();
        for k in 0..batch.len() {
            for i in 0..bank.len() {
                let mut block = Vec::new();
                for c in 0..batch.channels() {
                    let x: Vec<f64> = batch.channel(k, c).iter().map(|&v| v as f64).collect();
                    let conv = conv2_valid(&x, j, bank.slice(i, c), cfg.w).unwrap();
                    let sq: Vec<f64> = conv.iter().map(|u| u.powf(cfg.p1)).collect();
                    let pooled = pool_full(&sq, s0, cfg.q).unwrap();
                    let kept = downsample_map(&pooled, sp, cfg.d).unwrap();
                    block.extend(kept.iter().map(|v| v.powf(cfg.p2)));
                }
                let sum: f64 = block.iter().sum();
                cols.extend(block.iter().map(|v| if sum < cfg.epsilon_norm { 0.0 } else { v / sum }));
            }
        }
        Matrix::from_col_major(cols.len() / batch.len(), batch.len(), cols).unwrap()
    }

    #[test]
    fn matches_primitive_composition() {
        for (channels, j, w, q, d) in [(1, 12, 3, 4, 2), (3, 10, 4, 3, 3), (2, 9, 9, 2, 1), (1, 8, 2, 1, 5)] {
            let batch = random_batch(4, channels, j, 7);
            let bank = random_bank(3, channels, w, 8);
            let cfg = FeatureExtractorConfig::new(w, q, d);
            let f = extract_features(&batch, &bank, &cfg).unwrap();
            let r = reference(&batch, &bank, &cfg);
            assert!(f.values().max_abs_diff(&r) < 1e-12, "{:?}", (channels, j, w, q, d));
        }
    }

    #[test]
    fn general_exponents() {
        let batch = random_batch(3, 1, 10, 1);
        let bank = random_bank(2, 1, 3, 2);
        let mut cfg = FeatureExtractorConfig::new(3, 3, 2);
        cfg.p1 = 4.0;
        cfg.p2 = 0.5;
        let f = extract_features(&batch, &bank, &cfg).unwrap();
        assert!(f.values().max_abs_diff(&reference(&batch, &bank, &cfg)) < 1e-12);
        cfg.p1 = 1.5;
        assert!(matches!(extract_features(&batch, &bank, &cfg), Err(Error::Numeric(_))));
    }

    #[test]
    fn mnist_geometry() {
        let batch = random_batch(2, 1, 28, 3);
        let bank = FilterBank::concat(&[make_bar_filters(20, 7, 1).unwrap(), make_square_filters(&[3, 4, 5], 7).unwrap()])
            .unwrap();
        let f = extract_features(&batch, &bank, &FeatureExtractorConfig::new(7, 8, 2)).unwrap();
        assert_eq!(f.feature_len(), 23 * 225);
        assert!(f.max_block_sum_error() < 1e-6);
    }

    #[test]
    fn zero_image_gives_zero_blocks() {
        let batch = ImageBatch::new(1, 8, 2, vec![0.0; 64], vec![1], BatchMeta::default()).unwrap();
        let f = extract_features(&batch, &random_bank(2, 1, 3, 0), &FeatureExtractorConfig::new(3, 2, 2)).unwrap();
        assert!(f.column(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn preconditions() {
        let batch = random_batch(1, 3, 8, 0);
        let cfg = FeatureExtractorConfig::new(3, 2, 2);
        assert!(extract_features(&batch, &random_bank(1, 1, 3, 0), &cfg).is_err());
        assert!(extract_features(&batch, &random_bank(1, 3, 4, 0), &cfg).is_err());
        let big = FeatureExtractorConfig::new(9, 2, 2);
        assert!(extract_features(&batch, &random_bank(1, 3, 9, 0), &big).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn shape_law(j in 4usize..20, w in 1usize..6, q in 1usize..6, d in 1usize..5, p in 1usize..3, c in 1usize..3) {
            prop_assume!(w <= j);
            let batch = random_batch(1, c, j, 5);
            let cfg = FeatureExtractorConfig::new(w, q, d);
            let f = extract_features(&batch, &random_bank(p, c, w, 6), &cfg).unwrap();
            prop_assert_eq!(f.feature_len(), p * c * (j - w + q).div_ceil(d).pow(2));
        }

        #[test]
        fn nonnegative_and_normalized(seed in 0u64..1000) {
            let batch = random_batch(2, 2, 11, seed);
            let f = extract_features(&batch, &random_bank(3, 2, 4, seed + 1), &FeatureExtractorConfig::new(4, 3, 2)).unwrap();
            prop_assert!(f.values().as_slice().iter().all(|&v| v >= 0.0));
            prop_assert!(f.max_block_sum_error() < 1e-6);
        }

        #[test]
        fn positive_scaling_is_invisible(seed in 0u64..1000, alpha in prop::sample::select(vec![0.5f32, 2.0, 255.0])) {
            let batch = random_batch(2, 1, 12, seed);
            let scaled = batch.scaled_by(alpha);
            let bank = random_bank(3, 1, 5, seed);
            let cfg = FeatureExtractorConfig::new(5, 4, 2);
            let a = extract_features(&batch, &bank, &cfg).unwrap();
            let b = extract_features(&scaled, &bank, &cfg).unwrap();
            prop_assert!(a.values().max_abs_diff(b.values()) < 1e-6);
        }

        #[test]
        fn batch_independence(seed in 0u64..1000) {
            let batch = random_batch(5, 1, 10, seed);
            let bank = random_bank(2, 1, 3, seed);
            let cfg = FeatureExtractorConfig::new(3, 4, 3);
            let whole = extract_features(&batch, &bank, &cfg).unwrap();
            for k in 0..batch.len() {
                let one = extract_features(&batch.slice(k, k + 1), &bank, &cfg).unwrap();
                let diff = one.column(0).iter().zip(whole.column(k)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                prop_assert!(diff <= 1e-12);
            }
        }
    }
}
