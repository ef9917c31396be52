//! Image datasets: binary loaders, preprocessing and label encoding.
//!
//! Images are stored image-major: image `k` occupies one contiguous run of
//! `C·J·J` values, channel-major and row-major inside each channel, so a
//! batch is literally the K-column data matrix of the network.

mod cifar;
mod mnist;
mod zca;

pub use cifar::{load_cifar10, parse_cifar10, CIFAR10_RECORD_BYTES};
pub use mnist::{load_mnist, parse_idx_images, parse_idx_labels, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use zca::{zca_apply, zca_fit, ZcaTransform};

use crate::error::{ensure, Result};
use crate::linalg::Matrix;

/// ITU-R 601 luma weights (R, G, B).
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BatchMeta {
    pub dataset: String,
    pub split: String,
    /// Set once `scale_pixels` has run.
    pub scaled: bool,
    /// Set once ZCA whitening has been applied.
    pub whitened: bool,
}

/// K images of C channels, J×J pixels each, with labels in `0..num_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBatch {
    channels: usize,
    side: usize,
    num_classes: usize,
    pixels: Vec<f32>,
    labels: Vec<usize>,
    pub meta: BatchMeta,
}

impl ImageBatch {
    pub fn new(
        channels: usize,
        side: usize,
        num_classes: usize,
        pixels: Vec<f32>,
        labels: Vec<usize>,
        meta: BatchMeta,
    ) -> Result<Self> {
        ensure!(channels >= 1 && side >= 1, Precondition, "empty image geometry");
        ensure!(
            pixels.len() == labels.len() * channels * side * side,
            Precondition,
            "{} pixel values do not match {} images of {channels}x{side}x{side}",
            pixels.len(),
            labels.len()
        );
        if let Some(bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(crate::Error::Precondition(format!(
                "label {bad} outside 0..{num_classes}"
            )));
        }
        Ok(ImageBatch {
            channels,
            side,
            num_classes,
            pixels,
            labels,
            meta,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn side(&self) -> usize {
        self.side
    }

    #[inline]
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    #[inline]
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    #[inline]
    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    #[inline]
    pub fn image_len(&self) -> usize {
        self.channels * self.side * self.side
    }

    #[inline]
    pub fn image(&self, k: usize) -> &[f32] {
        let n = self.image_len();
        &self.pixels[k * n..(k + 1) * n]
    }

    #[inline]
    pub fn channel(&self, k: usize, c: usize) -> &[f32] {
        let plane = self.side * self.side;
        let start = k * self.image_len() + c * plane;
        &self.pixels[start..start + plane]
    }

    /// Images `start..end` as a new batch.
    pub fn slice(&self, start: usize, end: usize) -> ImageBatch {
        let n = self.image_len();
        ImageBatch {
            channels: self.channels,
            side: self.side,
            num_classes: self.num_classes,
            pixels: self.pixels[start * n..end * n].to_vec(),
            labels: self.labels[start..end].to_vec(),
            meta: self.meta.clone(),
        }
    }

    /// The images at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> ImageBatch {
        let mut pixels = Vec::with_capacity(indices.len() * self.image_len());
        for &k in indices {
            pixels.extend_from_slice(self.image(k));
        }
        ImageBatch {
            channels: self.channels,
            side: self.side,
            num_classes: self.num_classes,
            pixels,
            labels: indices.iter().map(|&k| self.labels[k]).collect(),
            meta: self.meta.clone(),
        }
    }

    /// Multiply every pixel by `alpha`.
    pub fn scaled_by(&self, alpha: f32) -> ImageBatch {
        let mut out = self.clone();
        out.pixels.iter_mut().for_each(|p| *p *= alpha);
        out
    }
}

/// Map raw 0..255 intensities onto [0, 1].
pub fn scale_pixels(batch: &ImageBatch) -> ImageBatch {
    let mut out = batch.clone();
    out.pixels.iter_mut().for_each(|p| *p /= 255.0);
    out.meta.scaled = true;
    out
}

/// Append a luminance channel to an RGB batch (C: 3 → 4).
pub fn add_greyscale_channel(batch: &ImageBatch) -> Result<ImageBatch> {
    ensure!(
        batch.channels == 3,
        Precondition,
        "greyscale conversion needs 3 (RGB) channels, batch has {}",
        batch.channels
    );
    let plane = batch.side * batch.side;
    let mut pixels = Vec::with_capacity(batch.len() * 4 * plane);
    for k in 0..batch.len() {
        let img = batch.image(k);
        pixels.extend_from_slice(img);
        let (r, rest) = img.split_at(plane);
        let (g, b) = rest.split_at(plane);
        pixels.extend((0..plane).map(|p| {
            (LUMA_WEIGHTS[0] * r[p] as f64 + LUMA_WEIGHTS[1] * g[p] as f64 + LUMA_WEIGHTS[2] * b[p] as f64)
                as f32
        }));
    }
    Ok(ImageBatch {
        channels: 4,
        pixels,
        ..batch.clone_header()
    })
}

/// Block-average every channel down to `target_side × target_side`.
pub fn downsample_batch(batch: &ImageBatch, target_side: usize) -> Result<ImageBatch> {
    ensure!(
        target_side >= 1 && batch.side % target_side == 0,
        Precondition,
        "target side {target_side} does not divide image side {}",
        batch.side
    );
    let block = batch.side / target_side;
    let norm = 1.0 / (block * block) as f64;
    let mut pixels = Vec::with_capacity(batch.len() * batch.channels * target_side * target_side);
    for k in 0..batch.len() {
        for c in 0..batch.channels {
            let src = batch.channel(k, c);
            for r in 0..target_side {
                for col in 0..target_side {
                    let mut acc = 0.0f64;
                    for dr in 0..block {
                        let row = &src[(r * block + dr) * batch.side..];
                        acc += row[col * block..(col + 1) * block].iter().map(|&v| v as f64).sum::<f64>();
                    }
                    pixels.push((acc * norm) as f32);
                }
            }
        }
    }
    Ok(ImageBatch {
        side: target_side,
        pixels,
        ..batch.clone_header()
    })
}

impl ImageBatch {
    fn clone_header(&self) -> ImageBatch {
        ImageBatch {
            channels: self.channels,
            side: self.side,
            num_classes: self.num_classes,
            pixels: Vec::new(),
            labels: self.labels.clone(),
            meta: self.meta.clone(),
        }
    }
}

/// N×K one-hot label matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelIndicator {
    num_classes: usize,
    labels: Vec<usize>,
}

impl LabelIndicator {
    #[inline]
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, class: usize, k: usize) -> f64 {
        if self.labels[k] == class {
            1.0
        } else {
            0.0
        }
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_fn(self.num_classes, self.labels.len(), |n, k| self.get(n, k))
    }

    /// Columns at `indices`.
    pub fn select(&self, indices: &[usize]) -> LabelIndicator {
        LabelIndicator {
            num_classes: self.num_classes,
            labels: indices.iter().map(|&k| self.labels[k]).collect(),
        }
    }
}

pub fn make_label_indicator(labels: &[usize], num_classes: usize) -> Result<LabelIndicator> {
    if let Some(bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(crate::Error::Precondition(format!(
            "label {bad} outside 0..{num_classes}"
        )));
    }
    Ok(LabelIndicator {
        num_classes,
        labels: labels.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(channels: usize, side: usize, pixels: Vec<f32>, labels: Vec<usize>) -> ImageBatch {
        ImageBatch::new(channels, side, 10, pixels, labels, BatchMeta::default()).unwrap()
    }

    #[test]
    fn scale_maps_endpoints_and_midpoints() {
        let b = scale_pixels(&batch(1, 2, vec![0.0, 255.0, 51.0, 102.0], vec![3]));
        assert_eq!(b.pixels(), &[0.0, 1.0, 0.2, 0.4]);
        assert!(b.meta.scaled);
        assert_eq!(b.labels(), &[3]);
    }

    #[test]
    fn greyscale_of_grey_image_is_identity() {
        let v = 0.37f32;
        let b = add_greyscale_channel(&batch(3, 2, vec![v; 12], vec![0])).unwrap();
        assert_eq!(b.channels(), 4);
        for &g in b.channel(0, 3) {
            assert!((g - v).abs() < 1e-7);
        }
    }

    #[test]
    fn greyscale_of_pure_red() {
        let mut px = vec![0.0f32; 12];
        px[..4].fill(1.0);
        let b = add_greyscale_channel(&batch(3, 2, px, vec![0])).unwrap();
        for &g in b.channel(0, 3) {
            assert!((g as f64 - 0.299).abs() < 1e-7);
        }
    }

    #[test]
    fn greyscale_rejects_non_rgb() {
        assert!(add_greyscale_channel(&batch(1, 2, vec![0.0; 4], vec![0])).is_err());
    }

    #[test]
    fn downsample_constant_and_mean() {
        let b = downsample_batch(&batch(1, 4, vec![2.5; 16], vec![0]), 2).unwrap();
        assert_eq!(b.pixels(), &[2.5; 4]);
        let b = downsample_batch(&batch(1, 2, vec![1.0, 3.0, 5.0, 7.0], vec![0]), 1).unwrap();
        assert_eq!(b.pixels(), &[4.0]);
        assert!(downsample_batch(&batch(1, 4, vec![0.0; 16], vec![0]), 3).is_err());
    }

    #[test]
    fn indicator_one_hot() {
        let y = make_label_indicator(&[0, 2], 3).unwrap().to_matrix();
        assert_eq!(y.col(0), &[1.0, 0.0, 0.0]);
        assert_eq!(y.col(1), &[0.0, 0.0, 1.0]);
        let y = make_label_indicator(&[0; 5], 3).unwrap().to_matrix();
        assert_eq!(y.row(0), vec![1.0; 5]);
        assert_eq!(y.row(1), vec![0.0; 5]);
        assert!(make_label_indicator(&[3], 3).is_err());
    }

    #[test]
    fn batch_rejects_bad_labels_and_sizes() {
        assert!(ImageBatch::new(1, 2, 2, vec![0.0; 4], vec![2], BatchMeta::default()).is_err());
        assert!(ImageBatch::new(1, 2, 2, vec![0.0; 5], vec![0], BatchMeta::default()).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn indicator_columns_sum_to_one(labels in proptest::collection::vec(0usize..7, 1..60)) {
                let y = make_label_indicator(&labels, 7).unwrap().to_matrix();
                let mut nonzeros = 0;
                for k in 0..labels.len() {
                    prop_assert_eq!(y.col(k).iter().sum::<f64>(), 1.0);
                    prop_assert_eq!(y[(labels[k], k)], 1.0);
                    nonzeros += y.col(k).iter().filter(|&&v| v != 0.0).count();
                }
                prop_assert_eq!(nonzeros, labels.len());
            }

            #[test]
            fn downsample_preserves_channel_mean(
                px in proptest::collection::vec(0u8..=255, 2 * 36),
                target in prop::sample::select(vec![1usize, 2, 3, 6]),
            ) {
                // Integer-valued pixels keep every partial sum exact.
                let b = batch(2, 6, px.iter().map(|&v| v as f32).collect(), vec![0]);
                let d = downsample_batch(&b, target).unwrap();
                for c in 0..2 {
                    let before: f64 = b.channel(0, c).iter().map(|&v| v as f64).sum::<f64>() / 36.0;
                    let after: f64 = d.channel(0, c).iter().map(|&v| v as f64).sum::<f64>()
                        / (target * target) as f64;
                    prop_assert!((before - after).abs() <= 1e-6 * before.abs().max(1.0), "{before} vs {after}");
                }
            }
        }
    }
}
