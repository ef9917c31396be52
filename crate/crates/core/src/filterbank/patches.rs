//! Filters cropped from the centre of randomly chosen training images.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{FilterBank, FilterSource};
use crate::dataset::ImageBatch;
use crate::error::{ensure, Result};

/// `p` filters, each the central `w×w` crop (all channels) of a distinct
/// training image. Every class contributes `p / N` images and the first
/// `p mod N` classes one more. Filters are ordered by class.
pub fn sample_patch_filters(train: &ImageBatch, p: usize, w: usize, seed: u64) -> Result<FilterBank> {
    ensure!(p >= 1, Precondition, "need at least one patch filter");
    ensure!(
        p <= train.len(),
        Precondition,
        "{p} patch filters requested from {} training images",
        train.len()
    );
    let (j, channels) = (train.side(), train.channels());
    ensure!(w >= 1 && w <= j, Precondition, "patch side {w} does not fit {j}x{j} images");
    let n = train.num_classes();
    let mut by_class = vec![Vec::new(); n];
    for (k, &label) in train.labels().iter().enumerate() {
        by_class[label].push(k);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset = (j - w) / 2;
    let mut coeffs = Vec::with_capacity(p * channels * w * w);
    let mut provenance = Vec::with_capacity(p);
    for (class, members) in by_class.iter().enumerate() {
        let quota = p / n + usize::from(class < p % n);
        ensure!(
            quota <= members.len(),
            Precondition,
            "class {class} has {} training images, {quota} patch filters needed",
            members.len()
        );
        for pick in rand::seq::index::sample(&mut rng, members.len(), quota) {
            let k = members[pick];
            for c in 0..channels {
                let plane = train.channel(k, c);
                for r in offset..offset + w {
                    coeffs.extend(plane[r * j + offset..r * j + offset + w].iter().map(|&v| v as f64));
                }
            }
            provenance.push(FilterSource::Patch { image: k, class });
        }
    }
    FilterBank::new(channels, w, coeffs, provenance)
}
