//! CIFAR-10 binary batches: records of one label byte followed by 1024 red,
//! 1024 green and 1024 blue bytes, each plane row-major.

use std::path::Path;

use super::{BatchMeta, ImageBatch};
use crate::error::{ensure, Error, Result};

pub const CIFAR10_RECORD_BYTES: usize = 1 + 3 * 1024;
const CIFAR10_CLASSES: usize = 10;
const CIFAR10_SIDE: usize = 32;

/// Decode one or more concatenated records.
pub fn parse_cifar10(bytes: &[u8]) -> Result<(Vec<f32>, Vec<usize>)> {
    ensure!(
        bytes.len() % CIFAR10_RECORD_BYTES == 0,
        Format,
        "{} bytes is not a whole number of {CIFAR10_RECORD_BYTES}-byte records",
        bytes.len()
    );
    let n = bytes.len() / CIFAR10_RECORD_BYTES;
    let mut pixels = Vec::with_capacity(n * (CIFAR10_RECORD_BYTES - 1));
    let mut labels = Vec::with_capacity(n);
    for (i, rec) in bytes.chunks_exact(CIFAR10_RECORD_BYTES).enumerate() {
        let label = rec[0] as usize;
        ensure!(
            label < CIFAR10_CLASSES,
            Format,
            "record {i} has label byte {label}, expected 0..{CIFAR10_CLASSES}"
        );
        labels.push(label);
        pixels.extend(rec[1..].iter().map(|&b| b as f32));
    }
    Ok((pixels, labels))
}

/// Load and concatenate CIFAR-10 batch files. Pixels stay as raw 0..255.
pub fn load_cifar10<P: AsRef<Path>>(batch_paths: &[P]) -> Result<ImageBatch> {
    ensure!(!batch_paths.is_empty(), Precondition, "no CIFAR-10 batch files given");
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for path in batch_paths {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let (p, l) = parse_cifar10(&bytes).map_err(|e| match e {
            Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        pixels.extend(p);
        labels.extend(l);
    }
    let split = match batch_paths.first().and_then(|p| p.as_ref().file_name()) {
        Some(name) if name.to_string_lossy().starts_with("test") => "test",
        _ => "train",
    };
    ImageBatch::new(
        3,
        CIFAR10_SIDE,
        CIFAR10_CLASSES,
        pixels,
        labels,
        BatchMeta {
            dataset: "cifar10".into(),
            split: split.into(),
            ..Default::default()
        },
    )
}
