//! MNIST in the IDX format: big-endian u32 magic, u32 dimension sizes, then
//! raw unsigned bytes.

use std::io::ErrorKind;
use std::path::Path;

use super::{BatchMeta, ImageBatch};
use crate::error::{ensure, Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 2051;
pub const IDX_LABELS_MAGIC: u32 = 2049;

const MNIST_CLASSES: usize = 10;

fn read_u32_be(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| truncated(format!("header of {what} ends at byte {}", bytes.len())))
}

fn truncated(msg: String) -> Error {
    Error::Io {
        path: "<idx>".into(),
        source: std::io::Error::new(ErrorKind::UnexpectedEof, msg),
    }
}

fn check_payload(bytes: &[u8], header: usize, expected: usize, what: &str) -> Result<()> {
    let have = bytes.len() - header;
    if have < expected {
        return Err(truncated(format!(
            "{what} payload has {have} bytes, header declares {expected}"
        )));
    }
    ensure!(
        have == expected,
        Format,
        "{what} has {} trailing bytes beyond the declared payload",
        have - expected
    );
    Ok(())
}

/// Parse an IDX3 image file into `(count, side, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, &[u8])> {
    let magic = read_u32_be(bytes, 0, "image file")?;
    ensure!(
        magic == IDX_IMAGES_MAGIC,
        Format,
        "image file magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"
    );
    let count = read_u32_be(bytes, 4, "image file")? as usize;
    let rows = read_u32_be(bytes, 8, "image file")? as usize;
    let cols = read_u32_be(bytes, 12, "image file")? as usize;
    ensure!(
        rows == cols && rows > 0,
        Format,
        "images must be square and non-empty, got {rows}x{cols}"
    );
    let expected = count
        .checked_mul(rows * cols)
        .ok_or_else(|| Error::Format("image file dimensions overflow".into()))?;
    check_payload(bytes, 16, expected, "image file")?;
    Ok((count, rows, &bytes[16..]))
}

/// Parse an IDX1 label file.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = read_u32_be(bytes, 0, "label file")?;
    ensure!(
        magic == IDX_LABELS_MAGIC,
        Format,
        "label file magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"
    );
    let count = read_u32_be(bytes, 4, "label file")? as usize;
    check_payload(bytes, 8, count, "label file")?;
    Ok(&bytes[8..])
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    }
}

/// Load an MNIST split. Pixels stay as raw 0..255 values.
pub fn load_mnist(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<ImageBatch> {
    let (images_path, labels_path) = (images_path.as_ref(), labels_path.as_ref());
    let image_bytes = read_file(images_path)?;
    let label_bytes = read_file(labels_path)?;
    let (count, side, raw) = parse_idx_images(&image_bytes).map_err(|e| with_path(e, images_path))?;
    let labels = parse_idx_labels(&label_bytes).map_err(|e| with_path(e, labels_path))?;
    ensure!(
        labels.len() == count,
        Consistency,
        "{} holds {count} images but {} holds {} labels",
        images_path.display(),
        labels_path.display(),
        labels.len()
    );
    if let Some(bad) = labels.iter().find(|&&l| l as usize >= MNIST_CLASSES) {
        return Err(Error::Format(format!("label byte {bad} is not a digit class")));
    }
    let split = if count == 10_000 { "test" } else { "train" };
    ImageBatch::new(
        1,
        side,
        MNIST_CLASSES,
        raw.iter().map(|&b| b as f32).collect(),
        labels.iter().map(|&l| l as usize).collect(),
        BatchMeta {
            dataset: "mnist".into(),
            split: split.into(),
            ..Default::default()
        },
    )
}
