//! Binary filter files: `"SCNF"`, then little-endian u32 `P`, `C`, `W`, then
//! `P·C·W²` little-endian floats, filter-major, channel-minor, row-major.
//!
//! Files hold 32-bit floats. Model containers reuse the layout with 64-bit
//! floats so a trained bank is restored exactly.

use std::path::Path;

use super::{FilterBank, FilterSource};
use crate::error::{ensure, Error, Result};

pub const FILTER_FILE_MAGIC: [u8; 4] = *b"SCNF";
const HEADER_BYTES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum FloatWidth {
    F32,
    F64,
}

impl FloatWidth {
    fn bytes(self) -> usize {
        match self {
            FloatWidth::F32 => 4,
            FloatWidth::F64 => 8,
        }
    }
}

fn dim(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{what} = {v} does not fit the header")))
}

pub(crate) fn encode_filters_with(bank: &FilterBank, width: FloatWidth) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HEADER_BYTES + bank.coeffs().len() * width.bytes());
    out.extend_from_slice(&FILTER_FILE_MAGIC);
    out.extend_from_slice(&dim(bank.len(), "P")?.to_le_bytes());
    out.extend_from_slice(&dim(bank.channels(), "C")?.to_le_bytes());
    out.extend_from_slice(&dim(bank.side(), "W")?.to_le_bytes());
    for &v in bank.coeffs() {
        match width {
            FloatWidth::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            FloatWidth::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    Ok(out)
}

/// Decode a filter payload. 32-bit payloads are zero-meaned and tagged as
/// imported; 64-bit payloads must already be zero-mean and are kept as is.
pub(crate) fn decode_filters_with(bytes: &[u8], width: FloatWidth) -> Result<FilterBank> {
    ensure!(
        bytes.len() >= HEADER_BYTES,
        Format,
        "filter file is {} bytes, shorter than its {HEADER_BYTES}-byte header",
        bytes.len()
    );
    ensure!(
        bytes[..4] == FILTER_FILE_MAGIC,
        Format,
        "filter file magic {:?}, expected \"SCNF\"",
        String::from_utf8_lossy(&bytes[..4])
    );
    let field = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap()) as usize;
    let (p, c, w) = (field(1), field(2), field(3));
    ensure!(p >= 1 && c >= 1 && w >= 1, Format, "filter file declares P={p}, C={c}, W={w}");
    let count = p
        .checked_mul(c)
        .and_then(|n| n.checked_mul(w))
        .and_then(|n| n.checked_mul(w))
        .ok_or_else(|| Error::Format("filter file dimensions overflow".into()))?;
    let payload = &bytes[HEADER_BYTES..];
    ensure!(
        Some(payload.len()) == count.checked_mul(width.bytes()),
        Format,
        "filter payload is {} bytes, header declares {count} values of {} bytes",
        payload.len(),
        width.bytes()
    );
    let coeffs: Vec<f64> = match width {
        FloatWidth::F32 => payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect(),
        FloatWidth::F64 => payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect(),
    };
    ensure!(
        coeffs.iter().all(|v| v.is_finite()),
        Format,
        "filter payload contains non-finite values"
    );
    let provenance = vec![FilterSource::Imported; p];
    match width {
        FloatWidth::F32 => FilterBank::new(c, w, coeffs, provenance),
        FloatWidth::F64 => FilterBank::from_zero_mean(c, w, coeffs, provenance),
    }
}

/// Serialize a bank in the 32-bit filter file format.
pub fn encode_filters(bank: &FilterBank) -> Result<Vec<u8>> {
    encode_filters_with(bank, FloatWidth::F32)
}

/// Parse the 32-bit filter file format; slices are zero-meaned on load.
pub fn decode_filters(bytes: &[u8]) -> Result<FilterBank> {
    decode_filters_with(bytes, FloatWidth::F32)
}

pub fn save_filters_file(bank: &FilterBank, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_filters(bank)?).map_err(|e| Error::io(path, e))
}

pub fn load_filters_file(path: impl AsRef<Path>) -> Result<FilterBank> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_filters(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}
