//! Fixed stage-1 convolution filters.
//!
//! Every bank stores `P` filters of `C` channels, each channel a `W×W`
//! row-major slice with zero mean. Constructors zero-mean their output, so
//! the invariant holds for generated, sampled and imported banks alike.

mod io;
mod patches;
mod shapes;

pub use io::{decode_filters, encode_filters, load_filters_file, save_filters_file, FILTER_FILE_MAGIC};
pub(crate) use io::{decode_filters_with, encode_filters_with, FloatWidth};
pub use patches::sample_patch_filters;
pub use shapes::{make_bar_filters, make_corner_filters, make_square_filters, rotate_bilinear};

use std::fmt;
use std::str::FromStr;

use crate::dataset::LUMA_WEIGHTS;
use crate::error::{ensure, Error, Result};

/// Largest slice mean a bank may carry.
pub const ZERO_MEAN_TOL: f64 = 1e-9;

/// Where a filter came from.
#[derive(Debug, Clone, PartialEq)]
pub enum FilterSource {
    Bar { angle_deg: f64 },
    Corner { angle_deg: f64 },
    Square { size: usize },
    Patch { image: usize, class: usize },
    Imported,
}

impl fmt::Display for FilterSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FilterSource::Bar { angle_deg } => write!(f, "bar:{angle_deg}"),
            FilterSource::Corner { angle_deg } => write!(f, "corner:{angle_deg}"),
            FilterSource::Square { size } => write!(f, "square:{size}"),
            FilterSource::Patch { image, class } => write!(f, "patch:{image}:{class}"),
            FilterSource::Imported => f.write_str("imported"),
        }
    }
}

impl FromStr for FilterSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Format(format!("unrecognised filter provenance {s:?}"));
        let mut parts = s.split(':');
        let tag = parts.next().unwrap_or_default();
        let mut next = || parts.next().ok_or_else(bad);
        let src = match tag {
            "bar" => FilterSource::Bar { angle_deg: next()?.parse().map_err(|_| bad())? },
            "corner" => FilterSource::Corner { angle_deg: next()?.parse().map_err(|_| bad())? },
            "square" => FilterSource::Square { size: next()?.parse().map_err(|_| bad())? },
            "patch" => FilterSource::Patch {
                image: next()?.parse().map_err(|_| bad())?,
                class: next()?.parse().map_err(|_| bad())?,
            },
            "imported" => FilterSource::Imported,
            _ => return Err(bad()),
        };
        match parts.next() {
            None => Ok(src),
            Some(_) => Err(bad()),
        }
    }
}

impl FilterSource {
    pub fn tag(&self) -> &'static str {
        match self {
            FilterSource::Bar { .. } => "bar",
            FilterSource::Corner { .. } => "corner",
            FilterSource::Square { .. } => "square",
            FilterSource::Patch { .. } => "patch",
            FilterSource::Imported => "imported",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    channels: usize,
    side: usize,
    coeffs: Vec<f64>,
    provenance: Vec<FilterSource>,
}

impl FilterBank {
    /// Build a bank from raw coefficients, subtracting each slice's mean.
    pub fn new(channels: usize, side: usize, mut coeffs: Vec<f64>, provenance: Vec<FilterSource>) -> Result<Self> {
        ensure!(channels >= 1 && side >= 1, Precondition, "empty filter geometry");
        ensure!(
            coeffs.len() == provenance.len() * channels * side * side,
            Precondition,
            "{} coefficients do not match {} filters of {channels}x{side}x{side}",
            coeffs.len(),
            provenance.len()
        );
        for slice in coeffs.chunks_exact_mut(side * side) {
            zero_mean(slice);
        }
        Ok(FilterBank {
            channels,
            side,
            coeffs,
            provenance,
        })
    }

    /// Build a bank whose slices must already be zero-mean; nothing is
    /// altered, so stored coefficients survive bit for bit.
    pub(crate) fn from_zero_mean(
        channels: usize,
        side: usize,
        coeffs: Vec<f64>,
        provenance: Vec<FilterSource>,
    ) -> Result<Self> {
        ensure!(channels >= 1 && side >= 1, Format, "empty filter geometry");
        ensure!(
            coeffs.len() == provenance.len() * channels * side * side,
            Format,
            "{} coefficients do not match {} filters of {channels}x{side}x{side}",
            coeffs.len(),
            provenance.len()
        );
        let bank = FilterBank {
            channels,
            side,
            coeffs,
            provenance,
        };
        ensure!(
            bank.max_slice_mean() <= ZERO_MEAN_TOL,
            Format,
            "stored filter slice has mean {:e}",
            bank.max_slice_mean()
        );
        Ok(bank)
    }

    /// Replace the provenance tags, one per filter.
    pub fn with_provenance(mut self, provenance: Vec<FilterSource>) -> Result<Self> {
        ensure!(
            provenance.len() == self.len(),
            Consistency,
            "{} provenance tags for {} filters",
            provenance.len(),
            self.len()
        );
        self.provenance = provenance;
        Ok(self)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.provenance.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.provenance.is_empty()
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
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    #[inline]
    pub fn provenance(&self) -> &[FilterSource] {
        &self.provenance
    }

    /// Channel `c` of filter `i`, row-major `W×W`.
    #[inline]
    pub fn slice(&self, i: usize, c: usize) -> &[f64] {
        let plane = self.side * self.side;
        let start = (i * self.channels + c) * plane;
        &self.coeffs[start..start + plane]
    }

    /// Concatenate banks with matching geometry, in order.
    pub fn concat(banks: &[FilterBank]) -> Result<FilterBank> {
        let first = banks
            .first()
            .ok_or_else(|| Error::Precondition("no filter banks to concatenate".into()))?;
        let mut coeffs = Vec::new();
        let mut provenance = Vec::new();
        for b in banks {
            ensure!(
                b.side == first.side && b.channels == first.channels,
                Consistency,
                "cannot concatenate a {}-channel W={} bank with a {}-channel W={} bank",
                b.channels,
                b.side,
                first.channels,
                first.side
            );
            coeffs.extend_from_slice(&b.coeffs);
            provenance.extend(b.provenance.iter().cloned());
        }
        Ok(FilterBank {
            channels: first.channels,
            side: first.side,
            coeffs,
            provenance,
        })
    }

    /// Match the bank to a batch with `target` channels.
    ///
    /// RGB banks gain a luminance channel for RGB+grey batches, and
    /// single-channel banks are replicated across every channel. `strict`
    /// turns both adaptations into errors.
    pub fn adapt_channels(&self, target: usize, strict: bool) -> Result<FilterBank> {
        if self.channels == target {
            return Ok(self.clone());
        }
        let adaptable = (self.channels == 3 && target == 4) || self.channels == 1;
        if strict || !adaptable {
            return Err(Error::Consistency(format!(
                "filter bank has {} channels, batch has {target}",
                self.channels
            )));
        }
        let plane = self.side * self.side;
        let mut coeffs = Vec::with_capacity(self.len() * target * plane);
        if self.channels == 1 {
            for i in 0..self.len() {
                for _ in 0..target {
                    coeffs.extend_from_slice(self.slice(i, 0));
                }
            }
        } else {
            let grey = rgb_filter_to_grey(self)?;
            for i in 0..self.len() {
                for c in 0..3 {
                    coeffs.extend_from_slice(self.slice(i, c));
                }
                coeffs.extend_from_slice(grey.slice(i, 0));
            }
        }
        Ok(FilterBank {
            channels: target,
            side: self.side,
            coeffs,
            provenance: self.provenance.clone(),
        })
    }

    /// Largest |mean| over all slices.
    pub fn max_slice_mean(&self) -> f64 {
        self.coeffs
            .chunks_exact(self.side * self.side)
            .map(|s| (s.iter().sum::<f64>() / s.len() as f64).abs())
            .fold(0.0, f64::max)
    }
}

fn zero_mean(slice: &mut [f64]) {
    let mean = slice.iter().sum::<f64>() / slice.len() as f64;
    slice.iter_mut().for_each(|v| *v -= mean);
}

/// Collapse an RGB bank to one luminance channel.
pub fn rgb_filter_to_grey(bank: &FilterBank) -> Result<FilterBank> {
    ensure!(
        bank.channels == 3,
        Precondition,
        "greyscale conversion needs a 3-channel bank, got {}",
        bank.channels
    );
    let plane = bank.side * bank.side;
    let mut coeffs = Vec::with_capacity(bank.len() * plane);
    for i in 0..bank.len() {
        let (r, g, b) = (bank.slice(i, 0), bank.slice(i, 1), bank.slice(i, 2));
        coeffs.extend((0..plane).map(|p| LUMA_WEIGHTS[0] * r[p] + LUMA_WEIGHTS[1] * g[p] + LUMA_WEIGHTS[2] * b[p]));
    }
    FilterBank::new(1, bank.side, coeffs, bank.provenance.clone())
}
