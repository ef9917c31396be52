use crate::dataset::{add_greyscale_channel, downsample_batch, scale_pixels, zca_apply, zca_fit, ImageBatch, ZcaTransform};
use crate::error::{ensure, Result};

use super::config::PreprocessConfig;

/// Fitted preprocessing: scale, greyscale, downsample, then ZCA.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessing {
    pub scale: bool,
    pub greyscale: bool,
    pub downsample: Option<usize>,
    pub zca: Option<ZcaTransform>,
}

impl Preprocessing {
    /// Fit on `train` and return the transformed training batch.
    pub fn fit(cfg: &PreprocessConfig, train: &ImageBatch) -> Result<(Self, ImageBatch)> {
        let mut prep = Preprocessing {
            scale: cfg.scale,
            greyscale: cfg.greyscale,
            downsample: cfg.downsample,
            zca: None,
        };
        let out = prep.apply_fixed(train)?;
        if cfg.zca {
            let t = zca_fit(&out, cfg.zca_epsilon)?;
            let out = zca_apply(&out, &t)?;
            prep.zca = Some(t);
            return Ok((prep, out));
        }
        Ok((prep, out))
    }

    fn apply_fixed(&self, batch: &ImageBatch) -> Result<ImageBatch> {
        let mut out = if self.scale { scale_pixels(batch) } else { batch.clone() };
        if self.greyscale {
            out = add_greyscale_channel(&out)?;
        }
        if let Some(side) = self.downsample {
            out = downsample_batch(&out, side)?;
        }
        Ok(out)
    }

    pub fn apply(&self, batch: &ImageBatch) -> Result<ImageBatch> {
        let out = self.apply_fixed(batch)?;
        match &self.zca {
            Some(t) => zca_apply(&out, t),
            None => Ok(out),
        }
    }

    /// `(channels, side)` after preprocessing images of the given raw shape.
    pub fn output_shape(&self, channels: usize, side: usize) -> Result<(usize, usize)> {
        let channels = if self.greyscale {
            ensure!(channels == 3, Consistency, "greyscale needs 3 input channels, dataset has {channels}");
            4
        } else {
            channels
        };
        let side = match self.downsample {
            Some(s) => {
                ensure!(s >= 1 && side % s == 0, Consistency, "downsample target {s} does not divide image side {side}");
                s
            }
            None => side,
        };
        Ok((channels, side))
    }
}
