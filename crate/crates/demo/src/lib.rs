//! WebAssembly bindings for the browser demo in `www/`.

use shallowconv::classifier::{evaluate, train, RidgeMode, TrainParams};
use shallowconv::dataset::{BatchMeta, ImageBatch};
use shallowconv::features::{extract_features, FeatureExtractorConfig};
use shallowconv::filterbank::{make_bar_filters, make_corner_filters, make_square_filters, FilterBank};
use shallowconv::{Error, Result};
use wasm_bindgen::prelude::*;

/// Side of the drawing canvas, as in MNIST.
pub const CANVAS_SIDE: usize = 28;
const TOY_SIDE: usize = 12;

/// Bars, corners (arm 4) and squares 3/4/5 on a 7×7 grid.
pub fn hand_bank(bars: usize, corners: usize, squares: bool) -> Result<FilterBank> {
    let mut parts = Vec::new();
    if bars > 0 {
        parts.push(make_bar_filters(bars, 7, 1)?);
    }
    if corners > 0 {
        parts.push(make_corner_filters(corners, 7, 4)?);
    }
    if squares {
        parts.push(make_square_filters(&[3, 4, 5], 7)?);
    }
    if parts.is_empty() {
        return Err(Error::Precondition("choose at least one filter".into()));
    }
    FilterBank::concat(&parts)
}

/// A filter bank flattened for drawing.
#[wasm_bindgen]
pub struct BankView {
    side: usize,
    coeffs: Vec<f32>,
    labels: Vec<String>,
}

#[wasm_bindgen]
impl BankView {
    pub fn count(&self) -> usize {
        self.labels.len()
    }

    pub fn side(&self) -> usize {
        self.side
    }

    /// Coefficients, filter-major then row-major.
    pub fn coeffs(&self) -> Vec<f32> {
        self.coeffs.clone()
    }

    pub fn label(&self, i: usize) -> String {
        self.labels.get(i).cloned().unwrap_or_default()
    }
}

pub fn bank_view(bars: usize, corners: usize, squares: bool) -> Result<BankView> {
    let bank = hand_bank(bars, corners, squares)?;
    Ok(BankView {
        side: bank.side(),
        coeffs: bank.coeffs().iter().map(|&v| v as f32).collect(),
        labels: bank.provenance().iter().map(|p| p.to_string()).collect(),
    })
}

/// Per-filter pooled and downsampled maps for one drawn image.
#[wasm_bindgen]
pub struct FeatureView {
    filters: usize,
    side: usize,
    values: Vec<f32>,
}

#[wasm_bindgen]
impl FeatureView {
    pub fn filters(&self) -> usize {
        self.filters
    }

    /// Side of each map.
    pub fn side(&self) -> usize {
        self.side
    }

    /// Maps, filter-major then row-major; each map sums to 1.
    pub fn values(&self) -> Vec<f32> {
        self.values.clone()
    }
}

fn single_image(pixels: &[f32], side: usize) -> Result<ImageBatch> {
    ImageBatch::new(1, side, 10, pixels.to_vec(), vec![0], BatchMeta::default())
}

pub fn feature_view(pixels: &[f32], bars: usize, corners: usize, q: usize, d: usize) -> Result<FeatureView> {
    if pixels.len() != CANVAS_SIDE * CANVAS_SIDE {
        return Err(Error::Precondition(format!(
            "expected {} pixels, got {}",
            CANVAS_SIDE * CANVAS_SIDE,
            pixels.len()
        )));
    }
    let bank = hand_bank(bars, corners, true)?;
    let cfg = FeatureExtractorConfig::new(7, q, d);
    let f = extract_features(&single_image(pixels, CANVAS_SIDE)?, &bank, &cfg)?;
    let side = cfg.kept_side(CANVAS_SIDE);
    let values = (0..bank.len()).flat_map(|i| f.block(0, i).iter().map(|&v| v as f32)).collect();
    Ok(FeatureView {
        filters: bank.len(),
        side,
        values,
    })
}

/// Toy strokes: four classes (horizontal, vertical, two diagonals) at random
/// offsets with additive noise, from a small xorshift generator.
pub fn toy_strokes(count: usize, seed: u64) -> Result<ImageBatch> {
    let mut state = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) | 1;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    let n = TOY_SIDE;
    let mut pixels = Vec::with_capacity(count * n * n);
    let mut labels = Vec::with_capacity(count);
    for k in 0..count {
        let class = k % 4;
        let shift = (next() % 5) as isize - 2;
        let mut img = vec![0.0f32; n * n];
        for t in 1..n - 1 {
            let (r, c) = match class {
                0 => (n as isize / 2 + shift, t as isize),
                1 => (t as isize, n as isize / 2 + shift),
                2 => (t as isize, t as isize + shift),
                _ => (t as isize, (n - 1 - t) as isize + shift),
            };
            if (0..n as isize).contains(&r) && (0..n as isize).contains(&c) {
                img[r as usize * n + c as usize] = 1.0;
            }
        }
        for p in img.iter_mut() {
            *p += (next() % 1000) as f32 / 1000.0 * 0.9;
        }
        pixels.extend(img);
        labels.push(class);
    }
    ImageBatch::new(1, n, 4, pixels, labels, BatchMeta::default())
}

/// Test error of the toy problem for each hidden size.
pub fn toy_capacity(hidden: &[usize], seed: u64) -> Result<Vec<f64>> {
    let bank = hand_bank(4, 4, true)?;
    let cfg = FeatureExtractorConfig::new(7, 4, 2);
    let train_set = toy_strokes(400, seed)?;
    let test_set = toy_strokes(200, seed.wrapping_add(1))?;
    let f_train = extract_features(&train_set, &bank, &cfg)?.into_values();
    let f_test = extract_features(&test_set, &bank, &cfg)?.into_values();
    hidden
        .iter()
        .map(|&m| {
            let params = TrainParams {
                hidden: m,
                seed,
                ridge: RidgeMode::Heuristic,
                intercept: false,
            };
            let (model, _) = train(&f_train, train_set.labels(), 4, &params)?;
            let (_, pred) = model.predict(&f_test)?;
            Ok(evaluate(&pred, test_set.labels(), 4)?.error_rate)
        })
        .collect()
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = filterBank)]
pub fn filter_bank_js(bars: usize, corners: usize, squares: bool) -> Result<BankView, JsError> {
    bank_view(bars, corners, squares).map_err(js)
}

#[wasm_bindgen(js_name = featureMaps)]
pub fn feature_maps_js(pixels: &[f32], bars: usize, corners: usize, q: usize, d: usize) -> Result<FeatureView, JsError> {
    feature_view(pixels, bars, corners, q, d).map_err(js)
}

#[wasm_bindgen(js_name = toyCapacity)]
pub fn toy_capacity_js(hidden: &[u32], seed: u32) -> Result<Vec<f64>, JsError> {
    let hidden: Vec<usize> = hidden.iter().map(|&m| m as usize).collect();
    toy_capacity(&hidden, seed as u64).map_err(js)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bank_counts() {
        let v = bank_view(4, 2, true).unwrap();
        assert_eq!((v.count(), v.side()), (9, 7));
        assert_eq!(v.coeffs().len(), 9 * 49);
        assert_eq!(v.label(0), "bar:0");
        assert!(bank_view(0, 0, false).is_err());
    }

    #[test]
    fn feature_maps_are_normalized() {
        let mut img = vec![0.0f32; 28 * 28];
        for r in 4..24 {
            img[r * 28 + 14] = 1.0;
        }
        let v = feature_view(&img, 4, 0, 8, 3).unwrap();
        assert_eq!((v.filters(), v.side()), (7, 10));
        for map in v.values().chunks(100) {
            let s: f32 = map.iter().sum();
            assert!((s - 1.0).abs() < 1e-4);
        }
        assert!(feature_view(&img[1..], 4, 0, 8, 3).is_err());
    }

    #[test]
    fn toy_problem_is_learnable() {
        let errs = toy_capacity(&[8, 64], 3).unwrap();
        assert_eq!(errs.len(), 2);
        assert!(errs[1] < 0.1, "{errs:?}");
    }
}
