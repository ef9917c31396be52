//! Hand-designed filters: rotated bars and corners, centred squares.
//!
//! Shapes are rasterized as binary W×W images (amplitude 1), rotated about
//! the grid centre with bilinear interpolation (samples falling outside
//! the source read as 0), then zero-meaned. Odd-sized leftovers when
//! centring a shape go toward the top-left.

use super::{FilterBank, FilterSource};
use crate::error::{ensure, Result};

/// Offset that centres a run of `len` cells in `side`, leftover to the top-left.
fn centred_offset(side: usize, len: usize) -> usize {
    (side - len) / 2
}

/// Snap coordinates that are integers up to rounding noise.
fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

/// Rotate a row-major `side×side` image counter-clockwise (as displayed)
/// by `angle_deg` about its centre.
pub fn rotate_bilinear(src: &[f64], side: usize, angle_deg: f64) -> Vec<f64> {
    assert_eq!(src.len(), side * side);
    let centre = (side as f64 - 1.0) / 2.0;
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let at = |r: isize, c: isize| -> f64 {
        if r < 0 || c < 0 || r >= side as isize || c >= side as isize {
            0.0
        } else {
            src[r as usize * side + c as usize]
        }
    };
    let mut out = vec![0.0; side * side];
    for r in 0..side {
        for c in 0..side {
            let x = c as f64 - centre;
            let y_up = centre - r as f64;
            // Inverse rotation maps the output cell back into the source.
            let xs = cos * x + sin * y_up;
            let ys = -sin * x + cos * y_up;
            let row = snap(centre - ys);
            let col = snap(centre + xs);
            let (r0, c0) = (row.floor(), col.floor());
            let (fr, fc) = (row - r0, col - c0);
            let (r0, c0) = (r0 as isize, c0 as isize);
            out[r * side + c] = (1.0 - fr) * (1.0 - fc) * at(r0, c0)
                + (1.0 - fr) * fc * at(r0, c0 + 1)
                + fr * (1.0 - fc) * at(r0 + 1, c0)
                + fr * fc * at(r0 + 1, c0 + 1);
        }
    }
    out
}

/// `count` bars of width `bar_width` through the centre, at angles
/// `j·180°/count`.
pub fn make_bar_filters(count: usize, side: usize, bar_width: usize) -> Result<FilterBank> {
    ensure!(count >= 1, Precondition, "need at least one bar filter");
    ensure!(side >= 3, Precondition, "bar filters need W >= 3, got {side}");
    ensure!(
        bar_width >= 1 && bar_width <= side,
        Precondition,
        "bar width {bar_width} does not fit W={side}"
    );
    let mut base = vec![0.0; side * side];
    let top = centred_offset(side, bar_width);
    base[top * side..(top + bar_width) * side].fill(1.0);
    let mut coeffs = Vec::with_capacity(count * side * side);
    let mut provenance = Vec::with_capacity(count);
    for j in 0..count {
        let angle = j as f64 * 180.0 / count as f64;
        coeffs.extend(rotate_bilinear(&base, side, angle));
        provenance.push(FilterSource::Bar { angle_deg: angle });
    }
    FilterBank::new(1, side, coeffs, provenance)
}

/// `count` L-shaped corners with two width-1 arms of `arm_length` cells
/// sharing the vertex cell, at angles `j·360°/count`. The unrotated corner
/// has its vertex top-left with arms running right and down, and its
/// bounding box centred in the grid.
pub fn make_corner_filters(count: usize, side: usize, arm_length: usize) -> Result<FilterBank> {
    ensure!(count >= 1, Precondition, "need at least one corner filter");
    ensure!(
        arm_length >= 1 && arm_length <= side,
        Precondition,
        "corner arm {arm_length} does not fit W={side}"
    );
    let mut base = vec![0.0; side * side];
    let o = centred_offset(side, arm_length);
    for t in 0..arm_length {
        base[o * side + o + t] = 1.0;
        base[(o + t) * side + o] = 1.0;
    }
    let mut coeffs = Vec::with_capacity(count * side * side);
    let mut provenance = Vec::with_capacity(count);
    for j in 0..count {
        let angle = j as f64 * 360.0 / count as f64;
        coeffs.extend(rotate_bilinear(&base, side, angle));
        provenance.push(FilterSource::Corner { angle_deg: angle });
    }
    FilterBank::new(1, side, coeffs, provenance)
}

/// One centre-surround filter per size: a centred block of ones, zero-meaned.
pub fn make_square_filters(sizes: &[usize], side: usize) -> Result<FilterBank> {
    ensure!(!sizes.is_empty(), Precondition, "need at least one square size");
    let mut coeffs = Vec::with_capacity(sizes.len() * side * side);
    for &size in sizes {
        ensure!(
            size >= 1 && size <= side,
            Precondition,
            "square of size {size} does not fit W={side}"
        );
        let o = centred_offset(side, size);
        let mut f = vec![0.0; side * side];
        for r in o..o + size {
            f[r * side + o..r * side + o + size].fill(1.0);
        }
        coeffs.extend(f);
    }
    let provenance = sizes.iter().map(|&size| FilterSource::Square { size }).collect();
    FilterBank::new(1, side, coeffs, provenance)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Exact quarter-turn counter-clockwise: out[i][j] = in[j][n-1-i].
    fn rot90(src: &[f64], n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = src[j * n + (n - 1 - i)];
            }
        }
        out
    }

    fn transpose(src: &[f64], n: usize) -> Vec<f64> {
        (0..n * n).map(|p| src[(p % n) * n + p / n]).collect()
    }

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn single_bar_w3() {
        let bank = make_bar_filters(1, 3, 1).unwrap();
        let f = bank.slice(0, 0);
        for (p, &v) in f.iter().enumerate() {
            let expect = if p / 3 == 1 { 2.0 / 3.0 } else { -1.0 / 3.0 };
            assert!((v - expect).abs() < 1e-15, "cell {p}: {v}");
        }
    }

    #[test]
    fn bar_angles_and_quarter_turn() {
        let bank = make_bar_filters(4, 7, 1).unwrap();
        let angles: Vec<f64> = bank
            .provenance()
            .iter()
            .map(|s| match s {
                FilterSource::Bar { angle_deg } => *angle_deg,
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(angles, vec![0.0, 45.0, 90.0, 135.0]);
        assert!(max_diff(bank.slice(2, 0), &transpose(bank.slice(0, 0), 7)) < 1e-6);
    }

    #[test]
    fn corner_cell_count() {
        let bank = make_corner_filters(1, 4, 4).unwrap();
        let f = bank.slice(0, 0);
        // Zero-meaning shifts "on" cells to 1 − 7/16.
        let on = f.iter().filter(|&&v| (v - (1.0 - 7.0 / 16.0)).abs() < 1e-12).count();
        assert_eq!(on, 7);
    }

    #[test]
    fn corner_quarter_turn_is_exact_rotation() {
        for side in [4, 7] {
            let bank = make_corner_filters(4, side, 4).unwrap();
            for j in 0..3 {
                let expect = rot90(bank.slice(j, 0), side);
                assert!(max_diff(bank.slice(j + 1, 0), &expect) < 1e-6, "W={side} step {j}");
            }
        }
    }

    #[test]
    fn squares() {
        let bank = make_square_filters(&[3], 7).unwrap();
        let f = bank.slice(0, 0);
        let hi = f.iter().filter(|&&v| (v - (1.0 - 9.0 / 49.0)).abs() < 1e-12).count();
        let lo = f.iter().filter(|&&v| (v + 9.0 / 49.0).abs() < 1e-12).count();
        assert_eq!((hi, lo), (9, 40));
        assert_eq!(make_square_filters(&[3, 4, 5], 7).unwrap().len(), 3);
        // Even block on odd grid: rows/cols 1..=4, leftover toward the top-left.
        let even = make_square_filters(&[4], 7).unwrap();
        let f = even.slice(0, 0);
        assert!(f[7 + 1] > 0.0 && f[4 * 7 + 4] > 0.0 && f[5 * 7 + 5] < 0.0 && f[0] < 0.0);
        assert!(even.max_slice_mean() < 1e-9);
        assert!(make_square_filters(&[8], 7).is_err());
    }

    #[test]
    fn rotation_of_multiples_of_90_is_exact() {
        let src: Vec<f64> = (0..36).map(|v| (v * 7 % 11) as f64).collect();
        let mut expect = src.clone();
        for k in 1..4 {
            expect = rot90(&expect, 6);
            assert!(max_diff(&rotate_bilinear(&src, 6, 90.0 * k as f64), &expect) < 1e-6);
        }
        assert!(max_diff(&rotate_bilinear(&src, 6, 0.0), &src) < 1e-12);
    }

    #[test]
    fn preconditions() {
        assert!(make_bar_filters(0, 7, 1).is_err());
        assert!(make_bar_filters(1, 2, 1).is_err());
        assert!(make_corner_filters(1, 3, 4).is_err());
    }

    #[test]
    fn generated_banks_are_zero_mean() {
        let banks = [
            make_bar_filters(20, 7, 1).unwrap(),
            make_corner_filters(20, 7, 4).unwrap(),
            make_square_filters(&[3, 4, 5], 7).unwrap(),
        ];
        for b in &banks {
            assert!(b.max_slice_mean() < 1e-9);
        }
    }
}
