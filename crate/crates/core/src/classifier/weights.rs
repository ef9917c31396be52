//! Input weights built from differences of training examples.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::FeatureColumns;
use crate::error::{ensure, Error, Result};
use crate::linalg::Matrix;

/// Resamples allowed per row when a pair's features coincide.
pub const MAX_PAIR_RETRIES: usize = 100;

/// Rows are resolved this many at a time, bounding how many feature
/// columns are materialized at once.
const ROW_CHUNK: usize = 256;

/// Uniform pair `(a, b)` of training indices with different labels.
fn sample_pair(rng: &mut ChaCha8Rng, labels: &[usize]) -> (usize, usize) {
    let k = labels.len();
    let a = rng.random_range(0..k);
    loop {
        let b = rng.random_range(0..k);
        if labels[b] != labels[a] {
            return (a, b);
        }
    }
}

/// `M×L̂` input weights: row `m` is `(f_a − f_b) / ‖f_a − f_b‖` for a random
/// pair of training examples from distinct classes.
///
/// Pairs are drawn from the labels first and only the chosen columns are
/// requested from `features`, so features may be computed lazily.
pub fn generate_input_weights(
    features: &impl FeatureColumns,
    labels: &[usize],
    m: usize,
    seed: u64,
) -> Result<Matrix> {
    ensure!(m >= 1, Precondition, "need at least one hidden unit");
    ensure!(
        labels.len() == features.len(),
        Precondition,
        "{} labels for {} feature columns",
        labels.len(),
        features.len()
    );
    ensure!(
        labels.iter().any(|&l| l != labels[0]),
        Precondition,
        "input weights need at least two classes among the training labels"
    );
    let l = features.feature_len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w_in = Matrix::zeros(m, l);

    for start in (0..m).step_by(ROW_CHUNK) {
        let mut pending: Vec<usize> = (start..(start + ROW_CHUNK).min(m)).collect();
        for _attempt in 0..=MAX_PAIR_RETRIES {
            if pending.is_empty() {
                break;
            }
            let pairs: Vec<(usize, usize)> = pending.iter().map(|_| sample_pair(&mut rng, labels)).collect();
            let mut wanted: Vec<usize> = pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
            wanted.sort_unstable();
            wanted.dedup();
            let cols = features.columns(&wanted)?;
            let col = |k: usize| cols.col(wanted.binary_search(&k).expect("requested column"));

            let mut still = Vec::new();
            for (&row, &(a, b)) in pending.iter().zip(&pairs) {
                let diff: Vec<f64> = col(a).iter().zip(col(b)).map(|(x, y)| x - y).collect();
                let norm = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 && norm.is_finite() {
                    for (j, v) in diff.iter().enumerate() {
                        w_in[(row, j)] = v / norm;
                    }
                } else {
                    still.push(row);
                }
            }
            pending = still;
        }
        if let Some(&row) = pending.first() {
            return Err(Error::DegenerateData(format!(
                "row {row}: every sampled pair from distinct classes had identical features after {MAX_PAIR_RETRIES} retries"
            )));
        }
    }
    Ok(w_in)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_difference() {
        let f = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let w = generate_input_weights(&f, &[0, 1], 4, 3).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        for r in 0..4 {
            let row = w.row(r);
            // Either ordering of the pair is a valid draw.
            let sign = row[0].signum();
            assert!((row[0] - sign * h).abs() < 1e-15 && (row[1] + sign * h).abs() < 1e-15);
        }
    }

    #[test]
    fn rows_are_unit_norm_and_seeded() {
        let f = Matrix::from_fn(6, 20, |i, j| ((i * 7 + j * 3) % 5) as f64 + 0.1 * j as f64);
        let labels: Vec<usize> = (0..20).map(|j| j % 3).collect();
        let w = generate_input_weights(&f, &labels, 50, 9).unwrap();
        for r in 0..50 {
            let n: f64 = w.row(r).iter().map(|v| v * v).sum();
            assert!((n.sqrt() - 1.0).abs() < 1e-9);
        }
        assert_eq!(w, generate_input_weights(&f, &labels, 50, 9).unwrap());
        assert_ne!(w, generate_input_weights(&f, &labels, 50, 10).unwrap());
    }

    #[test]
    fn rows_differ_across_chunks() {
        let f = Matrix::from_fn(3, 40, |i, j| ((i + 1) * j) as f64 + (j % 7) as f64);
        let labels: Vec<usize> = (0..40).map(|j| j % 2).collect();
        let w = generate_input_weights(&f, &labels, 600, 1).unwrap();
        assert_ne!(w.row(0), w.row(ROW_CHUNK));
    }

    #[test]
    fn duplicates_are_resampled() {
        // Columns 0 and 1 coincide; only pairs involving column 2 are usable.
        let f = Matrix::from_rows(&[&[1.0, 1.0, 0.0], &[0.0, 0.0, 2.0]]);
        let w = generate_input_weights(&f, &[0, 1, 1], 30, 5).unwrap();
        for r in 0..30 {
            assert!(w[(r, 0)].abs() > 0.1);
        }
    }

    #[test]
    fn degenerate_and_invalid_input() {
        let f = Matrix::from_rows(&[&[1.0, 1.0, 1.0]]);
        assert!(matches!(
            generate_input_weights(&f, &[0, 1, 2], 1, 0),
            Err(Error::DegenerateData(_))
        ));
        assert!(matches!(generate_input_weights(&f, &[1, 1, 1], 1, 0), Err(Error::Precondition(_))));
        assert!(generate_input_weights(&f, &[0, 1], 1, 0).is_err());
        assert!(generate_input_weights(&f, &[0, 1, 1], 0, 0).is_err());
    }
}
