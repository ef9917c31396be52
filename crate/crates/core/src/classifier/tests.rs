use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::dataset::{make_label_indicator, LabelIndicator};
use crate::linalg::matmul_nt;

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn random_labels(k: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    // Every class present at least once.
    (0..k).map(|j| if j < n { j } else { rng.random_range(0..n) }).collect()
}

/// Inverse by Gauss-Jordan elimination with partial pivoting.
fn gauss_jordan_inverse(m: &Matrix) -> Matrix {
    let n = m.rows();
    let mut a = m.clone();
    let mut inv = Matrix::identity(n);
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[(i, col)].abs().total_cmp(&a[(j, col)].abs())).unwrap();
        for j in 0..n {
            let (t, u) = (a[(col, j)], inv[(col, j)]);
            a[(col, j)] = a[(pivot, j)];
            inv[(col, j)] = inv[(pivot, j)];
            a[(pivot, j)] = t;
            inv[(pivot, j)] = u;
        }
        let p = a[(col, col)];
        for j in 0..n {
            a[(col, j)] /= p;
            inv[(col, j)] /= p;
        }
        for i in 0..n {
            if i != col {
                let f = a[(i, col)];
                for j in 0..n {
                    a[(i, j)] -= f * a[(col, j)];
                    inv[(i, j)] -= f * inv[(col, j)];
                }
            }
        }
    }
    inv
}

/// `Y Aᵀ (A Aᵀ + cI)⁻¹` assembled from dense products.
fn dense_oracle(a: &Matrix, y: &LabelIndicator, c: f64) -> Matrix {
    let mut g = matmul_nt(a, a);
    for i in 0..g.rows() {
        g[(i, i)] += c;
    }
    matmul(&matmul_nt(&y.to_matrix(), a), &gauss_jordan_inverse(&g))
}

fn objective(w: &Matrix, a: &Matrix, y: &Matrix, c: f64) -> f64 {
    let r = matmul(w, a);
    let resid: f64 = r.as_slice().iter().zip(y.as_slice()).map(|(p, t)| (p - t).powi(2)).sum();
    resid + c * w.frobenius_sq()
}

#[test]
fn solve_matches_dense_inverse_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random_matrix(4, 12, &mut rng);
    let y = make_label_indicator(&random_labels(12, 3, &mut rng), 3).unwrap();
    let w = solve_output_weights(&a, &y, 0.1).unwrap();
    assert!(w.max_abs_diff(&dense_oracle(&a, &y, 0.1)) < 1e-10);
}

#[test]
fn solve_matches_oracle_on_twenty_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let m = rng.random_range(2..=50);
        let k = m + rng.random_range(5..60);
        let n = rng.random_range(2..=6);
        let a = random_matrix(m, k, &mut rng);
        let y = make_label_indicator(&random_labels(k, n, &mut rng), n).unwrap();
        let c = 10f64.powf(rng.random_range(-3.0..1.0));
        let w = solve_output_weights(&a, &y, c).unwrap();
        let o = dense_oracle(&a, &y, c);
        let scale = o.as_slice().iter().fold(1.0f64, |s, v| s.max(v.abs()));
        assert!(w.max_abs_diff(&o) <= 1e-10 * scale, "M={m} K={k} c={c}");
    }
}

#[test]
fn orthonormal_rows_give_y_at() {
    // Rows of A are orthonormal: A Aᵀ = I.
    let a = Matrix::from_rows(&[&[1.0, 0.0, 0.0, 0.0], &[0.0, 0.6, 0.8, 0.0], &[0.0, 0.0, 0.0, 1.0]]);
    let y = make_label_indicator(&[0, 1, 1, 0], 2).unwrap();
    let w = solve_output_weights(&a, &y, 0.0).unwrap();
    assert!(w.max_abs_diff(&matmul_nt(&y.to_matrix(), &a)) < 1e-14);
}

#[test]
fn small_c_approaches_unregularized_solution() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random_matrix(5, 40, &mut rng);
    let y = make_label_indicator(&random_labels(40, 3, &mut rng), 3).unwrap();
    let w0 = solve_output_weights(&a, &y, 0.0).unwrap();
    let w = solve_output_weights(&a, &y, 1e-12).unwrap();
    assert!(w.max_abs_diff(&w0) < 1e-9);
    assert!(w.max_abs_diff(&dense_oracle(&a, &y, 0.0)) < 1e-9);
}

#[test]
fn singular_unregularized_system_is_numeric_error() {
    // Two identical rows: rank-deficient Gram.
    let a = Matrix::from_rows(&[&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]]);
    let y = make_label_indicator(&[0, 1, 0], 2).unwrap();
    let err = solve_output_weights(&a, &y, 0.0).unwrap_err();
    assert!(matches!(err, Error::Numeric(ref m) if m.contains("positive")), "{err}");
    assert!(solve_output_weights(&a, &y, 0.5).is_ok());
    assert!(solve_output_weights(&a, &y, -1.0).is_err());
}

#[test]
fn heuristic_arithmetic() {
    // Row self-products 200, 201, …: minimum 200.
    let a = Matrix::from_fn(100, 1, |i, _| (200.0 + i as f64).sqrt());
    assert!((ridge_heuristic_c(&a, 10) - 2.0).abs() < 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = random_matrix(8, 30, &mut rng);
    let mut scaled = a.clone();
    scaled.as_mut_slice().iter_mut().for_each(|v| *v *= 3.0);
    let (c, c3) = (ridge_heuristic_c(&a, 4), ridge_heuristic_c(&scaled, 4));
    assert!((c3 - 9.0 * c).abs() < 1e-12 * c3);
}

#[test]
fn heuristic_with_dead_unit_is_zero() {
    let a = Matrix::from_rows(&[&[1.0, 2.0], &[0.0, 0.0]]);
    assert_eq!(ridge_heuristic_c(&a, 2), 0.0);
    let y = make_label_indicator(&[0, 1], 2).unwrap();
    let sys = GramSystem::from_activations(&a, &y).unwrap();
    assert_eq!(sys.dead_units(2), 1);
    assert_eq!(sys.heuristic_c(2, 2), 0.0);
}

#[test]
fn activation_examples() {
    let w = Matrix::from_rows(&[&[1.0, 1.0]]);
    let f = Matrix::from_rows(&[&[1.0], &[2.0]]);
    assert_eq!(hidden_activations(&w, &f).unwrap()[(0, 0)], 9.0);
    assert!(hidden_activations(&w, &Matrix::zeros(2, 3)).unwrap().as_slice().iter().all(|&v| v == 0.0));
    assert!(hidden_activations(&w, &Matrix::zeros(3, 1)).is_err());
    let layer = HiddenLayer::new(w, true);
    let a = layer.activations(&Matrix::from_rows(&[&[1.0, 0.0], &[2.0, 1.0]])).unwrap();
    assert_eq!(a, Matrix::from_rows(&[&[9.0, 1.0], &[1.0, 1.0]]));
}

#[test]
fn argmax_and_ties() {
    let s = Matrix::from_rows(&[&[0.1, 0.5], &[0.9, 0.5], &[0.3, 0.0]]);
    assert_eq!(argmax_labels(&s), vec![1, 0]);
}

#[test]
fn evaluation() {
    let e = evaluate(&[0, 1, 2], &[0, 1, 2], 3).unwrap();
    assert_eq!(e.error_rate, 0.0);
    assert_eq!(e.confusion, vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]]);
    assert_eq!(evaluate(&[1, 0, 1, 0], &[0, 1, 0, 1], 2).unwrap().error_rate, 1.0);
    let truth = vec![0usize; 10_000];
    let mut pred = truth.clone();
    pred[..37].fill(1);
    let e = evaluate(&pred, &truth, 2).unwrap();
    assert!((e.error_rate * 100.0 - 0.37).abs() < 1e-12);
    assert_eq!(e.confusion[0][1], 37);
    assert!(evaluate(&[0], &[0, 1], 2).is_err());
}

/// Two well-separated Gaussian-ish blobs per class in 6 dimensions.
fn separable_set(k: usize, n: usize, seed: u64) -> (Matrix, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = random_labels(k, n, &mut rng);
    let f = Matrix::from_fn(6, k, |i, j| {
        let centre = if i == labels[j] { 3.0 } else { 0.0 };
        centre + rng.random_range(-0.5..0.5)
    });
    (f, labels)
}

#[test]
fn cross_validation_grid() {
    let (f, labels) = separable_set(200, 3, 5);
    let w_in = generate_input_weights(&f, &labels, 20, 1).unwrap();
    let a = hidden_activations(&w_in, &f).unwrap();
    let y = make_label_indicator(&labels, 3).unwrap();
    assert_eq!(cross_validate_c(&a, &y, &[0.7], 0.1).unwrap().c, 0.7);
    let h = ridge_heuristic_c(&a, 3);
    let out = cross_validate_c(&a, &y, &[1e-6, h, 1e6], 0.1).unwrap();
    assert_ne!(out.c, 1e6);
    let err = |c: f64| out.trials.iter().find(|t| t.0 == c).unwrap().1;
    assert!(err(1e6) > err(1e-6).min(err(h)));
}

#[test]
fn cross_validation_ties_go_to_larger_c() {
    let (f, labels) = separable_set(100, 2, 6);
    let w_in = generate_input_weights(&f, &labels, 10, 2).unwrap();
    let a = hidden_activations(&w_in, &f).unwrap();
    let y = make_label_indicator(&labels, 2).unwrap();
    // Tiny c values all classify this easy set perfectly.
    let out = cross_validate_c(&a, &y, &[1e-4, 1e-3, 1e-5], 0.2).unwrap();
    assert!(out.trials.iter().all(|t| t.1 == 0.0));
    assert_eq!(out.c, 1e-3);
}

#[test]
fn holdout_is_stratified_and_deterministic() {
    let labels: Vec<usize> = (0..100).map(|k| k % 4).collect();
    let mask = stratified_holdout(&labels, 4, 0.1).unwrap();
    for class in 0..4 {
        let held = (0..100).filter(|&k| mask[k] && labels[k] == class).count();
        assert_eq!(held, 3); // round(0.1 · 25)
    }
    assert_eq!(mask, stratified_holdout(&labels, 4, 0.1).unwrap());
    assert!(matches!(
        stratified_holdout(&[0, 1, 1, 1], 2, 0.6),
        Err(Error::Stratification(_))
    ));
    assert!(stratified_holdout(&labels, 4, 0.0).is_err());
    assert!(stratified_holdout(&labels, 4, 1.0).is_err());
}

#[test]
fn staged_accumulation_ignores_push_sizes() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let k = GRAM_BLOCK * 2 + 37;
    let f = random_matrix(9, k, &mut rng);
    let labels = random_labels(k, 3, &mut rng);
    let layer = HiddenLayer::new(generate_input_weights(&f, &labels, 12, 3).unwrap(), false);
    let run = |step: usize| {
        let mut s = StagedGram::new(&layer, 3);
        for start in (0..k).step_by(step) {
            let end = (start + step).min(k);
            s.push(&f.cols_range(start, end), &labels[start..end]).unwrap();
        }
        s.finish().unwrap().fit
    };
    let one = run(k);
    for step in [1, 100, GRAM_BLOCK, 777] {
        assert_eq!(run(step), one, "step {step}");
    }
    let direct = GramSystem::from_activations(
        &layer.activations(&f).unwrap(),
        &make_label_indicator(&labels, 3).unwrap(),
    )
    .unwrap();
    assert!(one.gram.max_abs_diff(&direct.gram) < 1e-9 * direct.gram.as_slice().iter().fold(1.0f64, |s, v| s.max(v.abs())));
    assert!(one.ayt.max_abs_diff(&direct.ayt) < 1e-9);
}

#[test]
fn staged_holdout_matches_in_memory_cross_validation() {
    let (f, labels) = separable_set(300, 3, 8);
    let layer = HiddenLayer::new(generate_input_weights(&f, &labels, 15, 4).unwrap(), false);
    let mask = stratified_holdout(&labels, 3, 0.1).unwrap();
    let mut s = StagedGram::new(&layer, 3).with_holdout(mask);
    s.push(&f, &labels).unwrap();
    let out = s.finish().unwrap();
    let grid = [1e-3, 1.0, 1e3];
    let (a_val, val_labels) = out.holdout.as_ref().unwrap();
    let staged = select_c(&out.fit, a_val, val_labels, &grid).unwrap();
    let a = layer.activations(&f).unwrap();
    let direct = cross_validate_c(&a, &make_label_indicator(&labels, 3).unwrap(), &grid, 0.1).unwrap();
    assert_eq!(staged.c, direct.c);
    assert_eq!(out.fit.count + val_labels.len(), 300);
}

#[test]
fn train_end_to_end_matches_closed_form() {
    let (f, labels) = separable_set(150, 3, 9);
    let (test_f, _) = separable_set(40, 3, 10);
    let params = TrainParams {
        hidden: 12,
        seed: 5,
        ridge: RidgeMode::Heuristic,
        intercept: false,
    };
    let (model, diag) = train(&f, &labels, 3, &params).unwrap();
    assert_eq!(diag.train_error, Some(0.0));
    // Closed form: Y Aᵀ (A Aᵀ + cI)⁻¹ (W_in F_test)².
    let w_in = generate_input_weights(&f, &labels, 12, 5).unwrap();
    let a = hidden_activations(&w_in, &f).unwrap();
    let c = ridge_heuristic_c(&a, 3);
    assert!((diag.c - c).abs() <= 1e-12 * c);
    let y = make_label_indicator(&labels, 3).unwrap();
    let expect = matmul(&dense_oracle(&a, &y, c), &hidden_activations(&w_in, &test_f).unwrap());
    let (scores, _) = model.predict(&test_f).unwrap();
    assert!(scores.max_abs_diff(&expect) < 1e-8);
    assert_eq!(model.w_out().cols(), 12);
}

#[test]
fn training_is_deterministic() {
    let (f, labels) = separable_set(120, 3, 11);
    let params = TrainParams {
        hidden: 10,
        seed: 77,
        ridge: RidgeMode::CrossValidate {
            grid: vec![1e-3, 1.0],
            include_heuristic: true,
            holdout: 0.1,
        },
        intercept: true,
    };
    let (a, da) = train(&f, &labels, 3, &params).unwrap();
    let (b, _) = train(&f, &labels, 3, &params).unwrap();
    assert_eq!(a, b);
    assert_eq!(da.cv_trials.len(), 3);
    assert_eq!(a.w_out().cols(), 11);
}

#[test]
fn negating_an_input_row_leaves_predictions_unchanged() {
    let (f, labels) = separable_set(120, 3, 12);
    let (test_f, _) = separable_set(30, 3, 13);
    let w_in = generate_input_weights(&f, &labels, 8, 6).unwrap();
    let mut flipped = w_in.clone();
    for j in 0..flipped.cols() {
        flipped[(3, j)] = -flipped[(3, j)];
    }
    let y = make_label_indicator(&labels, 3).unwrap();
    let fit = |w: &Matrix| {
        let a = hidden_activations(w, &f).unwrap();
        let c = ridge_heuristic_c(&a, 3);
        let w_out = solve_output_weights(&a, &y, c).unwrap();
        ClassifierModel::new(HiddenLayer::new(w.clone(), false), w_out, c).unwrap()
    };
    let (p, q) = (fit(&w_in), fit(&flipped));
    assert_eq!(
        hidden_activations(&w_in, &f).unwrap(),
        hidden_activations(&flipped, &f).unwrap()
    );
    assert_eq!(p.predict(&test_f).unwrap().1, q.predict(&test_f).unwrap().1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn ridge_solution_is_optimal(seed in 0u64..10_000, c in 1e-3f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, k, n) = (6, 25, 3);
        let a = random_matrix(m, k, &mut rng);
        let y = make_label_indicator(&random_labels(k, n, &mut rng), n).unwrap();
        let w = solve_output_weights(&a, &y, c).unwrap();
        let base = objective(&w, &a, &y.to_matrix(), c);
        for _ in 0..5 {
            let mut delta = random_matrix(n, m, &mut rng);
            let norm = delta.frobenius_sq().sqrt();
            delta.as_mut_slice().iter_mut().for_each(|v| *v *= 1e-3 / norm);
            let mut moved = w.clone();
            moved.as_mut_slice().iter_mut().zip(delta.as_slice()).for_each(|(x, d)| *x += d);
            prop_assert!(objective(&moved, &a, &y.to_matrix(), c) > base);
        }
    }

    #[test]
    fn regularized_gram_is_positive_definite(seed in 0u64..10_000, c in 1e-6f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Fewer columns than rows: A Aᵀ alone is singular.
        let a = random_matrix(10, 4, &mut rng);
        let y = make_label_indicator(&random_labels(4, 2, &mut rng), 2).unwrap();
        prop_assert!(GramSystem::from_activations(&a, &y).unwrap().solve(c).is_ok());
    }

    #[test]
    fn input_rows_are_unit_norm(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_matrix(7, 30, &mut rng);
        let labels = random_labels(30, 4, &mut rng);
        let w = generate_input_weights(&f, &labels, 25, seed).unwrap();
        for r in 0..25 {
            let norm = w.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() < 1e-9);
        }
    }
}
