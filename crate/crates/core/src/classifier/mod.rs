//! Stage 2: a random-weight hidden layer with square activations and a
//! ridge-regression readout solved in one batch.

mod ridge;
mod weights;

pub use ridge::{
    cross_validate_c, ridge_heuristic_c, select_c, solve_output_weights, stratified_holdout, CvOutcome, GramAccumulator,
    GramSystem, RidgeSolution, StageTimings, StagedGram, StagedOutput, GRAM_BLOCK, MAX_UNREGULARIZED_CONDITION,
};
pub use weights::{generate_input_weights, MAX_PAIR_RETRIES};

use crate::error::{ensure, Error, Result};
use crate::features::FeatureMatrix;
use crate::linalg::{matmul, Matrix};
use crate::timing::Stopwatch;

/// Random access to feature columns, which may be computed on demand.
pub trait FeatureColumns {
    /// Feature dimension `L̂`.
    fn feature_len(&self) -> usize;
    /// Number of columns `K`.
    fn len(&self) -> usize;
    /// The `L̂×|indices|` matrix of the requested columns.
    fn columns(&self, indices: &[usize]) -> Result<Matrix>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl FeatureColumns for Matrix {
    fn feature_len(&self) -> usize {
        self.rows()
    }

    fn len(&self) -> usize {
        self.cols()
    }

    fn columns(&self, indices: &[usize]) -> Result<Matrix> {
        if let Some(&bad) = indices.iter().find(|&&k| k >= self.cols()) {
            return Err(Error::Precondition(format!("column {bad} out of range")));
        }
        Matrix::from_col_major(
            self.rows(),
            indices.len(),
            indices.iter().flat_map(|&k| self.col(k).iter().copied()).collect(),
        )
    }
}

impl FeatureColumns for FeatureMatrix {
    fn feature_len(&self) -> usize {
        self.values().rows()
    }

    fn len(&self) -> usize {
        self.values().cols()
    }

    fn columns(&self, indices: &[usize]) -> Result<Matrix> {
        self.values().columns(indices)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    /// `g(z) = z²`
    #[default]
    Square,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Square => "square",
        }
    }
}

/// `A = g(W_in F)`, plus an optional constant unit.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenLayer {
    w_in: Matrix,
    activation: Activation,
    intercept: bool,
}

impl HiddenLayer {
    pub fn new(w_in: Matrix, intercept: bool) -> Self {
        HiddenLayer {
            w_in,
            activation: Activation::Square,
            intercept,
        }
    }

    #[inline]
    pub fn w_in(&self) -> &Matrix {
        &self.w_in
    }

    #[inline]
    pub fn activation(&self) -> Activation {
        self.activation
    }

    #[inline]
    pub fn intercept(&self) -> bool {
        self.intercept
    }

    /// Hidden units `M`, excluding the constant unit.
    #[inline]
    pub fn hidden(&self) -> usize {
        self.w_in.rows()
    }

    /// Rows of `A`: `M`, or `M + 1` with the constant unit.
    #[inline]
    pub fn units(&self) -> usize {
        self.hidden() + usize::from(self.intercept)
    }

    #[inline]
    pub fn feature_len(&self) -> usize {
        self.w_in.cols()
    }

    pub fn activations(&self, features: &Matrix) -> Result<Matrix> {
        let mut a = hidden_activations(&self.w_in, features)?;
        if self.intercept {
            let (m, k) = (a.rows(), a.cols());
            let src = a.into_vec();
            let mut data = Vec::with_capacity((m + 1) * k);
            for col in src.chunks_exact(m.max(1)).take(k) {
                data.extend_from_slice(col);
                data.push(1.0);
            }
            a = Matrix::from_col_major(m + 1, k, data)?;
        }
        Ok(a)
    }
}

/// `A = (W_in F)²`, termwise.
pub fn hidden_activations(w_in: &Matrix, f: &Matrix) -> Result<Matrix> {
    ensure!(
        w_in.cols() == f.rows(),
        Precondition,
        "W_in is {}x{} but features have {} rows",
        w_in.rows(),
        w_in.cols(),
        f.rows()
    );
    let mut a = matmul(w_in, f);
    a.as_mut_slice().iter_mut().for_each(|z| *z *= *z);
    Ok(a)
}

/// Column-wise argmax; ties go to the lowest row.
pub fn argmax_labels(scores: &Matrix) -> Vec<usize> {
    (0..scores.cols())
        .map(|k| {
            let col = scores.col(k);
            let mut best = 0;
            for (n, &v) in col.iter().enumerate().skip(1) {
                if v > col[best] {
                    best = n;
                }
            }
            best
        })
        .collect()
}

/// Trained two-stage readout.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    layer: HiddenLayer,
    w_out: Matrix,
    c: f64,
}

impl ClassifierModel {
    pub fn new(layer: HiddenLayer, w_out: Matrix, c: f64) -> Result<Self> {
        ensure!(
            w_out.cols() == layer.units(),
            Consistency,
            "W_out has {} columns for {} hidden units",
            w_out.cols(),
            layer.units()
        );
        ensure!(c >= 0.0, Consistency, "negative ridge parameter {c}");
        Ok(ClassifierModel { layer, w_out, c })
    }

    #[inline]
    pub fn layer(&self) -> &HiddenLayer {
        &self.layer
    }

    #[inline]
    pub fn w_in(&self) -> &Matrix {
        self.layer.w_in()
    }

    #[inline]
    pub fn w_out(&self) -> &Matrix {
        &self.w_out
    }

    #[inline]
    pub fn c(&self) -> f64 {
        self.c
    }

    #[inline]
    pub fn num_classes(&self) -> usize {
        self.w_out.rows()
    }

    /// `N×K` class scores, `W_out g(W_in F)`.
    pub fn scores(&self, features: &Matrix) -> Result<Matrix> {
        Ok(matmul(&self.w_out, &self.layer.activations(features)?))
    }

    pub fn predict(&self, features: &Matrix) -> Result<(Matrix, Vec<usize>)> {
        let s = self.scores(features)?;
        let labels = argmax_labels(&s);
        Ok((s, labels))
    }
}

/// Scores and labels for a feature matrix.
pub fn predict(model: &ClassifierModel, features: &FeatureMatrix) -> Result<(Matrix, Vec<usize>)> {
    model.predict(features.values())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub error_rate: f64,
    pub errors: usize,
    /// `confusion[t][p]` counts true class `t` predicted as `p`.
    pub confusion: Vec<Vec<u64>>,
}

pub fn evaluate(predicted: &[usize], truth: &[usize], num_classes: usize) -> Result<Evaluation> {
    ensure!(
        predicted.len() == truth.len(),
        Precondition,
        "{} predictions for {} labels",
        predicted.len(),
        truth.len()
    );
    let mut confusion = vec![vec![0u64; num_classes]; num_classes];
    let mut errors = 0;
    for (&p, &t) in predicted.iter().zip(truth) {
        ensure!(p < num_classes && t < num_classes, Precondition, "label outside 0..{num_classes}");
        confusion[t][p] += 1;
        errors += usize::from(p != t);
    }
    let error_rate = if truth.is_empty() { 0.0 } else { errors as f64 / truth.len() as f64 };
    Ok(Evaluation {
        error_rate,
        errors,
        confusion,
    })
}

/// How the ridge parameter is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum RidgeMode {
    Heuristic,
    Fixed(f64),
    /// Single stratified holdout over `grid`, optionally with the heuristic
    /// value (computed on the fit split) added to it.
    CrossValidate {
        grid: Vec<f64>,
        include_heuristic: bool,
        holdout: f64,
    },
}

impl RidgeMode {
    pub fn name(&self) -> &'static str {
        match self {
            RidgeMode::Heuristic => "heuristic",
            RidgeMode::Fixed(_) => "fixed",
            RidgeMode::CrossValidate { .. } => "cv",
        }
    }

    pub fn holdout(&self) -> Option<f64> {
        match self {
            RidgeMode::CrossValidate { holdout, .. } => Some(*holdout),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainParams {
    pub hidden: usize,
    pub seed: u64,
    pub ridge: RidgeMode,
    pub intercept: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PhaseSeconds {
    pub weights: f64,
    pub activations: f64,
    pub gram: f64,
    pub solve: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingDiagnostics {
    pub c: f64,
    /// Lower bound on the condition number of `A Aᵀ + cI`.
    pub gram_condition: f64,
    /// Training error, when measured.
    pub train_error: Option<f64>,
    /// Validation error per ridge parameter, when cross-validated.
    pub cv_trials: Vec<(f64, f64)>,
    /// Hidden units that are zero on every training column.
    pub dead_units: usize,
    pub seconds: PhaseSeconds,
}

/// Choose `c` and solve, given the accumulated training system.
pub fn finish_training(
    layer: HiddenLayer,
    staged: StagedOutput,
    ridge: &RidgeMode,
) -> Result<(ClassifierModel, TrainingDiagnostics)> {
    let StagedOutput {
        mut fit,
        holdout,
        timings,
    } = staged;
    let n = fit.ayt.cols();
    let hidden = layer.hidden();
    let mut diag = TrainingDiagnostics {
        seconds: PhaseSeconds {
            activations: timings.activations,
            gram: timings.gram,
            ..Default::default()
        },
        ..Default::default()
    };
    let watch = Stopwatch::start();
    let c = match ridge {
        RidgeMode::Heuristic => fit.heuristic_c(n, hidden),
        RidgeMode::Fixed(c) => *c,
        RidgeMode::CrossValidate {
            grid, include_heuristic, ..
        } => {
            let (a_val, val_labels) = holdout
                .as_ref()
                .ok_or_else(|| Error::Precondition("cross-validation needs a holdout".into()))?;
            let mut grid = grid.clone();
            if *include_heuristic {
                grid.push(fit.heuristic_c(n, hidden));
            }
            let outcome = select_c(&fit, a_val, val_labels, &grid)?;
            diag.cv_trials = outcome.trials;
            outcome.c
        }
    };
    if let Some((a_val, val_labels)) = holdout {
        let g = Stopwatch::start();
        fit.extend(&a_val, &val_labels)?;
        diag.seconds.gram += g.elapsed_secs();
    }
    diag.dead_units = fit.dead_units(hidden);
    let sol = fit.solve(c)?;
    diag.seconds.solve = watch.elapsed_secs();
    diag.c = c;
    diag.gram_condition = sol.condition;
    Ok((ClassifierModel::new(layer, sol.w_out, c)?, diag))
}

/// Train on features held in memory.
pub fn train(
    features: &Matrix,
    labels: &[usize],
    num_classes: usize,
    params: &TrainParams,
) -> Result<(ClassifierModel, TrainingDiagnostics)> {
    let watch = Stopwatch::start();
    let w_in = generate_input_weights(features, labels, params.hidden, params.seed)?;
    let weights_secs = watch.elapsed_secs();
    let layer = HiddenLayer::new(w_in, params.intercept);
    let mut staged = StagedGram::new(&layer, num_classes);
    if let Some(frac) = params.ridge.holdout() {
        staged = staged.with_holdout(stratified_holdout(labels, num_classes, frac)?);
    }
    staged.push(features, labels)?;
    let out = staged.finish()?;
    let (model, mut diag) = finish_training(layer, out, &params.ridge)?;
    diag.seconds.weights = weights_secs;
    let (_, pred) = model.predict(features)?;
    diag.train_error = Some(evaluate(&pred, labels, num_classes)?.error_rate);
    Ok((model, diag))
}

#[cfg(test)]
mod tests;
