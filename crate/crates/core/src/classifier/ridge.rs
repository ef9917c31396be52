//! Output weights by ridge regression on the hidden-layer Gram matrix.
//!
//! The system `W_out (A Aᵀ + cI) = Y Aᵀ` is stored transposed,
//! `(A Aᵀ + cI) W_outᵀ = A Yᵀ`, so both accumulators grow one column of `A`
//! at a time and the right-hand side is column-major per class.

use super::{argmax_labels, HiddenLayer};
use crate::dataset::LabelIndicator;
use crate::error::{ensure, Error, Result};
use crate::linalg::{matmul, symmetrize_from_lower, syrk_lower_add, Cholesky, Matrix};
use crate::timing::Stopwatch;

/// Columns per activation block. Features are regrouped into blocks of this
/// size before the hidden layer and Gram update run, so the accumulated
/// sums do not depend on how callers batch their input.
pub const GRAM_BLOCK: usize = 512;

/// Condition estimate above which an unregularized system is refused.
pub const MAX_UNREGULARIZED_CONDITION: f64 = 1e14;

/// Running `A Aᵀ` (lower triangle) and `A Yᵀ`.
#[derive(Debug, Clone)]
pub struct GramAccumulator {
    num_classes: usize,
    gram: Matrix,
    ayt: Matrix,
    count: usize,
}

impl GramAccumulator {
    pub fn new(units: usize, num_classes: usize) -> Self {
        GramAccumulator {
            num_classes,
            gram: Matrix::zeros(units, units),
            ayt: Matrix::zeros(units, num_classes),
            count: 0,
        }
    }

    /// Add the activation columns `a` with their labels.
    pub fn add(&mut self, a: &Matrix, labels: &[usize]) -> Result<()> {
        ensure!(
            a.rows() == self.gram.rows(),
            Precondition,
            "activation block has {} rows, accumulator expects {}",
            a.rows(),
            self.gram.rows()
        );
        ensure!(a.cols() == labels.len(), Precondition, "{} labels for {} columns", labels.len(), a.cols());
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.num_classes) {
            return Err(Error::Precondition(format!("label {bad} outside 0..{}", self.num_classes)));
        }
        syrk_lower_add(&mut self.gram, a);
        for (k, &label) in labels.iter().enumerate() {
            for (dst, &v) in self.ayt.col_mut(label).iter_mut().zip(a.col(k)) {
                *dst += v;
            }
        }
        self.count += a.cols();
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn finish(mut self) -> GramSystem {
        symmetrize_from_lower(&mut self.gram);
        GramSystem {
            gram: self.gram,
            ayt: self.ayt,
            count: self.count,
        }
    }
}

/// The accumulated normal equations.
#[derive(Debug, Clone, PartialEq)]
pub struct GramSystem {
    /// `A Aᵀ`, symmetric.
    pub gram: Matrix,
    /// `A Yᵀ`, one column per class.
    pub ayt: Matrix,
    /// Number of training columns summed.
    pub count: usize,
}

/// Output weights and the conditioning of the system that produced them.
#[derive(Debug, Clone)]
pub struct RidgeSolution {
    pub w_out: Matrix,
    pub condition: f64,
}

impl GramSystem {
    pub fn from_activations(a: &Matrix, y: &LabelIndicator) -> Result<Self> {
        let mut acc = GramAccumulator::new(a.rows(), y.num_classes());
        acc.add(a, y.labels())?;
        Ok(acc.finish())
    }

    /// Solve for `W_out` (classes × units) at ridge parameter `c`.
    pub fn solve(&self, c: f64) -> Result<RidgeSolution> {
        ensure!(c >= 0.0 && c.is_finite(), Precondition, "ridge parameter must be finite and >= 0, got {c}");
        ensure!(self.count >= 1, Precondition, "no training columns accumulated");
        let mut g = self.gram.clone();
        for i in 0..g.rows() {
            g[(i, i)] += c;
        }
        let chol = Cholesky::new(&g).map_err(|e| {
            if c == 0.0 {
                Error::Numeric("A·Aᵀ is singular at c = 0; use a positive ridge parameter".into())
            } else {
                e
            }
        })?;
        let condition = chol.condition_estimate();
        if c == 0.0 && condition > MAX_UNREGULARIZED_CONDITION {
            return Err(Error::Numeric(format!(
                "A·Aᵀ is ill-conditioned at c = 0 (estimate {condition:.3e}); use a positive ridge parameter"
            )));
        }
        let mut x = self.ayt.clone();
        chol.solve_in_place(&mut x);
        Ok(RidgeSolution {
            w_out: x.transpose(),
            condition,
        })
    }

    /// `(N²/M²) · min_m (A Aᵀ)_mm` over the first `hidden` units.
    pub fn heuristic_c(&self, num_classes: usize, hidden: usize) -> f64 {
        let diag: Vec<f64> = (0..hidden).map(|i| self.gram[(i, i)]).collect();
        heuristic_from_diag(&diag, num_classes)
    }

    /// Hidden units whose activation is zero on every training column.
    pub fn dead_units(&self, hidden: usize) -> usize {
        (0..hidden).filter(|&i| self.gram[(i, i)] == 0.0).count()
    }

    /// Add further activation columns to a finished system.
    pub fn extend(&mut self, a: &Matrix, labels: &[usize]) -> Result<()> {
        let mut acc = GramAccumulator {
            num_classes: self.ayt.cols(),
            gram: std::mem::replace(&mut self.gram, Matrix::zeros(0, 0)),
            ayt: std::mem::replace(&mut self.ayt, Matrix::zeros(0, 0)),
            count: self.count,
        };
        let res = acc.add(a, labels);
        // `add` only reads the lower triangle and rewrites it; mirror again.
        *self = acc.finish();
        res
    }
}

fn heuristic_from_diag(diag: &[f64], num_classes: usize) -> f64 {
    let m = diag.len() as f64;
    let min = diag.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) {
        log::warn!("ridge heuristic: a hidden unit is zero on all training data, returning c = 0");
        return 0.0;
    }
    (num_classes as f64).powi(2) / (m * m) * min
}

/// Ridge heuristic `c = (N²/M²) · min diag(A Aᵀ)`; 0 (with a warning) when
/// some hidden unit never activates.
pub fn ridge_heuristic_c(a: &Matrix, num_classes: usize) -> f64 {
    let diag: Vec<f64> = (0..a.rows()).map(|i| a.row(i).iter().map(|v| v * v).sum()).collect();
    heuristic_from_diag(&diag, num_classes)
}

/// Solve `W_out (A Aᵀ + cI) = Y Aᵀ`.
pub fn solve_output_weights(a: &Matrix, y: &LabelIndicator, c: f64) -> Result<Matrix> {
    ensure!(a.cols() == y.len(), Precondition, "A has {} columns, Y has {}", a.cols(), y.len());
    ensure!(a.cols() >= 1, Precondition, "need at least one training column");
    Ok(GramSystem::from_activations(a, y)?.solve(c)?.w_out)
}

/// Validation error of each ridge parameter tried.
#[derive(Debug, Clone, PartialEq)]
pub struct CvOutcome {
    pub c: f64,
    /// `(c, validation error rate)`, in grid order; failed solves are omitted.
    pub trials: Vec<(f64, f64)>,
}

/// Mark a stratified holdout: within each class, `round(fraction · n_c)`
/// evenly spaced members go to validation.
pub fn stratified_holdout(labels: &[usize], num_classes: usize, fraction: f64) -> Result<Vec<bool>> {
    ensure!(
        fraction > 0.0 && fraction < 1.0,
        Precondition,
        "holdout fraction must lie in (0, 1), got {fraction}"
    );
    let mut members = vec![Vec::new(); num_classes];
    for (k, &l) in labels.iter().enumerate() {
        ensure!(l < num_classes, Precondition, "label {l} outside 0..{num_classes}");
        members[l].push(k);
    }
    let mut holdout = vec![false; labels.len()];
    for (class, ks) in members.iter().enumerate() {
        let n = ks.len();
        let n_val = (fraction * n as f64).round() as usize;
        if n == 0 {
            continue;
        }
        if n_val >= n {
            return Err(Error::Stratification(format!(
                "class {class} has {n} examples, none would remain for fitting"
            )));
        }
        for t in 0..n_val {
            holdout[ks[((2 * t + 1) * n) / (2 * n_val)]] = true;
        }
    }
    if !holdout.contains(&true) {
        return Err(Error::Stratification(format!(
            "a {fraction} holdout of {} examples is empty",
            labels.len()
        )));
    }
    Ok(holdout)
}

/// Pick the grid value with the lowest validation error, ties to the larger `c`.
pub fn select_c(fit: &GramSystem, a_val: &Matrix, val_labels: &[usize], grid: &[f64]) -> Result<CvOutcome> {
    ensure!(!grid.is_empty(), Precondition, "empty ridge parameter grid");
    ensure!(a_val.cols() == val_labels.len(), Precondition, "validation labels do not match columns");
    let mut trials = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64)> = None;
    let mut last_err = None;
    for &c in grid {
        let sol = match fit.solve(c) {
            Ok(s) => s,
            Err(e) => {
                log::warn!("cross-validation: c = {c:e} skipped ({e})");
                last_err = Some(e);
                continue;
            }
        };
        let pred = argmax_labels(&matmul(&sol.w_out, a_val));
        let wrong = pred.iter().zip(val_labels).filter(|(p, t)| p != t).count();
        let err = wrong as f64 / val_labels.len().max(1) as f64;
        trials.push((c, err));
        best = match best {
            Some((bc, be)) if be < err || (be == err && bc >= c) => Some((bc, be)),
            _ => Some((c, err)),
        };
    }
    match best {
        Some((c, _)) => Ok(CvOutcome { c, trials }),
        None => Err(last_err.unwrap_or_else(|| Error::Numeric("no ridge parameter could be solved".into()))),
    }
}

/// Single stratified holdout over an in-memory activation matrix.
pub fn cross_validate_c(a: &Matrix, y: &LabelIndicator, grid: &[f64], holdout_fraction: f64) -> Result<CvOutcome> {
    ensure!(a.cols() == y.len(), Precondition, "A has {} columns, Y has {}", a.cols(), y.len());
    let mask = stratified_holdout(y.labels(), y.num_classes(), holdout_fraction)?;
    let (fit_idx, val_idx): (Vec<usize>, Vec<usize>) = (0..mask.len()).partition(|&k| !mask[k]);
    let fit_y = y.select(&fit_idx);
    if let Some(class) = (0..y.num_classes()).find(|&n| y.labels().contains(&n) && !fit_y.labels().contains(&n)) {
        return Err(Error::Stratification(format!("class {class} is absent from the fit split")));
    }
    let pick = |idx: &[usize]| {
        Matrix::from_col_major(a.rows(), idx.len(), idx.iter().flat_map(|&k| a.col(k).iter().copied()).collect())
            .expect("sizes agree")
    };
    let fit = GramSystem::from_activations(&pick(&fit_idx), &fit_y)?;
    let val_labels: Vec<usize> = val_idx.iter().map(|&k| y.labels()[k]).collect();
    select_c(&fit, &pick(&val_idx), &val_labels, grid)
}

/// Seconds spent in the two halves of staged training.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub activations: f64,
    pub gram: f64,
}

/// Training-set results of staged accumulation.
#[derive(Debug, Clone)]
pub struct StagedOutput {
    /// Normal equations of the fit columns.
    pub fit: GramSystem,
    /// Activations and labels of held-out columns, when a holdout was set.
    pub holdout: Option<(Matrix, Vec<usize>)>,
    pub timings: StageTimings,
}

/// Feeds feature columns through the hidden layer in fixed-size blocks and
/// accumulates the Gram system, optionally diverting a holdout.
pub struct StagedGram<'a> {
    layer: &'a HiddenLayer,
    acc: GramAccumulator,
    fit_block: Block,
    holdout: Option<(Vec<bool>, Block, Vec<f64>, Vec<usize>)>,
    seen: usize,
    timings: StageTimings,
}

struct Block {
    features: Matrix,
    labels: Vec<usize>,
}

impl Block {
    fn new(feature_len: usize) -> Self {
        Block {
            features: Matrix::zeros(feature_len, GRAM_BLOCK),
            labels: Vec::with_capacity(GRAM_BLOCK),
        }
    }

    fn push(&mut self, column: &[f64], label: usize) -> bool {
        let n = self.labels.len();
        self.features.col_mut(n).copy_from_slice(column);
        self.labels.push(label);
        self.labels.len() == GRAM_BLOCK
    }

    /// Activations of the buffered columns; empties the block.
    fn drain(&mut self, layer: &HiddenLayer, t: &mut StageTimings) -> Result<(Matrix, Vec<usize>)> {
        let n = self.labels.len();
        let watch = Stopwatch::start();
        let a = if n == GRAM_BLOCK {
            layer.activations(&self.features)?
        } else {
            layer.activations(&self.features.cols_range(0, n))?
        };
        t.activations += watch.elapsed_secs();
        Ok((a, std::mem::take(&mut self.labels)))
    }
}

impl<'a> StagedGram<'a> {
    pub fn new(layer: &'a HiddenLayer, num_classes: usize) -> Self {
        StagedGram {
            layer,
            acc: GramAccumulator::new(layer.units(), num_classes),
            fit_block: Block::new(layer.feature_len()),
            holdout: None,
            seen: 0,
            timings: StageTimings::default(),
        }
    }

    /// Divert the columns flagged in `mask` (by training position) to a
    /// holdout instead of the Gram system.
    pub fn with_holdout(mut self, mask: Vec<bool>) -> Self {
        let block = Block::new(self.layer.feature_len());
        self.holdout = Some((mask, block, Vec::new(), Vec::new()));
        self
    }

    /// Push feature columns (rows = features) for the next training images.
    pub fn push(&mut self, features: &Matrix, labels: &[usize]) -> Result<()> {
        ensure!(
            features.rows() == self.layer.feature_len(),
            Precondition,
            "features have {} rows, hidden layer expects {}",
            features.rows(),
            self.layer.feature_len()
        );
        ensure!(features.cols() == labels.len(), Precondition, "{} labels for {} columns", labels.len(), features.cols());
        for (k, &label) in labels.iter().enumerate() {
            let to_holdout = match &self.holdout {
                Some((mask, ..)) => *mask.get(self.seen).ok_or_else(|| {
                    Error::Precondition(format!("holdout mask covers {} columns, more were pushed", mask.len()))
                })?,
                None => false,
            };
            self.seen += 1;
            if to_holdout {
                let (_, block, store, store_labels) = self.holdout.as_mut().expect("holdout set");
                if block.push(features.col(k), label) {
                    let (a, l) = block.drain(self.layer, &mut self.timings)?;
                    store.extend_from_slice(a.as_slice());
                    store_labels.extend(l);
                }
            } else if self.fit_block.push(features.col(k), label) {
                self.flush_fit()?;
            }
        }
        Ok(())
    }

    fn flush_fit(&mut self) -> Result<()> {
        let (a, labels) = self.fit_block.drain(self.layer, &mut self.timings)?;
        let watch = Stopwatch::start();
        self.acc.add(&a, &labels)?;
        self.timings.gram += watch.elapsed_secs();
        Ok(())
    }

    pub fn finish(mut self) -> Result<StagedOutput> {
        if !self.fit_block.labels.is_empty() {
            self.flush_fit()?;
        }
        let holdout = match self.holdout.take() {
            Some((mask, mut block, mut store, mut labels)) => {
                ensure!(
                    mask.len() == self.seen,
                    Precondition,
                    "holdout mask covers {} columns, {} were pushed",
                    mask.len(),
                    self.seen
                );
                if !block.labels.is_empty() {
                    let (a, l) = block.drain(self.layer, &mut self.timings)?;
                    store.extend_from_slice(a.as_slice());
                    labels.extend(l);
                }
                let units = self.layer.units();
                Some((Matrix::from_col_major(units, labels.len(), store)?, labels))
            }
            None => None,
        };
        Ok(StagedOutput {
            fit: self.acc.finish(),
            holdout,
            timings: self.timings,
        })
    }
}
