//! Batch pipeline driver: load, preprocess, build filters, extract in
//! batches, train the readout, evaluate, persist and report.

pub mod config;
mod model_file;
mod preprocess;
mod report;

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

pub use config::{BankSpec, CMode, DatasetKind, PipelineConfig, Split};
pub use model_file::{decode_model, encode_model, load_model, save_model, SavedModel, MODEL_FILE_MAGIC, MODEL_FILE_VERSION};
pub use preprocess::Preprocessing;
pub use report::{sha256_hex, Digests, ModelSummary, PhaseTimings, RunReport, Seeds, SplitResult, SweepMedian, SweepRow};

use crate::classifier::{
    evaluate, finish_training, generate_input_weights, stratified_holdout, ClassifierModel, Evaluation, FeatureColumns,
    HiddenLayer, StagedGram, TrainingDiagnostics, GRAM_BLOCK,
};
use crate::dataset::{load_cifar10, load_mnist, ImageBatch};
use crate::error::{ensure, Error, Phase, PhaseContext, Result};
use crate::features::{Extractor, FeatureMatrix};
use crate::filterbank::{
    encode_filters_with, load_filters_file, make_bar_filters, make_corner_filters, make_square_filters,
    sample_patch_filters, FilterBank, FloatWidth,
};
use crate::linalg::Matrix;
use crate::timing::Stopwatch;

/// Load one split as configured, honouring the image limits.
pub fn load_split(cfg: &PipelineConfig, split: Split) -> Result<ImageBatch> {
    let ds = &cfg.dataset;
    let batch = match ds.name {
        DatasetKind::Mnist => {
            let (images, labels) = ds.mnist_paths(split)?;
            load_mnist(images, labels)?
        }
        DatasetKind::Cifar10 => load_cifar10(&ds.cifar_paths(split)?)?,
    };
    let limit = match split {
        Split::Train => ds.train_limit,
        Split::Test => ds.test_limit,
    };
    Ok(match limit {
        Some(n) if n < batch.len() => batch.slice(0, n),
        _ => batch,
    })
}

/// Assemble the configured filter bank for preprocessed training images.
pub fn build_filter_bank(cfg: &PipelineConfig, train: &ImageBatch) -> Result<FilterBank> {
    let w = cfg.stage1_config().w;
    let channels = train.channels();
    let strict = cfg.filters.strict_channels;
    let mut parts = Vec::with_capacity(cfg.filters.banks.len());
    for spec in &cfg.filters.banks {
        let bank = match spec {
            BankSpec::Bar { count, width } => make_bar_filters(*count, w, *width)?.adapt_channels(channels, false)?,
            BankSpec::Corner { count, arm } => make_corner_filters(*count, w, *arm)?.adapt_channels(channels, false)?,
            BankSpec::Square { sizes } => make_square_filters(sizes, w)?.adapt_channels(channels, false)?,
            BankSpec::Patch { count } => sample_patch_filters(train, *count, w, cfg.filters.seed)?,
            BankSpec::File { path } => {
                let bank = load_filters_file(path)?;
                ensure!(
                    bank.side() == w,
                    Consistency,
                    "{} holds {}x{} filters, configured W={w}",
                    path.display(),
                    bank.side(),
                    bank.side()
                );
                bank.adapt_channels(channels, strict)?
            }
        };
        parts.push(bank);
    }
    FilterBank::concat(&parts)
}

/// Features computed on demand, for drawing the input weights without
/// materializing the full training feature matrix.
struct LazyFeatures<'a> {
    extractor: &'a Extractor,
    batch: &'a ImageBatch,
}

impl FeatureColumns for LazyFeatures<'_> {
    fn feature_len(&self) -> usize {
        self.extractor.feature_len()
    }

    fn len(&self) -> usize {
        self.batch.len()
    }

    fn columns(&self, indices: &[usize]) -> Result<Matrix> {
        Ok(self.extractor.extract_indices(self.batch, indices)?.into_values())
    }
}

/// Scores feature columns in fixed blocks so predictions do not depend on
/// how the caller batches them.
struct BlockPredictor<'a> {
    model: &'a ClassifierModel,
    buf: Matrix,
    filled: usize,
    predictions: Vec<usize>,
}

impl<'a> BlockPredictor<'a> {
    fn new(model: &'a ClassifierModel) -> Self {
        BlockPredictor {
            model,
            buf: Matrix::zeros(model.layer().feature_len(), GRAM_BLOCK),
            filled: 0,
            predictions: Vec::new(),
        }
    }

    fn push(&mut self, features: &Matrix) -> Result<()> {
        for k in 0..features.cols() {
            self.buf.col_mut(self.filled).copy_from_slice(features.col(k));
            self.filled += 1;
            if self.filled == GRAM_BLOCK {
                self.flush()?;
            }
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        let (_, labels) = if self.filled == GRAM_BLOCK {
            self.model.predict(&self.buf)?
        } else {
            self.model.predict(&self.buf.cols_range(0, self.filled))?
        };
        self.predictions.extend(labels);
        self.filled = 0;
        Ok(())
    }

    fn finish(mut self) -> Result<Vec<usize>> {
        if self.filled > 0 {
            self.flush()?;
        }
        Ok(self.predictions)
    }
}

fn split_result(e: Evaluation, images: usize) -> SplitResult {
    SplitResult {
        images,
        errors: e.errors,
        error_rate: e.error_rate,
        confusion: e.confusion,
    }
}

/// Classify a preprocessed batch in extraction batches of `batch_size`.
/// Returns predictions and the seconds spent in extraction.
pub fn predict_preprocessed(
    model: &SavedModel,
    batch: &ImageBatch,
    indices: &[usize],
    batch_size: usize,
) -> Result<(Vec<usize>, f64)> {
    let extractor = Extractor::new(&model.bank, &model.stage1, batch.channels(), batch.side())
        .map_err(|e| Error::Consistency(e.to_string()))
        .phase(Phase::Features)?;
    ensure!(
        extractor.feature_len() == model.classifier.layer().feature_len(),
        Consistency,
        "images yield {} features, model expects {}",
        extractor.feature_len(),
        model.classifier.layer().feature_len()
    );
    let mut predictor = BlockPredictor::new(&model.classifier);
    let mut feature_secs = 0.0;
    for chunk in indices.chunks(batch_size.max(1)) {
        let watch = Stopwatch::start();
        let f = extractor.extract_indices(batch, chunk).phase(Phase::Features)?;
        feature_secs += watch.elapsed_secs();
        predictor.push(f.values()).phase(Phase::Evaluate)?;
    }
    Ok((predictor.finish().phase(Phase::Evaluate)?, feature_secs))
}

fn check_input_shape(model: &SavedModel, batch: &ImageBatch) -> Result<()> {
    ensure!(
        batch.channels() == model.input_channels && batch.side() == model.input_side,
        Consistency,
        "dataset images are {}x{}x{}, model was trained on {}x{}x{}",
        batch.channels(),
        batch.side(),
        batch.side(),
        model.input_channels,
        model.input_side,
        model.input_side
    );
    Ok(())
}

/// Evaluate a model on raw (unpreprocessed) images.
pub fn evaluate_raw(model: &SavedModel, raw: &ImageBatch, batch_size: usize, t: &mut PhaseTimings) -> Result<SplitResult> {
    check_input_shape(model, raw).phase(Phase::Evaluate)?;
    let watch = Stopwatch::start();
    let batch = model.preprocessing.apply(raw).phase(Phase::Preprocess)?;
    t.preprocess += watch.elapsed_secs();
    let all: Vec<usize> = (0..batch.len()).collect();
    let watch = Stopwatch::start();
    let (pred, feature_secs) = predict_preprocessed(model, &batch, &all, batch_size)?;
    t.features += feature_secs;
    t.evaluate += watch.elapsed_secs() - feature_secs;
    let n = model.classifier.num_classes();
    let e = evaluate(&pred, batch.labels(), n).phase(Phase::Evaluate)?;
    Ok(split_result(e, batch.len()))
}

fn mem_available_bytes() -> Option<u64> {
    let text = std::fs::read_to_string("/proc/meminfo").ok()?;
    let line = text.lines().find(|l| l.starts_with("MemAvailable:"))?;
    let kib: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kib * 1024)
}

/// Refuse hidden sizes whose Gram system cannot fit in memory.
pub fn check_memory(hidden: usize, feature_len: usize, batch_size: usize) -> Result<()> {
    let gram = (hidden as u64).saturating_mul(hidden as u64).saturating_mul(8);
    // Gram plus its factor, W_in, and one extraction batch.
    let need = gram
        .saturating_mul(2)
        .saturating_add((hidden as u64).saturating_mul(feature_len as u64).saturating_mul(8))
        .saturating_add((batch_size as u64).saturating_mul(feature_len as u64).saturating_mul(8));
    if let Some(avail) = mem_available_bytes() {
        ensure!(
            need <= avail,
            Precondition,
            "M={hidden} needs an estimated {:.2} GB (Gram M²·8 = {:.2} GB); {:.2} GB available",
            need as f64 / 1e9,
            gram as f64 / 1e9,
            avail as f64 / 1e9
        );
    }
    Ok(())
}

/// Evenly spaced subset of `0..k` of size at most `n`.
fn spread_indices(k: usize, n: usize) -> Vec<usize> {
    if n >= k {
        return (0..k).collect();
    }
    (0..n).map(|i| i * k / n).collect()
}

fn model_summary(model: &SavedModel, diag: &TrainingDiagnostics, c_mode: &str, train_images: usize) -> ModelSummary {
    let layer = model.classifier.layer();
    ModelSummary {
        filters: model.bank.len(),
        channels: model.bank.channels(),
        feature_len: layer.feature_len(),
        hidden: layer.hidden(),
        c: diag.c,
        c_mode: c_mode.into(),
        gram_condition: diag.gram_condition,
        dead_units: diag.dead_units,
        train_images,
        cv_trials: diag.cv_trials.iter().map(|&(c, e)| [c, e]).collect(),
    }
}

fn per_filter_60k(seconds: f64, images: usize, filters: usize) -> f64 {
    if images == 0 || filters == 0 {
        return 0.0;
    }
    seconds / filters as f64 * 60_000.0 / images as f64
}

pub struct TrainOutcome {
    pub model: SavedModel,
    pub model_bytes: Vec<u8>,
    pub report: RunReport,
}

/// Train end to end, evaluate on the test split, then persist the model and
/// report when paths are configured.
pub fn run_train(cfg: &PipelineConfig) -> Result<TrainOutcome> {
    cfg.validate().phase(Phase::Config)?;
    let total = Stopwatch::start();
    let mut report = RunReport::new("train", cfg);
    let t = &mut report.timings;
    let stage1 = cfg.stage1_config();
    let stage2 = &cfg.stage2;
    let ridge = stage2.ridge_mode().phase(Phase::Config)?;

    let watch = Stopwatch::start();
    let raw_train = load_split(cfg, Split::Train).phase(Phase::Load)?;
    t.load += watch.elapsed_secs();
    log::info!("loaded {} training images", raw_train.len());

    let watch = Stopwatch::start();
    let (prep, train) = Preprocessing::fit(&cfg.preprocess, &raw_train).phase(Phase::Preprocess)?;
    t.preprocess += watch.elapsed_secs();

    let watch = Stopwatch::start();
    let bank = build_filter_bank(cfg, &train).phase(Phase::Filters)?;
    let extractor = Extractor::for_batch(&bank, &stage1, &train).phase(Phase::Filters)?;
    t.filters += watch.elapsed_secs();
    let l = extractor.feature_len();
    log::info!("{} filters, feature length {l}", bank.len());

    check_memory(stage2.hidden, l, cfg.run.batch_size).phase(Phase::Weights)?;
    let watch = Stopwatch::start();
    let lazy = LazyFeatures {
        extractor: &extractor,
        batch: &train,
    };
    let w_in = generate_input_weights(&lazy, train.labels(), stage2.hidden, stage2.seed).phase(Phase::Weights)?;
    t.weights += watch.elapsed_secs();
    let layer = HiddenLayer::new(w_in, stage2.intercept);

    let n = train.num_classes();
    let mut staged = StagedGram::new(&layer, n);
    if let Some(frac) = ridge.holdout() {
        let mask = stratified_holdout(train.labels(), n, frac).phase(Phase::Solve)?;
        staged = staged.with_holdout(mask);
    }
    let all: Vec<usize> = (0..train.len()).collect();
    let mut train_feature_secs = 0.0;
    for chunk in all.chunks(cfg.run.batch_size) {
        let watch = Stopwatch::start();
        let f = extractor.extract_indices(&train, chunk).phase(Phase::Features)?;
        train_feature_secs += watch.elapsed_secs();
        let labels: Vec<usize> = chunk.iter().map(|&k| train.labels()[k]).collect();
        staged.push(f.values(), &labels).phase(Phase::Activations)?;
        log::debug!("pushed {} of {} training images", chunk[chunk.len() - 1] + 1, train.len());
    }
    t.features += train_feature_secs;
    t.features_per_filter_60k = per_filter_60k(train_feature_secs, train.len(), bank.len());
    let staged = staged.finish().phase(Phase::Activations)?;
    let (classifier, diag) = finish_training(layer, staged, &ridge).phase(Phase::Solve)?;
    t.activations += diag.seconds.activations;
    t.gram += diag.seconds.gram;
    t.solve += diag.seconds.solve;
    log::info!("solved with c = {:e}", diag.c);

    let model = SavedModel {
        dataset: format!("{:?}", cfg.dataset.name).to_lowercase(),
        input_channels: raw_train.channels(),
        input_side: raw_train.side(),
        preprocessing: prep,
        stage1,
        bank,
        classifier,
    };
    drop(raw_train);

    if cfg.run.train_error_samples > 0 {
        let subset = spread_indices(train.len(), cfg.run.train_error_samples);
        let watch = Stopwatch::start();
        let (pred, secs) = predict_preprocessed(&model, &train, &subset, cfg.run.batch_size)?;
        t.features += secs;
        t.evaluate += watch.elapsed_secs() - secs;
        let truth: Vec<usize> = subset.iter().map(|&k| train.labels()[k]).collect();
        let e = evaluate(&pred, &truth, n).phase(Phase::Evaluate)?;
        report.train = Some(split_result(e, subset.len()));
    }
    let train_images = train.len();
    drop(train);

    let watch = Stopwatch::start();
    let raw_test = load_split(cfg, Split::Test).phase(Phase::Load)?;
    report.timings.load += watch.elapsed_secs();
    let test = evaluate_raw(&model, &raw_test, cfg.run.batch_size, &mut report.timings)?;
    log::info!("test error {:.4}", test.error_rate);
    report.test = Some(test);
    report.model = Some(model_summary(&model, &diag, ridge.name(), train_images));

    let watch = Stopwatch::start();
    let model_bytes = encode_model(&model).phase(Phase::Io)?;
    if let Some(path) = &cfg.run.model {
        std::fs::write(path, &model_bytes).map_err(|e| Error::io(path, e)).phase(Phase::Io)?;
    }
    report.digests.model = Some(sha256_hex(&model_bytes));
    report.digests.filters = Some(sha256_hex(&encode_filters_with(&model.bank, FloatWidth::F64).phase(Phase::Io)?));
    report.timings.io += watch.elapsed_secs();
    report.timings.total = total.elapsed_secs();
    if let Some(path) = &cfg.run.report {
        report.write(path).phase(Phase::Io)?;
    }
    Ok(TrainOutcome {
        model,
        model_bytes,
        report,
    })
}

/// Evaluate a saved model on one split of the configured dataset.
pub fn run_eval(model_path: &Path, cfg: &PipelineConfig, split: Split) -> Result<RunReport> {
    let total = Stopwatch::start();
    let mut report = RunReport::new("eval", cfg);
    let watch = Stopwatch::start();
    let bytes = std::fs::read(model_path).map_err(|e| Error::io(model_path, e)).phase(Phase::Io)?;
    let model = decode_model(&bytes)
        .map_err(|e| match e {
            Error::Format(msg) => Error::Format(format!("{}: {msg}", model_path.display())),
            other => other,
        })
        .phase(Phase::Io)?;
    report.digests.model = Some(sha256_hex(&bytes));
    report.timings.io += watch.elapsed_secs();

    let watch = Stopwatch::start();
    let raw = load_split(cfg, split).phase(Phase::Load)?;
    report.timings.load += watch.elapsed_secs();
    let result = evaluate_raw(&model, &raw, cfg.run.batch_size, &mut report.timings)?;
    report.timings.features_per_filter_60k = per_filter_60k(report.timings.features, raw.len(), model.bank.len());
    match split {
        Split::Train => report.train = Some(result),
        Split::Test => report.test = Some(result),
    }
    report.evaluated_split = Some(split.name().into());
    let layer = model.classifier.layer();
    report.model = Some(ModelSummary {
        filters: model.bank.len(),
        channels: model.bank.channels(),
        feature_len: layer.feature_len(),
        hidden: layer.hidden(),
        c: model.classifier.c(),
        c_mode: "stored".into(),
        ..Default::default()
    });
    report.timings.total = total.elapsed_secs();
    if let Some(path) = &cfg.run.report {
        report.write(path).phase(Phase::Io)?;
    }
    Ok(report)
}

/// Stage-1 features for both splits of one configuration.
pub struct CachedFeatures {
    pub train: FeatureMatrix,
    pub train_labels: Vec<usize>,
    pub test: FeatureMatrix,
    pub test_labels: Vec<usize>,
    pub num_classes: usize,
    pub filters: usize,
}

/// In-memory feature store keyed by a digest of everything stage 1 depends on.
#[derive(Default)]
pub struct FeatureCache {
    entries: HashMap<String, Arc<CachedFeatures>>,
    extractions: usize,
}

impl FeatureCache {
    /// Number of times features were actually extracted.
    pub fn extractions(&self) -> usize {
        self.extractions
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Digest of the dataset, preprocessing, filter bank and stage-1 settings.
pub fn feature_key(cfg: &PipelineConfig, bank: &FilterBank) -> Result<String> {
    let mut material = Vec::new();
    for part in [
        toml::to_string(&cfg.dataset),
        toml::to_string(&cfg.preprocess),
        toml::to_string(&cfg.stage1_config()),
    ] {
        material.extend(part.map_err(|e| Error::Format(e.to_string()))?.into_bytes());
        material.push(0);
    }
    material.extend(encode_filters_with(bank, FloatWidth::F64)?);
    Ok(sha256_hex(&material))
}

fn cached_features(cfg: &PipelineConfig, cache: &mut FeatureCache, t: &mut PhaseTimings) -> Result<(String, Arc<CachedFeatures>)> {
    let watch = Stopwatch::start();
    let raw_train = load_split(cfg, Split::Train).phase(Phase::Load)?;
    let raw_test = load_split(cfg, Split::Test).phase(Phase::Load)?;
    t.load += watch.elapsed_secs();
    let watch = Stopwatch::start();
    let (prep, train) = Preprocessing::fit(&cfg.preprocess, &raw_train).phase(Phase::Preprocess)?;
    t.preprocess += watch.elapsed_secs();
    let watch = Stopwatch::start();
    let bank = build_filter_bank(cfg, &train).phase(Phase::Filters)?;
    t.filters += watch.elapsed_secs();
    let key = feature_key(cfg, &bank).phase(Phase::Features)?;
    if let Some(hit) = cache.entries.get(&key) {
        return Ok((key, Arc::clone(hit)));
    }
    let watch = Stopwatch::start();
    let test = prep.apply(&raw_test).phase(Phase::Preprocess)?;
    t.preprocess += watch.elapsed_secs();
    let extractor = Extractor::for_batch(&bank, &cfg.stage1_config(), &train).phase(Phase::Filters)?;
    let watch = Stopwatch::start();
    let extract_all = |batch: &ImageBatch| -> Result<FeatureMatrix> {
        let all: Vec<usize> = (0..batch.len()).collect();
        let mut values = Matrix::zeros(extractor.feature_len(), batch.len());
        let l = extractor.feature_len();
        for chunk in all.chunks(cfg.run.batch_size) {
            let start = chunk[0];
            let out = &mut values.as_mut_slice()[start * l..(start + chunk.len()) * l];
            extractor.extract_into(batch, chunk, out)?;
        }
        FeatureMatrix::new(extractor.layout(), values)
    };
    let train_f = extract_all(&train).phase(Phase::Features)?;
    let test_f = extract_all(&test).phase(Phase::Features)?;
    t.features += watch.elapsed_secs();
    t.features_per_filter_60k = per_filter_60k(t.features, train.len() + test.len(), bank.len());
    cache.extractions += 1;
    let entry = Arc::new(CachedFeatures {
        train: train_f,
        train_labels: train.labels().to_vec(),
        test: test_f,
        test_labels: test.labels().to_vec(),
        num_classes: train.num_classes(),
        filters: bank.len(),
    });
    cache.entries.insert(key.clone(), Arc::clone(&entry));
    Ok((key, entry))
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Train and test one readout per `(M, repeat)` on cached features, with
/// weight seed `stage2.seed + repeat`.
pub fn run_sweep_cached(cfg: &PipelineConfig, hidden: &[usize], repeats: usize, cache: &mut FeatureCache) -> Result<RunReport> {
    cfg.validate().phase(Phase::Config)?;
    ensure!(repeats >= 1, Config, "sweep needs at least one repeat");
    ensure!(!hidden.is_empty(), Config, "sweep needs at least one hidden size");
    let total = Stopwatch::start();
    let mut report = RunReport::new("sweep", cfg);
    let ridge = cfg.stage2.ridge_mode().phase(Phase::Config)?;
    let (key, feats) = cached_features(cfg, cache, &mut report.timings)?;
    report.digests.features_key = Some(key);
    let values = feats.train.values();
    let n = feats.num_classes;

    for &m in hidden {
        check_memory(m, values.rows(), 0).phase(Phase::Weights)?;
        let mut errors = Vec::with_capacity(repeats);
        for r in 0..repeats {
            let seed = cfg.stage2.seed.wrapping_add(r as u64);
            let watch = Stopwatch::start();
            let w = Stopwatch::start();
            let w_in = generate_input_weights(values, &feats.train_labels, m, seed).phase(Phase::Weights)?;
            report.timings.weights += w.elapsed_secs();
            let layer = HiddenLayer::new(w_in, cfg.stage2.intercept);
            let mut staged = StagedGram::new(&layer, n);
            if let Some(frac) = ridge.holdout() {
                staged = staged.with_holdout(stratified_holdout(&feats.train_labels, n, frac).phase(Phase::Solve)?);
            }
            staged.push(values, &feats.train_labels).phase(Phase::Activations)?;
            let staged = staged.finish().phase(Phase::Activations)?;
            let (classifier, diag) = finish_training(layer, staged, &ridge).phase(Phase::Solve)?;
            report.timings.activations += diag.seconds.activations;
            report.timings.gram += diag.seconds.gram;
            report.timings.solve += diag.seconds.solve;
            let train_seconds = watch.elapsed_secs();

            let watch = Stopwatch::start();
            let mut predictor = BlockPredictor::new(&classifier);
            predictor.push(feats.test.values()).phase(Phase::Evaluate)?;
            let pred = predictor.finish().phase(Phase::Evaluate)?;
            let e = evaluate(&pred, &feats.test_labels, n).phase(Phase::Evaluate)?;
            report.timings.evaluate += watch.elapsed_secs();
            log::info!("M={m} repeat {r}: test error {:.4}", e.error_rate);
            errors.push(e.error_rate);
            report.sweep.push(SweepRow {
                hidden: m,
                repeat: r,
                seed,
                c: diag.c,
                test_error: e.error_rate,
                train_seconds,
            });
        }
        report.sweep_medians.push(SweepMedian {
            hidden: m,
            median_test_error: median(&mut errors),
        });
    }
    report.feature_extractions = Some(cache.extractions());
    report.timings.total = total.elapsed_secs();
    if let Some(path) = &cfg.run.report {
        report.write(path).phase(Phase::Io)?;
    }
    Ok(report)
}

/// Sweep with a fresh feature cache.
pub fn run_sweep(cfg: &PipelineConfig, hidden: &[usize], repeats: usize) -> Result<RunReport> {
    run_sweep_cached(cfg, hidden, repeats, &mut FeatureCache::default())
}
