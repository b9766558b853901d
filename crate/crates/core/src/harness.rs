//! The cross-validated experiment: contiguous folds, autoencoder
//! pretraining, center initialization, SVDD and SAD training from the same
//! pretrained weights, scoring and metrics.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{expand_ranges, fit_normalizer, Dataset, Normalizer, SchemaConfig};
use crate::error::{Error, Result};
use crate::eval::{pca_fit, pca_project, ModelKind, ModelMetrics, Scatter, ScoreSet, Split, TrialReport};
use crate::nnet::{adam_step, AdamState, MlpModel, DEFAULT_LAYER_DIMS};
use crate::objectives::{ae_loss, anomaly_score, embed, init_center, sad_loss, svdd_loss, Hypersphere, LabeledBatch, SadHyper};

/// Epoch-mean loss may not grow by more than this factor over
/// [`DIVERGENCE_WINDOW`] epochs.
pub const DIVERGENCE_GROWTH: f64 = 1e3;
pub const DIVERGENCE_WINDOW: usize = 100;

/// Contiguous, disjoint row ranges covering `0..n_rows`, in time order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub n_rows: usize,
    pub folds: Vec<Range<usize>>,
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    pub fn test_range(&self, fold: usize) -> Range<usize> {
        self.folds[fold].clone()
    }

    /// Every fold except `fold`, merged where adjacent.
    pub fn train_ranges(&self, fold: usize) -> Vec<Range<usize>> {
        let mut out: Vec<Range<usize>> = Vec::new();
        for (i, r) in self.folds.iter().enumerate() {
            if i == fold {
                continue;
            }
            match out.last_mut() {
                Some(last) if last.end == r.start => last.end = r.end,
                _ => out.push(r.clone()),
            }
        }
        out
    }
}

/// Splits `0..n_rows` into `k` contiguous folds whose sizes differ by at
/// most one; the first `n_rows % k` folds get the extra row.
pub fn contiguous_kfold(n_rows: usize, k: usize) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    if n_rows < k {
        return Err(Error::Config(format!("cannot split {n_rows} rows into {k} folds")));
    }
    let base = n_rows / k;
    let extra = n_rows % k;
    let mut start = 0;
    let folds = (0..k)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect();
    Ok(FoldPlan { n_rows, folds })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    #[default]
    Both,
    SvddOnly,
    SadOnly,
}

impl RunMode {
    pub fn models(self) -> &'static [ModelKind] {
        match self {
            RunMode::Both => &[ModelKind::Svdd, ModelKind::Sad],
            RunMode::SvddOnly => &[ModelKind::Svdd],
            RunMode::SadOnly => &[ModelKind::Sad],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub pretrain_epochs: usize,
    pub main_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// L2 penalty on weight matrices, applied through the optimizer.
    pub weight_decay: f64,
    pub eta: f64,
    pub eps_dist: f64,
    pub layer_dims: Vec<usize>,
    pub bias_enabled: bool,
    /// Multiplies the per-batch labeled sample count.
    pub labeled_oversampling: f64,
    pub folds: usize,
    pub repeats: usize,
    pub mode: RunMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk_scale()
    }
}

impl TrainConfig {
    /// Settings sized for a single laptop core on 60,000 rows.
    pub fn desk_scale() -> Self {
        Self {
            seed: 1,
            pretrain_epochs: 50,
            main_epochs: 150,
            batch_size: 128,
            lr: 1e-4,
            weight_decay: 1e-4,
            eta: 1.0,
            eps_dist: 1e-6,
            layer_dims: DEFAULT_LAYER_DIMS.to_vec(),
            bias_enabled: true,
            labeled_oversampling: 1.0,
            folds: 3,
            repeats: 2,
            mode: RunMode::Both,
        }
    }

    /// 1,000 pretraining and 10,000 main epochs.
    pub fn paper_scale() -> Self {
        Self {
            pretrain_epochs: 1_000,
            main_epochs: 10_000,
            lr: 1e-4,
            ..Self::desk_scale()
        }
    }

    pub fn sad_hyper(&self) -> SadHyper {
        SadHyper {
            eta: self.eta,
            eps: self.eps_dist,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.pretrain_epochs == 0 && self.main_epochs == 0 {
            log::warn!("both epoch counts are zero; models stay at initialization");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(self.labeled_oversampling > 0.0 && self.labeled_oversampling.is_finite()) {
            return Err(Error::Config("labeled_oversampling must be > 0".into()));
        }
        if self.folds < 2 {
            return Err(Error::Config(format!("folds must be >= 2, got {}", self.folds)));
        }
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be >= 1".into()));
        }
        if self.layer_dims.len() < 2 || self.layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!("invalid layer_dims {:?}", self.layer_dims)));
        }
        if self.layer_dims[0] != *self.layer_dims.last().unwrap() {
            return Err(Error::Config("autoencoder pretraining needs input dim == output dim".into()));
        }
        self.sad_hyper().validate()
    }
}

/// Stops training when the loss is non-finite or has grown by more than
/// [`DIVERGENCE_GROWTH`] over the last [`DIVERGENCE_WINDOW`] epochs.
fn check_divergence(stage: &str, losses: &[f64]) -> Result<()> {
    let epoch = losses.len() - 1;
    let last = losses[epoch];
    if !last.is_finite() {
        return Err(Error::Divergence(format!("{stage}: epoch {epoch} loss is {last}")));
    }
    let earlier = losses[epoch.saturating_sub(DIVERGENCE_WINDOW)];
    if earlier > 0.0 && last > DIVERGENCE_GROWTH * earlier {
        return Err(Error::Divergence(format!(
            "{stage}: loss grew from {earlier:e} to {last:e} by epoch {epoch}"
        )));
    }
    Ok(())
}

/// Trained parameters and the per-epoch mean loss.
#[derive(Debug, Clone)]
pub struct Trained {
    pub model: MlpModel,
    pub losses: Vec<f64>,
}

fn shuffled(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

/// Autoencoder pretraining: `cfg.pretrain_epochs` passes of shuffled
/// minibatches minimizing the reconstruction loss.
pub fn pretrain(model: MlpModel, train: ArrayView2<f64>, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Trained> {
    if train.nrows() == 0 {
        return Err(Error::Data("pretraining needs at least one row".into()));
    }
    let mut model = model;
    let mut state = AdamState::new(&model);
    let mut losses = Vec::with_capacity(cfg.pretrain_epochs);
    for epoch in 0..cfg.pretrain_epochs {
        let order = shuffled(train.nrows(), rng);
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch = train.select(Axis(0), idx);
            let (loss, grads) = ae_loss(&model, batch.view())
                .map_err(|e| annotate(e, "pretrain", epoch))?;
            adam_step(&mut model, &grads, &mut state, cfg.lr, cfg.weight_decay)
                .map_err(|e| annotate(e, "pretrain", epoch))?;
            total += loss * idx.len() as f64;
        }
        losses.push(total / train.nrows() as f64);
        check_divergence("pretrain", &losses)?;
    }
    Ok(Trained { model, losses })
}

fn annotate(e: Error, stage: &str, epoch: usize) -> Error {
    match e {
        Error::Divergence(msg) => Error::Divergence(format!("{stage}: epoch {epoch}: {msg}")),
        other => other,
    }
}

/// Labeled rows drawn (with replacement) alongside a batch of `batch_size`
/// unlabeled rows: `ceil(batch_size * m / (n + m) * oversampling)`, at least 1.
pub fn labeled_per_batch(batch_size: usize, n: usize, m: usize, oversampling: f64) -> usize {
    if m == 0 {
        return 0;
    }
    let share = batch_size as f64 * m as f64 / (n + m) as f64 * oversampling;
    (share.ceil() as usize).max(1)
}

/// Main training phase with the center held fixed.
///
/// In [`ModelKind::Svdd`] mode every row of `unlabeled` is used with the
/// one-class loss and `labeled` is ignored. In [`ModelKind::Sad`] mode each
/// minibatch of unlabeled rows is joined by labeled rows sampled with
/// replacement. With no labeled rows the two modes consume the random
/// stream identically and produce the same parameters.
pub fn train_main(
    model: MlpModel,
    sphere: &Hypersphere,
    unlabeled: ArrayView2<f64>,
    labeled: &LabeledBatch,
    cfg: &TrainConfig,
    mode: ModelKind,
    rng: &mut ChaCha8Rng,
) -> Result<Trained> {
    let n = unlabeled.nrows();
    let m = if mode == ModelKind::Sad { labeled.len() } else { 0 };
    if n == 0 && m == 0 {
        return Err(Error::Data("main training needs at least one row".into()));
    }
    let hyper = cfg.sad_hyper();
    let stage = mode.as_str();

    let mut model = model;
    let mut state = AdamState::new(&model);
    let mut losses = Vec::with_capacity(cfg.main_epochs);
    for epoch in 0..cfg.main_epochs {
        let order = shuffled(n, rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        let chunks: Vec<&[usize]> = if n > 0 {
            order.chunks(cfg.batch_size).collect()
        } else {
            vec![&[]]
        };
        for idx in chunks {
            let batch = unlabeled.select(Axis(0), idx);
            let (loss, grads) = if m > 0 {
                let per_batch = labeled_per_batch(idx.len(), n, m, cfg.labeled_oversampling);
                let picks: Vec<usize> = (0..per_batch).map(|_| rng.random_range(0..m)).collect();
                sad_loss(&model, batch.view(), &labeled.select(&picks), sphere, &hyper)
            } else {
                svdd_loss(&model, batch.view(), sphere)
            }
            .map_err(|e| annotate(e, stage, epoch))?;
            adam_step(&mut model, &grads, &mut state, cfg.lr, cfg.weight_decay)
                .map_err(|e| annotate(e, stage, epoch))?;
            total += loss;
            batches += 1;
        }
        losses.push(total / batches as f64);
        check_divergence(stage, &losses)?;
    }
    Ok(Trained { model, losses })
}

/// Which fitting step is being reported to a [`FitProbe`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FitStage {
    Normalizer,
    Pca(ModelKind),
}

/// Observes the dataset rows handed to every fitting step.
pub trait FitProbe: Send + Sync {
    fn on_fit(&self, trial: usize, stage: FitStage, rows: &[Range<usize>]);
}

#[derive(Clone, Default)]
pub struct RunOptions {
    /// Worker threads for independent trials; 0 or 1 runs them in order.
    pub jobs: usize,
    pub probe: Option<Arc<dyn FitProbe>>,
}

/// Everything a scoring run needs: network, center, feature scaling and
/// the feature columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoringCheckpoint {
    pub format: String,
    pub version: u32,
    pub model_kind: ModelKind,
    pub trial: usize,
    pub fold: usize,
    pub schema: SchemaConfig,
    pub normalizer: Normalizer,
    pub center: Vec<f64>,
    pub model: MlpModel,
}

const CHECKPOINT_FORMAT: &str = "lobsad.checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

impl ScoringCheckpoint {
    pub fn sphere(&self) -> Result<Hypersphere> {
        Hypersphere::new(self.center.clone().into())
    }

    /// Scores raw (unnormalized) feature rows.
    pub fn score(&self, raw: ArrayView2<f64>) -> Result<Vec<f64>> {
        if raw.ncols() != self.normalizer.dim() {
            return Err(Error::shape("feature count", self.normalizer.dim(), raw.ncols()));
        }
        let z = self.normalizer.transform(raw)?;
        Ok(anomaly_score(&self.model, z.view(), &self.sphere()?)?.to_vec())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).map_err(|e| Error::json(path, e))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Self = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Schema(format!(
                "{}: unsupported checkpoint {:?} v{}",
                path.display(),
                ckpt.format,
                ckpt.version
            )));
        }
        if ckpt.center.len() != ckpt.model.output_dim() || ckpt.normalizer.dim() != ckpt.model.input_dim() {
            return Err(Error::Schema(format!("{}: inconsistent checkpoint dimensions", path.display())));
        }
        Ok(ckpt)
    }
}

#[derive(Debug, Clone)]
pub struct ModelOutcome {
    pub kind: ModelKind,
    pub checkpoint: ScoringCheckpoint,
    pub losses: Vec<f64>,
    pub train_scores: Vec<f64>,
    pub test_scores: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub report: TrialReport,
    pub train_rows: Vec<Range<usize>>,
    pub test_rows: Range<usize>,
    pub pretrain_losses: Vec<f64>,
    pub models: Vec<ModelOutcome>,
    pub scatter: Vec<Scatter>,
}

impl TrialResult {
    pub fn model(&self, kind: ModelKind) -> Option<&ModelOutcome> {
        self.models.iter().find(|m| m.kind == kind)
    }

    /// Global dataset row indices of the training split, in score order.
    pub fn train_row_indices(&self) -> Vec<usize> {
        self.train_rows.iter().cloned().flatten().collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct TrialSpec {
    trial: usize,
    repeat: usize,
    fold: usize,
    seed: u64,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of one trial. Repeats differ only through this value.
pub fn trial_seed(master: u64, repeat: usize, fold: usize) -> u64 {
    splitmix64(splitmix64(master ^ (repeat as u64).wrapping_mul(0xA24B_AED4_963E_E407)) ^ fold as u64)
}

const MAIN_STREAM: u64 = 0x5AD5_5AD5_5AD5_5AD5;

/// Runs every repeat x fold trial. Any failing trial fails the run; use
/// [`run_trials`] to keep the trials that completed.
pub fn run_experiment(dataset: &Dataset, cfg: &TrainConfig, opts: &RunOptions) -> Result<Vec<TrialResult>> {
    run_trials(dataset, cfg, opts)?.into_iter().collect()
}

/// Like [`run_experiment`] but returns each trial's outcome, ordered by trial.
pub fn run_trials(dataset: &Dataset, cfg: &TrainConfig, opts: &RunOptions) -> Result<Vec<Result<TrialResult>>> {
    cfg.validate()?;
    if dataset.n_features() != cfg.layer_dims[0] {
        return Err(Error::Config(format!(
            "dataset has {} features but the network expects {}",
            dataset.n_features(),
            cfg.layer_dims[0]
        )));
    }
    let plan = contiguous_kfold(dataset.n_rows(), cfg.folds)?;
    let specs: Vec<TrialSpec> = (0..cfg.repeats)
        .flat_map(|repeat| {
            (0..cfg.folds).map(move |fold| TrialSpec {
                trial: repeat * cfg.folds + fold + 1,
                repeat,
                fold,
                seed: trial_seed(cfg.seed, repeat, fold),
            })
        })
        .collect();

    let run = |spec: &TrialSpec| {
        let result = run_trial(dataset, &plan, cfg, *spec, opts);
        match &result {
            Ok(r) => log::info!("trial {} finished in {:.1}s", spec.trial, r.report.runtime_secs),
            Err(e) => log::error!("trial {} failed: {e}", spec.trial),
        }
        result
    };
    if opts.jobs <= 1 {
        return Ok(specs.iter().map(run).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(|| specs.par_iter().map(run).collect()))
}

fn labeled_positions(dataset: &Dataset, ranges: &[Range<usize>]) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    let mut offset = 0;
    for r in ranges {
        out.extend(dataset.labels().range(r.clone()).map(|&row| row - r.start + offset));
        offset += r.len();
    }
    out
}

fn run_trial(dataset: &Dataset, plan: &FoldPlan, cfg: &TrainConfig, spec: TrialSpec, opts: &RunOptions) -> Result<TrialResult> {
    let started = Instant::now();
    let train_rows = plan.train_ranges(spec.fold);
    let test_rows = plan.test_range(spec.fold);

    if let Some(probe) = &opts.probe {
        probe.on_fit(spec.trial, FitStage::Normalizer, &train_rows);
    }
    let normalizer = fit_normalizer(dataset, &train_rows)?;
    let train = normalizer.transform(dataset.rows(&train_rows)?.view())?;
    let test = normalizer.transform(dataset.rows(std::slice::from_ref(&test_rows))?.view())?;
    let train_labeled = labeled_positions(dataset, &train_rows);
    let test_labeled = labeled_positions(dataset, std::slice::from_ref(&test_rows));

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let init = MlpModel::init(spec.seed, &cfg.layer_dims, cfg.bias_enabled)?;
    let pre = pretrain(init, train.view(), cfg, &mut rng)?;
    let sphere = init_center(&pre.model, train.view())?;

    let unlabeled_idx: Vec<usize> = (0..train.nrows()).filter(|i| !train_labeled.contains(i)).collect();
    let labeled_idx: Vec<usize> = train_labeled.iter().copied().collect();
    let labeled = LabeledBatch::anomalies(train.select(Axis(0), &labeled_idx));
    let sad_unlabeled = train.select(Axis(0), &unlabeled_idx);

    let schema = SchemaConfig {
        ts_column: "ts".into(),
        feature_columns: dataset.feature_names().to_vec(),
    };
    let mut models = Vec::new();
    let mut metrics = Vec::new();
    let mut scatter = Vec::new();
    for &kind in cfg.mode.models() {
        let mut main_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ MAIN_STREAM);
        let trained = match kind {
            ModelKind::Svdd => train_main(
                pre.model.clone(),
                &sphere,
                train.view(),
                &LabeledBatch::empty(train.ncols()),
                cfg,
                kind,
                &mut main_rng,
            )?,
            ModelKind::Sad => train_main(
                pre.model.clone(),
                &sphere,
                sad_unlabeled.view(),
                &labeled,
                cfg,
                kind,
                &mut main_rng,
            )?,
        };
        let train_scores = anomaly_score(&trained.model, train.view(), &sphere)?.to_vec();
        let test_scores = anomaly_score(&trained.model, test.view(), &sphere)?.to_vec();
        let train_set = ScoreSet::new(train_scores.clone(), train_labeled.clone(), Split::Train, kind)?;
        let test_set = ScoreSet::new(test_scores.clone(), test_labeled.clone(), Split::Test, kind)?;
        metrics.push(ModelMetrics::from_scores(kind, &train_set, &test_set));

        if let Some(probe) = &opts.probe {
            probe.on_fit(spec.trial, FitStage::Pca(kind), &train_rows);
        }
        let train_out = embed(&trained.model, train.view())?;
        let basis = pca_fit(train_out.view(), 2)?;
        let test_out = embed(&trained.model, test.view())?;
        for (split, out, lab) in [
            (Split::Train, &train_out, &train_labeled),
            (Split::Test, &test_out, &test_labeled),
        ] {
            scatter.push(Scatter {
                trial: spec.trial,
                model: kind,
                split,
                points: pca_project(&basis, out.view())?,
                is_labeled: (0..out.nrows()).map(|i| lab.contains(&i)).collect(),
            });
        }

        models.push(ModelOutcome {
            kind,
            checkpoint: ScoringCheckpoint {
                format: CHECKPOINT_FORMAT.into(),
                version: CHECKPOINT_VERSION,
                model_kind: kind,
                trial: spec.trial,
                fold: spec.fold,
                schema: schema.clone(),
                normalizer: normalizer.clone(),
                center: sphere.center.to_vec(),
                model: trained.model,
            },
            losses: trained.losses,
            train_scores,
            test_scores,
        });
    }

    let report = TrialReport {
        trial: spec.trial,
        repeat: spec.repeat,
        fold: spec.fold,
        seed: spec.seed,
        n_train: train.nrows(),
        n_test: test.nrows(),
        labeled_train: train_labeled.len(),
        labeled_test: test_labeled.len(),
        models: metrics,
        runtime_secs: started.elapsed().as_secs_f64(),
        config: serde_json::to_value(cfg).map_err(|e| Error::Config(e.to_string()))?,
    };
    Ok(TrialResult {
        report,
        train_rows,
        test_rows,
        pretrain_losses: pre.losses,
        models,
        scatter,
    })
}

/// Writes checkpoints (`trial{t}_fold{f}_{model}.ckpt`) and score dumps
/// (`trial{t}_{model}_{split}_scores.csv`, columns `row,score` with global
/// row indices) for one trial.
pub fn write_trial_artifacts(result: &TrialResult, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let t = result.report.trial;
    let f = result.report.fold;
    let train_idx = result.train_row_indices();
    let test_idx: Vec<usize> = result.test_rows.clone().collect();
    let mut written = Vec::new();
    for m in &result.models {
        let ckpt = out_dir.join(format!("trial{t}_fold{f}_{}.ckpt", m.kind));
        m.checkpoint.save(&ckpt)?;
        written.push(ckpt);
        for (split, rows, scores) in [(Split::Train, &train_idx, &m.train_scores), (Split::Test, &test_idx, &m.test_scores)] {
            let path = out_dir.join(format!("trial{t}_{}_{split}_scores.csv", m.kind));
            write_scores(&path, rows.iter().copied().zip(scores.iter().copied()))?;
            written.push(path);
        }
    }
    Ok(written)
}

/// `row,score` CSV.
pub fn write_scores(path: impl AsRef<Path>, rows: impl IntoIterator<Item = (usize, f64)>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "row,score").map_err(|e| Error::io(path, e))?;
    for (row, score) in rows {
        writeln!(w, "{row},{score}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a `row,score` CSV.
pub fn read_scores(path: impl AsRef<Path>) -> Result<Vec<(usize, f64)>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    reader
        .records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec.map_err(|e| Error::csv(path, e))?;
            let bad = || Error::Data(format!("{}: row {}: malformed score record", path.display(), i + 1));
            let row = rec.get(0).and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            let score = rec.get(1).and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            Ok((row, score))
        })
        .collect()
}

/// Row indices covered by `ranges`, for instrumentation checks.
pub fn covered_rows(ranges: &[Range<usize>], n_rows: usize) -> Result<BTreeSet<usize>> {
    Ok(expand_ranges(ranges, n_rows)?.into_iter().collect())
}

/// Dataset rows as a matrix, in the order given.
pub fn gather(dataset: &Dataset, rows: &[usize]) -> Array2<f64> {
    dataset.features().select(Axis(0), rows)
}
