//! Cross-validation, time-span and exposure sweeps, random search and
//! report output.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{self, FeatureConfig, FeatureError, FeatureNormalizer, ResampledSession, SegmentSample};
use crate::models::{
    self, build_eda_model, build_enhanced_model, build_model, extract_teacher_representation,
    train_enhanced, train_plain, EdaParams, HyperParams, ModelError, TeacherRepresentation,
};
use crate::nnet::{ModelGraph, TrainConfig};
use crate::rng;

mod report;
mod tune;

pub use report::{ReportRow, SweepReport, REPORT_HEADER};
pub use tune::{sample_params, tune_random_search, SearchSpace, Trial, TuneResult};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment setup: {0}")]
    InvalidSpec(String),
    #[error("cannot split {n} items into {k} folds")]
    TooFewItems { n: usize, k: usize },
    #[error("length mismatch: {0} predictions, {1} labels")]
    LengthMismatch(usize, usize),
    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<ExperimentError>,
    },
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("report output: {0}")]
    Io(#[from] std::io::Error),
    #[error("report output: {0}")]
    Csv(#[from] csv::Error),
}

impl From<crate::nnet::NnetError> for ExperimentError {
    fn from(e: crate::nnet::NnetError) -> Self {
        Self::Model(e.into())
    }
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grouping {
    /// Segments are assigned to folds independently.
    Segment,
    /// All segments of a session share a fold.
    #[default]
    Session,
}

impl Grouping {
    pub fn name(self) -> &'static str {
        match self {
            Self::Segment => "segment",
            Self::Session => "session",
        }
    }
}

impl fmt::Display for Grouping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Grouping {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "segment" => Ok(Self::Segment),
            "session" => Ok(Self::Session),
            _ => Err(ExperimentError::InvalidSpec(format!("unknown grouping `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub k: usize,
    pub grouping: Grouping,
    pub seed: u64,
}

impl Default for FoldSpec {
    fn default() -> Self {
        Self {
            k: 5,
            grouping: Grouping::Session,
            seed: 0,
        }
    }
}

/// Shuffles `0..n` with the fold seed and deals it into `k` contiguous
/// chunks. The first `n % k` folds get one extra item.
pub fn kfold_split(n: usize, spec: &FoldSpec) -> Result<Vec<Vec<usize>>> {
    if spec.k < 2 {
        return Err(ExperimentError::InvalidSpec(format!("k = {} must be at least 2", spec.k)));
    }
    if n < spec.k {
        return Err(ExperimentError::TooFewItems { n, k: spec.k });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(spec.seed, &[0xf01d]));
    let (base, extra) = (n / spec.k, n % spec.k);
    let mut folds = Vec::with_capacity(spec.k);
    let mut start = 0;
    for f in 0..spec.k {
        let len = base + usize::from(f < extra);
        let mut fold = order[start..start + len].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += len;
    }
    Ok(folds)
}

/// Held-out sample indices per fold, honouring the grouping mode.
pub fn assign_folds(samples: &[SegmentSample], spec: &FoldSpec) -> Result<Vec<Vec<usize>>> {
    match spec.grouping {
        Grouping::Segment => kfold_split(samples.len(), spec),
        Grouping::Session => {
            let sessions: Vec<&str> = samples
                .iter()
                .map(|s| s.session_id.as_str())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let folds = kfold_split(sessions.len(), spec)?;
            let mut fold_of = std::collections::HashMap::new();
            for (f, members) in folds.iter().enumerate() {
                for &m in members {
                    fold_of.insert(sessions[m], f);
                }
            }
            let mut out = vec![Vec::new(); spec.k];
            for (i, s) in samples.iter().enumerate() {
                out[fold_of[s.session_id.as_str()]].push(i);
            }
            Ok(out)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub f1: f64,
}

/// Accuracy and F1 of the positive (sick) class.
pub fn metrics(predictions: &[u8], labels: &[u8]) -> Result<Metrics> {
    if predictions.len() != labels.len() {
        return Err(ExperimentError::LengthMismatch(predictions.len(), labels.len()));
    }
    if predictions.is_empty() {
        return Err(ExperimentError::InvalidSpec("no predictions to score".into()));
    }
    let (mut tp, mut fp, mut fn_, mut correct) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &y) in predictions.iter().zip(labels) {
        correct += usize::from(p == y);
        match (p == 1, y == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(Metrics {
        accuracy: correct as f64 / predictions.len() as f64,
        f1,
    })
}

/// Everything a cross-validation run needs besides the model and data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub folds: FoldSpec,
    pub train: TrainConfig,
    /// Teacher architecture for the enhanced model.
    pub teacher: EdaParams,
    pub features: FeatureConfig,
    /// Upper bound on worker threads.
    pub jobs: usize,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            folds: FoldSpec::default(),
            train: TrainConfig::default(),
            teacher: models::presets().eda,
            features: FeatureConfig::default(),
            jobs: 1,
        }
    }
}

impl CvConfig {
    fn model_seed(&self, fold: usize) -> u64 {
        rng::derive_seed(self.folds.seed, &[fold as u64, 0x1417])
    }

    fn teacher_seed(&self, fold: usize) -> u64 {
        rng::derive_seed(self.folds.seed, &[fold as u64, 0x7eac])
    }

    fn train_config(&self, hp: &HyperParams, fold: usize, role: u64) -> TrainConfig {
        let mut cfg = hp.train_config(&self.train);
        cfg.shuffle_seed = rng::derive_seed(self.folds.seed, &[fold as u64, 0x5eed, role]);
        cfg
    }
}

/// Runs `f` on a pool of at most `jobs` threads.
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| ExperimentError::InvalidSpec(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Training-fold state: the normalizer and, for the enhanced model, the
/// teacher's vectors for the training segments.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldContext {
    pub normalizer: FeatureNormalizer,
    pub teacher: Option<TeacherRepresentation>,
}

fn subset(samples: &[SegmentSample], idx: &[usize]) -> Vec<SegmentSample> {
    idx.iter().map(|&i| samples[i].clone()).collect()
}

fn fold_context_inner(
    hp: &HyperParams,
    samples: &[SegmentSample],
    train_idx: &[usize],
    cfg: &CvConfig,
    fold: usize,
) -> Result<(FoldContext, Vec<SegmentSample>)> {
    let normalizer = FeatureNormalizer::fit(train_idx.iter().map(|&i| &samples[i]), cfg.features.normalize_numeric)?;
    let train = normalizer.apply_all(&subset(samples, train_idx))?;
    let teacher = if let HyperParams::Enhanced(_) = hp {
        let mut t = build_eda_model(&cfg.teacher, cfg.teacher_seed(fold))?;
        let refs: Vec<&SegmentSample> = train.iter().collect();
        let tcfg = cfg.train_config(&HyperParams::Eda(cfg.teacher.clone()), fold, 1);
        train_plain(&mut t, &refs, &tcfg)?;
        Some(extract_teacher_representation(&t, &refs)?)
    } else {
        None
    };
    Ok((FoldContext { normalizer, teacher }, train))
}

/// Fits the normalizer (and teacher) from the training indices only.
pub fn fit_fold_context(
    hp: &HyperParams,
    samples: &[SegmentSample],
    train_idx: &[usize],
    cfg: &CvConfig,
    fold: usize,
) -> Result<FoldContext> {
    Ok(fold_context_inner(hp, samples, train_idx, cfg, fold)?.0)
}

/// Trains `hp` on already normalized segments. The enhanced model needs the
/// teacher vectors of those segments.
pub fn train_model(
    hp: &HyperParams,
    train: &[SegmentSample],
    teacher: Option<&TeacherRepresentation>,
    cfg: &CvConfig,
    fold: usize,
) -> Result<ModelGraph> {
    let refs: Vec<&SegmentSample> = train.iter().collect();
    let tcfg = cfg.train_config(hp, fold, 0);
    let seed = cfg.model_seed(fold);
    Ok(match hp {
        HyperParams::Enhanced(p) => {
            let teacher =
                teacher.ok_or_else(|| ExperimentError::InvalidSpec("enhanced model needs a teacher".into()))?;
            let mut g = build_enhanced_model(p, teacher.width, seed)?;
            train_enhanced(&mut g, p, teacher, &refs, &tcfg)?;
            g
        }
        _ => {
            let mut g = build_model(hp, &cfg.teacher, seed)?;
            train_plain(&mut g, &refs, &tcfg)?;
            g
        }
    })
}

/// Thresholds the sick probability at 0.5 and scores it.
pub fn evaluate(graph: &ModelGraph, samples: &[SegmentSample]) -> Result<Metrics> {
    let refs: Vec<&SegmentSample> = samples.iter().collect();
    let preds: Vec<u8> = graph.predict(&refs)?.into_iter().map(|p| u8::from(p >= 0.5)).collect();
    let labels: Vec<u8> = samples.iter().map(|s| s.label.value).collect();
    metrics(&preds, &labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub accuracy: f64,
    pub f1: f64,
    pub n_train: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub folds: Vec<FoldResult>,
    pub mean_accuracy: f64,
    /// Population standard deviation over folds.
    pub std_accuracy: f64,
    pub mean_f1: f64,
    pub n_samples: usize,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn run_fold(
    hp: &HyperParams,
    samples: &[SegmentSample],
    folds: &[Vec<usize>],
    fold: usize,
    cfg: &CvConfig,
) -> Result<FoldResult> {
    let test_idx = &folds[fold];
    let train_idx: Vec<usize> = folds
        .iter()
        .enumerate()
        .filter(|(f, _)| *f != fold)
        .flat_map(|(_, idx)| idx.iter().copied())
        .collect();
    let (ctx, train) = fold_context_inner(hp, samples, &train_idx, cfg, fold)?;
    let graph = train_model(hp, &train, ctx.teacher.as_ref(), cfg, fold)?;
    let test = ctx.normalizer.apply_all(&subset(samples, test_idx))?;
    let m = evaluate(&graph, &test)?;
    log::debug!("{} fold {fold}: accuracy {:.4}", hp.architecture(), m.accuracy);
    Ok(FoldResult {
        fold,
        accuracy: m.accuracy,
        f1: m.f1,
        n_train: train_idx.len(),
        n_test: test_idx.len(),
    })
}

fn cv_inner(hp: &HyperParams, samples: &[SegmentSample], cfg: &CvConfig) -> Result<CvResult> {
    if samples.is_empty() {
        return Err(ExperimentError::InvalidSpec("empty dataset".into()));
    }
    hp.validate()?;
    let folds = assign_folds(samples, &cfg.folds)?;
    let results = (0..folds.len())
        .into_par_iter()
        .map(|f| {
            run_fold(hp, samples, &folds, f, cfg).map_err(|e| ExperimentError::Fold {
                fold: f,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let acc: Vec<f64> = results.iter().map(|r| r.accuracy).collect();
    let f1: Vec<f64> = results.iter().map(|r| r.f1).collect();
    let (mean_accuracy, std_accuracy) = mean_std(&acc);
    Ok(CvResult {
        mean_accuracy,
        std_accuracy,
        mean_f1: mean_std(&f1).0,
        n_samples: samples.len(),
        folds: results,
    })
}

/// k-fold cross-validation of one architecture. Folds run concurrently on
/// up to `cfg.jobs` threads; every fold draws from its own seed streams.
pub fn run_cv(hp: &HyperParams, samples: &[SegmentSample], cfg: &CvConfig) -> Result<CvResult> {
    with_jobs(cfg.jobs, || cv_inner(hp, samples, cfg))?
}

/// Featurizes every session at `ts` in session order.
pub fn featurize_sessions(
    sessions: &[ResampledSession],
    ts: usize,
    config: &FeatureConfig,
) -> Result<Vec<SegmentSample>> {
    let per: Vec<Vec<SegmentSample>> = sessions
        .par_iter()
        .map(|s| features::featurize_resampled(s, ts, config))
        .collect::<std::result::Result<_, _>>()?;
    Ok(per.into_iter().flatten().collect())
}

/// Uniform subsample of `target` segments without replacement, order kept.
pub fn subsample(samples: Vec<SegmentSample>, target: usize, seed: u64, coords: &[u64]) -> Result<Vec<SegmentSample>> {
    if target > samples.len() {
        return Err(ExperimentError::InvalidSpec(format!(
            "cannot subsample {target} of {} segments",
            samples.len()
        )));
    }
    let mut keep = index::sample(&mut rng::stream(seed, coords), samples.len(), target).into_vec();
    keep.sort_unstable();
    let mut slots: Vec<Option<SegmentSample>> = samples.into_iter().map(Some).collect();
    Ok(keep.into_iter().map(|i| slots[i].take().expect("indices are distinct")).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleControl {
    #[default]
    None,
    /// Every cell is subsampled to the smallest cell's segment count.
    Downsample,
}

impl FromStr for SampleControl {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "downsample" => Ok(Self::Downsample),
            _ => Err(ExperimentError::InvalidSpec(format!("unknown control `{s}`"))),
        }
    }
}

pub const DEFAULT_SPANS: [usize; 5] = [10, 15, 20, 30, 40];
pub const EXPOSURE_TS: usize = 20;
pub const DEFAULT_EXPOSURE_N: [usize; 5] = [1, 2, 3, 4, 5];

fn shortest(sessions: &[ResampledSession]) -> Result<usize> {
    sessions
        .iter()
        .map(ResampledSession::len)
        .min()
        .ok_or_else(|| ExperimentError::InvalidSpec("no sessions".into()))
}

/// One CV per (model, cell) over prepared cell datasets.
fn sweep_cells(
    models: &[HyperParams],
    variable: &str,
    cells: &[(usize, Vec<SegmentSample>)],
    cfg: &CvConfig,
) -> Result<SweepReport> {
    let jobs: Vec<(&HyperParams, &(usize, Vec<SegmentSample>))> =
        models.iter().flat_map(|m| cells.iter().map(move |c| (m, c))).collect();
    let rows = with_jobs(cfg.jobs, || {
        jobs.par_iter()
            .map(|(hp, (value, data))| {
                let cv = cv_inner(hp, data, cfg)?;
                log::info!(
                    "{} {variable}={value}: {:.3} ± {:.3}",
                    hp.architecture(),
                    cv.mean_accuracy,
                    cv.std_accuracy
                );
                Ok(ReportRow {
                    model: hp.architecture().name().to_string(),
                    variable: variable.to_string(),
                    value: *value,
                    grouping: cfg.folds.grouping,
                    seed: cfg.folds.seed,
                    cv,
                })
            })
            .collect::<Result<Vec<_>>>()
    })??;
    Ok(SweepReport { rows })
}

/// Segment sets for each span, downsampled to a common count on request.
pub fn time_span_cells(
    sessions: &[ResampledSession],
    spans: &[usize],
    control: SampleControl,
    cfg: &CvConfig,
) -> Result<Vec<(usize, Vec<SegmentSample>)>> {
    let len = shortest(sessions)?;
    if spans.is_empty() {
        return Err(ExperimentError::InvalidSpec("no spans".into()));
    }
    if let Some(bad) = spans.iter().find(|&&s| s == 0 || s > len) {
        return Err(ExperimentError::InvalidSpec(format!("span {bad} s does not fit a {len} s session")));
    }
    let mut cells = spans
        .iter()
        .map(|&ts| Ok((ts, featurize_sessions(sessions, ts, &cfg.features)?)))
        .collect::<Result<Vec<_>>>()?;
    if control == SampleControl::Downsample {
        let target = cells.iter().map(|(_, d)| d.len()).min().unwrap_or(0);
        for (ts, data) in cells.iter_mut() {
            *data = subsample(std::mem::take(data), target, cfg.folds.seed, &[0xd0, *ts as u64])?;
        }
    }
    Ok(cells)
}

pub fn time_span_sweep(
    sessions: &[ResampledSession],
    models: &[HyperParams],
    spans: &[usize],
    control: SampleControl,
    cfg: &CvConfig,
) -> Result<SweepReport> {
    let cells = time_span_cells(sessions, spans, control, cfg)?;
    sweep_cells(models, "T_s", &cells, cfg)
}

/// Segment sets with the first `n` segments of each session removed, all
/// subsampled to the count left by the largest `n`.
pub fn exposure_cells(
    sessions: &[ResampledSession],
    ts: usize,
    removed: &[usize],
    cfg: &CvConfig,
) -> Result<Vec<(usize, Vec<SegmentSample>)>> {
    let len = shortest(sessions)?;
    let max_n = removed
        .iter()
        .copied()
        .max()
        .ok_or_else(|| ExperimentError::InvalidSpec("no exposure cut-offs".into()))?;
    if ts == 0 || max_n * ts >= len || (len / ts) <= max_n {
        return Err(ExperimentError::InvalidSpec(format!(
            "removing {max_n} segments of {ts} s leaves nothing of a {len} s session"
        )));
    }
    let all = featurize_sessions(sessions, ts, &cfg.features)?;
    let target = (len / ts - max_n) * sessions.len();
    removed
        .iter()
        .map(|&n| {
            let kept: Vec<SegmentSample> = all.iter().filter(|s| s.segment_index >= n).cloned().collect();
            Ok((n, subsample(kept, target, cfg.folds.seed, &[0xe0, n as u64])?))
        })
        .collect()
}

pub fn exposure_sweep(
    sessions: &[ResampledSession],
    models: &[HyperParams],
    ts: usize,
    removed: &[usize],
    cfg: &CvConfig,
) -> Result<SweepReport> {
    let cells = exposure_cells(sessions, ts, removed, cfg)?;
    sweep_cells(models, "n", &cells, cfg)
}

#[cfg(test)]
mod tests;
