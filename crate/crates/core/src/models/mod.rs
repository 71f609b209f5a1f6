//! The four classifier architectures, teacher representations and
//! distillation training for the EDA-enhanced kinematic student.
//!
//! Input sources read from a [`SegmentSample`]: `kinematic` (16 × T_s),
//! `eda_ts` (15 × T_s) and `eda_num` (1 × 38).

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{SegmentSample, EDA_TS_ROWS, KINEMATIC_ROWS, NUMERIC_WIDTH};
use crate::nnet::{
    Activation, EpochStats, GraphBuilder, InputSource, LossSpec, ModelGraph, NnetError, RegKind,
    TrainConfig, TrainSet,
};
use crate::rng;

pub const KINEMATIC_INPUT: &str = "kinematic";
pub const EDA_TS_INPUT: &str = "eda_ts";
pub const EDA_NUM_INPUT: &str = "eda_num";

/// Node holding the EDA model's physiological representation.
pub const REPRESENTATION_NODE: &str = "representation";
/// Node of the enhanced student regressed onto the teacher.
pub const EMBEDDING_NODE: &str = "embedding";

const PRESETS_JSON: &str = include_str!("presets.json");

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperParams(String),
    #[error("unknown architecture `{0}`")]
    UnknownArchitecture(String),
    #[error("no teacher vector for segment {session_id}#{segment_index}")]
    MissingTeacherVector {
        session_id: String,
        segment_index: usize,
    },
    #[error(transparent)]
    Nnet(#[from] NnetError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

impl InputSource for SegmentSample {
    fn input(&self, name: &str) -> Option<ArrayView2<'_, f64>> {
        match name {
            KINEMATIC_INPUT => Some(self.kinematic.view()),
            EDA_TS_INPUT => Some(self.eda_ts.view()),
            EDA_NUM_INPUT => Some(self.eda_num.view().insert_axis(Axis(0))),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Eda,
    Kinematic,
    Fusion,
    Enhanced,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [Self::Eda, Self::Kinematic, Self::Fusion, Self::Enhanced];

    pub fn name(self) -> &'static str {
        match self {
            Self::Eda => "eda",
            Self::Kinematic => "kinematic",
            Self::Fusion => "fusion",
            Self::Enhanced => "enhanced",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| ModelError::UnknownArchitecture(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdaParams {
    pub lstm_size: usize,
    pub dense_size_1: usize,
    pub dense_size_2: usize,
    pub acti: Activation,
    pub rate: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KinematicParams {
    pub lstm_size: usize,
    pub dense_size: usize,
    pub acti: Activation,
    pub rate: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionParams {
    /// LSTM over the EDA time series.
    pub lstm_size_1: usize,
    /// LSTM over the kinematic time series.
    pub lstm_size_2: usize,
    pub dense_size_1: usize,
    pub dense_size_2: usize,
    pub acti_1: Activation,
    pub acti_2: Activation,
    pub rate: f64,
    pub lr: f64,
}

fn default_dense_size_3() -> usize {
    40
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnhancedParams {
    pub lstm_size: usize,
    /// Embedding width when the teacher is projected; otherwise recorded
    /// but replaced by the teacher width.
    pub dense_size_1: usize,
    pub dense_size_2: usize,
    #[serde(default = "default_dense_size_3")]
    pub dense_size_3: usize,
    pub acti_1: Activation,
    pub acti_2: Activation,
    pub acti_3: Activation,
    pub rate_1: f64,
    pub rate_2: f64,
    pub rate_3: f64,
    pub lr: f64,
    pub beta: f64,
    pub loss: RegKind,
    #[serde(default)]
    pub teacher_projection: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HyperParams {
    Eda(EdaParams),
    Kinematic(KinematicParams),
    Fusion(FusionParams),
    Enhanced(EnhancedParams),
}

fn check_widths(widths: &[usize]) -> Result<()> {
    if widths.contains(&0) {
        return Err(ModelError::InvalidHyperParams("widths must be at least 1".into()));
    }
    Ok(())
}

fn check_rates(rates: &[f64]) -> Result<()> {
    if let Some(r) = rates.iter().find(|r| !(0.0..1.0).contains(*r)) {
        return Err(ModelError::InvalidHyperParams(format!("dropout rate {r} outside [0, 1)")));
    }
    Ok(())
}

fn check_lr(lr: f64) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(ModelError::InvalidHyperParams(format!("learning rate {lr} must be positive")));
    }
    Ok(())
}

impl HyperParams {
    pub fn architecture(&self) -> Architecture {
        match self {
            Self::Eda(_) => Architecture::Eda,
            Self::Kinematic(_) => Architecture::Kinematic,
            Self::Fusion(_) => Architecture::Fusion,
            Self::Enhanced(_) => Architecture::Enhanced,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        match self {
            Self::Eda(p) => p.lr,
            Self::Kinematic(p) => p.lr,
            Self::Fusion(p) => p.lr,
            Self::Enhanced(p) => p.lr,
        }
    }

    pub fn loss_spec(&self) -> LossSpec {
        match self {
            Self::Enhanced(p) => LossSpec {
                beta: p.beta,
                reg: p.loss,
            },
            _ => LossSpec::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Eda(p) => {
                check_widths(&[p.lstm_size, p.dense_size_1, p.dense_size_2])?;
                check_rates(&[p.rate])?;
                check_lr(p.lr)
            }
            Self::Kinematic(p) => {
                check_widths(&[p.lstm_size, p.dense_size])?;
                check_rates(&[p.rate])?;
                check_lr(p.lr)
            }
            Self::Fusion(p) => {
                check_widths(&[p.lstm_size_1, p.lstm_size_2, p.dense_size_1, p.dense_size_2])?;
                check_rates(&[p.rate])?;
                check_lr(p.lr)
            }
            Self::Enhanced(p) => {
                check_widths(&[p.lstm_size, p.dense_size_1, p.dense_size_2, p.dense_size_3])?;
                check_rates(&[p.rate_1, p.rate_2, p.rate_3])?;
                check_lr(p.lr)?;
                if !(p.beta >= 0.0 && p.beta.is_finite()) {
                    return Err(ModelError::InvalidHyperParams(format!("beta {} must be ≥ 0", p.beta)));
                }
                Ok(())
            }
        }
    }

    /// Training settings for this architecture: learning rate and loss from
    /// the hyperparameters, the rest from `base`.
    pub fn train_config(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate(),
            loss: self.loss_spec(),
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Presets {
    pub eda: EdaParams,
    pub kinematic: KinematicParams,
    pub fusion: FusionParams,
    pub enhanced: EnhancedParams,
}

impl Presets {
    pub fn get(&self, arch: Architecture) -> HyperParams {
        match arch {
            Architecture::Eda => HyperParams::Eda(self.eda.clone()),
            Architecture::Kinematic => HyperParams::Kinematic(self.kinematic.clone()),
            Architecture::Fusion => HyperParams::Fusion(self.fusion.clone()),
            Architecture::Enhanced => HyperParams::Enhanced(self.enhanced.clone()),
        }
    }
}

/// The shipped presets.
pub fn presets() -> Presets {
    serde_json::from_str(PRESETS_JSON).expect("bundled presets parse")
}

pub fn presets_json() -> &'static str {
    PRESETS_JSON
}

pub fn preset(arch: Architecture) -> HyperParams {
    presets().get(arch)
}

pub fn build_eda_model(hp: &EdaParams, seed: u64) -> Result<ModelGraph> {
    HyperParams::Eda(hp.clone()).validate()?;
    let mut g = GraphBuilder::new(seed);
    let ts = g.sequence_input(EDA_TS_INPUT, EDA_TS_ROWS);
    let num = g.vector_input(EDA_NUM_INPUT, NUMERIC_WIDTH);
    let lstm = g.lstm("lstm", ts, hp.lstm_size);
    let dense_num = g.dense("numeric", num, hp.dense_size_1, hp.acti);
    let rep = g.concat(REPRESENTATION_NODE, &[lstm, dense_num]);
    let drop = g.dropout("dropout", rep, hp.rate);
    let dense = g.dense("dense", drop, hp.dense_size_2, hp.acti);
    let out = g.dense("output", dense, 1, Activation::Sigmoid);
    Ok(g.build(out, None)?)
}

pub fn build_kinematic_model(hp: &KinematicParams, seed: u64) -> Result<ModelGraph> {
    HyperParams::Kinematic(hp.clone()).validate()?;
    let mut g = GraphBuilder::new(seed);
    let x = g.sequence_input(KINEMATIC_INPUT, KINEMATIC_ROWS);
    let lstm = g.lstm("lstm", x, hp.lstm_size);
    let drop = g.dropout("dropout", lstm, hp.rate);
    let dense = g.dense("dense", drop, hp.dense_size, hp.acti);
    let out = g.dense("output", dense, 1, Activation::Sigmoid);
    Ok(g.build(out, None)?)
}

pub fn build_fusion_model(hp: &FusionParams, seed: u64) -> Result<ModelGraph> {
    HyperParams::Fusion(hp.clone()).validate()?;
    let mut g = GraphBuilder::new(seed);
    let ts = g.sequence_input(EDA_TS_INPUT, EDA_TS_ROWS);
    let kin = g.sequence_input(KINEMATIC_INPUT, KINEMATIC_ROWS);
    let num = g.vector_input(EDA_NUM_INPUT, NUMERIC_WIDTH);
    let lstm_eda = g.lstm("lstm_eda", ts, hp.lstm_size_1);
    let lstm_kin = g.lstm("lstm_kinematic", kin, hp.lstm_size_2);
    let dense_num = g.dense("numeric", num, hp.dense_size_1, hp.acti_1);
    let cat = g.concat("fused", &[lstm_eda, lstm_kin, dense_num]);
    let drop = g.dropout("dropout", cat, hp.rate);
    let dense = g.dense("dense", drop, hp.dense_size_2, hp.acti_2);
    let out = g.dense("output", dense, 1, Activation::Sigmoid);
    Ok(g.build(out, None)?)
}

/// Embedding width used by the student for a given teacher width.
pub fn embedding_width(hp: &EnhancedParams, teacher_width: usize) -> usize {
    if hp.teacher_projection {
        hp.dense_size_1
    } else {
        teacher_width
    }
}

pub fn build_enhanced_model(hp: &EnhancedParams, teacher_width: usize, seed: u64) -> Result<ModelGraph> {
    HyperParams::Enhanced(hp.clone()).validate()?;
    if teacher_width == 0 {
        return Err(ModelError::InvalidHyperParams("teacher width must be at least 1".into()));
    }
    let mut g = GraphBuilder::new(seed);
    let x = g.sequence_input(KINEMATIC_INPUT, KINEMATIC_ROWS);
    let lstm = g.lstm("lstm", x, hp.lstm_size);
    let drop_a = g.dropout("dropout_1", lstm, hp.rate_1);
    let emb = g.dense(EMBEDDING_NODE, drop_a, embedding_width(hp, teacher_width), hp.acti_1);
    let drop_b = g.dropout("dropout_2", lstm, hp.rate_2);
    let kin = g.dense("kinematic_repr", drop_b, hp.dense_size_2, hp.acti_2);
    let cat = g.concat("fused", &[emb, kin]);
    let drop_c = g.dropout("dropout_3", cat, hp.rate_3);
    let dense = g.dense("dense", drop_c, hp.dense_size_3, hp.acti_3);
    let out = g.dense("output", dense, 1, Activation::Sigmoid);
    Ok(g.build(out, Some(emb))?)
}

/// Width of the teacher representation produced by an EDA model.
pub fn teacher_width(hp: &EdaParams) -> usize {
    hp.lstm_size + hp.dense_size_1
}

/// Builds any architecture. The enhanced model is sized for the teacher
/// that `preset`-style EDA parameters `teacher` would produce.
pub fn build_model(hp: &HyperParams, teacher: &EdaParams, seed: u64) -> Result<ModelGraph> {
    match hp {
        HyperParams::Eda(p) => build_eda_model(p, seed),
        HyperParams::Kinematic(p) => build_kinematic_model(p, seed),
        HyperParams::Fusion(p) => build_fusion_model(p, seed),
        HyperParams::Enhanced(p) => build_enhanced_model(p, teacher_width(teacher), seed),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SegmentKey {
    pub session_id: String,
    pub segment_index: usize,
}

impl SegmentKey {
    pub fn of(s: &SegmentSample) -> Self {
        Self {
            session_id: s.session_id.clone(),
            segment_index: s.segment_index,
        }
    }
}

/// Teacher vectors keyed by segment.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherRepresentation {
    pub width: usize,
    vectors: HashMap<SegmentKey, Vec<f64>>,
}

impl TeacherRepresentation {
    pub fn get(&self, key: &SegmentKey) -> Option<&[f64]> {
        self.vectors.get(key).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Stacks the vectors of `samples` in order.
    pub fn targets(&self, samples: &[&SegmentSample]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((samples.len(), self.width));
        for (row, s) in samples.iter().enumerate() {
            let key = SegmentKey::of(s);
            let v = self.get(&key).ok_or_else(|| ModelError::MissingTeacherVector {
                session_id: key.session_id.clone(),
                segment_index: key.segment_index,
            })?;
            out.row_mut(row).assign(&ndarray::ArrayView1::from(v));
        }
        Ok(out)
    }
}

/// Eval-mode representation vectors of a trained EDA model.
pub fn extract_teacher_representation(
    teacher: &ModelGraph,
    samples: &[&SegmentSample],
) -> Result<TeacherRepresentation> {
    if teacher.trained_epochs == 0 {
        return Err(NnetError::Untrained.into());
    }
    let node = teacher
        .node_index(REPRESENTATION_NODE)
        .ok_or_else(|| ModelError::InvalidHyperParams("teacher has no representation node".into()))?;
    let values = teacher.node_values(samples, node)?;
    let vectors = samples
        .iter()
        .zip(values.rows())
        .map(|(s, row)| (SegmentKey::of(s), row.to_vec()))
        .collect();
    Ok(TeacherRepresentation {
        width: teacher.width(node),
        vectors,
    })
}

/// Fixed random linear map from teacher width down to the embedding width.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherProjection {
    pub matrix: Array2<f64>,
}

impl TeacherProjection {
    pub fn new(from: usize, to: usize, seed: u64) -> Self {
        let mut rng = rng::stream(seed, &[0x7e7]);
        let scale = (3.0 / from as f64).sqrt();
        Self {
            matrix: Array2::from_shape_simple_fn((from, to), || rng.random_range(-scale..scale)),
        }
    }

    pub fn apply(&self, targets: &Array2<f64>) -> Array2<f64> {
        targets.dot(&self.matrix)
    }
}

fn labels_of(samples: &[&SegmentSample]) -> Vec<f64> {
    samples.iter().map(|s| s.label.as_f64()).collect()
}

/// Plain BCE training of any graph on segments.
pub fn train_plain(
    graph: &mut ModelGraph,
    samples: &[&SegmentSample],
    config: &TrainConfig,
) -> Result<Vec<EpochStats>> {
    let set = TrainSet::new(samples.to_vec(), labels_of(samples));
    Ok(graph.train(&set, config)?)
}

/// Regression targets for the student, projected when the hyperparameters
/// ask for it.
pub fn student_targets(
    hp: &EnhancedParams,
    teacher: &TeacherRepresentation,
    samples: &[&SegmentSample],
    seed: u64,
) -> Result<Array2<f64>> {
    let raw = teacher.targets(samples)?;
    Ok(if hp.teacher_projection {
        TeacherProjection::new(teacher.width, hp.dense_size_1, seed).apply(&raw)
    } else {
        raw
    })
}

/// Composite-loss training of the enhanced student. `config.loss` is used
/// as given.
pub fn train_enhanced(
    student: &mut ModelGraph,
    hp: &EnhancedParams,
    teacher: &TeacherRepresentation,
    samples: &[&SegmentSample],
    config: &TrainConfig,
) -> Result<Vec<EpochStats>> {
    let targets = student_targets(hp, teacher, samples, student.seed)?;
    let set = TrainSet::new(samples.to_vec(), labels_of(samples)).with_targets(targets);
    Ok(student.train(&set, config)?)
}
