//! Segmentation and per-segment feature blocks.
//!
//! All head and motion channels are mean-downsampled to 1 Hz. EDA is split
//! into SCL and SCR at its native rate and the three components are then
//! downsampled. First differences and trailing statistics are computed over
//! the whole session before it is cut into segments.
//!
//! Kinematic rows (16):
//! pos x, y, z; Δpos x, y, z; rot x, y, z; Δrot x, y, z; speed; Δspeed;
//! rotation; Δrotation.
//!
//! EDA time-series rows (15):
//! EDA, SCR, SCL, then min, max, mean, std of EDA, of SCR and of SCL.

mod numeric;
mod persistence;
pub mod store;

use std::collections::BTreeMap;
use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sigproc::{
    decompose_eda, detect_scr_events_with, diff_values, downsample_mean, fit_normalizer,
    trailing_stats, DecompositionConfig, NormalizerStats, ScrDetectionConfig, SigprocError,
};
use crate::telemetry::{self, ChannelSeries, CsLabel, RawSession, TelemetryError};

pub use numeric::{eda_numerical_vector, SegmentSignals, NUMERIC_FEATURE_NAMES, NUMERIC_WIDTH};
pub use persistence::{sublevel_persistence, PersistencePair};

pub const KINEMATIC_ROWS: usize = 16;
pub const EDA_TS_ROWS: usize = 15;
pub const FEATURE_RATE_HZ: f64 = 1.0;

pub const KINEMATIC_ROW_NAMES: [&str; KINEMATIC_ROWS] = [
    "pos_x", "pos_y", "pos_z", "dpos_x", "dpos_y", "dpos_z", "rot_x", "rot_y", "rot_z", "drot_x",
    "drot_y", "drot_z", "speed", "dspeed", "rotation", "drotation",
];

pub const EDA_TS_ROW_NAMES: [&str; EDA_TS_ROWS] = [
    "eda", "scr", "scl", "eda_min", "eda_max", "eda_mean", "eda_std", "scr_min", "scr_max",
    "scr_mean", "scr_std", "scl_min", "scl_max", "scl_mean", "scl_std",
];

pub const SCL: &str = "scl";
pub const SCR: &str = "scr";

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("missing channel `{0}`")]
    MissingChannel(String),
    #[error("EDA decomposition not available: missing `{0}`")]
    MissingDecomposition(String),
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
    #[error(transparent)]
    Sigproc(#[from] SigprocError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt feature store: {0}")]
    CorruptStore(String),
}

pub type Result<T> = std::result::Result<T, FeatureError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub decomposition: DecompositionConfig,
    pub scr: ScrDetectionConfig,
    pub trailing_window_s: usize,
    /// Min-max normalize the numerical block along with the time series.
    pub normalize_numeric: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            decomposition: DecompositionConfig::default(),
            scr: ScrDetectionConfig::default(),
            trailing_window_s: 3,
            normalize_numeric: true,
        }
    }
}

/// A session reduced to 1 Hz, with SCL and SCR alongside the raw channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ResampledSession {
    pub session_id: String,
    pub participant_id: String,
    pub label: CsLabel,
    pub channels: BTreeMap<String, Vec<f64>>,
}

impl ResampledSession {
    /// Number of 1 Hz samples shared by every channel.
    pub fn len(&self) -> usize {
        self.channels.values().map(Vec::len).min().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, name: &str) -> Result<&[f64]> {
        self.channels
            .get(name)
            .map(|v| &v[..self.len()])
            .ok_or_else(|| FeatureError::MissingChannel(name.to_string()))
    }

    fn component(&self, name: &str) -> Result<&[f64]> {
        self.channel(name)
            .map_err(|_| FeatureError::MissingDecomposition(name.to_string()))
    }
}

const KINEMATIC_CHANNELS: [&str; 8] = [
    telemetry::POS_X,
    telemetry::POS_Y,
    telemetry::POS_Z,
    telemetry::ROT_X,
    telemetry::ROT_Y,
    telemetry::ROT_Z,
    telemetry::SPEED,
    telemetry::ROTATION,
];

pub fn resample_session(session: &RawSession, config: &FeatureConfig) -> Result<ResampledSession> {
    let mut channels = BTreeMap::new();
    for name in KINEMATIC_CHANNELS {
        let series = session.channel(name)?;
        channels.insert(name.to_string(), downsample_mean(series, FEATURE_RATE_HZ)?.values);
    }
    let eda = session.channel(telemetry::EDA)?;
    let parts = decompose_eda(eda, &config.decomposition)?;
    for (name, series) in [(telemetry::EDA, eda), (SCL, &parts.scl), (SCR, &parts.scr)] {
        channels.insert(name.to_string(), downsample_mean(series, FEATURE_RATE_HZ)?.values);
    }
    Ok(ResampledSession {
        session_id: session.session_id.clone(),
        participant_id: session.participant_id.clone(),
        label: session.label()?,
        channels,
    })
}

/// Session-wide 16-row kinematic matrix at 1 Hz.
pub fn kinematic_feature_matrix(session: &ResampledSession) -> Result<Array2<f64>> {
    let n = session.len();
    let mut out = Array2::zeros((KINEMATIC_ROWS, n));
    let mut put = |row: usize, values: &[f64]| {
        out.row_mut(row).assign(&Array1::from(values.to_vec()));
    };
    for (axis, (pos, rot)) in [
        (telemetry::POS_X, telemetry::ROT_X),
        (telemetry::POS_Y, telemetry::ROT_Y),
        (telemetry::POS_Z, telemetry::ROT_Z),
    ]
    .into_iter()
    .enumerate()
    {
        let p = session.channel(pos)?;
        let r = session.channel(rot)?;
        put(axis, p);
        put(3 + axis, &diff_values(p));
        put(6 + axis, r);
        put(9 + axis, &diff_values(r));
    }
    let speed = session.channel(telemetry::SPEED)?;
    let rotation = session.channel(telemetry::ROTATION)?;
    put(12, speed);
    put(13, &diff_values(speed));
    put(14, rotation);
    put(15, &diff_values(rotation));
    Ok(out)
}

/// Session-wide 15-row EDA matrix at 1 Hz.
pub fn eda_timeseries_matrix(session: &ResampledSession, window_s: usize) -> Result<Array2<f64>> {
    let eda = session.channel(telemetry::EDA)?;
    let scr = session.component(SCR)?;
    let scl = session.component(SCL)?;
    let mut out = Array2::zeros((EDA_TS_ROWS, eda.len()));
    for (row, values) in [eda, scr, scl].into_iter().enumerate() {
        out.row_mut(row).assign(&Array1::from(values.to_vec()));
        let series = ChannelSeries::new("c", FEATURE_RATE_HZ, values.to_vec())?;
        let stats = trailing_stats(&series, window_s)?;
        for (k, s) in [stats.min, stats.max, stats.mean, stats.std].into_iter().enumerate() {
            out.row_mut(3 + 4 * row + k).assign(&Array1::from(s.values));
        }
    }
    Ok(out)
}

/// Column ranges of the `floor(len / ts)` complete segments; a trailing
/// remainder is dropped.
pub fn segment_bounds(len: usize, ts: usize) -> Result<Vec<Range<usize>>> {
    if ts == 0 || ts > len {
        return Err(FeatureError::InvalidInput(format!(
            "segment length {ts} s must be in 1..={len}"
        )));
    }
    Ok((0..len / ts).map(|k| k * ts..(k + 1) * ts).collect())
}

/// One segment's 1 Hz slices of every resampled channel.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionSegment<'a> {
    pub index: usize,
    pub range: Range<usize>,
    pub channels: BTreeMap<&'a str, &'a [f64]>,
    pub label: CsLabel,
}

pub fn segment_session(session: &ResampledSession, ts: usize) -> Result<Vec<SessionSegment<'_>>> {
    let n = session.len();
    Ok(segment_bounds(n, ts)?
        .into_iter()
        .enumerate()
        .map(|(index, range)| SessionSegment {
            index,
            channels: session
                .channels
                .iter()
                .map(|(k, v)| (k.as_str(), &v[range.clone()]))
                .collect(),
            range,
            label: session.label,
        })
        .collect())
}

/// One T_s-second training example.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentSample {
    pub session_id: String,
    pub participant_id: String,
    pub segment_index: usize,
    /// 16 × T_s.
    pub kinematic: Array2<f64>,
    /// 15 × T_s.
    pub eda_ts: Array2<f64>,
    pub eda_num: Array1<f64>,
    pub label: CsLabel,
}

impl SegmentSample {
    pub fn ts(&self) -> usize {
        self.kinematic.ncols()
    }
}

/// Numerical vector of a 1 Hz segment of EDA, SCL and SCR.
pub fn segment_numeric(
    eda: &[f64],
    scl: &[f64],
    scr: &[f64],
    config: &FeatureConfig,
) -> Result<Vec<f64>> {
    let scr_series = ChannelSeries::new(SCR, FEATURE_RATE_HZ, scr.to_vec())?;
    let events = detect_scr_events_with(&scr_series, &config.scr);
    eda_numerical_vector(
        SegmentSignals {
            eda,
            scl,
            scr,
            rate_hz: FEATURE_RATE_HZ,
        },
        &events,
        &sublevel_persistence(eda)?,
        &sublevel_persistence(scr)?,
    )
}

pub fn featurize_resampled(
    session: &ResampledSession,
    ts: usize,
    config: &FeatureConfig,
) -> Result<Vec<SegmentSample>> {
    let kin = kinematic_feature_matrix(session)?;
    let eda_ts = eda_timeseries_matrix(session, config.trailing_window_s)?;
    let eda = session.channel(telemetry::EDA)?;
    let scl = session.component(SCL)?;
    let scr = session.component(SCR)?;
    segment_bounds(session.len(), ts)?
        .into_iter()
        .enumerate()
        .map(|(index, r)| {
            let num = segment_numeric(
                &eda[r.clone()],
                &scl[r.clone()],
                &scr[r.clone()],
                config,
            )?;
            Ok(SegmentSample {
                session_id: session.session_id.clone(),
                participant_id: session.participant_id.clone(),
                segment_index: index,
                kinematic: kin.slice(s![.., r.clone()]).to_owned(),
                eda_ts: eda_ts.slice(s![.., r]).to_owned(),
                eda_num: Array1::from(num),
                label: session.label,
            })
        })
        .collect()
}

pub fn featurize_session(
    session: &RawSession,
    ts: usize,
    config: &FeatureConfig,
) -> Result<Vec<SegmentSample>> {
    featurize_resampled(&resample_session(session, config)?, ts, config)
}

/// Min-max scaling for the three feature blocks, fitted on training
/// segments. Time-series blocks are scaled per row across all time steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNormalizer {
    pub kinematic: NormalizerStats,
    pub eda_ts: NormalizerStats,
    pub eda_num: Option<NormalizerStats>,
}

fn stack_columns<'a>(blocks: impl Iterator<Item = ArrayView2<'a, f64>>, rows: usize) -> Array2<f64> {
    let views: Vec<_> = blocks.map(|b| b.reversed_axes()).collect();
    if views.is_empty() {
        return Array2::zeros((0, rows));
    }
    ndarray::concatenate(Axis(0), &views).expect("feature blocks share a row count")
}

impl FeatureNormalizer {
    pub fn fit<'a>(
        samples: impl IntoIterator<Item = &'a SegmentSample>,
        normalize_numeric: bool,
    ) -> Result<Self> {
        let samples: Vec<&SegmentSample> = samples.into_iter().collect();
        if samples.is_empty() {
            return Err(FeatureError::InvalidInput("normalizer fitted on no segments".into()));
        }
        let kin = stack_columns(samples.iter().map(|s| s.kinematic.view()), KINEMATIC_ROWS);
        let eda = stack_columns(samples.iter().map(|s| s.eda_ts.view()), EDA_TS_ROWS);
        let eda_num = if normalize_numeric {
            let num = ndarray::stack(
                Axis(0),
                &samples.iter().map(|s| s.eda_num.view()).collect::<Vec<_>>(),
            )
            .map_err(|e| FeatureError::InvalidInput(e.to_string()))?;
            Some(fit_normalizer(num.view())?)
        } else {
            None
        };
        Ok(Self {
            kinematic: fit_normalizer(kin.view())?,
            eda_ts: fit_normalizer(eda.view())?,
            eda_num,
        })
    }

    pub fn apply(&self, sample: &SegmentSample) -> Result<SegmentSample> {
        let scale = |stats: &NormalizerStats, m: &Array2<f64>| -> Result<Array2<f64>> {
            Ok(stats.apply(m.t())?.reversed_axes())
        };
        let eda_num = match &self.eda_num {
            Some(stats) => {
                if stats.width() != sample.eda_num.len() {
                    return Err(SigprocError::ShapeMismatch {
                        expected: stats.width(),
                        found: sample.eda_num.len(),
                    }
                    .into());
                }
                sample
                    .eda_num
                    .iter()
                    .enumerate()
                    .map(|(j, &v)| stats.scale(j, v))
                    .collect()
            }
            None => sample.eda_num.clone(),
        };
        Ok(SegmentSample {
            kinematic: scale(&self.kinematic, &sample.kinematic)?,
            eda_ts: scale(&self.eda_ts, &sample.eda_ts)?,
            eda_num,
            ..sample.clone()
        })
    }

    pub fn apply_all(&self, samples: &[SegmentSample]) -> Result<Vec<SegmentSample>> {
        samples.iter().map(|s| self.apply(s)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::telemetry::{generate_synthetic_session, SyntheticConfig};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn synthetic(seed: u64) -> RawSession {
        generate_synthetic_session(&SyntheticConfig::default(), seed).unwrap()
    }

    #[test]
    fn segment_counts() {
        for (ts, want) in [(10, 24), (15, 16), (20, 12), (30, 8), (40, 6)] {
            assert_eq!(segment_bounds(240, ts).unwrap().len(), want);
        }
        assert_eq!(segment_bounds(240, 50).unwrap().len(), 4);
        assert!(segment_bounds(240, 0).is_err());
        assert!(segment_bounds(240, 241).is_err());
    }

    proptest! {
        #[test]
        fn segments_tile_without_overlap(len in 1usize..500, ts in 1usize..120) {
            prop_assume!(ts <= len);
            let b = segment_bounds(len, ts).unwrap();
            prop_assert_eq!(b.len() * ts, len - len % ts);
            for (k, r) in b.iter().enumerate() {
                prop_assert_eq!(r.start, k * ts);
                prop_assert_eq!(r.len(), ts);
            }
        }
    }

    #[test]
    fn shapes_for_synthetic_session() {
        let samples = featurize_session(&synthetic(4), 30, &FeatureConfig::default()).unwrap();
        assert_eq!(samples.len(), 8);
        for (k, s) in samples.iter().enumerate() {
            assert_eq!(s.segment_index, k);
            assert_eq!(s.kinematic.dim(), (16, 30));
            assert_eq!(s.eda_ts.dim(), (15, 30));
            assert_eq!(s.eda_num.len(), 38);
            assert!(s.eda_num.iter().all(|v| v.is_finite()));
            assert_eq!(s.label, samples[0].label);
        }
    }

    #[test]
    fn delta_rows_match_diff_oracle() {
        let rs = resample_session(&synthetic(11), &FeatureConfig::default()).unwrap();
        let m = kinematic_feature_matrix(&rs).unwrap();
        for (src, dst) in [(0, 3), (1, 4), (2, 5), (6, 9), (7, 10), (8, 11), (12, 13), (14, 15)] {
            assert_eq!(m[[dst, 0]], 0.0);
            for t in 1..m.ncols() {
                assert_eq!(m[[dst, t]], m[[src, t]] - m[[src, t - 1]]);
            }
        }
        // The second segment's first Δ column crosses the boundary.
        let samples = featurize_resampled(&rs, 30, &FeatureConfig::default()).unwrap();
        assert_eq!(samples[1].kinematic[[3, 0]], m[[0, 30]] - m[[0, 29]]);
    }

    fn constant_session(c: f64, pose: f64) -> ResampledSession {
        let mut channels = BTreeMap::new();
        for name in KINEMATIC_CHANNELS {
            channels.insert(name.to_string(), vec![pose; 60]);
        }
        channels.insert(telemetry::EDA.into(), vec![c; 60]);
        channels.insert(SCL.into(), vec![c; 60]);
        channels.insert(SCR.into(), vec![0.0; 60]);
        ResampledSession {
            session_id: "s".into(),
            participant_id: "p".into(),
            label: telemetry::label_from_ssq(3.0).unwrap(),
            channels,
        }
    }

    #[test]
    fn constant_inputs() {
        let rs = constant_session(1.7, 0.3);
        let kin = kinematic_feature_matrix(&rs).unwrap();
        for r in [3, 4, 5, 9, 10, 11, 13, 15] {
            assert!(kin.row(r).iter().all(|&v| v == 0.0));
        }
        let eda = eda_timeseries_matrix(&rs, 3).unwrap();
        for r in [6, 10, 14] {
            assert!(eda.row(r).iter().all(|&v| v == 0.0), "std row {r}");
        }
        for r in [3, 4, 5] {
            assert!(eda.row(r).iter().all(|&v| v == 1.7));
        }
    }

    #[test]
    fn missing_inputs_are_named() {
        let mut rs = constant_session(1.0, 0.0);
        rs.channels.remove(SCL);
        assert!(matches!(
            eda_timeseries_matrix(&rs, 3),
            Err(FeatureError::MissingDecomposition(name)) if name == SCL
        ));
        rs.channels.remove(telemetry::ROT_Y);
        assert!(matches!(
            kinematic_feature_matrix(&rs),
            Err(FeatureError::MissingChannel(name)) if name == telemetry::ROT_Y
        ));
    }

    #[test]
    fn trailing_rows_match_window_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut rs = constant_session(0.0, 0.0);
        for name in [telemetry::EDA, SCL, SCR] {
            rs.channels
                .insert(name.into(), (0..60).map(|_| rng.random_range(-1.0..3.0)).collect());
        }
        let m = eda_timeseries_matrix(&rs, 3).unwrap();
        for (block, name) in [telemetry::EDA, SCR, SCL].into_iter().enumerate() {
            let x = &rs.channels[name];
            for t in 0usize..60 {
                let w = &x[t.saturating_sub(2)..=t];
                let n = w.len() as f64;
                let mean = w.iter().sum::<f64>() / n;
                let var = w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                let row = 3 + 4 * block;
                assert_eq!(m[[row, t]], w.iter().cloned().fold(f64::MAX, f64::min));
                assert_eq!(m[[row + 1, t]], w.iter().cloned().fold(f64::MIN, f64::max));
                assert!((m[[row + 2, t]] - mean).abs() < 1e-12);
                assert!((m[[row + 3, t]] - var.sqrt()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn normalizer_maps_into_unit_interval() {
        let cfg = FeatureConfig::default();
        let train: Vec<_> = (0..3)
            .flat_map(|s| featurize_session(&synthetic(s), 30, &cfg).unwrap())
            .collect();
        let test = featurize_session(&synthetic(99), 30, &cfg).unwrap();
        let norm = FeatureNormalizer::fit(&train, true).unwrap();
        for s in norm.apply_all(&test).unwrap() {
            for v in s.kinematic.iter().chain(s.eda_ts.iter()).chain(s.eda_num.iter()) {
                assert!((0.0..=1.0).contains(v));
            }
        }
        let raw_num = FeatureNormalizer::fit(&train, false).unwrap();
        assert_eq!(raw_num.apply(&test[0]).unwrap().eda_num, test[0].eda_num);
    }
}
