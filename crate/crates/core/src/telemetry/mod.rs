//! Session data model, ground-truth labels, on-disk session format and the
//! synthetic session generator.

mod io;
mod synthetic;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{load_session, save_session, Manifest, MANIFEST_FILE};
pub use synthetic::{generate_dataset, generate_synthetic_session, SyntheticConfig};

pub const POS_X: &str = "pos_x";
pub const POS_Y: &str = "pos_y";
pub const POS_Z: &str = "pos_z";
pub const ROT_X: &str = "rot_x";
pub const ROT_Y: &str = "rot_y";
pub const ROT_Z: &str = "rot_z";
pub const SPEED: &str = "speed";
pub const ROTATION: &str = "rotation";
pub const EDA: &str = "eda";
pub const BVP: &str = "bvp";
pub const TEM: &str = "tem";

/// Channels every session must carry.
pub const REQUIRED_CHANNELS: [&str; 9] = [
    POS_X, POS_Y, POS_Z, ROT_X, ROT_Y, ROT_Z, SPEED, ROTATION, EDA,
];

pub const HEAD_RATE_HZ: f64 = 90.0;
pub const EDA_RATE_HZ: f64 = 4.0;
pub const BVP_RATE_HZ: f64 = 64.0;
pub const TEM_RATE_HZ: f64 = 4.0;

/// Default exposure length in seconds.
pub const DEFAULT_DURATION_S: u32 = 240;

/// SSQ delta at or above which a session is labelled sick.
pub const SICK_THRESHOLD: f64 = 20.0;

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("missing file {path}")]
    MissingFile { path: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest {path}: {reason}")]
    MalformedManifest { path: String, reason: String },
    #[error("malformed row {row} in {file}: {reason}")]
    MalformedRow {
        file: String,
        row: usize,
        reason: String,
    },
    #[error("missing required channel `{0}`")]
    MissingChannel(String),
    #[error("channel `{channel}` has {actual} samples, expected {expected} (±1)")]
    LengthMismatch {
        channel: String,
        expected: usize,
        actual: usize,
    },
}

pub type Result<T> = std::result::Result<T, TelemetryError>;

/// One uniformly sampled channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSeries {
    pub name: String,
    pub rate_hz: f64,
    pub values: Vec<f64>,
}

impl ChannelSeries {
    /// Builds a series, rejecting empty data and non-positive rates.
    ///
    /// Values are not screened for finiteness here; recorded data may carry
    /// gaps and [`validate_session`] is the gate that reports them.
    pub fn new(name: impl Into<String>, rate_hz: f64, values: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if !(rate_hz.is_finite() && rate_hz > 0.0) {
            return Err(TelemetryError::InvalidInput(format!(
                "channel `{name}`: rate must be positive, got {rate_hz}"
            )));
        }
        if values.is_empty() {
            return Err(TelemetryError::InvalidInput(format!(
                "channel `{name}` is empty"
            )));
        }
        Ok(Self {
            name,
            rate_hz,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.values.len() as f64 / self.rate_hz
    }

    pub fn first_non_finite(&self) -> Option<usize> {
        self.values.iter().position(|v| !v.is_finite())
    }

    /// Same channel metadata, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        Self {
            name: self.name.clone(),
            rate_hz: self.rate_hz,
            values,
        }
    }
}

/// Binary cybersickness label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CsLabel {
    pub value: u8,
    pub ssq_delta: f64,
}

impl CsLabel {
    pub fn is_sick(&self) -> bool {
        self.value == 1
    }

    pub fn as_f64(&self) -> f64 {
        f64::from(self.value)
    }
}

/// Post-exposure minus pre-exposure SSQ total. Negative deltas are kept.
pub fn ssq_delta(ssq_pre: f64, ssq_post: f64) -> Result<f64> {
    if !ssq_pre.is_finite() || !ssq_post.is_finite() {
        return Err(TelemetryError::InvalidInput(format!(
            "SSQ scores must be finite (pre={ssq_pre}, post={ssq_post})"
        )));
    }
    if ssq_pre < 0.0 || ssq_post < 0.0 {
        return Err(TelemetryError::InvalidInput(format!(
            "SSQ scores must be non-negative (pre={ssq_pre}, post={ssq_post})"
        )));
    }
    Ok(ssq_post - ssq_pre)
}

/// Sick iff `delta >= 20`; anything below, including negative deltas, is
/// non-sick.
pub fn label_from_ssq(delta: f64) -> Result<CsLabel> {
    if !delta.is_finite() {
        return Err(TelemetryError::InvalidInput(format!(
            "SSQ delta must be finite, got {delta}"
        )));
    }
    Ok(CsLabel {
        value: u8::from(delta >= SICK_THRESHOLD),
        ssq_delta: delta,
    })
}

/// One participant run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSession {
    pub session_id: String,
    pub participant_id: String,
    pub duration_s: u32,
    pub channels: BTreeMap<String, ChannelSeries>,
    pub ssq_pre: f64,
    pub ssq_post: f64,
}

impl RawSession {
    /// Assembles a session and reconciles channel lengths against
    /// `duration_s × rate`: one extra sample or more is truncated away, one
    /// missing sample is filled by repeating the last value, anything shorter
    /// is an error.
    pub fn new(
        session_id: impl Into<String>,
        participant_id: impl Into<String>,
        duration_s: u32,
        channels: impl IntoIterator<Item = ChannelSeries>,
        ssq_pre: f64,
        ssq_post: f64,
    ) -> Result<Self> {
        if duration_s == 0 {
            return Err(TelemetryError::InvalidInput(
                "duration must be positive".into(),
            ));
        }
        ssq_delta(ssq_pre, ssq_post)?;
        let mut map = BTreeMap::new();
        for mut ch in channels {
            reconcile_length(&mut ch, duration_s)?;
            map.insert(ch.name.clone(), ch);
        }
        for name in REQUIRED_CHANNELS {
            if !map.contains_key(name) {
                return Err(TelemetryError::MissingChannel(name.to_string()));
            }
        }
        Ok(Self {
            session_id: session_id.into(),
            participant_id: participant_id.into(),
            duration_s,
            channels: map,
            ssq_pre,
            ssq_post,
        })
    }

    pub fn channel(&self, name: &str) -> Result<&ChannelSeries> {
        self.channels
            .get(name)
            .ok_or_else(|| TelemetryError::MissingChannel(name.to_string()))
    }

    pub fn channel_mut(&mut self, name: &str) -> Result<&mut ChannelSeries> {
        self.channels
            .get_mut(name)
            .ok_or_else(|| TelemetryError::MissingChannel(name.to_string()))
    }

    pub fn ssq_delta(&self) -> Result<f64> {
        ssq_delta(self.ssq_pre, self.ssq_post)
    }

    pub fn label(&self) -> Result<CsLabel> {
        label_from_ssq(self.ssq_delta()?)
    }
}

pub(crate) fn expected_len(duration_s: u32, rate_hz: f64) -> usize {
    (f64::from(duration_s) * rate_hz).round() as usize
}

fn reconcile_length(ch: &mut ChannelSeries, duration_s: u32) -> Result<()> {
    let expected = expected_len(duration_s, ch.rate_hz);
    let actual = ch.values.len();
    if actual >= expected {
        ch.values.truncate(expected);
    } else if actual + 1 == expected {
        let last = *ch.values.last().expect("channel is non-empty");
        ch.values.push(last);
    } else {
        return Err(TelemetryError::LengthMismatch {
            channel: ch.name.clone(),
            expected,
            actual,
        });
    }
    Ok(())
}

/// One problem found by [`validate_session`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Violation {
    NonFinite { channel: String, index: usize },
    FlatlineEda,
    LengthMismatch {
        channel: String,
        expected: usize,
        actual: usize,
    },
    MissingChannel(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonFinite { channel, index } => {
                write!(f, "non-finite value in `{channel}` at sample {index}")
            }
            Violation::FlatlineEda => write!(f, "EDA is flat over the whole session"),
            Violation::LengthMismatch {
                channel,
                expected,
                actual,
            } => write!(
                f,
                "`{channel}` has {actual} samples, expected {expected}"
            ),
            Violation::MissingChannel(name) => write!(f, "missing channel `{name}`"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub session_id: String,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Screens a session for data that would poison feature extraction. Sessions
/// that fail are excluded from datasets.
pub fn validate_session(session: &RawSession) -> ValidationReport {
    let mut violations = Vec::new();
    for name in REQUIRED_CHANNELS {
        if !session.channels.contains_key(name) {
            violations.push(Violation::MissingChannel(name.to_string()));
        }
    }
    for ch in session.channels.values() {
        let expected = expected_len(session.duration_s, ch.rate_hz);
        if ch.values.len() != expected {
            violations.push(Violation::LengthMismatch {
                channel: ch.name.clone(),
                expected,
                actual: ch.values.len(),
            });
        }
        if let Some(index) = ch.first_non_finite() {
            violations.push(Violation::NonFinite {
                channel: ch.name.clone(),
                index,
            });
        }
    }
    if let Some(eda) = session.channels.get(EDA) {
        let first = eda.values[0];
        if eda.values.iter().all(|&v| v == first) {
            violations.push(Violation::FlatlineEda);
        }
    }
    ValidationReport {
        session_id: session.session_id.clone(),
        violations,
    }
}
