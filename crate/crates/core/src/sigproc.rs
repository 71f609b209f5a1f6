//! Signal transforms: mean downsampling, first differences, trailing-window
//! statistics, EDA tonic/phasic decomposition, SCR event detection and
//! min-max normalization.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::telemetry::ChannelSeries;

#[derive(Debug, Error, PartialEq)]
pub enum SigprocError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("cannot downsample {source_hz} Hz to {target_hz} Hz: rate ratio is not an integer")]
    UnsupportedRate { source_hz: f64, target_hz: f64 },
    #[error("normalizer used before fit")]
    NotFitted,
    #[error("shape mismatch: expected {expected} features, found {found}")]
    ShapeMismatch { expected: usize, found: usize },
}

pub type Result<T> = std::result::Result<T, SigprocError>;

fn require_non_empty(series: &ChannelSeries) -> Result<()> {
    if series.values.is_empty() {
        return Err(SigprocError::InvalidInput(format!(
            "series `{}` is empty",
            series.name
        )));
    }
    Ok(())
}

/// Arithmetic mean of `values`, anchored on the first element so that a
/// constant slice returns that constant exactly.
pub(crate) fn anchored_mean(values: &[f64]) -> f64 {
    let anchor = values[0];
    anchor + values.iter().map(|v| v - anchor).sum::<f64>() / values.len() as f64
}

/// Population standard deviation (divides by n).
pub(crate) fn population_std(values: &[f64]) -> f64 {
    let mean = anchored_mean(values);
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64).sqrt()
}

/// Block means over `rate / target_hz` consecutive samples. A trailing
/// partial block is dropped.
pub fn downsample_mean(series: &ChannelSeries, target_hz: f64) -> Result<ChannelSeries> {
    require_non_empty(series)?;
    if !(target_hz.is_finite() && target_hz > 0.0) {
        return Err(SigprocError::InvalidInput(format!(
            "target rate must be positive, got {target_hz}"
        )));
    }
    let ratio = series.rate_hz / target_hz;
    let block = ratio.round();
    if block < 1.0 || (ratio - block).abs() > 1e-9 * ratio.max(1.0) {
        return Err(SigprocError::UnsupportedRate {
            source_hz: series.rate_hz,
            target_hz,
        });
    }
    let block = block as usize;
    let values: Vec<f64> = series
        .values
        .chunks_exact(block)
        .map(anchored_mean)
        .collect();
    if values.is_empty() {
        return Err(SigprocError::InvalidInput(format!(
            "series `{}` is shorter than one {block}-sample block",
            series.name
        )));
    }
    Ok(ChannelSeries {
        name: series.name.clone(),
        rate_hz: target_hz,
        values,
    })
}

pub(crate) fn diff_values(values: &[f64]) -> Vec<f64> {
    std::iter::once(0.0)
        .chain(values.windows(2).map(|w| w[1] - w[0]))
        .collect()
}

/// `out[0] = 0`, `out[t] = x[t] - x[t-1]`.
pub fn first_difference(series: &ChannelSeries) -> Result<ChannelSeries> {
    require_non_empty(series)?;
    Ok(ChannelSeries {
        name: format!("d_{}", series.name),
        rate_hz: series.rate_hz,
        values: diff_values(&series.values),
    })
}

/// Min, max, mean and population std over trailing windows.
#[derive(Debug, Clone, PartialEq)]
pub struct TrailingStats {
    pub min: ChannelSeries,
    pub max: ChannelSeries,
    pub mean: ChannelSeries,
    pub std: ChannelSeries,
}

/// At index `t` the window covers `[max(0, t - w + 1), t]` where `w` is
/// `window_s` seconds worth of samples; head windows are truncated rather
/// than dropped.
pub fn trailing_stats(series: &ChannelSeries, window_s: usize) -> Result<TrailingStats> {
    require_non_empty(series)?;
    if window_s == 0 {
        return Err(SigprocError::InvalidInput("window must be at least 1 s".into()));
    }
    let width = ((window_s as f64 * series.rate_hz).round() as usize).max(1);
    let n = series.len();
    let mut min = Vec::with_capacity(n);
    let mut max = Vec::with_capacity(n);
    let mut mean = Vec::with_capacity(n);
    let mut std = Vec::with_capacity(n);
    for t in 0..n {
        let window = &series.values[(t + 1).saturating_sub(width)..=t];
        let lo = window.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = window.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        min.push(lo);
        max.push(hi);
        mean.push(anchored_mean(window).clamp(lo, hi));
        std.push(population_std(window));
    }
    let named = |suffix: &str, values| ChannelSeries {
        name: format!("{}_{suffix}", series.name),
        rate_hz: series.rate_hz,
        values,
    };
    Ok(TrailingStats {
        min: named("min", min),
        max: named("max", max),
        mean: named("mean", mean),
        std: named("std", std),
    })
}

/// Window lengths for the tonic estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecompositionConfig {
    pub median_window_s: f64,
    pub smoothing_window_s: f64,
}

impl Default for DecompositionConfig {
    fn default() -> Self {
        Self {
            median_window_s: 10.0,
            smoothing_window_s: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdaDecomposition {
    /// Tonic skin conductance level.
    pub scl: ChannelSeries,
    /// Phasic skin conductance response, `eda - scl`.
    pub scr: ChannelSeries,
}

/// Half-width in samples of a centered window of `window_s` seconds; the
/// window spans `2 * half + 1` samples (41 for 10 s at 4 Hz).
fn half_width(window_s: f64, rate_hz: f64) -> usize {
    (window_s * rate_hz / 2.0).round() as usize
}

fn centered<'a>(values: &'a [f64], i: usize, half: usize) -> &'a [f64] {
    let lo = i.saturating_sub(half);
    let hi = (i + half + 1).min(values.len());
    &values[lo..hi]
}

fn median(window: &[f64], scratch: &mut Vec<f64>) -> f64 {
    scratch.clear();
    scratch.extend_from_slice(window);
    scratch.sort_by(|a, b| a.total_cmp(b));
    let n = scratch.len();
    if n % 2 == 1 {
        scratch[n / 2]
    } else {
        let (a, b) = (scratch[n / 2 - 1], scratch[n / 2]);
        a + (b - a) / 2.0
    }
}

/// Splits EDA into tonic and phasic parts. The tonic level is a centered
/// moving median followed by a centered moving average (both truncated at
/// the edges); the phasic part is the residual, so `scl + scr` reproduces
/// the input.
pub fn decompose_eda(eda: &ChannelSeries, config: &DecompositionConfig) -> Result<EdaDecomposition> {
    require_non_empty(eda)?;
    if let Some(i) = eda.first_non_finite() {
        return Err(SigprocError::InvalidInput(format!(
            "EDA sample {i} is not finite"
        )));
    }
    let values = &eda.values;
    let mut scratch = Vec::new();
    let median_half = half_width(config.median_window_s, eda.rate_hz);
    let medians: Vec<f64> = (0..values.len())
        .map(|i| median(centered(values, i, median_half), &mut scratch))
        .collect();
    let smooth_half = half_width(config.smoothing_window_s, eda.rate_hz);
    let scl: Vec<f64> = (0..medians.len())
        .map(|i| anchored_mean(centered(&medians, i, smooth_half)))
        .collect();
    let scr: Vec<f64> = values.iter().zip(&scl).map(|(x, t)| x - t).collect();
    Ok(EdaDecomposition {
        scl: ChannelSeries {
            name: "scl".into(),
            rate_hz: eda.rate_hz,
            values: scl,
        },
        scr: ChannelSeries {
            name: "scr".into(),
            rate_hz: eda.rate_hz,
            values: scr,
        },
    })
}

/// One skin conductance response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScrEvent {
    pub onset_idx: usize,
    pub peak_idx: usize,
    pub offset_idx: usize,
    /// Peak value minus onset value, µS.
    pub amplitude: f64,
    pub duration_s: f64,
    /// Trapezoidal integral above the onset level between onset and offset, µS·s.
    pub area: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScrDetectionConfig {
    pub threshold_us: f64,
    /// An event ends once the signal falls to `onset + fraction × amplitude`.
    pub offset_fraction: f64,
}

impl Default for ScrDetectionConfig {
    fn default() -> Self {
        Self {
            threshold_us: 0.01,
            offset_fraction: 0.1,
        }
    }
}

/// Finds SCR events with the default offset rule.
pub fn detect_scr_events(scr: &ChannelSeries, threshold_us: f64) -> Vec<ScrEvent> {
    detect_scr_events_with(
        scr,
        &ScrDetectionConfig {
            threshold_us,
            ..ScrDetectionConfig::default()
        },
    )
}

/// Walks the signal as alternating descents and ascents. Each ascent runs
/// from a local minimum (onset) to a local maximum (peak); if it rises by at
/// least the threshold it is an event, which ends at the first sample on the
/// following descent that is at or below `onset + fraction × amplitude`, or
/// at the next local minimum if the descent stops earlier. Scanning resumes
/// from the offset, so events are disjoint and ordered.
pub fn detect_scr_events_with(scr: &ChannelSeries, config: &ScrDetectionConfig) -> Vec<ScrEvent> {
    let x = &scr.values;
    let n = x.len();
    let mut events = Vec::new();
    if n < 2 {
        return events;
    }
    let mut k = 0;
    loop {
        while k + 1 < n && x[k + 1] <= x[k] {
            k += 1;
        }
        let onset = k;
        while k + 1 < n && x[k + 1] > x[k] {
            k += 1;
        }
        let peak = k;
        if peak == onset {
            break;
        }
        let amplitude = x[peak] - x[onset];
        if amplitude < config.threshold_us {
            continue;
        }
        let level = x[onset] + config.offset_fraction * amplitude;
        let mut offset = peak;
        while offset + 1 < n && x[offset] > level && x[offset + 1] <= x[offset] {
            offset += 1;
        }
        let dt = 1.0 / scr.rate_hz;
        let area = x[onset..=offset]
            .windows(2)
            .map(|w| 0.5 * ((w[0] - x[onset]).max(0.0) + (w[1] - x[onset]).max(0.0)) * dt)
            .sum();
        events.push(ScrEvent {
            onset_idx: onset,
            peak_idx: peak,
            offset_idx: offset,
            amplitude,
            duration_s: (offset - onset) as f64 * dt,
            area,
        });
        k = offset;
        if k + 1 >= n {
            break;
        }
    }
    events
}

/// Per-feature minimum and maximum learned from training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizerStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormalizerStats {
    pub fn width(&self) -> usize {
        self.min.len()
    }

    /// Maps one feature value into `[0, 1]`; constant features map to 0.5.
    pub fn scale(&self, feature: usize, value: f64) -> f64 {
        let (lo, hi) = (self.min[feature], self.max[feature]);
        if hi > lo {
            ((value - lo) / (hi - lo)).clamp(0.0, 1.0)
        } else {
            0.5
        }
    }

    /// Normalizes a matrix whose columns are features.
    pub fn apply(&self, rows: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if rows.ncols() != self.width() {
            return Err(SigprocError::ShapeMismatch {
                expected: self.width(),
                found: rows.ncols(),
            });
        }
        let mut out = rows.to_owned();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.scale(j, *v);
            }
        }
        Ok(out)
    }
}

/// Learns per-column min and max from `rows` (observations × features).
pub fn fit_normalizer(rows: ArrayView2<'_, f64>) -> Result<NormalizerStats> {
    if rows.nrows() == 0 || rows.ncols() == 0 {
        return Err(SigprocError::InvalidInput(
            "normalizer needs at least one row and one feature".into(),
        ));
    }
    let mut min = Vec::with_capacity(rows.ncols());
    let mut max = Vec::with_capacity(rows.ncols());
    for col in rows.axis_iter(Axis(1)) {
        if col.iter().any(|v| !v.is_finite()) {
            return Err(SigprocError::InvalidInput(
                "normalizer input contains non-finite values".into(),
            ));
        }
        min.push(col.iter().copied().fold(f64::INFINITY, f64::min));
        max.push(col.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }
    Ok(NormalizerStats { min, max })
}

/// Stateful wrapper that refuses to transform before it has been fitted.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MinMaxNormalizer {
    stats: Option<NormalizerStats>,
}

impl MinMaxNormalizer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn fit(&mut self, rows: ArrayView2<'_, f64>) -> Result<&NormalizerStats> {
        Ok(self.stats.insert(fit_normalizer(rows)?))
    }

    pub fn stats(&self) -> Option<&NormalizerStats> {
        self.stats.as_ref()
    }

    pub fn apply(&self, rows: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.stats.as_ref().ok_or(SigprocError::NotFitted)?.apply(rows)
    }
}

/// Convenience form of [`MinMaxNormalizer::apply`] for callers holding
/// optional stats.
pub fn apply_normalizer(
    stats: Option<&NormalizerStats>,
    rows: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    stats.ok_or(SigprocError::NotFitted)?.apply(rows)
}
