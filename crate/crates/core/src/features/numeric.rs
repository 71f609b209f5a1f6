//! The 38-entry EDA numerical vector of one segment.
//!
//! | entries | content |
//! |---------|---------|
//! | 1–6     | EDA mean, std, min, max, range, least-squares slope per second |
//! | 7–12    | same for SCL |
//! | 13–18   | same for SCR |
//! | 19      | Pearson correlation of SCL with time (0 when SCL is constant) |
//! | 20–27   | SCR events: count, amplitude sum/mean/max, duration sum/mean, area sum, responses per minute |
//! | 28–31   | mean \|ΔEDA\|, std ΔEDA, mean \|ΔSCR\|, std ΔSCR (within the segment) |
//! | 32–36   | EDA persistence: pair count, max, sum, mean, entropy |
//! | 37–38   | SCR persistence: pair count, sum |
//!
//! Standard deviations divide by n. Persistence aggregates cover the finite
//! pairs only; the essential pair duplicates the range entry.

use crate::sigproc::{anchored_mean, population_std, ScrEvent};

use super::persistence::PersistencePair;
use super::{FeatureError, Result};

pub const NUMERIC_WIDTH: usize = 38;

pub const NUMERIC_FEATURE_NAMES: [&str; NUMERIC_WIDTH] = [
    "mean_eda",
    "std_eda",
    "min_eda",
    "max_eda",
    "range_eda",
    "slope_eda",
    "mean_scl",
    "std_scl",
    "min_scl",
    "max_scl",
    "range_scl",
    "slope_scl",
    "mean_scr",
    "std_scr",
    "min_scr",
    "max_scr",
    "range_scr",
    "slope_scr",
    "corr",
    "num_responses",
    "sum_scr_amplitude",
    "mean_scr_amplitude",
    "max_scr_amplitude",
    "sum_scr_response_duration",
    "mean_scr_response_duration",
    "area_of_response_curve",
    "response_rate",
    "mean_abs_diff_eda",
    "std_diff_eda",
    "mean_abs_diff_scr",
    "std_diff_scr",
    "eda_persistence_count",
    "eda_persistence_max",
    "eda_persistence_sum",
    "eda_persistence_mean",
    "eda_persistence_entropy",
    "scr_persistence_count",
    "scr_persistence_sum",
];

/// The three EDA components of one segment, sampled at `rate_hz`.
#[derive(Debug, Clone, Copy)]
pub struct SegmentSignals<'a> {
    pub eda: &'a [f64],
    pub scl: &'a [f64],
    pub scr: &'a [f64],
    pub rate_hz: f64,
}

fn slope(values: &[f64], rate_hz: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let t_mean = (n - 1) as f64 / 2.0;
    let x_mean = anchored_mean(values);
    let (mut sxy, mut stt) = (0.0, 0.0);
    for (i, v) in values.iter().enumerate() {
        let dt = i as f64 - t_mean;
        sxy += dt * (v - x_mean);
        stt += dt * dt;
    }
    sxy / stt * rate_hz
}

fn corr_with_time(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let t_mean = (n - 1) as f64 / 2.0;
    let x_mean = anchored_mean(values);
    let (mut sxy, mut stt, mut sxx) = (0.0, 0.0, 0.0);
    for (i, v) in values.iter().enumerate() {
        let dt = i as f64 - t_mean;
        let dx = v - x_mean;
        sxy += dt * dx;
        stt += dt * dt;
        sxx += dx * dx;
    }
    if sxx == 0.0 {
        0.0
    } else {
        (sxy / (stt.sqrt() * sxx.sqrt())).clamp(-1.0, 1.0)
    }
}

fn summary(values: &[f64], rate_hz: f64, out: &mut Vec<f64>) {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    out.extend([
        anchored_mean(values),
        population_std(values),
        min,
        max,
        max - min,
        slope(values, rate_hz),
    ]);
}

fn diff_summary(values: &[f64], out: &mut Vec<f64>) {
    let d: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
    if d.is_empty() {
        out.extend([0.0, 0.0]);
    } else {
        out.push(d.iter().map(|v| v.abs()).sum::<f64>() / d.len() as f64);
        out.push(population_std(&d));
    }
}

fn finite_persistences(pairs: &[PersistencePair]) -> Vec<f64> {
    let mut p: Vec<f64> = pairs
        .iter()
        .filter(|p| !p.essential)
        .map(PersistencePair::persistence)
        .collect();
    p.sort_by(f64::total_cmp);
    p
}

fn entropy(persistences: &[f64]) -> f64 {
    let total: f64 = persistences.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    -persistences
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|p| {
            let q = p / total;
            q * q.ln()
        })
        .sum::<f64>()
}

/// Assembles the numerical vector. Events and pairs are sorted internally,
/// so the result does not depend on the order they are passed in.
pub fn eda_numerical_vector(
    signals: SegmentSignals<'_>,
    events: &[ScrEvent],
    eda_pairs: &[PersistencePair],
    scr_pairs: &[PersistencePair],
) -> Result<Vec<f64>> {
    let n = signals.eda.len();
    if n == 0 || signals.scl.len() != n || signals.scr.len() != n {
        return Err(FeatureError::InvalidInput(format!(
            "segment components differ in length (eda {}, scl {}, scr {})",
            n,
            signals.scl.len(),
            signals.scr.len()
        )));
    }
    if !(signals.rate_hz > 0.0) {
        return Err(FeatureError::InvalidInput("segment rate must be positive".into()));
    }
    if let Some(e) = events.iter().find(|e| e.offset_idx >= n) {
        return Err(FeatureError::InvalidInput(format!(
            "event offset {} lies outside the {n}-sample segment",
            e.offset_idx
        )));
    }

    let mut out = Vec::with_capacity(NUMERIC_WIDTH);
    summary(signals.eda, signals.rate_hz, &mut out);
    summary(signals.scl, signals.rate_hz, &mut out);
    summary(signals.scr, signals.rate_hz, &mut out);
    out.push(corr_with_time(signals.scl));

    let mut events = events.to_vec();
    events.sort_by(|a, b| {
        (a.onset_idx, a.peak_idx, a.offset_idx)
            .cmp(&(b.onset_idx, b.peak_idx, b.offset_idx))
            .then(a.amplitude.total_cmp(&b.amplitude))
    });
    let count = events.len() as f64;
    let amp_sum: f64 = events.iter().map(|e| e.amplitude).sum();
    let amp_max = events.iter().map(|e| e.amplitude).fold(0.0, f64::max);
    let dur_sum: f64 = events.iter().map(|e| e.duration_s).sum();
    let area: f64 = events.iter().map(|e| e.area).sum();
    let mean_or_zero = |sum: f64| if events.is_empty() { 0.0 } else { sum / count };
    let minutes = n as f64 / signals.rate_hz / 60.0;
    out.extend([
        count,
        amp_sum,
        mean_or_zero(amp_sum),
        amp_max,
        dur_sum,
        mean_or_zero(dur_sum),
        area,
        count / minutes,
    ]);

    diff_summary(signals.eda, &mut out);
    diff_summary(signals.scr, &mut out);

    let eda_p = finite_persistences(eda_pairs);
    let eda_sum: f64 = eda_p.iter().sum();
    out.extend([
        eda_p.len() as f64,
        eda_p.last().copied().unwrap_or(0.0),
        eda_sum,
        if eda_p.is_empty() {
            0.0
        } else {
            eda_sum / eda_p.len() as f64
        },
        entropy(&eda_p),
    ]);
    let scr_p = finite_persistences(scr_pairs);
    out.extend([scr_p.len() as f64, scr_p.iter().sum()]);

    debug_assert_eq!(out.len(), NUMERIC_WIDTH);
    Ok(out)
}
