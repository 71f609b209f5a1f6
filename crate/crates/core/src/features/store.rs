//! `CSF1` feature store.
//!
//! Layout (little-endian):
//!
//! ```text
//! b"CSF1" | u32 n_segments | u32 ts
//! per segment: u8 label | 16*ts f64 kinematic (row-major) | 15*ts f64 eda_ts | 38 f64 eda_num
//! UTF-8 JSON footer, to end of file
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    FeatureConfig, FeatureError, Result, SegmentSample, EDA_TS_ROWS, EDA_TS_ROW_NAMES,
    KINEMATIC_ROWS, KINEMATIC_ROW_NAMES, NUMERIC_FEATURE_NAMES, NUMERIC_WIDTH,
};
use crate::telemetry::CsLabel;

pub const MAGIC: &[u8; 4] = b"CSF1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentMeta {
    pub session_id: String,
    pub participant_id: String,
    pub segment_index: usize,
    pub ssq_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreFooter {
    pub config_hash: String,
    pub config: FeatureConfig,
    pub segments: Vec<SegmentMeta>,
}

/// Hex sha256 of the canonical JSON of `(config, ts)`.
pub fn config_hash(config: &FeatureConfig, ts: usize) -> String {
    let json = serde_json::to_string(&(config, ts)).expect("config serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FeatureError + '_ {
    move |source| FeatureError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn encode_store(samples: &[SegmentSample], ts: usize, config: &FeatureConfig) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    let n = u32::try_from(samples.len())
        .map_err(|_| FeatureError::InvalidInput("too many segments".into()))?;
    let ts32 = u32::try_from(ts).map_err(|_| FeatureError::InvalidInput("ts too large".into()))?;
    buf.extend_from_slice(&n.to_le_bytes());
    buf.extend_from_slice(&ts32.to_le_bytes());
    for s in samples {
        if s.kinematic.dim() != (KINEMATIC_ROWS, ts)
            || s.eda_ts.dim() != (EDA_TS_ROWS, ts)
            || s.eda_num.len() != NUMERIC_WIDTH
        {
            return Err(FeatureError::InvalidInput(format!(
                "segment {}#{} does not match ts={ts}",
                s.session_id, s.segment_index
            )));
        }
        buf.push(s.label.value);
        for v in s.kinematic.iter().chain(s.eda_ts.iter()).chain(s.eda_num.iter()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let footer = StoreFooter {
        config_hash: config_hash(config, ts),
        config: config.clone(),
        segments: samples
            .iter()
            .map(|s| SegmentMeta {
                session_id: s.session_id.clone(),
                participant_id: s.participant_id.clone(),
                segment_index: s.segment_index,
                ssq_delta: s.label.ssq_delta,
            })
            .collect(),
    };
    serde_json::to_writer(&mut buf, &footer).expect("footer serializes");
    Ok(buf)
}

pub fn decode_store(bytes: &[u8]) -> Result<(Vec<SegmentSample>, StoreFooter)> {
    let corrupt = |m: &str| FeatureError::CorruptStore(m.to_string());
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let (n, ts) = (u32_at(4), u32_at(8));
    let floats = (KINEMATIC_ROWS + EDA_TS_ROWS) * ts + NUMERIC_WIDTH;
    let record = 1 + 8 * floats;
    let body_end = n
        .checked_mul(record)
        .and_then(|b| b.checked_add(12))
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| corrupt("truncated records"))?;
    let footer: StoreFooter = serde_json::from_slice(&bytes[body_end..])
        .map_err(|e| FeatureError::CorruptStore(format!("footer: {e}")))?;
    if footer.segments.len() != n {
        return Err(corrupt("footer segment count differs from header"));
    }
    if footer.config_hash != config_hash(&footer.config, ts) {
        return Err(corrupt("config hash does not match footer config"));
    }
    let mut samples = Vec::with_capacity(n);
    for (k, meta) in footer.segments.iter().enumerate() {
        let rec = &bytes[12 + k * record..12 + (k + 1) * record];
        let label = rec[0];
        if label > 1 {
            return Err(corrupt("label byte out of range"));
        }
        let vals: Vec<f64> = rec[1..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let (kin, rest) = vals.split_at(KINEMATIC_ROWS * ts);
        let (eda, num) = rest.split_at(EDA_TS_ROWS * ts);
        samples.push(SegmentSample {
            session_id: meta.session_id.clone(),
            participant_id: meta.participant_id.clone(),
            segment_index: meta.segment_index,
            kinematic: Array2::from_shape_vec((KINEMATIC_ROWS, ts), kin.to_vec()).unwrap(),
            eda_ts: Array2::from_shape_vec((EDA_TS_ROWS, ts), eda.to_vec()).unwrap(),
            eda_num: Array1::from(num.to_vec()),
            label: CsLabel {
                value: label,
                ssq_delta: meta.ssq_delta,
            },
        });
    }
    Ok((samples, footer))
}

pub fn write_store(
    path: impl AsRef<Path>,
    samples: &[SegmentSample],
    ts: usize,
    config: &FeatureConfig,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_store(samples, ts, config)?;
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn read_store(path: impl AsRef<Path>) -> Result<(Vec<SegmentSample>, StoreFooter)> {
    let path = path.as_ref();
    decode_store(&fs::read(path).map_err(io_err(path))?)
}

/// CSV header: `session_id,segment_index,label`, then kinematic cells as
/// `<row>_t<k>`, EDA cells the same way, then the numerical feature names.
pub fn csv_header(ts: usize) -> Vec<String> {
    let mut cols = vec!["session_id".into(), "segment_index".into(), "label".into()];
    for names in [&KINEMATIC_ROW_NAMES[..], &EDA_TS_ROW_NAMES[..]] {
        for name in names {
            cols.extend((0..ts).map(|t| format!("{name}_t{t}")));
        }
    }
    cols.extend(NUMERIC_FEATURE_NAMES.iter().map(|s| s.to_string()));
    cols
}

pub fn export_csv<W: Write>(samples: &[SegmentSample], out: W) -> Result<()> {
    let ts = samples.first().map_or(0, SegmentSample::ts);
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| FeatureError::InvalidInput(format!("csv export: {e}"));
    w.write_record(csv_header(ts)).map_err(csv_err)?;
    for s in samples {
        let mut rec = vec![s.session_id.clone(), s.segment_index.to_string(), s.label.value.to_string()];
        rec.extend(
            s.kinematic
                .iter()
                .chain(s.eda_ts.iter())
                .chain(s.eda_num.iter())
                .map(f64::to_string),
        );
        w.write_record(rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| FeatureError::InvalidInput(format!("csv export: {e}")))?;
    Ok(())
}
