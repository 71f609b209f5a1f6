//! Session directory format.
//!
//! A session directory holds `manifest.json` plus one CSV per channel group:
//!
//! | group    | header                              | default rate |
//! |----------|-------------------------------------|--------------|
//! | `head`   | `t,pos_x,pos_y,pos_z,rot_x,rot_y,rot_z` | 90 Hz   |
//! | `motion` | `t,speed,rotation`                  | 90 Hz        |
//! | `eda`    | `t,eda`                             | 4 Hz         |
//! | `bvp`    | `t,bvp` (optional)                  | 64 Hz        |
//! | `tem`    | `t,tem` (optional)                  | 4 Hz         |
//!
//! `t` is seconds from session start and must be strictly increasing.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    ChannelSeries, RawSession, Result, TelemetryError, BVP, BVP_RATE_HZ, EDA, EDA_RATE_HZ,
    HEAD_RATE_HZ, POS_X, POS_Y, POS_Z, ROTATION, ROT_X, ROT_Y, ROT_Z, SPEED, TEM, TEM_RATE_HZ,
};

pub const MANIFEST_FILE: &str = "manifest.json";

struct Group {
    key: &'static str,
    columns: &'static [&'static str],
    default_rate: f64,
    required: bool,
}

const GROUPS: [Group; 5] = [
    Group {
        key: "head",
        columns: &[POS_X, POS_Y, POS_Z, ROT_X, ROT_Y, ROT_Z],
        default_rate: HEAD_RATE_HZ,
        required: true,
    },
    Group {
        key: "motion",
        columns: &[SPEED, ROTATION],
        default_rate: HEAD_RATE_HZ,
        required: true,
    },
    Group {
        key: "eda",
        columns: &[EDA],
        default_rate: EDA_RATE_HZ,
        required: true,
    },
    Group {
        key: "bvp",
        columns: &[BVP],
        default_rate: BVP_RATE_HZ,
        required: false,
    },
    Group {
        key: "tem",
        columns: &[TEM],
        default_rate: TEM_RATE_HZ,
        required: false,
    },
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub session_id: String,
    pub participant_id: String,
    pub duration_s: u32,
    pub ssq_pre: f64,
    pub ssq_post: f64,
    /// Channel group (`head`, `motion`, `eda`, `bvp`, `tem`) to CSV file name,
    /// relative to the manifest.
    pub channels: BTreeMap<String, String>,
    /// Per-group sampling rate overrides.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub rates_hz: BTreeMap<String, f64>,
}

/// Loads a session from a manifest path or the directory containing it.
pub fn load_session(manifest_path: impl AsRef<Path>) -> Result<RawSession> {
    let mut path = manifest_path.as_ref().to_path_buf();
    if path.is_dir() {
        path.push(MANIFEST_FILE);
    }
    let text = read_to_string(&path)?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| TelemetryError::MalformedManifest {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();

    let mut channels = Vec::new();
    for group in &GROUPS {
        let Some(file) = manifest.channels.get(group.key) else {
            if group.required {
                return Err(TelemetryError::MissingChannel(group.key.to_string()));
            }
            continue;
        };
        let rate = manifest
            .rates_hz
            .get(group.key)
            .copied()
            .unwrap_or(group.default_rate);
        let columns = read_group_csv(&dir.join(file), group.columns)?;
        for (name, values) in group.columns.iter().zip(columns) {
            channels.push(ChannelSeries::new(*name, rate, values)?);
        }
    }
    RawSession::new(
        manifest.session_id,
        manifest.participant_id,
        manifest.duration_s,
        channels,
        manifest.ssq_pre,
        manifest.ssq_post,
    )
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, source: std::io::Error) -> TelemetryError {
    if source.kind() == std::io::ErrorKind::NotFound {
        TelemetryError::MissingFile {
            path: path.display().to_string(),
        }
    } else {
        TelemetryError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

fn read_group_csv(path: &Path, columns: &[&str]) -> Result<Vec<Vec<f64>>> {
    let file_name = path.display().to_string();
    let file = File::open(path).map_err(|e| io_error(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(std::io::BufReader::new(file));
    let malformed = |row: usize, reason: String| TelemetryError::MalformedRow {
        file: file_name.clone(),
        row,
        reason,
    };

    let headers = reader.headers().map_err(|e| malformed(0, e.to_string()))?;
    let expected: Vec<&str> = std::iter::once("t").chain(columns.iter().copied()).collect();
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(malformed(
            0,
            format!("header must be `{}`", expected.join(",")),
        ));
    }

    let mut out = vec![Vec::new(); columns.len()];
    let mut last_t = f64::NEG_INFINITY;
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| malformed(row, e.to_string()))?;
        if record.len() != expected.len() {
            return Err(malformed(
                row,
                format!("expected {} fields, found {}", expected.len(), record.len()),
            ));
        }
        let mut fields = record.iter().map(|f| {
            f.trim()
                .parse::<f64>()
                .map_err(|_| malformed(row, format!("`{f}` is not a number")))
        });
        let t = fields.next().expect("record has a t column")?;
        if !(t > last_t) {
            return Err(malformed(row, format!("t={t} is not strictly increasing")));
        }
        last_t = t;
        for (col, value) in out.iter_mut().zip(fields) {
            col.push(value?);
        }
    }
    if out[0].is_empty() {
        return Err(malformed(1, "no data rows".into()));
    }
    Ok(out)
}

/// Writes `session` as a session directory. Values are rendered with the
/// shortest round-tripping decimal form, so reloading is bit-exact.
pub fn save_session(session: &RawSession, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;

    let mut files = BTreeMap::new();
    let mut rates = BTreeMap::new();
    for group in &GROUPS {
        let series: Option<Vec<&ChannelSeries>> = group
            .columns
            .iter()
            .map(|c| session.channels.get(*c))
            .collect();
        let Some(series) = series else {
            if group.required {
                return Err(TelemetryError::MissingChannel(group.key.to_string()));
            }
            continue;
        };
        let rate = series[0].rate_hz;
        let len = series[0].len();
        if series.iter().any(|s| s.rate_hz != rate || s.len() != len) {
            return Err(TelemetryError::InvalidInput(format!(
                "channels of group `{}` must share rate and length",
                group.key
            )));
        }
        if rate != group.default_rate {
            rates.insert(group.key.to_string(), rate);
        }
        let file_name = format!("{}.csv", group.key);
        let path = dir.join(&file_name);
        write_group_csv(&path, group.columns, &series, rate)?;
        files.insert(group.key.to_string(), file_name);
    }

    let manifest = Manifest {
        session_id: session.session_id.clone(),
        participant_id: session.participant_id.clone(),
        duration_s: session.duration_s,
        ssq_pre: session.ssq_pre,
        ssq_post: session.ssq_post,
        channels: files,
        rates_hz: rates,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| TelemetryError::InvalidInput(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(|e| io_error(&path, e))?;
    Ok(path)
}

fn write_group_csv(
    path: &Path,
    columns: &[&str],
    series: &[&ChannelSeries],
    rate: f64,
) -> Result<()> {
    let file = File::create(path).map_err(|e| io_error(path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        writeln!(w, "t,{}", columns.join(","))?;
        for i in 0..series[0].len() {
            write!(w, "{}", i as f64 / rate)?;
            for s in series {
                write!(w, ",{}", s.values[i])?;
            }
            writeln!(w)?;
        }
        w.flush()
    };
    write(&mut w).map_err(|e| io_error(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::telemetry::{generate_synthetic_session, SyntheticConfig, REQUIRED_CHANNELS};

    fn small_config() -> SyntheticConfig {
        SyntheticConfig {
            duration_s: 12,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let session = generate_synthetic_session(&small_config(), 3).unwrap();
        save_session(&session, dir.path()).unwrap();
        let loaded = load_session(dir.path()).unwrap();
        assert_eq!(loaded.channels.len(), session.channels.len());
        for (name, ch) in &session.channels {
            let other = &loaded.channels[name];
            assert_eq!(other.rate_hz, ch.rate_hz);
            let a: Vec<u64> = ch.values.iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = other.values.iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b, "channel {name}");
        }
        assert_eq!(loaded, session);
    }

    #[test]
    fn full_length_session_loads_nine_required_channels() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SyntheticConfig {
            include_bvp_tem: false,
            ..SyntheticConfig::default()
        };
        let session = generate_synthetic_session(&cfg, 11).unwrap();
        save_session(&session, dir.path()).unwrap();
        let loaded = load_session(dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(loaded.duration_s, 240);
        assert_eq!(loaded.channels.len(), 9);
        for name in REQUIRED_CHANNELS {
            assert!(loaded.channels.contains_key(name));
        }
    }

    #[test]
    fn missing_eda_group_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let session = generate_synthetic_session(&small_config(), 3).unwrap();
        save_session(&session, dir.path()).unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        let mut manifest: Manifest =
            serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        manifest.channels.remove("eda");
        fs::write(&path, serde_json::to_string(&manifest).unwrap()).unwrap();
        match load_session(dir.path()) {
            Err(TelemetryError::MissingChannel(name)) => assert_eq!(name, "eda"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_file_and_malformed_row_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let session = generate_synthetic_session(&small_config(), 3).unwrap();
        save_session(&session, dir.path()).unwrap();

        let motion = dir.path().join("motion.csv");
        let text = fs::read_to_string(&motion).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[5] = "0.0444,abc,1.0".into();
        fs::write(&motion, lines.join("\n") + "\n").unwrap();
        match load_session(dir.path()) {
            Err(TelemetryError::MalformedRow { row, file, .. }) => {
                assert_eq!(row, 5);
                assert!(file.ends_with("motion.csv"));
            }
            other => panic!("unexpected {other:?}"),
        }

        fs::write(&motion, text).unwrap();
        fs::remove_file(dir.path().join("eda.csv")).unwrap();
        assert!(matches!(
            load_session(dir.path()),
            Err(TelemetryError::MissingFile { .. })
        ));
        assert!(matches!(
            load_session(dir.path().join("nope")),
            Err(TelemetryError::MissingFile { .. })
        ));
    }

    #[test]
    fn one_extra_row_is_truncated() {
        // 240 s at 90 Hz is 21,600 rows; a recording with 21,601 is accepted.
        let dir = tempfile::tempdir().unwrap();
        let cfg = SyntheticConfig {
            include_bvp_tem: false,
            ..SyntheticConfig::default()
        };
        let session = generate_synthetic_session(&cfg, 5).unwrap();
        save_session(&session, dir.path()).unwrap();
        let head = dir.path().join("head.csv");
        let mut text = fs::read_to_string(&head).unwrap();
        text.push_str("240,1,2,3,4,5,6\n");
        assert_eq!(text.lines().count(), 21_602);
        fs::write(&head, text).unwrap();
        let loaded = load_session(dir.path()).unwrap();
        assert_eq!(loaded.channel(POS_X).unwrap().len(), 21_600);
        assert_eq!(loaded.channel(ROT_Z).unwrap().values, session.channel(ROT_Z).unwrap().values);
    }

    #[test]
    fn non_increasing_time_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let session = generate_synthetic_session(&small_config(), 3).unwrap();
        save_session(&session, dir.path()).unwrap();
        let eda = dir.path().join("eda.csv");
        let text = fs::read_to_string(&eda).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[3] = lines[2].clone();
        fs::write(&eda, lines.join("\n") + "\n").unwrap();
        assert!(matches!(
            load_session(dir.path()),
            Err(TelemetryError::MalformedRow { row: 3, .. })
        ));
    }
}
