use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{GroundTruthSpan, Sample, SampleSeries, SensorError, Session};
use crate::{Modality, FORMAT_VERSION};

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    format_version: u32,
    session_id: String,
    duration_s: f64,
    #[serde(default)]
    rates_hz: BTreeMap<Modality, f64>,
}

pub(crate) fn header(modality: Modality) -> Vec<String> {
    let mut cols = vec!["t".to_string()];
    match modality {
        Modality::Doppler => cols.extend(["range_m", "velocity_mps", "intensity"].map(String::from)),
        Modality::Lidar => cols.extend((0..360).map(|i| format!("a{i}"))),
        Modality::Thermal => cols.extend((0..100).map(|i| format!("c{i}"))),
        Modality::Imu => cols.extend(["ax", "ay", "az", "gx", "gy", "gz"].map(String::from)),
        Modality::Pose => {
            for k in 0..25 {
                cols.push(format!("kp{k}x"));
                cols.push(format!("kp{k}y"));
            }
            cols.extend((0..25).map(|k| format!("vis{k}")));
        }
        Modality::Depth => cols.extend((0..100).map(|i| format!("d{i}"))),
    }
    cols
}

fn csv_path(dir: &Path, modality: Modality) -> PathBuf {
    dir.join(format!("{}.csv", modality.name()))
}

/// Writes `session` as `meta.json`, one `<modality>.csv` per stream and an
/// optional `labels.csv`.
pub fn write_session(session: &Session, dir: impl AsRef<Path>) -> Result<(), SensorError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| SensorError::io(dir, e))?;
    let meta = Meta {
        format_version: FORMAT_VERSION,
        session_id: session.session_id.clone(),
        duration_s: session.duration_s,
        rates_hz: session
            .modalities
            .iter()
            .map(|(m, s)| (*m, s.rate_hz))
            .collect(),
    };
    let meta_path = dir.join("meta.json");
    let mut text = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    text.push('\n');
    fs::write(&meta_path, text).map_err(|e| SensorError::io(&meta_path, e))?;

    for (modality, series) in &session.modalities {
        let path = csv_path(dir, *modality);
        fs::write(&path, encode_series(series)).map_err(|e| SensorError::io(&path, e))?;
    }

    if let Some(gt) = &session.ground_truth {
        let path = dir.join("labels.csv");
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(["start_s", "end_s", "activity"])
            .and_then(|_| {
                gt.iter().try_for_each(|g| {
                    w.write_record([g.start_s.to_string(), g.end_s.to_string(), g.activity.clone()])
                })
            })
            .map_err(|e| SensorError::io(&path, e.into()))?;
        let bytes = w.into_inner().map_err(|e| SensorError::io(&path, e.into_error()))?;
        fs::write(&path, bytes).map_err(|e| SensorError::io(&path, e))?;
    }
    Ok(())
}

fn encode_series(series: &SampleSeries) -> String {
    let mut out = header(series.modality).join(",");
    out.push('\n');
    for s in &series.samples {
        if series.modality == Modality::Doppler {
            for point in s.values.chunks(3) {
                let _ = write!(out, "{}", s.t);
                for v in point {
                    let _ = write!(out, ",{v}");
                }
                out.push('\n');
            }
        } else {
            let _ = write!(out, "{}", s.t);
            for v in &s.values {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
    }
    out
}

/// Reads a session directory written by [`write_session`].
///
/// `meta.json` is optional; without it the session id is the directory name
/// and the duration is the latest timestamp seen.
pub fn load_session(dir: impl AsRef<Path>) -> Result<Session, SensorError> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(SensorError::MissingDirectory(dir.to_path_buf()));
    }
    let meta_path = dir.join("meta.json");
    let meta: Option<Meta> = if meta_path.exists() {
        let text = fs::read_to_string(&meta_path).map_err(|e| SensorError::io(&meta_path, e))?;
        let meta: Meta = serde_json::from_str(&text).map_err(|e| SensorError::Malformed {
            file: meta_path.clone(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        crate::check_format_version(meta.format_version, "meta.json").map_err(|message| {
            SensorError::Metadata {
                file: meta_path.clone(),
                message,
            }
        })?;
        Some(meta)
    } else {
        None
    };

    let mut modalities = BTreeMap::new();
    for modality in Modality::ALL {
        let path = csv_path(dir, modality);
        if !path.exists() {
            continue;
        }
        let text = fs::read_to_string(&path).map_err(|e| SensorError::io(&path, e))?;
        let rate = meta
            .as_ref()
            .and_then(|m| m.rates_hz.get(&modality).copied())
            .unwrap_or_else(|| modality.default_rate_hz());
        modalities.insert(modality, decode_series(&text, modality, rate, &path)?);
    }

    if meta.is_none() && modalities.is_empty() {
        return Err(SensorError::Metadata {
            file: dir.to_path_buf(),
            message: "no meta.json and no modality files".into(),
        });
    }

    let labels_path = dir.join("labels.csv");
    let ground_truth = if labels_path.exists() {
        Some(decode_labels(&labels_path)?)
    } else {
        None
    };

    let (session_id, duration_s) = match meta {
        Some(m) => (m.session_id, m.duration_s),
        None => {
            let id = dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            let last = modalities
                .values()
                .filter_map(|s: &SampleSeries| s.samples.last().map(|x| x.t))
                .fold(0.0, f64::max);
            (id, last)
        }
    };

    Ok(Session {
        session_id,
        duration_s,
        modalities,
        ground_truth,
    })
}

fn decode_series(
    text: &str,
    modality: Modality,
    rate_hz: f64,
    path: &Path,
) -> Result<SampleSeries, SensorError> {
    let expected_header = header(modality);
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.split(',').eq(expected_header.iter().map(String::as_str)) => {}
        _ => {
            return Err(SensorError::Malformed {
                file: path.to_path_buf(),
                line: 1,
                column: 1,
                message: format!("expected header for {modality}"),
            })
        }
    }
    let width = expected_header.len();
    let mut series = SampleSeries::new(modality, rate_hz);
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.is_empty() {
            continue;
        }
        let mut fields = Vec::with_capacity(width);
        for (col, raw) in line.split(',').enumerate() {
            let v: f64 = raw.trim().parse().map_err(|_| SensorError::Malformed {
                file: path.to_path_buf(),
                line: lineno,
                column: col + 1,
                message: format!("`{raw}` is not a number"),
            })?;
            fields.push(v);
        }
        if fields.len() != width {
            return Err(SensorError::Malformed {
                file: path.to_path_buf(),
                line: lineno,
                column: fields.len().min(width) + 1,
                message: format!("expected {width} columns, found {}", fields.len()),
            });
        }
        let t = fields[0];
        if !t.is_finite() {
            return Err(SensorError::Malformed {
                file: path.to_path_buf(),
                line: lineno,
                column: 1,
                message: "timestamp must be finite".into(),
            });
        }
        let payload = &fields[1..];
        match series.samples.last_mut() {
            Some(prev) if modality == Modality::Doppler && prev.t == t => {
                prev.values.extend_from_slice(payload);
            }
            Some(prev) if t <= prev.t => {
                return Err(SensorError::NonMonotonic {
                    file: path.to_path_buf(),
                    line: lineno,
                    t,
                });
            }
            _ => series.samples.push(Sample::new(t, payload.to_vec())),
        }
    }
    Ok(series)
}

fn decode_labels(path: &Path) -> Result<Vec<GroundTruthSpan>, SensorError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| SensorError::io(path, e.into()))?;
    let mut spans = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            SensorError::Malformed {
                file: path.to_path_buf(),
                line,
                column: 1,
                message: e.to_string(),
            }
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let num = |col: usize| -> Result<f64, SensorError> {
            rec.get(col)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| SensorError::Malformed {
                    file: path.to_path_buf(),
                    line,
                    column: col + 1,
                    message: "expected a number".into(),
                })
        };
        let start_s = num(0)?;
        let end_s = num(1)?;
        let activity = rec.get(2).ok_or_else(|| SensorError::Malformed {
            file: path.to_path_buf(),
            line,
            column: 3,
            message: "missing activity".into(),
        })?;
        spans.push(GroundTruthSpan {
            start_s,
            end_s,
            activity: activity.to_string(),
        });
    }
    Ok(spans)
}
