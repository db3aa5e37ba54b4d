//! Multimodal sessions: data model, on-disk format, validation and a
//! synthetic generator with planted ground truth.

mod catalog;
mod io;
mod script;
mod synth;
mod validate;

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::Modality;

pub use catalog::{catalog_entry, demo_corpus, demo_script, planted_activities, zone_anchor, ActivitySpec, ZoneSpec, PLANTED_ZONES};
pub(crate) use catalog::zone_spec;
pub use io::{load_session, write_session};
pub use script::{ActivityScript, MotionProfile, ScriptStep, WristMotion};
pub use synth::{generate_synthetic_session, geometry};
pub use validate::{validate_session, Finding, GapStats, ValidationReport};

/// One timestamped payload.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub values: Vec<f64>,
}

impl Sample {
    pub fn new(t: f64, values: Vec<f64>) -> Self {
        Self { t, values }
    }
}

// Bitwise comparison so that NaN payloads (lidar no-returns) compare equal
// to themselves after a round trip.
impl PartialEq for Sample {
    fn eq(&self, other: &Self) -> bool {
        self.t.to_bits() == other.t.to_bits()
            && self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSeries {
    pub modality: Modality,
    pub rate_hz: f64,
    pub samples: Vec<Sample>,
}

impl SampleSeries {
    pub fn new(modality: Modality, rate_hz: f64) -> Self {
        Self {
            modality,
            rate_hz,
            samples: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }
}

/// A scripted or annotated activity interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthSpan {
    pub start_s: f64,
    pub end_s: f64,
    pub activity: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub duration_s: f64,
    pub modalities: BTreeMap<Modality, SampleSeries>,
    pub ground_truth: Option<Vec<GroundTruthSpan>>,
}

impl Session {
    pub fn new(session_id: impl Into<String>, duration_s: f64) -> Self {
        Self {
            session_id: session_id.into(),
            duration_s,
            modalities: BTreeMap::new(),
            ground_truth: None,
        }
    }

    /// Activity covering `t`, if any ground truth is attached.
    pub fn activity_at(&self, t: f64) -> Option<&str> {
        self.ground_truth
            .as_ref()?
            .iter()
            .find(|g| g.start_s <= t && t < g.end_s)
            .map(|g| g.activity.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SensorError {
    #[error("session directory {0} does not exist")]
    MissingDirectory(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}:{column}: {message}")]
    Malformed {
        file: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{file}:{line}: timestamp {t} is not after the previous one")]
    NonMonotonic { file: PathBuf, line: usize, t: f64 },
    #[error("{file}: {message}")]
    Metadata { file: PathBuf, message: String },
    #[error("invalid activity script: {0}")]
    InvalidScript(String),
}

impl SensorError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SensorError::Io {
            path: path.into(),
            source,
        }
    }
}
