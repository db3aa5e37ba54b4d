//! Structured scene descriptions for key moments.
//!
//! A [`Describer`] returns raw JSON; [`describe`] enforces the response
//! contract so that any backend (the seeded mock or a remote service) can be
//! swapped in.

mod mock;
#[cfg(feature = "remote")]
mod remote;

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::keymoments::KeyMoment;
use crate::Modality;

pub use mock::{ConfidenceDistribution, MockDescriber, MockNoiseConfig};
#[cfg(feature = "remote")]
pub use remote::HttpDescriber;

#[derive(Debug, thiserror::Error)]
pub enum AnnotateError {
    /// The describer could not be reached; retrying may succeed.
    #[error("describer transport failure: {0}")]
    Transport(String),
    #[error("invalid threshold {0}; expected a value in [0, 1]")]
    Threshold(f64),
    #[error("description file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("thread pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl AnnotateError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, AnnotateError::Transport(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriberRequest {
    pub session_id: String,
    pub t_s: f64,
    #[serde(default)]
    pub modality: Option<Modality>,
    pub clip_length_s: f64,
    pub frame_rate_fps: f64,
    pub resolution: [u32; 2],
    /// Opaque frame references (paths, URLs or base64 payloads).
    #[serde(default)]
    pub frames: Option<Vec<String>>,
}

impl DescriberRequest {
    pub fn new(session_id: impl Into<String>, t_s: f64) -> Self {
        Self {
            session_id: session_id.into(),
            t_s,
            modality: None,
            clip_length_s: 5.0,
            frame_rate_fps: 1.0,
            resolution: [640, 480],
            frames: None,
        }
    }

    pub fn for_moment(m: &KeyMoment) -> Self {
        Self {
            modality: Some(m.modality),
            ..Self::new(m.session_id.clone(), m.t_s)
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Structure {
    #[serde(default)]
    pub initial: String,
    #[serde(default)]
    pub main: String,
    #[serde(default)]
    pub result: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDescription {
    pub session_id: String,
    pub t_s: f64,
    #[serde(default)]
    pub modality: Option<Modality>,
    pub actions: Vec<String>,
    pub objects: Vec<String>,
    pub location: Option<String>,
    pub structure: Structure,
    pub confidence: f64,
    pub empty: bool,
}

impl SceneDescription {
    pub fn empty_for(req: &DescriberRequest) -> Self {
        Self {
            session_id: req.session_id.clone(),
            t_s: req.t_s,
            modality: req.modality,
            actions: Vec::new(),
            objects: Vec::new(),
            location: None,
            structure: Structure::default(),
            confidence: 0.0,
            empty: true,
        }
    }
}

/// Backend producing a raw JSON response for a request.
pub trait Describer: Send + Sync {
    fn describe_raw(&self, request: &DescriberRequest) -> Result<Value, AnnotateError>;
}

fn string_list(v: Option<&Value>) -> Option<Vec<String>> {
    match v {
        None | Some(Value::Null) => Some(Vec::new()),
        Some(Value::Array(items)) => items
            .iter()
            .map(|x| x.as_str().map(|s| s.trim().to_string()))
            .filter(|s| s.as_ref().is_none_or(|s| !s.is_empty()))
            .collect(),
        _ => None,
    }
}

/// Applies the response contract: `actions` (string list), `objects`
/// (string list, optional), `location` (string), `structure` (object with
/// optional `initial`/`main`/`result`), `confidence` (number in [0, 1]).
/// Anything else, or a response without actions or location, yields an
/// empty description with confidence 0.
pub fn parse_response(req: &DescriberRequest, raw: &Value) -> SceneDescription {
    let parsed = (|| {
        let obj = raw.as_object()?;
        let actions = string_list(obj.get("actions"))?;
        let objects = string_list(obj.get("objects"))?;
        let location = match obj.get("location") {
            None | Some(Value::Null) => String::new(),
            Some(Value::String(s)) => s.trim().to_string(),
            _ => return None,
        };
        let structure = match obj.get("structure") {
            None | Some(Value::Null) => Structure::default(),
            Some(v) => serde_json::from_value(v.clone()).ok()?,
        };
        let confidence = obj.get("confidence")?.as_f64()?;
        if !(0.0..=1.0).contains(&confidence) {
            return None;
        }
        if actions.is_empty() || location.is_empty() {
            return None;
        }
        Some(SceneDescription {
            session_id: req.session_id.clone(),
            t_s: req.t_s,
            modality: req.modality,
            actions,
            objects,
            location: Some(location),
            structure,
            confidence,
            empty: false,
        })
    })();
    parsed.unwrap_or_else(|| SceneDescription::empty_for(req))
}

pub fn describe(request: &DescriberRequest, describer: &dyn Describer) -> Result<SceneDescription, AnnotateError> {
    let raw = describer.describe_raw(request)?;
    Ok(parse_response(request, &raw))
}

/// Describes every request with at most `parallelism` concurrent calls;
/// output order matches input order.
pub fn describe_batch(
    requests: &[DescriberRequest],
    describer: &dyn Describer,
    parallelism: usize,
) -> Result<Vec<SceneDescription>, AnnotateError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| AnnotateError::Pool(e.to_string()))?;
    pool.install(|| requests.par_iter().map(|r| describe(r, describer)).collect())
}

/// Non-empty descriptions with confidence at or above `theta`.
pub fn filter_confident(descs: &[SceneDescription], theta: f64) -> Result<Vec<SceneDescription>, AnnotateError> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(AnnotateError::Threshold(theta));
    }
    Ok(descs.iter().filter(|d| !d.empty && d.confidence >= theta).cloned().collect())
}

/// Fraction of descriptions that carry usable content.
pub fn detection_rate(descs: &[SceneDescription]) -> f64 {
    if descs.is_empty() {
        return 0.0;
    }
    descs.iter().filter(|d| !d.empty).count() as f64 / descs.len() as f64
}

pub fn write_jsonl<W: Write>(descs: &[SceneDescription], mut out: W) -> Result<(), AnnotateError> {
    for d in descs {
        serde_json::to_writer(&mut out, d).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<SceneDescription>, AnnotateError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| AnnotateError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    struct Canned(Value);

    impl Describer for Canned {
        fn describe_raw(&self, _: &DescriberRequest) -> Result<Value, AnnotateError> {
            Ok(self.0.clone())
        }
    }

    fn desc(conf: f64, empty: bool) -> SceneDescription {
        SceneDescription {
            confidence: conf,
            empty,
            actions: if empty { vec![] } else { vec!["x".into()] },
            location: (!empty).then(|| "here".into()),
            ..SceneDescription::empty_for(&DescriberRequest::new("s", 1.0))
        }
    }

    #[test]
    fn well_formed_response() {
        let req = DescriberRequest::new("s", 12.0);
        let raw = json!({
            "actions": ["washing dishes"],
            "objects": ["sponge"],
            "location": "at sink",
            "structure": {"initial": "a", "main": "b", "result": "c"},
            "confidence": 0.9
        });
        let d = describe(&req, &Canned(raw)).unwrap();
        assert!(!d.empty);
        assert_eq!(d.location.as_deref(), Some("at sink"));
        assert_eq!(d.structure.main, "b");
    }

    #[test]
    fn malformed_responses_are_empty() {
        let req = DescriberRequest::new("s", 12.0);
        for raw in [
            json!("text"),
            json!({"actions": "washing", "location": "sink", "confidence": 0.9}),
            json!({"actions": ["washing"], "location": "sink", "confidence": 1.5}),
            json!({"actions": ["washing"], "location": "sink"}),
            json!({"actions": [], "location": "sink", "confidence": 0.9}),
            json!({"actions": ["washing"], "location": 3, "confidence": 0.9}),
        ] {
            let d = parse_response(&req, &raw);
            assert!(d.empty, "{raw}");
            assert_eq!(d.confidence, 0.0);
            assert!(d.actions.is_empty() && d.location.is_none());
        }
    }

    #[test]
    fn threshold_is_inclusive() {
        let descs = vec![desc(0.9, false), desc(0.8, false), desc(0.79, false), desc(0.95, true)];
        let kept = filter_confident(&descs, 0.8).unwrap();
        assert_eq!(kept.len(), 2);
        assert_eq!(filter_confident(&descs, 0.0).unwrap().len(), 3);
        assert_eq!(filter_confident(&kept, 0.8).unwrap(), kept);
        assert!(filter_confident(&descs, 1.2).is_err());
    }

    #[test]
    fn batch_preserves_order() {
        let reqs: Vec<DescriberRequest> = (0..20).map(|i| DescriberRequest::new("s", i as f64)).collect();
        let canned = Canned(json!({"actions": ["a"], "location": "l", "confidence": 1.0}));
        let out = describe_batch(&reqs, &canned, 4).unwrap();
        assert_eq!(out.len(), 20);
        assert!(out.iter().zip(&reqs).all(|(d, r)| d.t_s == r.t_s));
    }

    #[test]
    fn jsonl_round_trip() {
        let descs = vec![desc(0.9, false), desc(0.0, true)];
        let mut buf = Vec::new();
        write_jsonl(&descs, &mut buf).unwrap();
        assert_eq!(read_jsonl(&buf[..]).unwrap(), descs);
    }
}
