//! Session-by-session replay: annotate only what is new or uncertain,
//! rebuild labels, retrain, and score on the sessions still to come.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::annotate::{describe_batch, filter_confident, AnnotateError, DescriberRequest, SceneDescription};
use crate::config::PipelineConfig;
use crate::featurize::{to_micros, WindowSpec};
use crate::har::{build_dataset, infer, train_zone_model, HarError, LabeledDataset, Predictor, ZoneModel, NO_PREDICTION};
use crate::keymoments::{discover_key_moments, KeyMoment, ModalityMoments, Source};
use crate::labels::LabelLevel;
use crate::pipeline::{
    align_labels, describer_requests, labeled_window_pairs, labels_from_descriptions, propagated_dataset, window_truth, CorpusEntry, PipelineError,
    Services, UNDEFINED,
};
use crate::sensor::Session;
use crate::{seed, Modality};

/// Expected label for future windows whose activity was never discovered.
pub const UNALIGNED: &str = "(unaligned)";

#[derive(Debug, thiserror::Error)]
pub enum IncrementalError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("session {step}: describer failed: {source}; progress saved for resume")]
    Describer { step: usize, source: AnnotateError },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{0}")]
    Input(String),
}

impl From<HarError> for IncrementalError {
    fn from(e: HarError) -> Self {
        Self::Pipeline(e.into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IncrementalPolicy {
    /// Moments the current model predicts below this confidence are queried.
    pub confidence_floor: f64,
    /// Rebuild labels and retrain after every session, not only after new
    /// annotations arrive.
    pub retrain_every_session: bool,
}

impl Default for IncrementalPolicy {
    fn default() -> Self {
        Self {
            confidence_floor: 0.6,
            retrain_every_session: true,
        }
    }
}

impl IncrementalPolicy {
    pub fn validate(&self) -> Result<(), String> {
        if self.confidence_floor > 0.0 && self.confidence_floor < 1.0 {
            Ok(())
        } else {
            Err(format!("confidence_floor must lie in (0, 1), got {}", self.confidence_floor))
        }
    }
}

/// Label space after a step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSnapshot {
    pub zones: Vec<String>,
    pub base_labels: Vec<String>,
    /// Group names at the training granularity.
    pub labels: Vec<String>,
    /// True activity to discovered base label.
    pub alignment: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based position in the session order.
    pub session: usize,
    pub session_id: String,
    pub candidates: usize,
    pub novel: usize,
    pub low_confidence: usize,
    pub query_count: usize,
    pub cumulative_queries: usize,
    pub trained: bool,
    /// `None` after the last session, when no future sessions remain.
    pub forward_accuracy: Option<f64>,
    pub future_windows: usize,
    pub snapshot: LabelSnapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementalTrace {
    pub format_version: u32,
    pub steps: Vec<StepRecord>,
}

impl IncrementalTrace {
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["session", "session_id", "query_count", "cumulative_queries", "forward_accuracy", "no_future_sessions"])?;
        for s in &self.steps {
            w.write_record([
                s.session.to_string(),
                s.session_id.clone(),
                s.query_count.to_string(),
                s.cumulative_queries.to_string(),
                s.forward_accuracy.map(|a| format!("{a:.6}")).unwrap_or_default(),
                s.forward_accuracy.is_none().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes") + "\n"
    }
}

/// Saved between steps; enough to continue a replay where it stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    session_ids: Vec<String>,
    /// Every description received so far, in query order.
    annotated: Vec<SceneDescription>,
    steps: Vec<StepRecord>,
}

const CHECKPOINT_FILE: &str = "checkpoint.json";

impl Checkpoint {
    fn path(dir: &Path) -> PathBuf {
        dir.join(CHECKPOINT_FILE)
    }

    fn load(dir: &Path) -> Result<Option<Self>, IncrementalError> {
        let path = Self::path(dir);
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| IncrementalError::Checkpoint(format!("{}: {e}", path.display())))?;
        let cp: Checkpoint = serde_json::from_str(&text).map_err(|e| IncrementalError::Checkpoint(format!("{}: {e}", path.display())))?;
        crate::check_format_version(cp.format_version, "checkpoint").map_err(IncrementalError::Checkpoint)?;
        Ok(Some(cp))
    }

    fn remove(dir: &Path) -> Result<(), IncrementalError> {
        match std::fs::remove_file(Self::path(dir)) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(IncrementalError::Checkpoint(format!("{}: {e}", dir.display()))),
            _ => Ok(()),
        }
    }

    fn save(&self, dir: &Path) -> Result<(), IncrementalError> {
        std::fs::create_dir_all(dir).map_err(|e| IncrementalError::Checkpoint(format!("{}: {e}", dir.display())))?;
        let text = serde_json::to_string(self).expect("checkpoint serializes");
        let tmp = dir.join(format!("{CHECKPOINT_FILE}.tmp"));
        std::fs::write(&tmp, text)
            .and_then(|_| std::fs::rename(&tmp, Self::path(dir)))
            .map_err(|e| IncrementalError::Checkpoint(format!("{}: {e}", dir.display())))
    }
}

type QueryKey = (String, Modality, i64);

fn query_key(session_id: &str, modality: Option<Modality>, t_s: f64) -> QueryKey {
    (session_id.to_string(), modality.unwrap_or(Modality::Imu), to_micros(t_s))
}

/// Annotated moment times per session, in µs, sorted.
fn annotated_times(annotated: &[SceneDescription]) -> BTreeMap<&str, Vec<i64>> {
    let mut out: BTreeMap<&str, Vec<i64>> = BTreeMap::new();
    for d in annotated {
        out.entry(d.session_id.as_str()).or_default().push(to_micros(d.t_s));
    }
    for v in out.values_mut() {
        v.sort_unstable();
    }
    out
}

fn near(times: &BTreeMap<&str, Vec<i64>>, session_id: &str, t_us: i64, radius_us: i64) -> bool {
    times.get(session_id).is_some_and(|v| {
        let i = v.partition_point(|&x| x < t_us - radius_us);
        v.get(i).is_some_and(|&x| x <= t_us + radius_us)
    })
}

/// A cluster moment is novel when no window of its density cluster lies
/// within half a window of an annotated moment; a change moment is novel
/// when no annotated moment of its session lies within the merge gap.
fn is_novel(m: &KeyMoment, per_modality: &[ModalityMoments], times: &BTreeMap<&str, Vec<i64>>, window: &WindowSpec, min_gap_s: f64) -> bool {
    match (m.source, m.cluster_id) {
        (Source::Cluster, Some(c)) => {
            let Some(search) = per_modality.iter().find(|p| p.modality == m.modality).and_then(|p| p.search.as_ref()) else {
                return true;
            };
            let half = to_micros(window.length_s / 2.0);
            !search
                .clustering
                .labels
                .iter()
                .zip(&search.reduced.keys)
                .filter(|(l, _)| **l == Some(c))
                .any(|(_, k)| near(times, &k.session_id, to_micros(k.t_s), half))
        }
        _ => !near(times, &m.session_id, to_micros(m.t_s), to_micros(min_gap_s)),
    }
}

fn window_features(corpus: &[CorpusEntry], session_id: &str, t_s: f64) -> BTreeMap<Modality, Vec<f64>> {
    corpus
        .iter()
        .find(|(sid, _)| sid == session_id)
        .map(|(_, tables)| {
            tables
                .iter()
                .filter_map(|(m, t)| t.window_at(t_s).filter(|w| w.valid).map(|w| (*m, w.values.clone())))
                .collect()
        })
        .unwrap_or_default()
}

/// Trained state after a step.
struct StepModel {
    model: Option<ZoneModel>,
    level: Option<LabelLevel>,
    snapshot: LabelSnapshot,
}

fn build_model(
    annotated: &[SceneDescription],
    sessions: &[Session],
    corpus: &[CorpusEntry],
    cfg: &PipelineConfig,
    services: &Services,
) -> Result<StepModel, IncrementalError> {
    let confident = filter_confident(annotated, cfg.annotate.theta_conf).map_err(PipelineError::from)?;
    let empty = StepModel {
        model: None,
        level: None,
        snapshot: LabelSnapshot {
            zones: vec![],
            base_labels: vec![],
            labels: vec![],
            alignment: BTreeMap::new(),
        },
    };
    if confident.is_empty() {
        return Ok(empty);
    }
    let (labels, window_labels) = labels_from_descriptions(&confident, corpus, cfg, services)?;
    let lambda = cfg.har.lambda;
    let level = labels
        .hierarchy
        .level(lambda)
        .cloned()
        .ok_or_else(|| IncrementalError::Input(format!("lambda {lambda} is not among the configured label levels")))?;
    let alignment = align_labels(&labeled_window_pairs(&window_labels, sessions, &cfg.features.window));
    let dataset = propagated_dataset(corpus, &window_labels, &level)?.decimate(cfg.har.train_stride);
    let model = match train_zone_model(&dataset, Some(lambda), &cfg.har.grid, seed::derive(cfg.seed, "har")) {
        Ok(m) => Some(m),
        Err(HarError::Empty(_) | HarError::InsufficientRows { .. } | HarError::SingleClass) => None,
        Err(e) => return Err(e.into()),
    };
    let snapshot = LabelSnapshot {
        zones: labels.consolidation.zone_map.zones.clone(),
        base_labels: labels.consolidation.base_labels(),
        labels: level.names().into_iter().map(String::from).collect(),
        alignment: alignment.mapping,
    };
    Ok(StepModel {
        model,
        level: Some(level),
        snapshot,
    })
}

/// Future windows with defined ground truth, labeled with the group their
/// activity aligns to, or [`UNALIGNED`].
pub fn future_dataset(
    corpus: &[CorpusEntry],
    sessions: &[Session],
    level: Option<&LabelLevel>,
    alignment: &BTreeMap<String, String>,
    window: &WindowSpec,
) -> Result<LabeledDataset, PipelineError> {
    let by_id: BTreeMap<&str, &Session> = sessions.iter().map(|s| (s.session_id.as_str(), s)).collect();
    Ok(build_dataset(corpus, |sid, t| {
        let truth = window_truth(by_id.get(sid)?, t, window);
        if truth == UNDEFINED {
            return None;
        }
        let name = alignment
            .get(truth)
            .and_then(|base| level?.group_of(base))
            .map_or(UNALIGNED.to_string(), |g| g.name.clone());
        Some((String::new(), name))
    })?)
}

/// Window-level accuracy over the future rows; rows the model cannot
/// predict count as wrong.
pub fn forward_accuracy<P: Predictor>(model: Option<&P>, future: &LabeledDataset) -> Result<f64, IncrementalError> {
    if future.rows.is_empty() {
        return Err(IncrementalError::Input("empty future set".into()));
    }
    let mut hits = 0usize;
    for r in &future.rows {
        let predicted = match model.map(|m| m.predict_row(r)) {
            Some(Ok((p, _))) => p,
            Some(Err(HarError::NoMembers)) | None => NO_PREDICTION.to_string(),
            Some(Err(e)) => return Err(e.into()),
        };
        hits += usize::from(predicted == r.activity);
    }
    Ok(hits as f64 / future.rows.len() as f64)
}

/// Replays the sessions in order. With `checkpoint_dir`, progress is saved
/// after every step, an existing checkpoint is resumed, and the checkpoint
/// is removed once the replay completes.
pub fn run_incremental(
    sessions: &[Session],
    corpus: &[CorpusEntry],
    cfg: &PipelineConfig,
    services: &Services,
    checkpoint_dir: Option<&Path>,
) -> Result<IncrementalTrace, IncrementalError> {
    if sessions.len() < 2 {
        return Err(IncrementalError::Input("incremental replay needs at least 2 sessions".into()));
    }
    let ids: Vec<String> = sessions.iter().map(|s| s.session_id.clone()).collect();
    if corpus.iter().map(|(id, _)| id).ne(ids.iter()) {
        return Err(IncrementalError::Input("feature corpus does not follow the session order".into()));
    }
    if sessions.iter().any(|s| s.ground_truth.is_none()) {
        return Err(IncrementalError::Input("forward accuracy needs ground truth for every session".into()));
    }
    cfg.incremental.validate().map_err(IncrementalError::Input)?;

    let mut cp = match checkpoint_dir.map(Checkpoint::load).transpose()?.flatten() {
        Some(cp) if cp.session_ids == ids => cp,
        Some(_) => return Err(IncrementalError::Checkpoint("checkpoint was written for a different session list".into())),
        None => Checkpoint {
            format_version: crate::FORMAT_VERSION,
            session_ids: ids,
            annotated: vec![],
            steps: vec![],
        },
    };
    let window = &cfg.features.window;
    let done = cp.steps.len();
    let mut prev = if done == 0 {
        None
    } else {
        Some(build_model(&cp.annotated, &sessions[..done], &corpus[..done], cfg, services)?.model)
    }
    .flatten();

    for n in done + 1..=sessions.len() {
        let seen = &corpus[..n];
        let (merged, per_modality) = discover_key_moments(seen, &cfg.keymoments).map_err(PipelineError::from)?;
        let queried: BTreeSet<QueryKey> = cp.annotated.iter().map(|d| query_key(&d.session_id, d.modality, d.t_s)).collect();
        let times = annotated_times(&cp.annotated);
        let candidates: Vec<&KeyMoment> = merged.iter().filter(|m| !queried.contains(&query_key(&m.session_id, Some(m.modality), m.t_s))).collect();
        let (mut novel, mut low) = (0, 0);
        let mut chosen = Vec::new();
        for m in &candidates {
            let take = if is_novel(m, &per_modality, &times, window, cfg.keymoments.min_gap_s) {
                novel += 1;
                true
            } else {
                let confidence = match &prev {
                    Some(model) => match infer(model, &window_features(seen, &m.session_id, m.t_s)) {
                        Ok(i) => i.confidence,
                        Err(HarError::NoMembers) => 0.0,
                        Err(e) => return Err(e.into()),
                    },
                    None => 0.0,
                };
                let is_low = confidence < cfg.incremental.confidence_floor;
                low += usize::from(is_low);
                is_low
            };
            if take {
                chosen.push((*m).clone());
            }
        }
        let requests: Vec<DescriberRequest> = describer_requests(&chosen, cfg);
        let answers = match describe_batch(&requests, services.describer, cfg.annotate.parallelism) {
            Ok(a) => a,
            Err(source) => {
                if let Some(dir) = checkpoint_dir {
                    cp.save(dir)?;
                }
                return Err(IncrementalError::Describer { step: n, source });
            }
        };
        cp.annotated.extend(answers);

        let retrain = cfg.incremental.retrain_every_session || !requests.is_empty() || cp.steps.is_empty();
        let built = if retrain {
            Some(build_model(&cp.annotated, &sessions[..n], seen, cfg, services)?)
        } else {
            None
        };
        let snapshot = match &built {
            Some(b) => b.snapshot.clone(),
            None => cp.steps.last().expect("earlier step").snapshot.clone(),
        };
        let (model, level) = match built {
            Some(b) => (b.model, b.level),
            None => (prev.take(), None),
        };
        let forward = if n < sessions.len() {
            let level = match level {
                Some(l) => Some(l),
                None => {
                    build_model(&cp.annotated, &sessions[..n], seen, cfg, services)?.level
                }
            };
            let future = future_dataset(&corpus[n..], &sessions[n..], level.as_ref(), &snapshot.alignment, window)?;
            Some((forward_accuracy(model.as_ref(), &future)?, future.rows.len()))
        } else {
            None
        };
        cp.steps.push(StepRecord {
            session: n,
            session_id: sessions[n - 1].session_id.clone(),
            candidates: candidates.len(),
            novel,
            low_confidence: low,
            query_count: requests.len(),
            cumulative_queries: cp.annotated.len(),
            trained: model.is_some(),
            forward_accuracy: forward.map(|f| f.0),
            future_windows: forward.map_or(0, |f| f.1),
            snapshot,
        });
        if let Some(dir) = checkpoint_dir {
            cp.save(dir)?;
        }
        prev = model;
    }
    if let Some(dir) = checkpoint_dir {
        Checkpoint::remove(dir)?;
    }
    Ok(IncrementalTrace {
        format_version: crate::FORMAT_VERSION,
        steps: cp.steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::har::Row;

    struct Always(&'static str);

    impl Predictor for Always {
        fn predict_row(&self, _: &Row) -> Result<(String, f64), HarError> {
            Ok((self.0.to_string(), 1.0))
        }
    }

    struct Oracle;

    impl Predictor for Oracle {
        fn predict_row(&self, r: &Row) -> Result<(String, f64), HarError> {
            Ok((r.activity.clone(), 1.0))
        }
    }

    fn rows(labels: &[&str]) -> LabeledDataset {
        LabeledDataset {
            rows: labels
                .iter()
                .enumerate()
                .map(|(i, l)| Row {
                    session_id: "f".into(),
                    t_s: i as f64,
                    features: BTreeMap::new(),
                    zone: "z".into(),
                    activity: l.to_string(),
                })
                .collect(),
        }
    }

    #[test]
    fn majority_baseline_equals_prevalence() {
        let ds = rows(&["a", "a", "a", "b", "c"]);
        assert!((forward_accuracy(Some(&Always("a")), &ds).unwrap() - 0.6).abs() < 1e-12);
        assert_eq!(forward_accuracy(Some(&Oracle), &ds).unwrap(), 1.0);
        assert_eq!(forward_accuracy(None::<&Oracle>, &ds).unwrap(), 0.0);
        assert!(forward_accuracy(Some(&Oracle), &rows(&[])).is_err());
    }

    #[test]
    fn policy_bounds() {
        assert!(IncrementalPolicy::default().validate().is_ok());
        for f in [0.0, 1.0, -0.1, f64::NAN] {
            let p = IncrementalPolicy {
                confidence_floor: f,
                ..Default::default()
            };
            assert!(p.validate().is_err(), "{f}");
        }
    }

    #[test]
    fn near_uses_inclusive_radius() {
        let d = |t: f64| SceneDescription::empty_for(&DescriberRequest::new("s", t));
        let ann = vec![d(10.0), d(30.0)];
        let times = annotated_times(&ann);
        assert!(near(&times, "s", to_micros(12.5), to_micros(2.5)));
        assert!(!near(&times, "s", to_micros(12.6), to_micros(2.5)));
        assert!(near(&times, "s", to_micros(27.5), to_micros(2.5)));
        assert!(!near(&times, "t", to_micros(10.0), to_micros(2.5)));
    }
}
