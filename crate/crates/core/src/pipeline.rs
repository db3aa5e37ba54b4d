//! Stage orchestration shared by the command-line tool and the tests.

use std::collections::BTreeMap;

use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use serde::{Deserialize, Serialize};

use crate::annotate::{describe_batch, detection_rate, filter_confident, AnnotateError, Describer, DescriberRequest, SceneDescription};
use crate::config::PipelineConfig;
use crate::featurize::{featurize_session, to_micros, FeatureConfig, FeatureError, FeatureTable, WindowSpec};
use crate::har::{aggregate_predictions, build_dataset, infer, loso_cv, train_zone_model, EvalReport, HarError, LabeledDataset, ZoneModel, NO_PREDICTION};
use crate::keymoments::{discover_key_moments, KeyMoment, KeyMomentError};
use crate::labels::{discover_labels, Embedder, LabelDiscovery, LabelError, LabelLevel, Reasoner};
use crate::sensor::Session;
use crate::{seed, Modality};

/// Label for windows no description reached.
pub const UNDEFINED: &str = "undefined";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("featurize: {0}")]
    Feature(#[from] FeatureError),
    #[error("keymoments: {0}")]
    KeyMoments(#[from] KeyMomentError),
    #[error("annotate: {0}")]
    Annotate(#[from] AnnotateError),
    #[error("labels: {0}")]
    Labels(#[from] LabelError),
    #[error("har: {0}")]
    Har(#[from] HarError),
    #[error("{0}")]
    Input(String),
}

/// Feature tables per session, in session order.
pub type CorpusEntry = (String, BTreeMap<Modality, FeatureTable>);
pub type Corpus = Vec<CorpusEntry>;

pub fn featurize_corpus(sessions: &[Session], cfg: &FeatureConfig) -> Result<Corpus, PipelineError> {
    sessions
        .iter()
        .map(|s| Ok((s.session_id.clone(), featurize_session(s, cfg)?)))
        .collect()
}

/// Window end times of a session on the shared grid.
fn window_times(tables: &BTreeMap<Modality, FeatureTable>) -> Vec<f64> {
    tables.values().next().map(|t| t.windows.iter().map(|w| w.t_s).collect()).unwrap_or_default()
}

/// Ground-truth activity of the window ending at `t_s` (taken at the window
/// midpoint), or [`UNDEFINED`].
pub fn window_truth<'a>(session: &'a Session, t_s: f64, window: &WindowSpec) -> &'a str {
    session.activity_at(t_s - window.length_s / 2.0).unwrap_or(UNDEFINED)
}

/// Fraction of recording time covered by the windows of the moments.
pub fn annotated_fraction(moments: &[KeyMoment], sessions: &[Session], window: &WindowSpec) -> f64 {
    let total: f64 = sessions.iter().map(|s| s.duration_s).sum();
    if total <= 0.0 {
        return 0.0;
    }
    let len = to_micros(window.length_s);
    let mut covered = 0i64;
    for s in sessions {
        let dur = to_micros(s.duration_s);
        let mut spans: Vec<(i64, i64)> = moments
            .iter()
            .filter(|m| m.session_id == s.session_id)
            .map(|m| {
                let end = to_micros(m.t_s).min(dur);
                ((end - len).max(0), end)
            })
            .collect();
        spans.sort_unstable();
        let mut cur: Option<(i64, i64)> = None;
        for (a, b) in spans {
            cur = match cur {
                Some((ca, cb)) if a <= cb => Some((ca, cb.max(b))),
                Some((ca, cb)) => {
                    covered += cb - ca;
                    Some((a, b))
                }
                None => Some((a, b)),
            };
        }
        if let Some((a, b)) = cur {
            covered += b - a;
        }
    }
    covered as f64 / 1e6 / total
}

/// Base label per window, keyed by session and window end time in µs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WindowLabels {
    pub labels: BTreeMap<String, BTreeMap<i64, String>>,
}

impl WindowLabels {
    pub fn get(&self, session_id: &str, t_s: f64) -> Option<&str> {
        self.labels.get(session_id)?.get(&to_micros(t_s)).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.labels.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Each labeled description labels the windows whose end time lies within
/// `half_width_s` of its own; the nearest description wins, the earlier one
/// on ties.
pub fn propagate_labels(descs: &[(&SceneDescription, &str)], corpus: &[CorpusEntry], half_width_s: f64) -> WindowLabels {
    let hw = to_micros(half_width_s);
    let mut out = WindowLabels::default();
    for (sid, tables) in corpus {
        let mut mine: Vec<(i64, &str)> = descs.iter().filter(|(d, _)| &d.session_id == sid).map(|(d, l)| (to_micros(d.t_s), *l)).collect();
        mine.sort();
        if mine.is_empty() {
            continue;
        }
        let entry = out.labels.entry(sid.clone()).or_default();
        for t in window_times(tables) {
            let tu = to_micros(t);
            let best = mine.iter().filter(|(td, _)| (td - tu).abs() <= hw).min_by_key(|(td, _)| ((td - tu).abs(), *td));
            if let Some((_, l)) = best {
                entry.insert(tu, l.to_string());
            }
        }
    }
    out
}

/// One-to-one mapping from true to discovered labels maximizing the number
/// of agreeing windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub format_version: u32,
    pub mapping: BTreeMap<String, String>,
    pub matched: usize,
    pub total: usize,
    pub agreement: f64,
}

impl Alignment {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("alignment serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let a: Alignment = serde_json::from_str(text).map_err(|e| PipelineError::Input(format!("alignment file: {e}")))?;
        crate::check_format_version(a.format_version, "alignment file").map_err(PipelineError::Input)?;
        Ok(a)
    }
}

/// Optimal assignment over `(truth, discovered)` pairs.
pub fn align_labels(pairs: &[(String, String)]) -> Alignment {
    let mut truths: Vec<&str> = pairs.iter().map(|p| p.0.as_str()).collect();
    let mut found: Vec<&str> = pairs.iter().map(|p| p.1.as_str()).collect();
    truths.sort_unstable();
    truths.dedup();
    found.sort_unstable();
    found.dedup();
    let mut counts = vec![vec![0i64; found.len()]; truths.len()];
    for (t, f) in pairs {
        counts[truths.binary_search(&t.as_str()).unwrap()][found.binary_search(&f.as_str()).unwrap()] += 1;
    }
    let mut mapping = BTreeMap::new();
    let mut matched = 0usize;
    if !pairs.is_empty() {
        let transpose = truths.len() > found.len();
        let rows: Vec<Vec<i64>> = if transpose {
            (0..found.len()).map(|j| (0..truths.len()).map(|i| counts[i][j]).collect()).collect()
        } else {
            counts.clone()
        };
        let m = Matrix::from_rows(rows).expect("rectangular count matrix");
        let (_, assign) = kuhn_munkres(&m);
        for (r, &c) in assign.iter().enumerate() {
            let (i, j) = if transpose { (c, r) } else { (r, c) };
            if counts[i][j] > 0 {
                mapping.insert(truths[i].to_string(), found[j].to_string());
                matched += counts[i][j] as usize;
            }
        }
    }
    Alignment {
        format_version: crate::FORMAT_VERSION,
        mapping,
        matched,
        total: pairs.len(),
        agreement: if pairs.is_empty() { 0.0 } else { matched as f64 / pairs.len() as f64 },
    }
}

/// `(truth, base label)` for every labeled window.
pub fn labeled_window_pairs(labels: &WindowLabels, sessions: &[Session], window: &WindowSpec) -> Vec<(String, String)> {
    let mut pairs = Vec::new();
    for s in sessions {
        if let Some(m) = labels.labels.get(&s.session_id) {
            for (&tu, l) in m {
                pairs.push((window_truth(s, tu as f64 / 1e6, window).to_string(), l.clone()));
            }
        }
    }
    pairs
}

pub struct Services<'a> {
    pub describer: &'a dyn Describer,
    pub reasoner: &'a dyn Reasoner,
    pub embedder: &'a dyn Embedder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryStats {
    pub format_version: u32,
    pub sessions: usize,
    pub windows: usize,
    pub key_moments: usize,
    pub annotated_fraction: f64,
    pub detection_rate: f64,
    pub confident_descriptions: usize,
    pub zones: usize,
    pub base_labels: usize,
    pub labeled_windows: usize,
    /// Present when every session carries ground truth.
    pub alignment: Option<Alignment>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discovery {
    pub moments: Vec<KeyMoment>,
    /// One description per key moment.
    pub descriptions: Vec<SceneDescription>,
    pub confident: Vec<SceneDescription>,
    pub labels: LabelDiscovery,
    pub window_labels: WindowLabels,
    pub stats: DiscoveryStats,
}

pub fn describer_requests(moments: &[KeyMoment], cfg: &PipelineConfig) -> Vec<DescriberRequest> {
    moments
        .iter()
        .map(|m| DescriberRequest {
            clip_length_s: cfg.annotate.clip_length_s,
            frame_rate_fps: cfg.annotate.frame_rate_fps,
            resolution: cfg.annotate.resolution,
            ..DescriberRequest::for_moment(m)
        })
        .collect()
}

/// Labels from confident descriptions: consolidation, then propagation of
/// each matched description to its neighbouring windows.
pub fn labels_from_descriptions(
    confident: &[SceneDescription],
    corpus: &[CorpusEntry],
    cfg: &PipelineConfig,
    services: &Services,
) -> Result<(LabelDiscovery, WindowLabels), PipelineError> {
    let labels = discover_labels(confident, services.reasoner, services.embedder, &cfg.labels)?;
    let pairs: Vec<(&SceneDescription, &str)> = confident
        .iter()
        .enumerate()
        .filter_map(|(i, d)| labels.consolidation.label_of(i).map(|l| (d, l)))
        .collect();
    let window_labels = propagate_labels(&pairs, corpus, cfg.features.window.length_s / 2.0);
    Ok((labels, window_labels))
}

/// Key moments, descriptions and labels for a corpus.
pub fn discover(sessions: &[Session], corpus: &[CorpusEntry], cfg: &PipelineConfig, services: &Services) -> Result<Discovery, PipelineError> {
    if sessions.is_empty() {
        return Err(PipelineError::Input("no sessions".into()));
    }
    let (moments, _) = discover_key_moments(corpus, &cfg.keymoments)?;
    let requests = describer_requests(&moments, cfg);
    let descriptions = describe_batch(&requests, services.describer, cfg.annotate.parallelism)?;
    let confident = filter_confident(&descriptions, cfg.annotate.theta_conf)?;
    let (labels, window_labels) = labels_from_descriptions(&confident, corpus, cfg, services)?;
    let window = &cfg.features.window;
    let alignment = sessions
        .iter()
        .all(|s| s.ground_truth.is_some())
        .then(|| align_labels(&labeled_window_pairs(&window_labels, sessions, window)));
    let stats = DiscoveryStats {
        format_version: crate::FORMAT_VERSION,
        sessions: sessions.len(),
        windows: corpus.iter().map(|(_, t)| window_times(t).len()).sum(),
        key_moments: moments.len(),
        annotated_fraction: annotated_fraction(&moments, sessions, window),
        detection_rate: detection_rate(&descriptions),
        confident_descriptions: confident.len(),
        zones: labels.consolidation.zone_map.zones.len(),
        base_labels: labels.consolidation.clusters.len(),
        labeled_windows: window_labels.len(),
        alignment,
    };
    Ok(Discovery {
        moments,
        descriptions,
        confident,
        labels,
        window_labels,
        stats,
    })
}

/// Windows labeled from ground truth: each true activity goes through the
/// alignment to a base label, then to its group at the chosen level.
/// Windows whose activity has no aligned label are left out.
pub fn ground_truth_dataset(
    corpus: &[CorpusEntry],
    sessions: &[Session],
    level: &LabelLevel,
    alignment: &Alignment,
    window: &WindowSpec,
) -> Result<LabeledDataset, PipelineError> {
    let by_id: BTreeMap<&str, &Session> = sessions.iter().map(|s| (s.session_id.as_str(), s)).collect();
    let ds = build_dataset(corpus, |sid, t| {
        let truth = window_truth(by_id.get(sid)?, t, window);
        let base = alignment.mapping.get(truth)?;
        let g = level.group_of(base)?;
        Some((g.zone.clone(), g.name.clone()))
    })?;
    Ok(ds)
}

/// Windows labeled by propagated descriptions, mapped to the chosen level.
pub fn propagated_dataset(corpus: &[CorpusEntry], labels: &WindowLabels, level: &LabelLevel) -> Result<LabeledDataset, PipelineError> {
    Ok(build_dataset(corpus, |sid, t| {
        let g = level.group_of(labels.get(sid, t)?)?;
        Some((g.zone.clone(), g.name.clone()))
    })?)
}

/// Final model on all rows plus a leave-one-session-out report, both on
/// the dataset decimated by `train_stride`.
pub fn train_and_evaluate(dataset: &LabeledDataset, lambda: f64, cfg: &PipelineConfig) -> Result<(ZoneModel, EvalReport), PipelineError> {
    let ds = dataset.decimate(cfg.har.train_stride);
    let seed = seed::derive(cfg.seed, "har");
    let model = train_zone_model(&ds, Some(lambda), &cfg.har.grid, seed)?;
    let report = loso_cv(&ds, |train| train_zone_model(train, Some(lambda), &cfg.har.grid, seed))?;
    Ok((model, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowPrediction {
    pub t_s: f64,
    pub zone: String,
    pub activity: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivitySegment {
    pub start_s: f64,
    pub end_s: f64,
    pub zone: String,
    pub activity: String,
    pub confidence: f64,
}

/// Window-by-window inference; windows without any usable modality get
/// [`NO_PREDICTION`].
pub fn infer_windows(model: &ZoneModel, tables: &BTreeMap<Modality, FeatureTable>) -> Result<Vec<WindowPrediction>, PipelineError> {
    let mut out = Vec::new();
    for (i, t) in window_times(tables).into_iter().enumerate() {
        let features: BTreeMap<Modality, Vec<f64>> = tables
            .iter()
            .filter_map(|(m, tab)| tab.windows.get(i).filter(|w| w.valid).map(|w| (*m, w.values.clone())))
            .collect();
        out.push(match infer(model, &features) {
            Ok(p) => WindowPrediction {
                t_s: t,
                zone: p.zone,
                activity: p.activity,
                confidence: p.confidence,
            },
            Err(HarError::NoMembers) => WindowPrediction {
                t_s: t,
                zone: NO_PREDICTION.into(),
                activity: NO_PREDICTION.into(),
                confidence: 0.0,
            },
            Err(e) => return Err(e.into()),
        });
    }
    Ok(out)
}

/// Aggregates window predictions into segments. A segment's zone is the
/// zone most windows inside it predicted together with its activity, and
/// its confidence is their mean confidence.
pub fn segment_predictions(preds: &[WindowPrediction], window: &WindowSpec, min_segment_s: f64) -> Result<Vec<ActivitySegment>, PipelineError> {
    let pairs: Vec<(f64, String)> = preds.iter().map(|p| (p.t_s, p.activity.clone())).collect();
    let segments = aggregate_predictions(&pairs, window, min_segment_s)?;
    Ok(segments
        .into_iter()
        .map(|s| {
            let inside: Vec<&WindowPrediction> = preds
                .iter()
                .filter(|p| p.activity == s.label)
                .filter(|p| {
                    let mid = p.t_s - window.length_s / 2.0;
                    s.start_s <= mid && mid < s.end_s
                })
                .collect();
            let mut zones: BTreeMap<&str, usize> = BTreeMap::new();
            for p in &inside {
                *zones.entry(p.zone.as_str()).or_default() += 1;
            }
            let zone = zones.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map_or(NO_PREDICTION, |(z, _)| *z);
            let confidence = if inside.is_empty() {
                0.0
            } else {
                inside.iter().map(|p| p.confidence).sum::<f64>() / inside.len() as f64
            };
            ActivitySegment {
                start_s: s.start_s,
                end_s: s.end_s,
                zone: zone.to_string(),
                activity: s.label,
                confidence,
            }
        })
        .collect())
}
