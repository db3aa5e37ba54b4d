//! Zone-first activity recognition: classifiers, voting ensembles, grid
//! search, leave-one-session-out evaluation and segment aggregation.

mod classifier;
mod ensemble;
mod segments;
mod tree;
mod zone;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::featurize::FeatureTable;
use crate::Modality;

pub use classifier::{train_classifier, Classifier, ClassifierSpec, MIN_ROWS_PER_CLASS};
pub use ensemble::{
    combine_votes, ensemble_predict, grid_search_har, train_ensemble, EnsembleSpec, GridOutcome, HarGrid, Member, TrainedEnsemble, VoteMode,
};
pub use segments::{aggregate_predictions, Segment};
pub use zone::{infer, train_zone_model, Inference, ZoneModel};

/// Label recorded when no member could produce a prediction.
pub const NO_PREDICTION: &str = "(none)";

#[derive(Debug, thiserror::Error)]
pub enum HarError {
    #[error("training data has a single class")]
    SingleClass,
    #[error("class {label:?} has {count} rows (need at least {MIN_ROWS_PER_CLASS})")]
    InsufficientRows { label: String, count: usize },
    #[error("invalid classifier spec {0}")]
    InvalidSpec(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("cross-validation needs at least two sessions")]
    SingleSession,
    #[error("confusion matrix is empty")]
    EmptyConfusion,
    #[error("no member modality available for this window")]
    NoMembers,
    #[error("empty input: {0}")]
    Empty(String),
    #[error("activity {activity:?} appears in zones {first:?} and {second:?}")]
    ZoneConflict { activity: String, first: String, second: String },
    #[error("model bundle: {0}")]
    Bundle(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One window: its valid per-modality features and its labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub session_id: String,
    pub t_s: f64,
    pub features: BTreeMap<Modality, Vec<f64>>,
    pub zone: String,
    pub activity: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub rows: Vec<Row>,
}

impl LabeledDataset {
    pub fn sessions(&self) -> Vec<String> {
        let s: BTreeSet<&str> = self.rows.iter().map(|r| r.session_id.as_str()).collect();
        s.into_iter().map(str::to_string).collect()
    }

    pub fn zones(&self) -> Vec<String> {
        let s: BTreeSet<&str> = self.rows.iter().map(|r| r.zone.as_str()).collect();
        s.into_iter().map(str::to_string).collect()
    }

    pub fn activities(&self) -> Vec<String> {
        let s: BTreeSet<&str> = self.rows.iter().map(|r| r.activity.as_str()).collect();
        s.into_iter().map(str::to_string).collect()
    }

    /// Checks that every activity label belongs to exactly one zone.
    pub fn validate(&self) -> Result<(), HarError> {
        let mut zone_of: BTreeMap<&str, &str> = BTreeMap::new();
        for r in &self.rows {
            match zone_of.get(r.activity.as_str()) {
                Some(z) if *z != r.zone => {
                    return Err(HarError::ZoneConflict {
                        activity: r.activity.clone(),
                        first: z.to_string(),
                        second: r.zone.clone(),
                    })
                }
                Some(_) => {}
                None => {
                    zone_of.insert(&r.activity, &r.zone);
                }
            }
        }
        Ok(())
    }

    /// Keeps every `stride`-th window of each session.
    pub fn decimate(&self, stride: usize) -> Self {
        let stride = stride.max(1);
        let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
        let rows = self
            .rows
            .iter()
            .filter(|r| {
                let k = seen.entry(&r.session_id).or_default();
                *k += 1;
                (*k - 1) % stride == 0
            })
            .cloned()
            .collect();
        Self { rows }
    }

    pub fn filter(&self, keep: impl Fn(&Row) -> bool) -> Self {
        Self {
            rows: self.rows.iter().filter(|r| keep(r)).cloned().collect(),
        }
    }
}

/// Builds rows on the shared window grid. `label` returns `(zone, activity)`
/// for a window, or `None` to leave it out.
pub fn build_dataset(
    corpus: &[(String, BTreeMap<Modality, FeatureTable>)],
    label: impl Fn(&str, f64) -> Option<(String, String)>,
) -> Result<LabeledDataset, HarError> {
    let mut rows = Vec::new();
    for (session_id, tables) in corpus {
        let Some(first) = tables.values().next() else { continue };
        for (i, w) in first.windows.iter().enumerate() {
            let Some((zone, activity)) = label(session_id, w.t_s) else { continue };
            let mut features = BTreeMap::new();
            for (&m, table) in tables {
                let other = table
                    .windows
                    .get(i)
                    .filter(|o| (o.t_s - w.t_s).abs() < 1e-6)
                    .ok_or_else(|| HarError::Dimension(format!("{session_id}: {m} windows are not on the shared grid")))?;
                if other.valid {
                    features.insert(m, other.values.clone());
                }
            }
            rows.push(Row {
                session_id: session_id.clone(),
                t_s: w.t_s,
                features,
                zone,
                activity,
            });
        }
    }
    let ds = LabeledDataset { rows };
    ds.validate()?;
    Ok(ds)
}

/// Mean per-class recall over classes with non-zero support (rows are true
/// classes).
pub fn balanced_accuracy(confusion: &[Vec<u64>]) -> Result<f64, HarError> {
    let n = confusion.len();
    if confusion.iter().any(|r| r.len() != n) {
        return Err(HarError::Dimension("confusion matrix is not square".into()));
    }
    let recalls: Vec<f64> = confusion
        .iter()
        .enumerate()
        .filter_map(|(i, row)| {
            let support: u64 = row.iter().sum();
            (support > 0).then(|| row[i] as f64 / support as f64)
        })
        .collect();
    if recalls.is_empty() {
        return Err(HarError::EmptyConfusion);
    }
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

/// Macro F1 over classes that occur as truth or prediction.
pub fn f1_macro(confusion: &[Vec<u64>]) -> f64 {
    let n = confusion.len();
    let mut scores = Vec::new();
    for c in 0..n {
        let tp = confusion[c][c] as f64;
        let support: f64 = confusion[c].iter().sum::<u64>() as f64;
        let predicted: f64 = (0..n).map(|r| confusion[r][c]).sum::<u64>() as f64;
        if support + predicted == 0.0 {
            continue;
        }
        scores.push(2.0 * tp / (support + predicted));
    }
    if scores.is_empty() {
        0.0
    } else {
        scores.iter().sum::<f64>() / scores.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub session_id: String,
    pub t_s: f64,
    pub truth: String,
    pub predicted: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMetrics {
    pub rows: usize,
    pub accuracy: f64,
    pub balanced_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format_version: u32,
    /// Class order of the confusion matrix: every true label, then labels
    /// that were only predicted.
    pub labels: Vec<String>,
    pub confusion: Vec<Vec<u64>>,
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    pub f1_macro: f64,
    pub per_session: BTreeMap<String, SessionMetrics>,
    pub predictions: Vec<Prediction>,
}

fn confusion_of(preds: &[&Prediction], labels: &[String]) -> Vec<Vec<u64>> {
    let index: BTreeMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let mut m = vec![vec![0u64; labels.len()]; labels.len()];
    for p in preds {
        m[index[p.truth.as_str()]][index[p.predicted.as_str()]] += 1;
    }
    m
}

impl EvalReport {
    pub fn from_predictions(predictions: Vec<Prediction>) -> Result<Self, HarError> {
        if predictions.is_empty() {
            return Err(HarError::EmptyConfusion);
        }
        let truths: BTreeSet<&str> = predictions.iter().map(|p| p.truth.as_str()).collect();
        let extra: BTreeSet<&str> = predictions.iter().map(|p| p.predicted.as_str()).filter(|p| !truths.contains(p)).collect();
        let labels: Vec<String> = truths.iter().chain(extra.iter()).map(|s| s.to_string()).collect();
        let all: Vec<&Prediction> = predictions.iter().collect();
        let confusion = confusion_of(&all, &labels);
        let accuracy = all.iter().filter(|p| p.truth == p.predicted).count() as f64 / all.len() as f64;
        let mut per_session = BTreeMap::new();
        let sessions: BTreeSet<&str> = predictions.iter().map(|p| p.session_id.as_str()).collect();
        for s in sessions {
            let sp: Vec<&Prediction> = all.iter().copied().filter(|p| p.session_id == s).collect();
            let c = confusion_of(&sp, &labels);
            per_session.insert(
                s.to_string(),
                SessionMetrics {
                    rows: sp.len(),
                    accuracy: sp.iter().filter(|p| p.truth == p.predicted).count() as f64 / sp.len() as f64,
                    balanced_accuracy: balanced_accuracy(&c)?,
                },
            );
        }
        Ok(Self {
            format_version: crate::FORMAT_VERSION,
            balanced_accuracy: balanced_accuracy(&confusion)?,
            f1_macro: f1_macro(&confusion),
            labels,
            confusion,
            accuracy,
            per_session,
            predictions,
        })
    }

    pub fn write_confusion_csv<W: Write>(&self, out: W) -> Result<(), HarError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["truth\\predicted".to_string()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header).map_err(csv_err)?;
        for (l, row) in self.labels.iter().zip(&self.confusion) {
            let mut rec = vec![l.clone()];
            rec.extend(row.iter().map(u64::to_string));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_predictions_csv<W: Write>(&self, out: W) -> Result<(), HarError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["session_id", "t_s", "truth", "predicted", "confidence"]).map_err(csv_err)?;
        for p in &self.predictions {
            w.write_record([p.session_id.clone(), format!("{:.3}", p.t_s), p.truth.clone(), p.predicted.clone(), format!("{:.6}", p.confidence)])
                .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> HarError {
    HarError::Io(std::io::Error::other(e))
}

/// Anything that labels a window from its features.
pub trait Predictor {
    /// Predicted label and its confidence.
    fn predict_row(&self, row: &Row) -> Result<(String, f64), HarError>;
}

/// One fold per session: train on every other session, test on this one.
/// Folds run in parallel; predictions keep session order, then row order.
pub fn loso_cv<P, B>(dataset: &LabeledDataset, builder: B) -> Result<EvalReport, HarError>
where
    P: Predictor,
    B: Fn(&LabeledDataset) -> Result<P, HarError> + Sync,
{
    let sessions = dataset.sessions();
    if sessions.len() < 2 {
        return Err(HarError::SingleSession);
    }
    let folds: Vec<Vec<Prediction>> = sessions
        .par_iter()
        .map(|held_out| {
            let train = dataset.filter(|r| &r.session_id != held_out);
            let model = builder(&train)?;
            dataset
                .rows
                .iter()
                .filter(|r| &r.session_id == held_out)
                .map(|r| {
                    let (predicted, confidence) = match model.predict_row(r) {
                        Ok(p) => p,
                        Err(HarError::NoMembers) => (NO_PREDICTION.to_string(), 0.0),
                        Err(e) => return Err(e),
                    };
                    Ok(Prediction {
                        session_id: r.session_id.clone(),
                        t_s: r.t_s,
                        truth: r.activity.clone(),
                        predicted,
                        confidence,
                    })
                })
                .collect()
        })
        .collect::<Result<_, HarError>>()?;
    EvalReport::from_predictions(folds.into_iter().flatten().collect())
}
