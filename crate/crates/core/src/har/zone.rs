use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::classifier::Classifier;
use super::ensemble::{ensemble_predict, grid_search_har, train_ensemble, EnsembleSpec, HarGrid, TrainedEnsemble};
use super::{HarError, LabeledDataset, Predictor, Row};
use crate::{seed, Modality};

/// One stage of the hierarchy: a trained ensemble, or a constant when only
/// one label exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Stage {
    Constant(String),
    Ensemble { model: TrainedEnsemble, cv_score: f64 },
}

impl Stage {
    fn predict(&self, features: &BTreeMap<Modality, Vec<f64>>) -> Result<(String, f64), HarError> {
        match self {
            Stage::Constant(l) => Ok((l.clone(), 1.0)),
            Stage::Ensemble { model, .. } => {
                let (l, p) = ensemble_predict(model, features)?;
                let i = model.labels.binary_search(&l).unwrap();
                Ok((l, p[i]))
            }
        }
    }

    fn fit(rows: &[&Row], labels: &[String], grid: &HarGrid, seed: u64) -> Result<Stage, HarError> {
        let mut distinct: Vec<&String> = labels.iter().collect();
        distinct.sort();
        distinct.dedup();
        match distinct.len() {
            0 => Err(HarError::Empty("stage without rows".into())),
            1 => Ok(Stage::Constant(distinct[0].clone())),
            _ => {
                let best = grid_search_har(rows, labels, grid, seed)?;
                let model = train_ensemble(rows, labels, &best.spec, seed)?;
                Ok(Stage::Ensemble { model, cv_score: best.score })
            }
        }
    }

    pub fn spec(&self) -> Option<&EnsembleSpec> {
        match self {
            Stage::Constant(_) => None,
            Stage::Ensemble { model, .. } => Some(&model.spec),
        }
    }
}

/// Zone classifier followed by one activity stage per zone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneModel {
    pub lambda: Option<f64>,
    pub seed: u64,
    pub zones: Vec<String>,
    pub zone_stage: Stage,
    pub activity_stages: BTreeMap<String, Stage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inference {
    pub zone: String,
    pub activity: String,
    pub confidence: f64,
}

/// Grid-searches and trains the zone stage on all rows and each zone's
/// activity stage on that zone's rows. A zone with one activity gets a
/// constant stage.
pub fn train_zone_model(dataset: &LabeledDataset, lambda: Option<f64>, grid: &HarGrid, seed: u64) -> Result<ZoneModel, HarError> {
    dataset.validate()?;
    let zones = dataset.zones();
    if zones.is_empty() {
        return Err(HarError::Empty("training dataset".into()));
    }
    let rows: Vec<&Row> = dataset.rows.iter().collect();
    let zone_labels: Vec<String> = rows.iter().map(|r| r.zone.clone()).collect();
    let zone_stage = Stage::fit(&rows, &zone_labels, grid, seed::derive(seed, "zone-stage"))?;
    let mut activity_stages = BTreeMap::new();
    for z in &zones {
        let zr: Vec<&Row> = rows.iter().copied().filter(|r| &r.zone == z).collect();
        let labels: Vec<String> = zr.iter().map(|r| r.activity.clone()).collect();
        activity_stages.insert(z.clone(), Stage::fit(&zr, &labels, grid, seed::derive(seed, &format!("activity/{z}")))?);
    }
    Ok(ZoneModel {
        lambda,
        seed,
        zones,
        zone_stage,
        activity_stages,
    })
}

/// Zone by the zone stage, then activity by that zone's stage; confidence
/// is the product of the two stage confidences.
pub fn infer(model: &ZoneModel, features: &BTreeMap<Modality, Vec<f64>>) -> Result<Inference, HarError> {
    let (zone, pz) = model.zone_stage.predict(features)?;
    let stage = model
        .activity_stages
        .get(&zone)
        .ok_or_else(|| HarError::Bundle(format!("no activity stage for zone {zone:?}")))?;
    let (activity, pa) = stage.predict(features)?;
    Ok(Inference {
        zone,
        activity,
        confidence: pz * pa,
    })
}

impl Predictor for ZoneModel {
    fn predict_row(&self, row: &Row) -> Result<(String, f64), HarError> {
        infer(self, &row.features).map(|i| (i.activity, i.confidence))
    }
}

#[derive(Serialize, Deserialize)]
enum StageManifest {
    Constant(String),
    Ensemble {
        spec: EnsembleSpec,
        labels: Vec<String>,
        cv_score: f64,
        blobs: Vec<Option<String>>,
    },
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    lambda: Option<f64>,
    seed: u64,
    zones: Vec<String>,
    zone_stage: StageManifest,
    activity_stages: BTreeMap<String, StageManifest>,
}

fn bundle_err(e: impl std::fmt::Display) -> HarError {
    HarError::Bundle(e.to_string())
}

fn save_stage(dir: &Path, prefix: &str, stage: &Stage) -> Result<StageManifest, HarError> {
    Ok(match stage {
        Stage::Constant(l) => StageManifest::Constant(l.clone()),
        Stage::Ensemble { model, cv_score } => {
            let mut blobs = Vec::new();
            for (i, m) in model.members.iter().enumerate() {
                blobs.push(match m {
                    Some(c) => {
                        let name = format!("{prefix}-m{i}.bin");
                        fs::write(dir.join(&name), c.to_blob()?)?;
                        Some(name)
                    }
                    None => None,
                });
            }
            StageManifest::Ensemble {
                spec: model.spec.clone(),
                labels: model.labels.clone(),
                cv_score: *cv_score,
                blobs,
            }
        }
    })
}

fn load_stage(dir: &Path, m: StageManifest) -> Result<Stage, HarError> {
    Ok(match m {
        StageManifest::Constant(l) => Stage::Constant(l),
        StageManifest::Ensemble { spec, labels, cv_score, blobs } => {
            spec.validate()?;
            if blobs.len() != spec.members.len() {
                return Err(HarError::Bundle("member count differs from blob count".into()));
            }
            let members = blobs
                .iter()
                .zip(&spec.members)
                .map(|(b, m)| match b {
                    Some(name) => {
                        let bytes = fs::read(dir.join(name))?;
                        Classifier::from_blob(m.classifier, &bytes).map(Some).map_err(|e| bundle_err(format!("{name}: {e}")))
                    }
                    None => Ok(None),
                })
                .collect::<Result<Vec<_>, HarError>>()?;
            Stage::Ensemble {
                model: TrainedEnsemble { spec, labels, members },
                cv_score,
            }
        }
    })
}

impl ZoneModel {
    /// Writes `model.json` plus one binary blob per trained member.
    pub fn save(&self, dir: &Path) -> Result<(), HarError> {
        fs::create_dir_all(dir)?;
        let zone_stage = save_stage(dir, "zone", &self.zone_stage)?;
        let mut activity_stages = BTreeMap::new();
        for (j, z) in self.zones.iter().enumerate() {
            activity_stages.insert(z.clone(), save_stage(dir, &format!("activity-{j}"), &self.activity_stages[z])?);
        }
        let manifest = Manifest {
            format_version: crate::FORMAT_VERSION,
            lambda: self.lambda,
            seed: self.seed,
            zones: self.zones.clone(),
            zone_stage,
            activity_stages,
        };
        fs::write(dir.join("model.json"), serde_json::to_string_pretty(&manifest).map_err(bundle_err)? + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, HarError> {
        let text = fs::read_to_string(dir.join("model.json"))?;
        let m: Manifest = serde_json::from_str(&text).map_err(bundle_err)?;
        crate::check_format_version(m.format_version, "model bundle").map_err(HarError::Bundle)?;
        let mut activity_stages = BTreeMap::new();
        for (z, s) in m.activity_stages {
            activity_stages.insert(z, load_stage(dir, s)?);
        }
        if activity_stages.keys().ne(m.zones.iter()) {
            return Err(HarError::Bundle("activity stages do not match the zone set".into()));
        }
        Ok(Self {
            lambda: m.lambda,
            seed: m.seed,
            zones: m.zones,
            zone_stage: load_stage(dir, m.zone_stage)?,
            activity_stages,
        })
    }
}
