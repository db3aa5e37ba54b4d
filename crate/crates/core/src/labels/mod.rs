//! From scene descriptions to discrete, zone-scoped activity labels and a
//! λ-indexed hierarchy of merged labels.

mod mock;
#[cfg(feature = "remote")]
mod remote;
mod similarity;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::annotate::SceneDescription;

pub use mock::{canonical_activity, HashEmbedder, MockReasoner};
#[cfg(feature = "remote")]
pub use remote::{HttpEmbedder, HttpReasoner};
pub use similarity::{
    build_hierarchy, expand_semantics, refine_labels, similarity_matrix, Dimension, LabelGroup, LabelHierarchy, LabelLevel,
    SemanticProfile, SimilarityMatrix, Weights,
};

#[derive(Debug, thiserror::Error)]
pub enum LabelError {
    /// The reasoner or embedder failed; retrying may succeed.
    #[error("reasoner failure: {0}")]
    Reasoner(String),
    #[error("no usable descriptions")]
    Empty,
    #[error("invalid relaxation parameter {0}")]
    Lambda(f64),
    #[error("embedding dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("hierarchy file: {0}")]
    Format(String),
}

/// Per-component similarities between a description and a cluster.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComponentScores {
    pub action: f64,
    pub object: f64,
    pub location: f64,
}

pub const MATCH_WEIGHTS: [f64; 3] = [60.0, 25.0, 15.0];

impl ComponentScores {
    /// `(60·action + 25·object + 15·location) / 100`.
    pub fn combined(&self) -> f64 {
        (MATCH_WEIGHTS[0] * self.action + MATCH_WEIGHTS[1] * self.object + MATCH_WEIGHTS[2] * self.location) / 100.0
    }
}

/// Language reasoning used for consolidation and naming.
pub trait Reasoner: Send + Sync {
    /// Functional zone for each raw location string, in input order.
    fn consolidate_locations(&self, locations: &[String]) -> Result<Vec<String>, LabelError>;
    /// Purpose-aware canonical activity label for a description.
    fn canonical_activity(&self, zone: &str, desc: &SceneDescription) -> Result<String, LabelError>;
    fn component_similarity(&self, desc: &SceneDescription, desc_zone: &str, cluster: &ActivityCluster) -> Result<ComponentScores, LabelError>;
    /// Text for each of the six semantic dimensions of `label`.
    fn expand(&self, label: &str, cluster: &ActivityCluster) -> Result<BTreeMap<Dimension, String>, LabelError>;
    /// Name for a group of merged labels.
    fn name_group(&self, labels: &[String]) -> Result<String, LabelError>;
}

pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<Vec<f64>, LabelError>;
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ZoneMap {
    pub zones: Vec<String>,
    pub assignment: BTreeMap<String, String>,
}

impl ZoneMap {
    pub fn zone_of(&self, location: &str) -> Option<&str> {
        self.assignment.get(location.trim()).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityCluster {
    pub label: String,
    pub zone: String,
    /// Indices into the description list the cluster was built from.
    pub member_descriptions: Vec<usize>,
    pub canonical_actions: Vec<String>,
    pub canonical_objects: Vec<String>,
}

impl ActivityCluster {
    fn new(label: String, zone: String) -> Self {
        Self {
            canonical_actions: vec![label.clone()],
            label,
            zone,
            member_descriptions: Vec::new(),
            canonical_objects: Vec::new(),
        }
    }

    fn absorb(&mut self, idx: usize, desc: &SceneDescription) {
        self.member_descriptions.push(idx);
        for a in &desc.actions {
            if !self.canonical_actions.contains(a) {
                self.canonical_actions.push(a.clone());
            }
        }
        for o in &desc.objects {
            if !self.canonical_objects.contains(o) {
                self.canonical_objects.push(o.clone());
            }
        }
    }
}

/// Assigns every distinct raw location of the usable descriptions to a zone.
pub fn consolidate_locations(descs: &[SceneDescription], reasoner: &dyn Reasoner) -> Result<ZoneMap, LabelError> {
    let mut raw: Vec<String> = descs.iter().filter(|d| !d.empty).filter_map(|d| d.location.as_ref()).map(|l| l.trim().to_string()).collect();
    raw.sort();
    raw.dedup();
    if raw.is_empty() {
        return Err(LabelError::Empty);
    }
    let zones = reasoner.consolidate_locations(&raw)?;
    if zones.len() != raw.len() {
        return Err(LabelError::Reasoner(format!("{} zones returned for {} locations", zones.len(), raw.len())));
    }
    let assignment: BTreeMap<String, String> = raw.into_iter().zip(zones).collect();
    let mut names: Vec<String> = assignment.values().cloned().collect();
    names.sort();
    names.dedup();
    Ok(ZoneMap { zones: names, assignment })
}

/// Groups the descriptions of one zone by canonical activity, in order of
/// first appearance. Member indices refer to positions in `descs`.
pub fn seed_activity_clusters(zone: &str, descs: &[&SceneDescription], reasoner: &dyn Reasoner) -> Result<Vec<ActivityCluster>, LabelError> {
    let mut clusters: Vec<ActivityCluster> = Vec::new();
    for (i, d) in descs.iter().enumerate() {
        let label = reasoner.canonical_activity(zone, d)?;
        let pos = match clusters.iter().position(|c| c.label == label) {
            Some(p) => p,
            None => {
                clusters.push(ActivityCluster::new(label, zone.to_string()));
                clusters.len() - 1
            }
        };
        clusters[pos].absorb(i, d);
    }
    Ok(clusters)
}

/// Best-scoring cluster for `desc` (ties go to the earliest cluster), or
/// `None` when no cluster reaches `match_floor`.
pub fn match_description(
    desc: &SceneDescription,
    desc_zone: &str,
    clusters: &[ActivityCluster],
    reasoner: &dyn Reasoner,
    match_floor: f64,
) -> Result<(Option<usize>, f64), LabelError> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in clusters.iter().enumerate() {
        let s = reasoner.component_similarity(desc, desc_zone, c)?.combined();
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    Ok(match best {
        Some((i, s)) if s >= match_floor => (Some(i), s),
        Some((_, s)) => (None, s),
        None => (None, 0.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelConfig {
    pub match_floor: f64,
    pub weights: Weights,
    pub lambdas: Vec<f64>,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self {
            match_floor: 0.5,
            weights: Weights::default(),
            lambdas: vec![0.2, 0.3, 0.4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Consolidation {
    pub zone_map: ZoneMap,
    pub clusters: Vec<ActivityCluster>,
    /// Cluster index per input description (`None` for empty descriptions).
    pub assignments: Vec<Option<usize>>,
}

impl Consolidation {
    pub fn base_labels(&self) -> Vec<String> {
        self.clusters.iter().map(|c| c.label.clone()).collect()
    }

    pub fn label_of(&self, desc_index: usize) -> Option<&str> {
        self.assignments.get(desc_index).copied().flatten().map(|c| self.clusters[c].label.as_str())
    }
}

/// Zones, then seed clusters per zone, then matching of every description
/// against all clusters (creating singletons below the match floor).
pub fn consolidate(descs: &[SceneDescription], reasoner: &dyn Reasoner, cfg: &LabelConfig) -> Result<Consolidation, LabelError> {
    let zone_map = consolidate_locations(descs, reasoner)?;
    let zone_of = |d: &SceneDescription| -> String {
        d.location.as_deref().and_then(|l| zone_map.zone_of(l)).unwrap_or_default().to_string()
    };
    let mut clusters = Vec::new();
    for zone in &zone_map.zones {
        let members: Vec<&SceneDescription> = descs.iter().filter(|d| !d.empty && zone_of(d) == *zone).collect();
        for mut c in seed_activity_clusters(zone, &members, reasoner)? {
            c.member_descriptions.clear();
            clusters.push(c);
        }
    }
    let mut assignments = vec![None; descs.len()];
    for (i, d) in descs.iter().enumerate() {
        if d.empty {
            continue;
        }
        let zone = zone_of(d);
        let idx = match match_description(d, &zone, &clusters, reasoner, cfg.match_floor)?.0 {
            Some(idx) => idx,
            None => {
                let label = reasoner.canonical_activity(&zone, d)?;
                clusters.push(ActivityCluster::new(label, zone));
                clusters.len() - 1
            }
        };
        clusters[idx].absorb(i, d);
        assignments[i] = Some(idx);
    }

    // Drop clusters nobody matched and make labels unique across zones.
    let mut remap = vec![None; clusters.len()];
    let mut kept: Vec<ActivityCluster> = Vec::new();
    for (i, c) in clusters.into_iter().enumerate() {
        if !c.member_descriptions.is_empty() {
            remap[i] = Some(kept.len());
            kept.push(c);
        }
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for c in &kept {
        *counts.entry(c.label.clone()).or_default() += 1;
    }
    for c in kept.iter_mut() {
        if counts[&c.label] > 1 {
            c.label = format!("{} ({})", c.label, c.zone);
        }
    }
    let assignments = assignments.into_iter().map(|a| a.and_then(|i| remap[i])).collect();
    Ok(Consolidation {
        zone_map,
        clusters: kept,
        assignments,
    })
}

/// Everything label discovery produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDiscovery {
    pub consolidation: Consolidation,
    pub profiles: Vec<SemanticProfile>,
    pub similarity: SimilarityMatrix,
    pub hierarchy: LabelHierarchy,
}

pub fn discover_labels(
    descs: &[SceneDescription],
    reasoner: &dyn Reasoner,
    embedder: &dyn Embedder,
    cfg: &LabelConfig,
) -> Result<LabelDiscovery, LabelError> {
    let consolidation = consolidate(descs, reasoner, cfg)?;
    let profiles = consolidation
        .clusters
        .iter()
        .map(|c| expand_semantics(&c.label, c, reasoner, embedder))
        .collect::<Result<Vec<_>, _>>()?;
    let similarity = similarity_matrix(&profiles, &cfg.weights)?;
    let hierarchy = build_hierarchy(&similarity, &consolidation, &cfg.lambdas, reasoner)?;
    Ok(LabelDiscovery {
        consolidation,
        profiles,
        similarity,
        hierarchy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotate::DescriberRequest;

    pub(crate) fn desc(action: &str, objects: &[&str], location: &str) -> SceneDescription {
        SceneDescription {
            actions: vec![action.into()],
            objects: objects.iter().map(|s| s.to_string()).collect(),
            location: Some(location.into()),
            confidence: 0.9,
            empty: false,
            ..SceneDescription::empty_for(&DescriberRequest::new("s", 5.0))
        }
    }

    #[test]
    fn locations_consolidate_into_zones() {
        let descs = vec![desc("a", &[], "at sink"), desc("b", &[], "near sink basin"), desc("c", &[], "by counter")];
        let zm = consolidate_locations(&descs, &MockReasoner).unwrap();
        assert_eq!(zm.zones, vec!["counter area", "sink area"]);
        assert_eq!(zm.zone_of("at sink"), zm.zone_of("near sink basin"));
        assert_eq!(zm.assignment.len(), 3);
        let one = consolidate_locations(&descs[..1], &MockReasoner).unwrap();
        assert_eq!(one.zones.len(), 1);
    }

    #[test]
    fn sink_descriptions_seed_two_clusters() {
        let descs = [
            desc("washing dish with sponge", &["sponge", "dish"], "at sink"),
            desc("scrubbing plate with sponge", &["sponge", "plate"], "by sink"),
            desc("washing hands with soap", &["soap"], "at sink"),
        ];
        let refs: Vec<&SceneDescription> = descs.iter().collect();
        let clusters = seed_activity_clusters("sink area", &refs, &MockReasoner).unwrap();
        assert_eq!(clusters.len(), 2);
        assert_eq!(clusters[0].label, "washing dishes with sponge");
        assert_eq!(clusters[0].member_descriptions, vec![0, 1]);
        assert_eq!(clusters[1].member_descriptions, vec![2]);
        let single = seed_activity_clusters("sink area", &refs[..1], &MockReasoner).unwrap();
        assert_eq!(single.len(), 1);
    }

    #[test]
    fn purpose_keeps_pouring_apart() {
        let descs = [
            desc("pouring cereal into bowl", &["cereal box", "bowl"], "at counter"),
            desc("pouring coffee into mug", &["coffee", "mug"], "at counter"),
        ];
        let refs: Vec<&SceneDescription> = descs.iter().collect();
        assert_eq!(seed_activity_clusters("counter area", &refs, &MockReasoner).unwrap().len(), 2);
    }

    #[test]
    fn match_weights() {
        let s = ComponentScores { action: 1.0, object: 0.0, location: 1.0 };
        assert_eq!(s.combined(), 0.75);
        let s = ComponentScores { action: 1.0, object: 1.0, location: 1.0 };
        assert_eq!(s.combined(), 1.0);
    }

    #[test]
    fn identical_description_scores_one() {
        let d = desc("washing dishes with sponge", &["sponge"], "at sink");
        let refs = [&d];
        let clusters = seed_activity_clusters("sink area", &refs, &MockReasoner).unwrap();
        let (idx, score) = match_description(&d, "sink area", &clusters, &MockReasoner, 0.5).unwrap();
        assert_eq!(idx, Some(0));
        assert_eq!(score, 1.0);
    }

    #[test]
    fn unmatched_description_opens_a_cluster() {
        let descs = vec![
            desc("washing dish with sponge", &["sponge"], "at sink"),
            desc("juggling oranges", &["orange"], "at sink"),
            SceneDescription::empty_for(&DescriberRequest::new("s", 1.0)),
        ];
        let c = consolidate(&descs, &MockReasoner, &LabelConfig::default()).unwrap();
        assert_eq!(c.clusters.len(), 2);
        assert_eq!(c.assignments, vec![Some(0), Some(1), None]);
        assert_eq!(c.label_of(1), Some("juggling oranges"));
    }

    #[test]
    fn mock_described_corpus_yields_planted_hierarchy() {
        use crate::annotate::{describe_batch, filter_confident, MockDescriber, MockNoiseConfig};
        let scripts = crate::sensor::demo_corpus(3, 7);
        let mut reqs = Vec::new();
        for s in &scripts {
            for st in &s.steps {
                for k in 0..4 {
                    reqs.push(DescriberRequest::new(&s.session_id, st.start_s + 8.0 + 8.0 * k as f64));
                }
            }
        }
        let describer = MockDescriber::new(scripts.clone(), MockNoiseConfig::noiseless(), 1);
        let descs = filter_confident(&describer_batch(&reqs, &describer), 0.8).unwrap();
        let d = discover_labels(&descs, &MockReasoner, &HashEmbedder::default(), &LabelConfig::default()).unwrap();
        assert_eq!(d.consolidation.zone_map.zones.len(), 4);
        assert_eq!(d.consolidation.clusters.len(), 8);
        let counts: Vec<usize> = d.hierarchy.levels.iter().map(|l| l.groups.len()).collect();
        assert_eq!(counts, vec![8, 7, 5]);
        let l4 = d.hierarchy.level(0.4).unwrap();
        let g = l4.group_of("preparing cereal").unwrap();
        assert_eq!(g.name, "food preparation");
        assert_eq!(g.zone, "counter area");
        let json = d.hierarchy.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["lambda_partitions"]["0.3"].as_array().unwrap().len(), 7);
        assert_eq!(v["merged_names"]["0.4"].as_object().unwrap().len(), 3);
        assert_eq!(LabelHierarchy::from_json(&json).unwrap(), d.hierarchy);

        fn describer_batch(reqs: &[DescriberRequest], d: &MockDescriber) -> Vec<SceneDescription> {
            describe_batch(reqs, d, 2).unwrap()
        }
    }
}
