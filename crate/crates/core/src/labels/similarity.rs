use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{ActivityCluster, Consolidation, Embedder, LabelError, Reasoner};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dimension {
    Action,
    Object,
    Location,
    Purpose,
    Access,
    Relation,
}

impl Dimension {
    pub const ALL: [Dimension; 6] = [
        Dimension::Action,
        Dimension::Object,
        Dimension::Location,
        Dimension::Purpose,
        Dimension::Access,
        Dimension::Relation,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub action: f64,
    pub object: f64,
    pub location: f64,
    pub purpose: f64,
    pub access: f64,
    pub relation: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self {
            action: 0.20,
            object: 0.25,
            location: 0.15,
            purpose: 0.15,
            access: 0.15,
            relation: 0.10,
        }
    }
}

impl Weights {
    pub fn get(&self, d: Dimension) -> f64 {
        match d {
            Dimension::Action => self.action,
            Dimension::Object => self.object,
            Dimension::Location => self.location,
            Dimension::Purpose => self.purpose,
            Dimension::Access => self.access,
            Dimension::Relation => self.relation,
        }
    }

    pub fn sum(&self) -> f64 {
        Dimension::ALL.iter().map(|&d| self.get(d)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticProfile {
    pub label: String,
    pub dimensions: BTreeMap<Dimension, String>,
    pub embeddings: BTreeMap<Dimension, Vec<f64>>,
}

fn normalize(mut v: Vec<f64>) -> Result<Vec<f64>, LabelError> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm.is_finite() && norm > 0.0) {
        return Err(LabelError::Reasoner("zero or non-finite embedding".into()));
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(v)
}

/// Expands `label` along the six dimensions and embeds each text.
pub fn expand_semantics(
    label: &str,
    context: &ActivityCluster,
    reasoner: &dyn Reasoner,
    embedder: &dyn Embedder,
) -> Result<SemanticProfile, LabelError> {
    if label.trim().is_empty() {
        return Err(LabelError::Reasoner("empty label".into()));
    }
    let mut dimensions = reasoner.expand(label, context)?;
    let mut embeddings = BTreeMap::new();
    for d in Dimension::ALL {
        let text = dimensions.entry(d).or_default();
        if text.trim().is_empty() {
            *text = label.to_string();
        }
        embeddings.insert(d, normalize(embedder.embed(text)?)?);
    }
    Ok(SemanticProfile {
        label: label.to_string(),
        dimensions,
        embeddings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub labels: Vec<String>,
    pub s: Vec<Vec<f64>>,
    pub weights: Weights,
}

impl SimilarityMatrix {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn cosine(a: &[f64], b: &[f64]) -> Result<f64, LabelError> {
    if a.len() != b.len() {
        return Err(LabelError::Dimension(a.len(), b.len()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>().clamp(0.0, 1.0))
}

/// Weighted sum of per-dimension cosines (negative cosines floored at 0).
pub fn similarity_matrix(profiles: &[SemanticProfile], weights: &Weights) -> Result<SimilarityMatrix, LabelError> {
    if profiles.is_empty() {
        return Err(LabelError::Empty);
    }
    let n = profiles.len();
    let mut s = vec![vec![0.0; n]; n];
    for i in 0..n {
        s[i][i] = 1.0;
        for j in i + 1..n {
            let mut v = 0.0;
            for d in Dimension::ALL {
                v += weights.get(d) * cosine(&profiles[i].embeddings[&d], &profiles[j].embeddings[&d])?;
            }
            let v = v.clamp(0.0, 1.0);
            s[i][j] = v;
            s[j][i] = v;
        }
    }
    Ok(SimilarityMatrix {
        labels: profiles.iter().map(|p| p.label.clone()).collect(),
        s,
        weights: *weights,
    })
}

fn check_lambda(lambda: f64) -> Result<(), LabelError> {
    if (0.0..=1.0).contains(&lambda) {
        Ok(())
    } else {
        Err(LabelError::Lambda(lambda))
    }
}

/// Complete-linkage agglomeration cut at `S ≥ 1 − λ`. Clusters are lists
/// of label indices, each sorted, ordered by their smallest index.
pub fn refine_labels(s: &SimilarityMatrix, lambda: f64) -> Result<Vec<Vec<usize>>, LabelError> {
    check_lambda(lambda)?;
    let threshold = 1.0 - lambda;
    let n = s.len();
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    // Smallest label (lexicographically) of each cluster, for tie-breaks.
    let mut keys: Vec<&str> = s.labels.iter().map(String::as_str).collect();
    let mut link: Vec<Vec<f64>> = s.s.clone();
    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let l = link[a][b];
                let better = match best {
                    None => true,
                    Some((ba, bb, bl)) => l > bl || (l == bl && pair_key(keys[a], keys[b]) < pair_key(keys[ba], keys[bb])),
                };
                if better {
                    best = Some((a, b, l));
                }
            }
        }
        let Some((a, b, l)) = best else { break };
        if l < threshold {
            break;
        }
        let moved = clusters.remove(b);
        clusters[a].extend(moved);
        clusters[a].sort_unstable();
        keys[a] = keys[a].min(keys[b]);
        keys.remove(b);
        for c in 0..link.len() {
            let v = link[a][c].min(link[b][c]);
            link[a][c] = v;
            link[c][a] = v;
        }
        link[a][a] = 1.0;
        link.remove(b);
        for row in link.iter_mut() {
            row.remove(b);
        }
    }
    clusters.sort_by_key(|c| c[0]);
    Ok(clusters)
}

fn pair_key<'a>(x: &'a str, y: &'a str) -> (&'a str, &'a str) {
    if x <= y { (x, y) } else { (y, x) }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelGroup {
    pub name: String,
    pub zone: String,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelLevel {
    pub lambda: f64,
    pub groups: Vec<LabelGroup>,
}

impl LabelLevel {
    /// Group containing the base label.
    pub fn group_of(&self, base: &str) -> Option<&LabelGroup> {
        self.groups.iter().find(|g| g.members.iter().any(|m| m == base))
    }

    pub fn names(&self) -> Vec<&str> {
        self.groups.iter().map(|g| g.name.as_str()).collect()
    }
}

/// Base labels with their zones and one merged-label partition per λ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "HierarchyDoc", try_from = "HierarchyDoc")]
pub struct LabelHierarchy {
    pub zones: Vec<String>,
    pub base_labels: Vec<String>,
    pub base_zones: Vec<String>,
    pub levels: Vec<LabelLevel>,
}

impl LabelHierarchy {
    pub fn level(&self, lambda: f64) -> Option<&LabelLevel> {
        self.levels.iter().find(|l| (l.lambda - lambda).abs() < 1e-9)
    }

    pub fn zone_of_base(&self, base: &str) -> Option<&str> {
        self.base_labels.iter().position(|b| b == base).map(|i| self.base_zones[i].as_str())
    }

    /// Identity level: every base label on its own.
    pub fn base_level(&self) -> LabelLevel {
        LabelLevel {
            lambda: 0.0,
            groups: self
                .base_labels
                .iter()
                .zip(&self.base_zones)
                .map(|(l, z)| LabelGroup {
                    name: l.clone(),
                    zone: z.clone(),
                    members: vec![l.clone()],
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> Result<String, LabelError> {
        serde_json::to_string_pretty(&HierarchyDoc::from(self)).map_err(|e| LabelError::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, LabelError> {
        let doc: HierarchyDoc = serde_json::from_str(text).map_err(|e| LabelError::Format(e.to_string()))?;
        doc.try_into()
    }
}

fn lambda_key(lambda: f64) -> String {
    format!("{lambda}")
}

#[derive(Serialize, Deserialize)]
pub(crate) struct HierarchyDoc {
    format_version: u32,
    zones: Vec<String>,
    base_labels: Vec<String>,
    label_zones: BTreeMap<String, String>,
    lambda_partitions: BTreeMap<String, Vec<Vec<String>>>,
    merged_names: BTreeMap<String, BTreeMap<String, Vec<String>>>,
}

impl From<LabelHierarchy> for HierarchyDoc {
    fn from(h: LabelHierarchy) -> Self {
        Self::from(&h)
    }
}

impl From<&LabelHierarchy> for HierarchyDoc {
    fn from(h: &LabelHierarchy) -> Self {
        let mut lambda_partitions = BTreeMap::new();
        let mut merged_names = BTreeMap::new();
        for level in &h.levels {
            let key = lambda_key(level.lambda);
            lambda_partitions.insert(key.clone(), level.groups.iter().map(|g| g.members.clone()).collect());
            merged_names.insert(
                key,
                level
                    .groups
                    .iter()
                    .filter(|g| g.members.len() > 1)
                    .map(|g| (g.name.clone(), g.members.clone()))
                    .collect(),
            );
        }
        Self {
            format_version: crate::FORMAT_VERSION,
            zones: h.zones.clone(),
            base_labels: h.base_labels.clone(),
            label_zones: h.base_labels.iter().cloned().zip(h.base_zones.iter().cloned()).collect(),
            lambda_partitions,
            merged_names,
        }
    }
}

impl TryFrom<HierarchyDoc> for LabelHierarchy {
    type Error = LabelError;

    fn try_from(doc: HierarchyDoc) -> Result<Self, LabelError> {
        crate::check_format_version(doc.format_version, "label hierarchy").map_err(|e| LabelError::Format(e.to_string()))?;
        let base_zones = doc
            .base_labels
            .iter()
            .map(|l| doc.label_zones.get(l).cloned().ok_or_else(|| LabelError::Format(format!("no zone for label {l:?}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let mut levels = Vec::new();
        for (key, partition) in &doc.lambda_partitions {
            let lambda: f64 = key.parse().map_err(|_| LabelError::Format(format!("bad lambda key {key:?}")))?;
            let names = doc.merged_names.get(key);
            let groups = partition
                .iter()
                .map(|members| {
                    let name = if members.len() == 1 {
                        members[0].clone()
                    } else {
                        names
                            .and_then(|m| m.iter().find(|(_, v)| *v == members).map(|(k, _)| k.clone()))
                            .ok_or_else(|| LabelError::Format(format!("unnamed merge at λ={key}")))?
                    };
                    let zone = group_zone(members, &doc.base_labels, &base_zones);
                    Ok(LabelGroup {
                        name,
                        zone,
                        members: members.clone(),
                    })
                })
                .collect::<Result<Vec<_>, LabelError>>()?;
            levels.push(LabelLevel { lambda, groups });
        }
        levels.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
        Ok(Self {
            zones: doc.zones,
            base_labels: doc.base_labels,
            base_zones,
            levels,
        })
    }
}

/// Most common zone among the members; ties go to the earliest base label.
fn group_zone(members: &[String], base_labels: &[String], base_zones: &[String]) -> String {
    let mut idx: Vec<usize> = members.iter().filter_map(|m| base_labels.iter().position(|b| b == m)).collect();
    idx.sort_unstable();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for &i in &idx {
        *counts.entry(base_zones[i].as_str()).or_default() += 1;
    }
    let top = counts.values().copied().max().unwrap_or(0);
    idx.iter()
        .map(|&i| base_zones[i].as_str())
        .find(|z| counts[z] == top)
        .unwrap_or_default()
        .to_string()
}

/// Names every cluster of a partition: singletons keep their base label,
/// merged clusters get a reasoner-proposed name made unique within the
/// partition.
pub fn name_merged_labels(partition: &[Vec<usize>], labels: &[String], reasoner: &dyn Reasoner) -> Result<Vec<String>, LabelError> {
    let mut used: BTreeSet<String> = partition.iter().filter(|c| c.len() == 1).map(|c| labels[c[0]].clone()).collect();
    let mut names = Vec::with_capacity(partition.len());
    for cluster in partition {
        if cluster.len() == 1 {
            names.push(labels[cluster[0]].clone());
            continue;
        }
        let members: Vec<String> = cluster.iter().map(|&i| labels[i].clone()).collect();
        let proposed = reasoner.name_group(&members)?;
        let mut name = proposed.trim().to_string();
        if name.is_empty() {
            name = members.join(" / ");
        }
        let mut k = 2;
        let base = name.clone();
        while used.contains(&name) {
            name = format!("{base} ({k})");
            k += 1;
        }
        used.insert(name.clone());
        names.push(name);
    }
    Ok(names)
}

/// One partition per λ (ascending), each a coarsening of the previous.
pub fn partition_levels(s: &SimilarityMatrix, lambdas: &[f64]) -> Result<Vec<Vec<Vec<usize>>>, LabelError> {
    if lambdas.windows(2).any(|w| w[0] > w[1]) {
        return Err(LabelError::Lambda(f64::NAN));
    }
    lambdas.iter().map(|&l| refine_labels(s, l)).collect()
}

pub fn build_hierarchy(
    s: &SimilarityMatrix,
    consolidation: &Consolidation,
    lambdas: &[f64],
    reasoner: &dyn Reasoner,
) -> Result<LabelHierarchy, LabelError> {
    let base_labels = consolidation.base_labels();
    if base_labels != s.labels {
        return Err(LabelError::Format("similarity labels differ from consolidated labels".into()));
    }
    let base_zones: Vec<String> = consolidation.clusters.iter().map(|c| c.zone.clone()).collect();
    let mut levels = Vec::new();
    for (partition, &lambda) in partition_levels(s, lambdas)?.iter().zip(lambdas) {
        let names = name_merged_labels(partition, &base_labels, reasoner)?;
        let groups = partition
            .iter()
            .zip(names)
            .map(|(cluster, name)| {
                let members: Vec<String> = cluster.iter().map(|&i| base_labels[i].clone()).collect();
                LabelGroup {
                    zone: group_zone(&members, &base_labels, &base_zones),
                    name,
                    members,
                }
            })
            .collect();
        levels.push(LabelLevel { lambda, groups });
    }
    Ok(LabelHierarchy {
        zones: consolidation.zone_map.zones.clone(),
        base_labels,
        base_zones,
        levels,
    })
}
