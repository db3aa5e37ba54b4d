//! Key-moment identification: online change detection and density
//! clustering in reduced feature space.

mod gmm;
mod hdbscan;
mod reduce;

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::featurize::FeatureTable;
use crate::Modality;

pub use gmm::{gmm_score, gmm_update, log_normal, responsibilities, GmmState, COVARIANCE_FLOOR, DENSITY_FLOOR};
pub use hdbscan::{core_distances, Clustering, DensityTree};
pub use reduce::{preprocess_corpus, preprocess_features, Projection, ReducedTable, WindowKey};

#[derive(Debug, thiserror::Error)]
pub enum KeyMomentError {
    #[error("need at least {needed} valid windows, found {found}")]
    TooFewWindows { needed: usize, found: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("key-moment file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChangeDetectorConfig {
    pub k: usize,
    pub m: usize,
    pub alpha: f64,
    pub top_n: usize,
    pub warmup: usize,
}

impl Default for ChangeDetectorConfig {
    fn default() -> Self {
        Self {
            k: 2,
            m: 10,
            alpha: 0.1,
            top_n: 1,
            warmup: 20,
        }
    }
}

impl ChangeDetectorConfig {
    pub fn validate(&self) -> Result<(), KeyMomentError> {
        if self.k == 0 || self.m == 0 || self.top_n == 0 || !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(KeyMomentError::Config(format!("change detector {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusteringConfig {
    pub min_cluster_size: usize,
    pub min_samples: usize,
    pub n_components: usize,
    #[serde(default)]
    pub cluster_selection_epsilon: f64,
}

impl ClusteringConfig {
    fn key(&self) -> (usize, usize, usize, u64) {
        (self.min_cluster_size, self.min_samples, self.n_components, self.cluster_selection_epsilon.to_bits())
    }
}

/// Cartesian grid of clustering hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusteringGrid {
    pub min_cluster_size: Vec<usize>,
    pub min_samples: Vec<usize>,
    pub n_components: Vec<usize>,
    pub cluster_selection_epsilon: Vec<f64>,
}

impl Default for ClusteringGrid {
    fn default() -> Self {
        Self {
            min_cluster_size: (3..=8).collect(),
            min_samples: (2..=5).collect(),
            n_components: vec![8, 16],
            cluster_selection_epsilon: vec![0.0],
        }
    }
}

impl ClusteringGrid {
    /// Default grid adjusted for `modality`: thermal uses a small positive
    /// selection epsilon for tighter clusters.
    pub fn for_modality(modality: Modality) -> Self {
        let mut g = Self::default();
        if modality == Modality::Thermal {
            g.cluster_selection_epsilon = vec![0.01, 0.02, 0.03];
        }
        g
    }

    /// All grid points with `n_components` capped at `n_features`
    /// (duplicates removed), in lexicographic order.
    pub fn points(&self, n_features: usize) -> Vec<ClusteringConfig> {
        let mut ncs: Vec<usize> = self.n_components.iter().map(|&c| c.min(n_features).max(1)).collect();
        ncs.sort_unstable();
        ncs.dedup();
        let mut out = Vec::new();
        for &mcs in &self.min_cluster_size {
            for &ms in &self.min_samples {
                for &nc in &ncs {
                    for &eps in &self.cluster_selection_epsilon {
                        out.push(ClusteringConfig {
                            min_cluster_size: mcs,
                            min_samples: ms,
                            n_components: nc,
                            cluster_selection_epsilon: eps,
                        });
                    }
                }
            }
        }
        out.sort_by(|a, b| a.key().cmp(&b.key()));
        out.dedup_by(|a, b| a.key() == b.key());
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreConfig {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub c_min: usize,
    pub c_max: usize,
    pub n_max: f64,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            w1: 0.35,
            w2: 0.2,
            w3: 0.2,
            c_min: 20,
            c_max: 40,
            n_max: 0.8,
        }
    }
}

pub fn count_component(n_clusters: usize, sc: &ScoreConfig) -> f64 {
    let n = n_clusters as f64;
    if n_clusters == 0 {
        0.0
    } else if n_clusters < sc.c_min {
        n / sc.c_min as f64
    } else if n_clusters > sc.c_max {
        sc.c_max as f64 / n
    } else {
        1.0
    }
}

pub fn noise_component(noise_ratio: f64, sc: &ScoreConfig) -> f64 {
    (1.0 - noise_ratio / sc.n_max).max(0.0)
}

/// `w1·S_count + w2·S_noise + w3·S_prob`.
pub fn score_components(n_clusters: usize, noise_ratio: f64, mean_prob: f64, sc: &ScoreConfig) -> f64 {
    if n_clusters == 0 {
        return 0.0;
    }
    sc.w1 * count_component(n_clusters, sc) + sc.w2 * noise_component(noise_ratio, sc) + sc.w3 * mean_prob
}

pub fn score_clustering(c: &Clustering, sc: &ScoreConfig) -> f64 {
    let clustered: Vec<f64> = c.labels.iter().zip(&c.membership_prob).filter(|(l, _)| l.is_some()).map(|(_, p)| *p).collect();
    let mean_prob = if clustered.is_empty() { 0.0 } else { clustered.iter().sum::<f64>() / clustered.len() as f64 };
    score_components(c.n_clusters, c.noise_ratio(), mean_prob, sc)
}

pub fn cluster_density(reduced: &ReducedTable, cfg: &ClusteringConfig) -> Result<Clustering, KeyMomentError> {
    if reduced.len() < cfg.min_cluster_size.max(1) {
        return Err(KeyMomentError::TooFewWindows {
            needed: cfg.min_cluster_size,
            found: reduced.len(),
        });
    }
    Ok(DensityTree::build(&reduced.rows, cfg.min_samples).extract(cfg.min_cluster_size, cfg.cluster_selection_epsilon))
}

#[derive(Debug, Clone)]
pub struct GridSearchResult {
    pub config: ClusteringConfig,
    pub clustering: Clustering,
    pub reduced: ReducedTable,
    pub score: f64,
    /// Every evaluated grid point with its score, in grid order.
    pub evaluations: Vec<(ClusteringConfig, f64)>,
}

/// Picks the best-scoring evaluation; exact ties go to the
/// lexicographically smallest `(min_cluster_size, min_samples, n_components, epsilon)`.
pub fn argmax_config(evals: &[(ClusteringConfig, f64)]) -> Option<usize> {
    (0..evals.len()).reduce(|best, i| {
        let (a, b) = (&evals[best], &evals[i]);
        match b.1.total_cmp(&a.1) {
            std::cmp::Ordering::Greater => i,
            std::cmp::Ordering::Equal if b.0.key() < a.0.key() => i,
            _ => best,
        }
    })
}

/// Exhaustive grid search over the windows of several sessions of one
/// modality, keeping every `stride`-th valid window.
pub fn grid_search_corpus(
    modality: Modality,
    tables: &[(&str, &FeatureTable)],
    grid: &ClusteringGrid,
    sc: &ScoreConfig,
    stride: usize,
) -> Result<GridSearchResult, KeyMomentError> {
    let n_features = tables.first().map_or(0, |t| t.1.dim());
    let points = grid.points(n_features);
    if points.is_empty() {
        return Err(KeyMomentError::Config("empty clustering grid".into()));
    }
    let mut ncs: Vec<usize> = points.iter().map(|p| p.n_components).collect();
    ncs.dedup();
    ncs.sort_unstable();
    ncs.dedup();
    let reduced: BTreeMap<usize, ReducedTable> = ncs
        .iter()
        .map(|&nc| Ok((nc, preprocess_corpus(modality, tables, nc, stride)?)))
        .collect::<Result<_, KeyMomentError>>()?;
    let mut pairs: Vec<(usize, usize)> = points.iter().map(|p| (p.n_components, p.min_samples)).collect();
    pairs.sort_unstable();
    pairs.dedup();
    let trees: BTreeMap<(usize, usize), DensityTree> = pairs
        .par_iter()
        .map(|&(nc, ms)| ((nc, ms), DensityTree::build(&reduced[&nc].rows, ms)))
        .collect();
    let results: Vec<(ClusteringConfig, Clustering, f64)> = points
        .par_iter()
        .map(|p| {
            let n = reduced[&p.n_components].len();
            let c = if n < p.min_cluster_size {
                Clustering {
                    labels: vec![None; n],
                    membership_prob: vec![0.0; n],
                    n_clusters: 0,
                }
            } else {
                trees[&(p.n_components, p.min_samples)].extract(p.min_cluster_size, p.cluster_selection_epsilon)
            };
            let s = score_clustering(&c, sc);
            (*p, c, s)
        })
        .collect();
    let evaluations: Vec<(ClusteringConfig, f64)> = results.iter().map(|(p, _, s)| (*p, *s)).collect();
    let best = argmax_config(&evaluations).expect("grid is non-empty");
    let (config, clustering, score) = results.into_iter().nth(best).expect("index from evaluations");
    Ok(GridSearchResult {
        reduced: reduced[&config.n_components].clone(),
        config,
        clustering,
        score,
        evaluations,
    })
}

/// Grid search over a single table.
pub fn grid_search_clustering(
    table: &FeatureTable,
    grid: &ClusteringGrid,
    sc: &ScoreConfig,
) -> Result<GridSearchResult, KeyMomentError> {
    grid_search_corpus(table.modality, &[("", table)], grid, sc, 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Cluster,
    Change,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyMoment {
    #[serde(default)]
    pub session_id: String,
    pub t_s: f64,
    pub modality: Modality,
    pub source: Source,
    pub score: f64,
    pub cluster_id: Option<usize>,
}

/// The `per_cluster` most confident windows of every cluster (ties go to the
/// earlier window).
pub fn select_representatives(c: &Clustering, reduced: &ReducedTable, per_cluster: usize) -> Vec<KeyMoment> {
    let mut out = Vec::new();
    for id in 0..c.n_clusters {
        let mut members: Vec<usize> = c.members(id).collect();
        members.sort_by(|&a, &b| {
            c.membership_prob[b]
                .total_cmp(&c.membership_prob[a])
                .then(reduced.keys[a].session_id.cmp(&reduced.keys[b].session_id))
                .then(reduced.keys[a].t_s.total_cmp(&reduced.keys[b].t_s))
        });
        out.extend(members.into_iter().take(per_cluster.max(1)).map(|i| KeyMoment {
            session_id: reduced.keys[i].session_id.clone(),
            t_s: reduced.keys[i].t_s,
            modality: reduced.modality,
            source: Source::Cluster,
            score: c.membership_prob[i],
            cluster_id: Some(id),
        }));
    }
    out
}

/// Scores of the online mixture over the valid windows of `table`, in time
/// order, after reducing to `cfg.m` dimensions.
pub fn change_scores(table: &FeatureTable, cfg: &ChangeDetectorConfig) -> Result<Vec<(f64, f64)>, KeyMomentError> {
    cfg.validate()?;
    let valid = table.valid_windows().count();
    if valid < cfg.k.max(2) {
        return Err(KeyMomentError::TooFewWindows {
            needed: cfg.k.max(2),
            found: valid,
        });
    }
    let reduced = preprocess_features(table, cfg.m)?;
    let mut state = GmmState::initialize(&reduced.rows, cfg.k, cfg.alpha)?;
    let mut out = Vec::with_capacity(reduced.len());
    for (key, y) in reduced.keys.iter().zip(&reduced.rows) {
        out.push((key.t_s, gmm_score(&state, y)?));
        state = gmm_update(&state, y)?;
    }
    Ok(out)
}

/// Top `cfg.top_n` windows by anomaly score after the warm-up prefix.
pub fn detect_changes(session_id: &str, table: &FeatureTable, cfg: &ChangeDetectorConfig) -> Result<Vec<KeyMoment>, KeyMomentError> {
    let mut scored: Vec<(f64, f64)> = change_scores(table, cfg)?.into_iter().skip(cfg.warmup).collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.total_cmp(&b.0)));
    Ok(scored
        .into_iter()
        .take(cfg.top_n)
        .map(|(t_s, score)| KeyMoment {
            session_id: session_id.to_string(),
            t_s,
            modality: table.modality,
            source: Source::Change,
            score,
            cluster_id: None,
        })
        .collect())
}

/// Union of per-modality moments with near-duplicates (same session, at most
/// `min_gap_s` apart) removed in favour of the higher score.
pub fn merge_key_moments(per_modality: &BTreeMap<Modality, Vec<KeyMoment>>, min_gap_s: f64) -> Vec<KeyMoment> {
    let mut all: Vec<&KeyMoment> = per_modality.values().flatten().collect();
    all.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.t_s.total_cmp(&b.t_s))
            .then(a.modality.cmp(&b.modality))
            .then(a.session_id.cmp(&b.session_id))
            .then(a.source.cmp(&b.source))
    });
    let mut kept: BTreeMap<&str, Vec<&KeyMoment>> = BTreeMap::new();
    for m in all {
        let same = kept.entry(m.session_id.as_str()).or_default();
        if same.iter().all(|k| (k.t_s - m.t_s).abs() > min_gap_s) {
            same.push(m);
        }
    }
    let mut out: Vec<KeyMoment> = kept.into_values().flatten().cloned().collect();
    out.sort_by(|a, b| a.session_id.cmp(&b.session_id).then(a.t_s.total_cmp(&b.t_s)).then(a.modality.cmp(&b.modality)));
    out
}

pub fn write_jsonl<W: Write>(moments: &[KeyMoment], mut out: W) -> Result<(), KeyMomentError> {
    for m in moments {
        serde_json::to_writer(&mut out, m).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<KeyMoment>, KeyMomentError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| KeyMomentError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Settings for corpus-wide key-moment discovery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KeyMomentConfig {
    pub change: ChangeDetectorConfig,
    pub score: ScoreConfig,
    /// Overrides the per-modality default grid when set.
    pub grid: Option<ClusteringGrid>,
    pub per_cluster: usize,
    pub min_gap_s: f64,
    /// Clustering keeps every `decimate`-th valid window of each session.
    pub decimate: usize,
}

impl Default for KeyMomentConfig {
    fn default() -> Self {
        Self {
            change: ChangeDetectorConfig::default(),
            score: ScoreConfig::default(),
            grid: None,
            per_cluster: 1,
            min_gap_s: 10.0,
            decimate: 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModalityMoments {
    pub modality: Modality,
    pub search: Option<GridSearchResult>,
    pub representatives: Vec<KeyMoment>,
    pub changes: Vec<KeyMoment>,
}

/// Clusters each modality across all sessions, detects change points per
/// session, and merges everything into one deduplicated list.
pub fn discover_key_moments(
    corpus: &[(String, BTreeMap<Modality, FeatureTable>)],
    cfg: &KeyMomentConfig,
) -> Result<(Vec<KeyMoment>, Vec<ModalityMoments>), KeyMomentError> {
    let modalities: std::collections::BTreeSet<Modality> = corpus.iter().flat_map(|(_, t)| t.keys().copied()).collect();
    let per: Vec<ModalityMoments> = modalities
        .into_iter()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&m| {
            let tables: Vec<(&str, &FeatureTable)> = corpus.iter().filter_map(|(sid, t)| t.get(&m).map(|t| (sid.as_str(), t))).collect();
            let grid = cfg.grid.clone().unwrap_or_else(|| ClusteringGrid::for_modality(m));
            let search = match grid_search_corpus(m, &tables, &grid, &cfg.score, cfg.decimate) {
                Ok(r) => Some(r),
                Err(KeyMomentError::TooFewWindows { .. }) => None,
                Err(e) => return Err(e),
            };
            let representatives = search
                .as_ref()
                .map(|r| select_representatives(&r.clustering, &r.reduced, cfg.per_cluster))
                .unwrap_or_default();
            let mut changes = Vec::new();
            for (sid, t) in &tables {
                match detect_changes(sid, t, &cfg.change) {
                    Ok(c) => changes.extend(c),
                    Err(KeyMomentError::TooFewWindows { .. }) => {}
                    Err(e) => return Err(e),
                }
            }
            Ok(ModalityMoments {
                modality: m,
                search,
                representatives,
                changes,
            })
        })
        .collect::<Result<_, KeyMomentError>>()?;
    let map: BTreeMap<Modality, Vec<KeyMoment>> = per
        .iter()
        .map(|p| (p.modality, p.representatives.iter().chain(&p.changes).cloned().collect()))
        .collect();
    Ok((merge_key_moments(&map, cfg.min_gap_s), per))
}
