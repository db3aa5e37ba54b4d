use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::classifier::{argmax, fit_member, Classifier, ClassifierSpec};
use super::{balanced_accuracy, HarError, Row};
use crate::{seed, Modality};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VoteMode {
    Soft,
    Hard,
}

impl fmt::Display for VoteMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VoteMode::Soft => "soft",
            VoteMode::Hard => "hard",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Member {
    pub modality: Modality,
    pub classifier: ClassifierSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub members: Vec<Member>,
    pub mode: VoteMode,
    pub weights: Vec<f64>,
}

impl EnsembleSpec {
    /// Equal-weight ensemble of `classifier` over `modalities`.
    pub fn uniform(modalities: &[Modality], classifier: ClassifierSpec, mode: VoteMode) -> Self {
        Self {
            members: modalities.iter().map(|&modality| Member { modality, classifier }).collect(),
            mode,
            weights: vec![1.0; modalities.len()],
        }
    }

    pub fn validate(&self) -> Result<(), HarError> {
        if self.members.is_empty() || self.weights.len() != self.members.len() {
            return Err(HarError::InvalidSpec("ensemble needs one weight per member and at least one member".into()));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || self.weights.iter().all(|w| *w == 0.0) {
            return Err(HarError::InvalidSpec("ensemble weights must be non-negative and not all zero".into()));
        }
        self.members.iter().try_for_each(|m| m.classifier.validate())
    }

    /// Sort key used for deterministic tie-breaks.
    pub fn key(&self) -> String {
        let mods: Vec<&str> = self.members.iter().map(|m| m.modality.name()).collect();
        let specs: Vec<String> = self.members.iter().map(|m| m.classifier.to_string()).collect();
        format!("{}|{}|{}", mods.join("+"), specs.join("+"), self.mode)
    }
}

/// Combines member outputs over the sorted label space `labels`. Each
/// output is `(weight, member classes, member probabilities)`.
///
/// Soft voting takes the weighted mean of probability vectors; hard voting
/// gives each member `weight × confidence` votes for its top class. The
/// returned vector is the normalized tally; ties go to the lexicographically
/// first label. `None` when there are no outputs.
pub fn combine_votes(mode: VoteMode, labels: &[String], outputs: &[(f64, &[String], &[f64])]) -> Option<(usize, Vec<f64>)> {
    if outputs.is_empty() {
        return None;
    }
    let mut tally = vec![0.0; labels.len()];
    for &(w, classes, p) in outputs {
        let pos = |c: &String| labels.binary_search(c).expect("member class outside label space");
        match mode {
            VoteMode::Soft => {
                for (c, v) in classes.iter().zip(p) {
                    tally[pos(c)] += w * v;
                }
            }
            VoteMode::Hard => {
                let top = argmax(p);
                tally[pos(&classes[top])] += w * p[top];
            }
        }
    }
    let total: f64 = tally.iter().sum();
    if total > 0.0 {
        tally.iter_mut().for_each(|v| *v /= total);
    } else {
        tally = vec![1.0 / labels.len() as f64; labels.len()];
    }
    Some((argmax(&tally), tally))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedEnsemble {
    pub spec: EnsembleSpec,
    /// Sorted union of member classes.
    pub labels: Vec<String>,
    /// Fitted member per spec member; `None` when that modality had no
    /// training rows.
    pub members: Vec<Option<Classifier>>,
}

/// Fits every member on the rows where its modality is valid.
pub fn train_ensemble(rows: &[&Row], labels: &[String], spec: &EnsembleSpec, seed: u64) -> Result<TrainedEnsemble, HarError> {
    spec.validate()?;
    let members = spec
        .members
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let (x, y): (Vec<Vec<f64>>, Vec<String>) = rows
                .iter()
                .zip(labels)
                .filter_map(|(r, l)| r.features.get(&m.modality).map(|f| (f.clone(), l.clone())))
                .unzip();
            fit_member(&x, &y, m.classifier, seed::derive_indexed(seed, "member", i as u64))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut all: Vec<String> = members.iter().flatten().flat_map(|c| c.classes.iter().cloned()).collect();
    all.sort();
    all.dedup();
    if all.is_empty() {
        return Err(HarError::Empty("no member could be trained".into()));
    }
    Ok(TrainedEnsemble {
        spec: spec.clone(),
        labels: all,
        members,
    })
}

/// Predicted label and probability vector over `ensemble.labels`. Members
/// whose modality is missing from `features` are skipped.
pub fn ensemble_predict(ensemble: &TrainedEnsemble, features: &BTreeMap<Modality, Vec<f64>>) -> Result<(String, Vec<f64>), HarError> {
    let mut probs = Vec::new();
    for ((m, w), c) in ensemble.spec.members.iter().zip(&ensemble.spec.weights).zip(&ensemble.members) {
        if let (Some(c), Some(f)) = (c, features.get(&m.modality)) {
            probs.push((*w, c, c.predict_proba(f)?));
        }
    }
    let outputs: Vec<(f64, &[String], &[f64])> = probs.iter().map(|(w, c, p)| (*w, c.classes.as_slice(), p.as_slice())).collect();
    let (i, p) = combine_votes(ensemble.spec.mode, &ensemble.labels, &outputs).ok_or(HarError::NoMembers)?;
    Ok((ensemble.labels[i].clone(), p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarGrid {
    pub classifiers: Vec<ClassifierSpec>,
    pub modes: Vec<VoteMode>,
    /// Session-grouped folds for scoring (time blocks with one session).
    pub inner_folds: usize,
    pub max_modalities: usize,
}

impl Default for HarGrid {
    fn default() -> Self {
        Self {
            classifiers: ClassifierSpec::default_grid(),
            modes: vec![VoteMode::Soft, VoteMode::Hard],
            inner_folds: 3,
            max_modalities: Modality::ALL.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOutcome {
    pub spec: EnsembleSpec,
    pub score: f64,
    pub evaluated: usize,
}

/// Fold id per row: sessions round-robin when there are several, otherwise
/// contiguous time blocks.
fn inner_folds(rows: &[&Row], k: usize) -> Vec<usize> {
    let mut sessions: Vec<&str> = rows.iter().map(|r| r.session_id.as_str()).collect();
    sessions.sort_unstable();
    sessions.dedup();
    if sessions.len() >= 2 {
        let k = k.min(sessions.len()).max(2);
        rows.iter().map(|r| sessions.binary_search(&r.session_id.as_str()).unwrap() % k).collect()
    } else {
        let k = k.max(2);
        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.sort_by(|&a, &b| rows[a].t_s.total_cmp(&rows[b].t_s).then(a.cmp(&b)));
        let mut fold = vec![0; rows.len()];
        for (rank, &i) in order.iter().enumerate() {
            fold[i] = rank * k / rows.len().max(1);
        }
        fold
    }
}

/// Out-of-fold probability vectors over `labels` for one member.
fn out_of_fold(rows: &[&Row], labels: &[String], space: &[String], folds: &[usize], member: Member, seed: u64) -> Result<Vec<Option<Vec<f64>>>, HarError> {
    let n_folds = folds.iter().max().map_or(0, |m| m + 1);
    let mut out = vec![None; rows.len()];
    for f in 0..n_folds {
        let (x, y): (Vec<Vec<f64>>, Vec<String>) = rows
            .iter()
            .zip(labels)
            .zip(folds)
            .filter(|(_, &g)| g != f)
            .filter_map(|((r, l), _)| r.features.get(&member.modality).map(|x| (x.clone(), l.clone())))
            .unzip();
        let Some(c) = fit_member(&x, &y, member.classifier, seed::derive_indexed(seed, "fold", f as u64))? else {
            continue;
        };
        for (i, r) in rows.iter().enumerate() {
            if folds[i] != f {
                continue;
            }
            if let Some(x) = r.features.get(&member.modality) {
                let p = c.predict_proba(x)?;
                let mut full = vec![0.0; space.len()];
                for (cl, v) in c.classes.iter().zip(p) {
                    full[space.binary_search(cl).unwrap()] = v;
                }
                out[i] = Some(full);
            }
        }
    }
    Ok(out)
}

/// Scores every (modality subset, classifier, vote mode) combination by
/// balanced accuracy of cross-validated predictions and returns the best.
/// Ties prefer fewer modalities, then the lexicographically smaller key.
pub fn grid_search_har(rows: &[&Row], labels: &[String], grid: &HarGrid, seed: u64) -> Result<GridOutcome, HarError> {
    if grid.classifiers.is_empty() || grid.modes.is_empty() {
        return Err(HarError::InvalidSpec("empty grid".into()));
    }
    if rows.is_empty() || rows.len() != labels.len() {
        return Err(HarError::Empty("grid search rows".into()));
    }
    let mut space: Vec<String> = labels.to_vec();
    space.sort();
    space.dedup();
    let modalities: Vec<Modality> = Modality::ALL.into_iter().filter(|m| rows.iter().any(|r| r.features.contains_key(m))).collect();
    if modalities.is_empty() {
        return Err(HarError::NoMembers);
    }
    let folds = inner_folds(rows, grid.inner_folds);
    let members: Vec<Member> = modalities
        .iter()
        .flat_map(|&modality| grid.classifiers.iter().map(move |&classifier| Member { modality, classifier }))
        .collect();
    let cache: BTreeMap<Member, Vec<Option<Vec<f64>>>> = members
        .par_iter()
        .map(|&m| {
            let s = seed::derive(seed, &format!("{}/{}", m.modality, m.classifier));
            out_of_fold(rows, labels, &space, &folds, m, s).map(|o| (m, o))
        })
        .collect::<Result<_, HarError>>()?;

    let truth: Vec<usize> = labels.iter().map(|l| space.binary_search(l).unwrap()).collect();
    let mut best: Option<(f64, usize, String, EnsembleSpec)> = None;
    let mut evaluated = 0;
    let max_k = grid.max_modalities.clamp(1, modalities.len());
    for mask in 1u32..(1 << modalities.len()) {
        let subset: Vec<Modality> = (0..modalities.len()).filter(|b| mask & (1 << b) != 0).map(|b| modalities[b]).collect();
        if subset.len() > max_k {
            continue;
        }
        for &classifier in &grid.classifiers {
            for &mode in &grid.modes {
                let spec = EnsembleSpec::uniform(&subset, classifier, mode);
                let mut confusion = vec![vec![0u64; space.len() + 1]; space.len() + 1];
                for (i, &t) in truth.iter().enumerate() {
                    let outs: Vec<(f64, &[String], &[f64])> = subset
                        .iter()
                        .filter_map(|&modality| cache[&Member { modality, classifier }][i].as_deref())
                        .map(|p| (1.0, space.as_slice(), p))
                        .collect();
                    let pred = combine_votes(mode, &space, &outs).map_or(space.len(), |(k, _)| k);
                    confusion[t][pred] += 1;
                }
                let score = balanced_accuracy(&confusion)?;
                evaluated += 1;
                let key = spec.key();
                let better = match &best {
                    None => true,
                    Some((s, n, k, _)) => score > *s || (score == *s && (subset.len() < *n || (subset.len() == *n && key < *k))),
                };
                if better {
                    best = Some((score, subset.len(), key, spec));
                }
            }
        }
    }
    let (score, _, _, spec) = best.expect("grid has at least one point");
    Ok(GridOutcome { spec, score, evaluated })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::har::classifier::tests::blobs;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn soft_vote_arithmetic() {
        let labels = s(&["a", "b"]);
        let (i, p) = combine_votes(VoteMode::Soft, &labels, &[(1.0, &labels, &[0.8, 0.2]), (1.0, &labels, &[0.4, 0.6])]).unwrap();
        assert_eq!(i, 0);
        assert!((p[0] - 0.6).abs() < 1e-15 && (p[1] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn single_member_equals_member() {
        let labels = s(&["a", "b", "c"]);
        let p = [0.2, 0.5, 0.3];
        for mode in [VoteMode::Soft, VoteMode::Hard] {
            let (i, _) = combine_votes(mode, &labels, &[(2.0, &labels, &p)]).unwrap();
            assert_eq!(i, 1);
        }
        let (_, soft) = combine_votes(VoteMode::Soft, &labels, &[(2.0, &labels, &p)]).unwrap();
        assert_eq!(soft, p.to_vec());
    }

    #[test]
    fn ties_go_to_first_label() {
        let labels = s(&["a", "b"]);
        let (i, _) = combine_votes(VoteMode::Hard, &labels, &[(1.0, &labels, &[0.3, 0.7]), (1.0, &labels, &[0.7, 0.3])]).unwrap();
        assert_eq!(i, 0);
    }

    #[test]
    fn random_outputs_match_tally() {
        let labels = s(&["a", "b", "c", "d"]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let n = rng.random_range(1..5);
            let members: Vec<(f64, Vec<String>, Vec<f64>)> = (0..n)
                .map(|_| {
                    let k = rng.random_range(1..=4);
                    let mut cls: Vec<String> = labels.clone();
                    cls.truncate(k);
                    let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
                    let t: f64 = raw.iter().sum();
                    (rng.random_range(0.1..2.0), cls, raw.iter().map(|v| v / t).collect())
                })
                .collect();
            let outs: Vec<(f64, &[String], &[f64])> = members.iter().map(|(w, c, p)| (*w, c.as_slice(), p.as_slice())).collect();
            // Brute-force tallies.
            let mut soft = [0.0; 4];
            let mut hard = [0.0; 4];
            for (w, c, p) in &members {
                let mut top = 0;
                for j in 0..p.len() {
                    soft[labels.iter().position(|l| *l == c[j]).unwrap()] += w * p[j];
                    if p[j] > p[top] {
                        top = j;
                    }
                }
                hard[labels.iter().position(|l| *l == c[top]).unwrap()] += w * p[top];
            }
            for (mode, tally) in [(VoteMode::Soft, soft), (VoteMode::Hard, hard)] {
                let total: f64 = tally.iter().sum();
                let (i, p) = combine_votes(mode, &labels, &outs).unwrap();
                for j in 0..4 {
                    assert!((p[j] - tally[j] / total).abs() < 1e-12);
                }
                let best = tally.iter().cloned().fold(f64::MIN, f64::max);
                assert_eq!(i, tally.iter().position(|v| *v == best).unwrap());
            }
        }
    }

    pub(crate) fn rows_from(x: &[Vec<f64>], y: &[String], sessions: usize, modality: Modality) -> Vec<Row> {
        x.iter()
            .zip(y)
            .enumerate()
            .map(|(i, (f, l))| Row {
                session_id: format!("s{}", i % sessions),
                t_s: i as f64,
                features: [(modality, f.clone())].into_iter().collect(),
                zone: "z".into(),
                activity: l.clone(),
            })
            .collect()
    }

    #[test]
    fn grid_search_is_exhaustive_argmax() {
        let (x, y) = blobs(&[("a", vec![0.0, 0.0], 40), ("b", vec![2.0, 0.5], 40), ("c", vec![0.0, 2.5], 40)], 8);
        let (noise, _) = blobs(&[("n", vec![0.0, 0.0], 120)], 9);
        let mut rows = rows_from(&x, &y, 4, Modality::Imu);
        for (r, n) in rows.iter_mut().zip(&noise) {
            r.features.insert(Modality::Thermal, n.clone());
        }
        let refs: Vec<&Row> = rows.iter().collect();
        let grid = HarGrid {
            classifiers: vec![ClassifierSpec::Knn { k: 1 }, ClassifierSpec::Knn { k: 5 }, ClassifierSpec::BalancedForest { trees: 10, max_depth: 6 }],
            ..HarGrid::default()
        };
        let out = grid_search_har(&refs, &y, &grid, 1).unwrap();
        assert_eq!(out.evaluated, 3 * 3 * 2);
        // Re-score every point with one-point grids.
        for c in &grid.classifiers {
            for mode in [VoteMode::Soft, VoteMode::Hard] {
                for mods in [vec![Modality::Imu], vec![Modality::Thermal], vec![Modality::Imu, Modality::Thermal]] {
                    let one = HarGrid {
                        classifiers: vec![*c],
                        modes: vec![mode],
                        max_modalities: mods.len(),
                        ..grid.clone()
                    };
                    let sub: Vec<Row> = rows
                        .iter()
                        .map(|r| Row {
                            features: r.features.iter().filter(|(m, _)| mods.contains(m)).map(|(m, v)| (*m, v.clone())).collect(),
                            ..r.clone()
                        })
                        .collect();
                    let sub_refs: Vec<&Row> = sub.iter().collect();
                    let o = grid_search_har(&sub_refs, &y, &one, 1).unwrap();
                    assert!(out.score >= o.score);
                }
            }
        }
        assert!(out.spec.members.iter().all(|m| m.modality == Modality::Imu), "{}", out.spec.key());
    }

    #[test]
    fn one_point_grid_returns_it() {
        let (x, y) = blobs(&[("a", vec![0.0], 20), ("b", vec![3.0], 20)], 2);
        let rows = rows_from(&x, &y, 2, Modality::Pose);
        let refs: Vec<&Row> = rows.iter().collect();
        let grid = HarGrid {
            classifiers: vec![ClassifierSpec::Knn { k: 3 }],
            modes: vec![VoteMode::Hard],
            ..HarGrid::default()
        };
        let out = grid_search_har(&refs, &y, &grid, 0).unwrap();
        assert_eq!(out.spec, EnsembleSpec::uniform(&[Modality::Pose], ClassifierSpec::Knn { k: 3 }, VoteMode::Hard));
        assert_eq!(out.evaluated, 1);
    }

    #[test]
    fn identical_members_soft_equals_single() {
        let (x, y) = blobs(&[("a", vec![0.0, 0.0], 20), ("b", vec![1.0, 1.0], 20)], 5);
        let rows = rows_from(&x, &y, 2, Modality::Imu);
        let refs: Vec<&Row> = rows.iter().collect();
        let c = ClassifierSpec::Knn { k: 5 };
        let one = train_ensemble(&refs, &y, &EnsembleSpec::uniform(&[Modality::Imu], c, VoteMode::Soft), 0).unwrap();
        let two_spec = EnsembleSpec::uniform(&[Modality::Imu, Modality::Imu], c, VoteMode::Soft);
        let two = train_ensemble(&refs, &y, &two_spec, 0).unwrap();
        for r in &rows {
            assert_eq!(ensemble_predict(&one, &r.features).unwrap(), ensemble_predict(&two, &r.features).unwrap());
        }
        assert!(matches!(ensemble_predict(&one, &BTreeMap::new()), Err(HarError::NoMembers)));
    }
}
