//! k-nearest neighbours, balanced random forest and boosting over randomly
//! undersampled training sets.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::IndexedRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{Matrix, Tree, TreeParams};
use super::HarError;
use crate::seed;

pub const MIN_ROWS_PER_CLASS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ClassifierSpec {
    Knn { k: usize },
    BalancedForest { trees: usize, max_depth: usize },
    BoostedResampled { rounds: usize, max_depth: usize },
}

impl ClassifierSpec {
    pub fn validate(&self) -> Result<(), HarError> {
        let ok = match *self {
            ClassifierSpec::Knn { k } => k >= 1,
            ClassifierSpec::BalancedForest { trees, max_depth } => trees >= 1 && (1..=64).contains(&max_depth),
            ClassifierSpec::BoostedResampled { rounds, max_depth } => rounds >= 1 && (1..=64).contains(&max_depth),
        };
        if ok {
            Ok(())
        } else {
            Err(HarError::InvalidSpec(self.to_string()))
        }
    }

    /// Default grid: knn k ∈ {1,3,5,7}; forest trees ∈ {50,100} × depth ∈
    /// {8,16}; boosting rounds ∈ {20,50} over depth-4 trees.
    pub fn default_grid() -> Vec<ClassifierSpec> {
        let mut g: Vec<ClassifierSpec> = [1, 3, 5, 7].map(|k| ClassifierSpec::Knn { k }).to_vec();
        for trees in [50, 100] {
            for max_depth in [8, 16] {
                g.push(ClassifierSpec::BalancedForest { trees, max_depth });
            }
        }
        for rounds in [20, 50] {
            g.push(ClassifierSpec::BoostedResampled { rounds, max_depth: 4 });
        }
        g
    }
}

impl fmt::Display for ClassifierSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassifierSpec::Knn { k } => write!(f, "knn(k={k})"),
            ClassifierSpec::BalancedForest { trees, max_depth } => write!(f, "balanced-forest(trees={trees},depth={max_depth})"),
            ClassifierSpec::BoostedResampled { rounds, max_depth } => write!(f, "boosted-resampled(rounds={rounds},depth={max_depth})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Model {
    Knn { k: usize, mean: Vec<f64>, scale: Vec<f64>, x: Vec<f64>, y: Vec<usize> },
    Forest { trees: Vec<Tree> },
    Boost { trees: Vec<Tree>, alphas: Vec<f64> },
    Constant,
}

/// A fitted classifier. `classes` is sorted; probability vectors are
/// indexed like it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub spec: ClassifierSpec,
    pub classes: Vec<String>,
    pub n_features: usize,
    model: Model,
}

/// Per-class row indices, with classes in sorted order.
fn class_index(y: &[usize], n_classes: usize) -> Vec<Vec<usize>> {
    let mut by = vec![Vec::new(); n_classes];
    for (i, &c) in y.iter().enumerate() {
        by[c].push(i);
    }
    by
}

pub fn train_classifier(x: &[Vec<f64>], y: &[String], spec: ClassifierSpec, seed: u64) -> Result<Classifier, HarError> {
    spec.validate()?;
    if x.len() != y.len() {
        return Err(HarError::Dimension(format!("{} rows, {} labels", x.len(), y.len())));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for l in y {
        *counts.entry(l.as_str()).or_default() += 1;
    }
    if counts.len() < 2 {
        return Err(HarError::SingleClass);
    }
    if let Some((l, &n)) = counts.iter().find(|(_, &n)| n < MIN_ROWS_PER_CLASS) {
        return Err(HarError::InsufficientRows { label: l.to_string(), count: n });
    }
    let n_features = x[0].len();
    if n_features == 0 || x.iter().any(|r| r.len() != n_features) {
        return Err(HarError::Dimension("ragged or empty feature rows".into()));
    }
    let classes: Vec<String> = counts.keys().map(|s| s.to_string()).collect();
    let yi: Vec<usize> = y.iter().map(|l| classes.binary_search(l).unwrap()).collect();
    let data: Vec<f64> = x.iter().flatten().copied().collect();
    let matrix = Matrix { data: &data, n_features };
    let by_class = class_index(&yi, classes.len());
    let minority = by_class.iter().map(Vec::len).min().unwrap();

    let model = match spec {
        ClassifierSpec::Knn { k } => {
            let n = x.len() as f64;
            let mean: Vec<f64> = (0..n_features).map(|f| x.iter().map(|r| r[f]).sum::<f64>() / n).collect();
            let scale: Vec<f64> = (0..n_features)
                .map(|f| {
                    let sd = (x.iter().map(|r| (r[f] - mean[f]).powi(2)).sum::<f64>() / n).sqrt();
                    if sd > 1e-12 { sd } else { 1.0 }
                })
                .collect();
            let xs = x.iter().flat_map(|r| r.iter().enumerate().map(|(f, v)| (v - mean[f]) / scale[f])).collect();
            Model::Knn { k, mean, scale, x: xs, y: yi }
        }
        ClassifierSpec::BalancedForest { trees, max_depth } => {
            let mtry = ((n_features as f64).sqrt().ceil() as usize).max(1);
            let params = TreeParams { max_depth, max_features: Some(mtry) };
            let w = vec![1.0; yi.len()];
            let trees = (0..trees)
                .map(|t| {
                    let mut rng: ChaCha8Rng = seed::rng(seed::derive_indexed(seed, "forest", t as u64), "tree");
                    let idx: Vec<usize> = by_class
                        .iter()
                        .flat_map(|rows| (0..minority).map(|_| *rows.choose(&mut rng).unwrap()).collect::<Vec<_>>())
                        .collect();
                    Tree::fit(&matrix, &yi, &w, idx, classes.len(), params, &mut rng)
                })
                .collect();
            Model::Forest { trees }
        }
        ClassifierSpec::BoostedResampled { rounds, max_depth } => fit_boost(&matrix, &yi, &by_class, minority, rounds, max_depth, seed),
    };
    Ok(Classifier {
        spec,
        classes,
        n_features,
        model,
    })
}

/// SAMME boosting where each round fits a tree on a class-balanced random
/// undersample, weighted by the current boosting weights.
fn fit_boost(x: &Matrix, y: &[usize], by_class: &[Vec<usize>], minority: usize, rounds: usize, max_depth: usize, seed: u64) -> Model {
    let n = y.len();
    let k = by_class.len() as f64;
    let mut w = vec![1.0 / n as f64; n];
    let mut trees = Vec::new();
    let mut alphas = Vec::new();
    let params = TreeParams { max_depth, max_features: None };
    for r in 0..rounds {
        let mut rng: ChaCha8Rng = seed::rng(seed::derive_indexed(seed, "boost", r as u64), "round");
        let idx: Vec<usize> = by_class
            .iter()
            .flat_map(|rows| rand::seq::index::sample(&mut rng, rows.len(), minority).into_iter().map(|j| rows[j]).collect::<Vec<_>>())
            .collect();
        let tree = Tree::fit(x, y, &w, idx, by_class.len(), params, &mut rng);
        let wrong: Vec<bool> = (0..n).map(|i| argmax(tree.predict_dist(&x.data[i * x.n_features..(i + 1) * x.n_features])) != y[i]).collect();
        let total: f64 = w.iter().sum();
        let err = wrong.iter().zip(&w).filter(|(b, _)| **b).map(|(_, w)| w).sum::<f64>() / total;
        if err >= 1.0 - 1.0 / k {
            if trees.is_empty() {
                trees.push(tree);
                alphas.push(1.0);
            }
            break;
        }
        let alpha = ((1.0 - err) / err.max(1e-10)).ln() + (k - 1.0).ln();
        trees.push(tree);
        alphas.push(alpha);
        if err <= 0.0 {
            break;
        }
        for (wi, &bad) in w.iter_mut().zip(&wrong) {
            if bad {
                *wi *= alpha.exp();
            }
        }
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
    }
    Model::Boost { trees, alphas }
}

/// Lenient fitting used inside ensembles: classes with fewer than
/// [`MIN_ROWS_PER_CLASS`] rows are dropped, and a single remaining class
/// yields a constant classifier. `None` when no rows remain.
pub(crate) fn fit_member(x: &[Vec<f64>], y: &[String], spec: ClassifierSpec, seed: u64) -> Result<Option<Classifier>, HarError> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for l in y {
        *counts.entry(l.as_str()).or_default() += 1;
    }
    let keep: Vec<&str> = counts.iter().filter(|(_, &n)| n >= MIN_ROWS_PER_CLASS).map(|(l, _)| *l).collect();
    let n_features = x.first().map_or(0, Vec::len);
    match keep.len() {
        0 => Ok(None),
        1 => Ok(Some(Classifier::constant(spec, keep[0], n_features))),
        _ => {
            let (fx, fy): (Vec<Vec<f64>>, Vec<String>) = x
                .iter()
                .zip(y)
                .filter(|(_, l)| keep.contains(&l.as_str()))
                .map(|(r, l)| (r.clone(), l.clone()))
                .unzip();
            train_classifier(&fx, &fy, spec, seed).map(Some)
        }
    }
}

/// Index of the largest value; ties go to the lowest index.
pub(crate) fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

impl Classifier {
    /// Always predicts `label` with probability 1.
    pub fn constant(spec: ClassifierSpec, label: &str, n_features: usize) -> Self {
        Self {
            spec,
            classes: vec![label.to_string()],
            n_features,
            model: Model::Constant,
        }
    }

    /// Binary encoding of the fitted parameters; the spec travels separately.
    pub fn to_blob(&self) -> Result<Vec<u8>, HarError> {
        bincode::serialize(&(&self.classes, self.n_features, &self.model)).map_err(|e| HarError::Bundle(e.to_string()))
    }

    pub fn from_blob(spec: ClassifierSpec, bytes: &[u8]) -> Result<Self, HarError> {
        let (classes, n_features, model): (Vec<String>, usize, Model) = bincode::deserialize(bytes).map_err(|e| HarError::Bundle(e.to_string()))?;
        Ok(Self {
            spec,
            classes,
            n_features,
            model,
        })
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.model, Model::Constant)
    }

    /// Class probabilities for one feature row; entries sum to 1.
    pub fn predict_proba(&self, row: &[f64]) -> Result<Vec<f64>, HarError> {
        if row.len() != self.n_features {
            return Err(HarError::Dimension(format!("expected {} features, got {}", self.n_features, row.len())));
        }
        let nc = self.classes.len();
        let mut p = vec![0.0; nc];
        match &self.model {
            Model::Knn { k, mean, scale, x, y } => {
                let z: Vec<f64> = row.iter().enumerate().map(|(f, v)| (v - mean[f]) / scale[f]).collect();
                let mut d: Vec<(f64, usize)> = x
                    .chunks_exact(self.n_features)
                    .enumerate()
                    .map(|(i, r)| (r.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
                    .collect();
                let k = (*k).min(d.len());
                let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
                if k < d.len() {
                    d.select_nth_unstable_by(k - 1, cmp);
                }
                for &(_, i) in &d[..k] {
                    p[y[i]] += 1.0 / k as f64;
                }
            }
            Model::Forest { trees } => {
                for t in trees {
                    for (a, b) in p.iter_mut().zip(t.predict_dist(row)) {
                        *a += b;
                    }
                }
            }
            Model::Boost { trees, alphas } => {
                for (t, a) in trees.iter().zip(alphas) {
                    for (acc, b) in p.iter_mut().zip(t.predict_dist(row)) {
                        *acc += a * b;
                    }
                }
            }
            Model::Constant => p[0] = 1.0,
        }
        let total: f64 = p.iter().sum();
        if total > 0.0 && total.is_finite() {
            p.iter_mut().for_each(|v| *v /= total);
        } else {
            p = vec![1.0 / nc as f64; nc];
        }
        Ok(p)
    }

    /// Predicted class and its probability.
    pub fn predict(&self, row: &[f64]) -> Result<(&str, f64), HarError> {
        let p = self.predict_proba(row)?;
        let i = argmax(&p);
        Ok((&self.classes[i], p[i]))
    }
}
