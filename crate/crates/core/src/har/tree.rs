//! Weighted CART classification tree (Gini impurity).

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { dist: Vec<f64> },
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct TreeParams {
    pub max_depth: usize,
    /// Features drawn per split; `None` uses all.
    pub max_features: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct Tree {
    nodes: Vec<Node>,
}

/// Row-major feature matrix with `n_features` columns.
pub(crate) struct Matrix<'a> {
    pub data: &'a [f64],
    pub n_features: usize,
}

impl Matrix<'_> {
    fn at(&self, row: usize, f: usize) -> f64 {
        self.data[row * self.n_features + f]
    }
}

struct Builder<'a, R> {
    x: &'a Matrix<'a>,
    y: &'a [usize],
    w: &'a [f64],
    n_classes: usize,
    params: TreeParams,
    rng: &'a mut R,
    nodes: Vec<Node>,
}

/// Score to maximize: Σ_c left_c²/W_L + Σ_c right_c²/W_R.
fn purity(counts: &[f64], total: f64) -> f64 {
    if total <= 0.0 {
        0.0
    } else {
        counts.iter().map(|c| c * c).sum::<f64>() / total
    }
}

impl<R: Rng> Builder<'_, R> {
    fn leaf(&mut self, counts: Vec<f64>) -> usize {
        let total: f64 = counts.iter().sum();
        let dist = if total > 0.0 {
            counts.iter().map(|c| c / total).collect()
        } else {
            vec![1.0 / self.n_classes as f64; self.n_classes]
        };
        self.nodes.push(Node::Leaf { dist });
        self.nodes.len() - 1
    }

    fn build(&mut self, idx: &mut [usize], depth: usize) -> usize {
        let mut counts = vec![0.0; self.n_classes];
        for &i in idx.iter() {
            counts[self.y[i]] += self.w[i];
        }
        let total: f64 = counts.iter().sum();
        let pure = counts.iter().filter(|&&c| c > 0.0).count() <= 1;
        if pure || depth >= self.params.max_depth || idx.len() < 2 {
            return self.leaf(counts);
        }
        let d = self.x.n_features;
        let m = self.params.max_features.unwrap_or(d).clamp(1, d);
        let features: Vec<usize> = if m == d { (0..d).collect() } else { index::sample(self.rng, d, m).into_vec() };

        let parent = purity(&counts, total);
        let mut best: Option<(usize, f64, f64)> = None;
        let mut left = vec![0.0; self.n_classes];
        for &f in &features {
            idx.sort_unstable_by(|&a, &b| self.x.at(a, f).total_cmp(&self.x.at(b, f)).then(a.cmp(&b)));
            left.iter_mut().for_each(|c| *c = 0.0);
            let mut wl = 0.0;
            for k in 0..idx.len() - 1 {
                let i = idx[k];
                left[self.y[i]] += self.w[i];
                wl += self.w[i];
                let (v, next) = (self.x.at(i, f), self.x.at(idx[k + 1], f));
                if v == next {
                    continue;
                }
                let wr = total - wl;
                let right_sq: f64 = counts.iter().zip(&left).map(|(c, l)| (c - l) * (c - l)).sum();
                let score = purity(&left, wl) + if wr > 0.0 { right_sq / wr } else { 0.0 };
                if score > parent + 1e-12 && best.is_none_or(|(_, _, s)| score > s) {
                    best = Some((f, v + (next - v) / 2.0, score));
                }
            }
        }
        let Some((feature, threshold, _)) = best else {
            return self.leaf(counts);
        };
        let split = partition(idx, |i| self.x.at(i, feature) <= threshold);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { dist: Vec::new() });
        let (l, r) = idx.split_at_mut(split);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[id] = Node::Split { feature, threshold, left, right };
        id
    }
}

fn partition(idx: &mut [usize], pred: impl Fn(usize) -> bool) -> usize {
    let mut j = 0;
    for k in 0..idx.len() {
        if pred(idx[k]) {
            idx.swap(j, k);
            j += 1;
        }
    }
    j
}

impl Tree {
    /// Fits on the rows listed in `idx` (repeats allowed).
    pub fn fit<R: Rng>(x: &Matrix, y: &[usize], w: &[f64], mut idx: Vec<usize>, n_classes: usize, params: TreeParams, rng: &mut R) -> Self {
        let mut b = Builder {
            x,
            y,
            w,
            n_classes,
            params,
            rng,
            nodes: Vec::new(),
        };
        b.build(&mut idx, 0);
        Tree { nodes: b.nodes }
    }

    pub fn predict_dist(&self, row: &[f64]) -> &[f64] {
        let mut n = 0;
        loop {
            match &self.nodes[n] {
                Node::Split { feature, threshold, left, right } => n = if row[*feature] <= *threshold { *left } else { *right },
                Node::Leaf { dist } => return dist,
            }
        }
    }
}
