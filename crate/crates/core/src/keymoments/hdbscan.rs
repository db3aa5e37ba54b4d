//! Hierarchical density-based clustering: mutual-reachability minimum
//! spanning tree, condensed cluster tree, excess-of-mass selection with an
//! optional epsilon merge, and outlier-complement membership probabilities.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const DISTANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    /// Cluster id per point, `None` for noise.
    pub labels: Vec<Option<usize>>,
    pub membership_prob: Vec<f64>,
    pub n_clusters: usize,
}

impl Clustering {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn noise_ratio(&self) -> f64 {
        if self.labels.is_empty() {
            return 0.0;
        }
        self.labels.iter().filter(|l| l.is_none()).count() as f64 / self.labels.len() as f64
    }

    pub fn members(&self, cluster: usize) -> impl Iterator<Item = usize> + '_ {
        self.labels.iter().enumerate().filter(move |(_, l)| **l == Some(cluster)).map(|(i, _)| i)
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Single-linkage hierarchy over mutual-reachability distances. Depends only
/// on the points and `min_samples`, so it can be reused across
/// `min_cluster_size` and epsilon settings.
#[derive(Debug, Clone)]
pub struct DensityTree {
    n: usize,
    /// Merges `(left, right, distance, size)`; merge `i` creates node `n + i`.
    merges: Vec<(usize, usize, f64, usize)>,
    degenerate: bool,
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }
}

/// Distance from each point to its `min_samples`-th nearest neighbour, the
/// point itself counting as the first.
pub fn core_distances(points: &[Vec<f64>], min_samples: usize) -> Vec<f64> {
    let k = min_samples.max(1).min(points.len()) - 1;
    points
        .par_iter()
        .map(|p| {
            let mut d: Vec<f64> = points.iter().map(|q| distance(p, q)).collect();
            let (_, kth, _) = d.select_nth_unstable_by(k, f64::total_cmp);
            *kth
        })
        .collect()
}

impl DensityTree {
    pub fn build(points: &[Vec<f64>], min_samples: usize) -> Self {
        let n = points.len();
        let core = core_distances(points, min_samples);
        // Prim's algorithm on the dense mutual-reachability graph.
        let mut in_tree = vec![false; n];
        let mut best = vec![f64::INFINITY; n];
        let mut from = vec![0usize; n];
        let mut edges = Vec::with_capacity(n.saturating_sub(1));
        let mut current = 0;
        for _ in 1..n {
            in_tree[current] = true;
            let pc = &points[current];
            for j in 0..n {
                if in_tree[j] {
                    continue;
                }
                let d = distance(pc, &points[j]).max(core[current]).max(core[j]).max(DISTANCE_FLOOR);
                if d < best[j] {
                    best[j] = d;
                    from[j] = current;
                }
            }
            let mut next = usize::MAX;
            for j in 0..n {
                if !in_tree[j] && (next == usize::MAX || best[j] < best[next]) {
                    next = j;
                }
            }
            edges.push((from[next], next, best[next]));
            current = next;
        }
        let degenerate = n > 0 && points.iter().all(|p| p == &points[0]);
        edges.sort_by(|a, b| a.2.total_cmp(&b.2));

        let mut uf = UnionFind::new(2 * n.max(1) - 1);
        let mut size = vec![1usize; 2 * n.max(1) - 1];
        let mut merges = Vec::with_capacity(edges.len());
        for (i, &(a, b, w)) in edges.iter().enumerate() {
            let (ra, rb) = (uf.find(a), uf.find(b));
            let node = n + i;
            size[node] = size[ra] + size[rb];
            uf.parent[ra] = node;
            uf.parent[rb] = node;
            merges.push((ra, rb, w, size[node]));
        }
        Self { n, merges, degenerate }
    }

    fn size(&self, node: usize) -> usize {
        if node < self.n {
            1
        } else {
            self.merges[node - self.n].3
        }
    }

    fn leaves(&self, node: usize, out: &mut Vec<usize>) {
        let mut stack = vec![node];
        while let Some(x) = stack.pop() {
            if x < self.n {
                out.push(x);
            } else {
                let (l, r, _, _) = self.merges[x - self.n];
                stack.push(l);
                stack.push(r);
            }
        }
    }

    /// Condensed tree entries `(parent, child, lambda, child_size)`. Cluster
    /// ids start at `n` (the root).
    fn condense(&self, min_cluster_size: usize) -> Vec<(usize, usize, f64, usize)> {
        let n = self.n;
        let root = 2 * n - 2;
        let mut relabel = vec![0usize; 2 * n - 1];
        relabel[root] = n;
        let mut next_label = n + 1;
        let mut out = Vec::new();
        let mut queue = VecDeque::from([root]);
        let mut buf = Vec::new();
        while let Some(node) = queue.pop_front() {
            if node < n {
                continue;
            }
            let (left, right, dist, _) = self.merges[node - n];
            let lambda = 1.0 / dist;
            let (ls, rs) = (self.size(left), self.size(right));
            let parent = relabel[node];
            let mut fall_out = |child: usize, out: &mut Vec<(usize, usize, f64, usize)>| {
                buf.clear();
                self.leaves(child, &mut buf);
                buf.sort_unstable();
                out.extend(buf.iter().map(|&p| (parent, p, lambda, 1)));
            };
            if ls >= min_cluster_size && rs >= min_cluster_size {
                for child in [left, right] {
                    relabel[child] = next_label;
                    next_label += 1;
                    out.push((parent, relabel[child], lambda, self.size(child)));
                    queue.push_back(child);
                }
            } else if ls < min_cluster_size && rs < min_cluster_size {
                fall_out(left, &mut out);
                fall_out(right, &mut out);
            } else if ls < min_cluster_size {
                relabel[right] = parent;
                fall_out(left, &mut out);
                queue.push_back(right);
            } else {
                relabel[left] = parent;
                fall_out(right, &mut out);
                queue.push_back(left);
            }
        }
        out
    }

    /// Extracts a flat clustering for the given minimum cluster size and
    /// selection epsilon.
    pub fn extract(&self, min_cluster_size: usize, epsilon: f64) -> Clustering {
        let n = self.n;
        if n == 0 {
            return Clustering {
                labels: Vec::new(),
                membership_prob: Vec::new(),
                n_clusters: 0,
            };
        }
        if self.degenerate || n == 1 {
            return Clustering {
                labels: vec![Some(0); n],
                membership_prob: vec![1.0; n],
                n_clusters: 1,
            };
        }
        let tree = self.condense(min_cluster_size.max(2));
        let root = n;

        let mut birth: BTreeMap<usize, f64> = BTreeMap::from([(root, 0.0)]);
        let mut parent_of: BTreeMap<usize, usize> = BTreeMap::new();
        let mut children: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &(p, c, l, s) in &tree {
            if s > 1 || c >= n {
                birth.insert(c, l);
                parent_of.insert(c, p);
                children.entry(p).or_default().push(c);
            }
        }
        let mut stability: BTreeMap<usize, f64> = birth.keys().map(|&c| (c, 0.0)).collect();
        for &(p, _, l, s) in &tree {
            *stability.get_mut(&p).expect("parent is a cluster") += (l - birth[&p]) * s as f64;
        }

        let descendants = |c: usize| -> Vec<usize> {
            let mut out = Vec::new();
            let mut stack = vec![c];
            while let Some(x) = stack.pop() {
                if let Some(ch) = children.get(&x) {
                    out.extend(ch.iter().copied());
                    stack.extend(ch.iter().copied());
                }
            }
            out
        };

        // Excess of mass, bottom-up (children have larger ids than parents).
        let mut selected: BTreeMap<usize, bool> = stability.keys().filter(|&&c| c != root).map(|&c| (c, true)).collect();
        let nodes: Vec<usize> = selected.keys().rev().copied().collect();
        for node in nodes {
            let sub: f64 = children.get(&node).map_or(0.0, |ch| ch.iter().map(|c| stability[c]).sum());
            if sub > stability[&node] {
                selected.insert(node, false);
                stability.insert(node, sub);
            } else {
                for d in descendants(node) {
                    selected.insert(d, false);
                }
            }
        }
        let mut chosen: BTreeSet<usize> = selected.iter().filter(|(_, &v)| v).map(|(&c, _)| c).collect();

        if epsilon > 0.0 && !chosen.is_empty() {
            let eps_of = |c: usize| 1.0 / birth[&c];
            let mut merged = BTreeSet::new();
            let mut absorbed = BTreeSet::new();
            for &leaf in &chosen {
                if absorbed.contains(&leaf) {
                    continue;
                }
                let pick = if eps_of(leaf) < epsilon {
                    let mut c = leaf;
                    loop {
                        let p = parent_of[&c];
                        if p == root {
                            break c;
                        }
                        if eps_of(p) > epsilon {
                            break p;
                        }
                        c = p;
                    }
                } else {
                    leaf
                };
                absorbed.extend(descendants(pick));
                merged.insert(pick);
            }
            chosen = merged.into_iter().filter(|c| !absorbed.contains(c)).collect();
        }

        // Points inherit the chosen cluster at or above their condensed parent.
        let id_of: BTreeMap<usize, usize> = chosen.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        let resolve = |mut c: usize| -> Option<usize> {
            loop {
                if let Some(&id) = id_of.get(&c) {
                    return Some(id);
                }
                if c == root {
                    return None;
                }
                c = parent_of[&c];
            }
        };
        let mut deaths: BTreeMap<usize, f64> = BTreeMap::new();
        for &(p, _, l, _) in &tree {
            let d = deaths.entry(p).or_insert(0.0);
            *d = d.max(l);
        }
        let mut labels = vec![None; n];
        let mut probs = vec![0.0; n];
        for &(p, c, l, _) in &tree {
            if c >= n {
                continue;
            }
            if let Some(id) = resolve(p) {
                labels[c] = Some(id);
                let cluster = chosen.iter().nth(id).copied().expect("id maps to a chosen cluster");
                let max_l = deaths.get(&cluster).copied().unwrap_or(0.0);
                probs[c] = if max_l <= 0.0 || !max_l.is_finite() { 1.0 } else { l.min(max_l) / max_l };
            }
        }
        Clustering {
            labels,
            membership_prob: probs,
            n_clusters: chosen.len(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal, Uniform};

    pub(crate) fn blobs(seed: u64, centers: &[[f64; 2]], per: usize, sigma: f64) -> Vec<Vec<f64>> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sigma).unwrap();
        centers
            .iter()
            .flat_map(|c| (0..per).map(|_| vec![c[0] + noise.sample(&mut rng), c[1] + noise.sample(&mut rng)]).collect::<Vec<_>>())
            .collect()
    }

    #[test]
    fn two_blobs() {
        for seed in 0..5 {
            let pts = blobs(seed, &[[0.0, 0.0], [10.0, 0.0]], 50, 1.0);
            let c = DensityTree::build(&pts, 5).extract(5, 0.0);
            assert_eq!(c.n_clusters, 2, "seed {seed}");
            assert!(c.noise_ratio() < 0.1);
            // Members of one blob share a label.
            let first = c.labels[..50].iter().flatten().next().copied();
            assert!(c.labels[..50].iter().all(|l| l.is_none() || *l == first));
        }
    }

    #[test]
    fn identical_points_form_one_cluster() {
        let pts = vec![vec![1.0, 2.0]; 30];
        let c = DensityTree::build(&pts, 3).extract(5, 0.0);
        assert_eq!(c.n_clusters, 1);
        assert_eq!(c.noise_ratio(), 0.0);
    }

    #[test]
    fn sparse_uniform_is_mostly_noise() {
        let u = Uniform::new(0.0, 100.0).unwrap();
        // Individual draws can still contain a chance clump, so the check is
        // on the average over seeds.
        let mut total = 0.0;
        for seed in 0..20 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<Vec<f64>> = (0..100).map(|_| vec![u.sample(&mut rng), u.sample(&mut rng)]).collect();
            total += DensityTree::build(&pts, 5).extract(25, 0.0).noise_ratio();
        }
        assert!(total / 20.0 > 0.5, "{}", total / 20.0);
    }

    #[test]
    fn labels_partition_and_probabilities() {
        let pts = blobs(3, &[[0.0, 0.0], [8.0, 8.0], [-8.0, 8.0]], 40, 1.0);
        let c = DensityTree::build(&pts, 4).extract(6, 0.0);
        for (l, p) in c.labels.iter().zip(&c.membership_prob) {
            match l {
                Some(id) => {
                    assert!(*id < c.n_clusters);
                    assert!(*p > 0.0 && *p <= 1.0);
                }
                None => assert_eq!(*p, 0.0),
            }
        }
        for id in 0..c.n_clusters {
            assert!(c.members(id).count() > 0);
        }
    }

    #[test]
    fn epsilon_merges_nearby_clusters() {
        let pts = blobs(4, &[[0.0, 0.0], [4.0, 0.0], [40.0, 0.0]], 40, 0.5);
        let tree = DensityTree::build(&pts, 4);
        let fine = tree.extract(5, 0.0);
        let coarse = tree.extract(5, 10.0);
        assert_eq!(fine.n_clusters, 3);
        assert_eq!(coarse.n_clusters, 2);
    }
}
