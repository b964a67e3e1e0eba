//! Agglomerative clustering via the nearest-neighbour chain over a condensed
//! distance matrix, plus flat cuts and per-cluster spread.

use std::fmt;
use std::str::FromStr;

use petgraph::unionfind::UnionFind;
use serde::{Deserialize, Serialize};

use crate::error::LsrError;
use crate::metric::MetricKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Linkage {
    /// Unweighted average (UPGMA).
    Average,
    Single,
    Complete,
}

impl Linkage {
    pub fn name(self) -> &'static str {
        match self {
            Linkage::Average => "avg",
            Linkage::Single => "single",
            Linkage::Complete => "complete",
        }
    }

    /// Lance–Williams update: distance from `k` to the union of `i` and `j`.
    fn update(self, d_ki: f64, d_kj: f64, n_i: usize, n_j: usize) -> f64 {
        match self {
            Linkage::Average => (n_i as f64 * d_ki + n_j as f64 * d_kj) / (n_i + n_j) as f64,
            Linkage::Single => d_ki.min(d_kj),
            Linkage::Complete => d_ki.max(d_kj),
        }
    }
}

impl fmt::Display for Linkage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Linkage {
    type Err = LsrError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "avg" | "average" | "upgma" => Ok(Linkage::Average),
            "single" => Ok(Linkage::Single),
            "complete" => Ok(Linkage::Complete),
            _ => Err(LsrError::InvalidArgument(format!("unknown linkage '{s}'"))),
        }
    }
}

/// One agglomeration step. Leaves are clusters `0..n`; the cluster formed by
/// merge `k` has id `n + k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    n: usize,
    merges: Vec<Merge>,
    /// A leaf from each side of every merge, for fast cuts.
    leaf_pairs: Vec<(usize, usize)>,
}

/// Flat clustering: `labels[p]` is the cluster of point `p`; clusters are
/// numbered in order of their smallest member.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub labels: Vec<usize>,
    pub n_clusters: usize,
}

impl Partition {
    /// Relabels arbitrary cluster keys by order of first appearance.
    pub fn from_keys(keys: &[usize]) -> Self {
        let mut map = std::collections::HashMap::new();
        let labels = keys
            .iter()
            .map(|&k| {
                let next = map.len();
                *map.entry(k).or_insert(next)
            })
            .collect();
        Partition {
            labels,
            n_clusters: map.len(),
        }
    }

    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_clusters];
        for (p, &l) in self.labels.iter().enumerate() {
            out[l].push(p);
        }
        out
    }
}

struct Condensed {
    n: usize,
    d: Vec<f64>,
}

impl Condensed {
    fn new(points: &[Vec<f64>], metric: MetricKind) -> Self {
        let n = points.len();
        let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                d.push(metric.distance(&points[i], &points[j]));
            }
        }
        Condensed { n, d }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        self.n * i - i * (i + 1) / 2 + (j - i - 1)
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.d[self.idx(i, j)]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.d[k] = v;
    }
}

/// Builds the dendrogram of `points`. Ties between candidate merges go to the
/// lower-index pair.
pub fn agglomerate(points: &[Vec<f64>], metric: MetricKind, linkage: Linkage) -> crate::Result<Dendrogram> {
    let n = points.len();
    if n < 2 {
        return Err(LsrError::EmptyDataset("agglomerate needs at least two points"));
    }
    let mut dist = Condensed::new(points, metric);
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    // Raw merges between slots; the merged cluster lives on in slot `y`.
    let mut raw: Vec<(usize, usize, f64)> = Vec::with_capacity(n - 1);
    let mut chain: Vec<usize> = Vec::with_capacity(n);

    for _ in 0..n - 1 {
        if chain.is_empty() {
            chain.push(active.iter().position(|&a| a).expect("an active slot remains"));
        }
        let (x, y, h) = loop {
            let x = *chain.last().expect("chain non-empty");
            // Prefer the previous chain element on ties so the chain terminates.
            let prev = chain.len().checked_sub(2).map(|i| chain[i]);
            let (mut y, mut best) = prev.map_or((usize::MAX, f64::INFINITY), |p| (p, dist.get(x, p)));
            for k in 0..n {
                if k == x || !active[k] || Some(k) == prev {
                    continue;
                }
                let d = dist.get(x, k);
                if d < best {
                    best = d;
                    y = k;
                }
            }
            if Some(y) == prev {
                chain.pop();
                chain.pop();
                break (x, y, best);
            }
            chain.push(y);
        };
        let (x, y) = (x.min(y), x.max(y));
        let (nx, ny) = (size[x], size[y]);
        for k in 0..n {
            if active[k] && k != x && k != y {
                let v = linkage.update(dist.get(k, x), dist.get(k, y), nx, ny);
                dist.set(k, y, v);
            }
        }
        active[x] = false;
        size[y] = nx + ny;
        raw.push((x, y, h));
    }

    // Order merges by height; stable so equal heights keep discovery order.
    raw.sort_by(|p, q| p.2.total_cmp(&q.2));
    let mut uf = UnionFind::<usize>::new(n);
    let mut cluster_of_root: Vec<usize> = (0..n).collect();
    let mut sizes = vec![1usize; n];
    let mut merges = Vec::with_capacity(n - 1);
    let mut leaf_pairs = Vec::with_capacity(n - 1);
    for (k, &(x, y, h)) in raw.iter().enumerate() {
        let (rx, ry) = (uf.find_mut(x), uf.find_mut(y));
        let (ca, cb) = (cluster_of_root[rx], cluster_of_root[ry]);
        let sz = sizes[rx] + sizes[ry];
        uf.union(rx, ry);
        let r = uf.find_mut(x);
        cluster_of_root[r] = n + k;
        sizes[r] = sz;
        merges.push(Merge {
            a: ca.min(cb),
            b: ca.max(cb),
            height: h,
            size: sz,
        });
        leaf_pairs.push((x, y));
    }
    Ok(Dendrogram { n, merges, leaf_pairs })
}

impl Dendrogram {
    pub fn n_leaves(&self) -> usize {
        self.n
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    pub fn max_height(&self) -> f64 {
        self.merges.iter().map(|m| m.height).fold(0.0, f64::max)
    }

    /// Flat clusters from all merges strictly below `tau`.
    pub fn cut(&self, tau: f64) -> Partition {
        self.cut_where(|h| h < tau)
    }

    /// Flat clusters from all merges at or below `radius`.
    pub fn cut_inclusive(&self, radius: f64) -> Partition {
        self.cut_where(|h| h <= radius)
    }

    fn cut_where(&self, keep: impl Fn(f64) -> bool) -> Partition {
        let mut uf = UnionFind::<usize>::new(self.n);
        for (m, &(x, y)) in self.merges.iter().zip(&self.leaf_pairs) {
            if keep(m.height) {
                uf.union(x, y);
            }
        }
        Partition::from_keys(&uf.into_labeling())
    }
}

/// Mean and population standard deviation of the pairwise distances inside a
/// cluster, and the resulting neighbourhood radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpread {
    pub mu: f64,
    pub sigma: f64,
    pub epsilon: f64,
}

/// Spread over all unordered member pairs; `None` for a singleton.
pub fn epsilon_of_cluster(points: &[Vec<f64>], members: &[usize], metric: MetricKind) -> Option<ClusterSpread> {
    if members.len() < 2 {
        return None;
    }
    let (mut sum, mut sum_sq, mut count) = (0.0, 0.0, 0usize);
    for (a, &i) in members.iter().enumerate() {
        for &j in &members[a + 1..] {
            let d = metric.distance(&points[i], &points[j]);
            sum += d;
            sum_sq += d * d;
            count += 1;
        }
    }
    let mu = sum / count as f64;
    let sigma = (sum_sq / count as f64 - mu * mu).max(0.0).sqrt();
    Some(ClusterSpread {
        mu,
        sigma,
        epsilon: mu + sigma,
    })
}
