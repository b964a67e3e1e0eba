//! Latent space roadmap: covered regions of the latent space joined by
//! directed, action-annotated edges.

mod cluster;
mod optimize;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use petgraph::unionfind::UnionFind;
use serde::{Deserialize, Serialize};

pub use cluster::{agglomerate, epsilon_of_cluster, ClusterSpread, Dendrogram, Linkage, Merge, Partition};
pub use optimize::{brent_bounded, grid_optimize_tau, optimize_tau, BrentResult, TauSearch, PSI_SENTINEL};

use crate::error::{LsrError, Result};
use crate::mapping::LatentTuple;
use crate::metric::MetricKind;
use crate::task::Action;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Clustering {
    Linkage(Linkage),
    /// Points closer than the radius share a cluster, transitively.
    Epsilon(f64),
}

impl Clustering {
    pub const AVERAGE: Clustering = Clustering::Linkage(Linkage::Average);

    pub fn name(&self) -> String {
        match self {
            Clustering::Linkage(l) => l.name().to_string(),
            Clustering::Epsilon(r) => format!("epsilon:{r}"),
        }
    }
}

impl fmt::Display for Clustering {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl From<Clustering> for String {
    fn from(c: Clustering) -> String {
        c.name()
    }
}

impl TryFrom<String> for Clustering {
    type Error = LsrError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for Clustering {
    type Err = LsrError;

    /// `avg`, `single`, `complete`, `epsilon` or `epsilon:<radius>`.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        if let Some(rest) = lower.strip_prefix("epsilon") {
            let radius = match rest.strip_prefix(':') {
                Some(r) => r
                    .parse()
                    .map_err(|_| LsrError::InvalidArgument(format!("bad epsilon radius in '{s}'")))?,
                None if rest.is_empty() => 0.0,
                None => return Err(LsrError::InvalidArgument(format!("unknown clustering '{s}'"))),
            };
            return Ok(Clustering::Epsilon(radius));
        }
        Ok(Clustering::Linkage(lower.parse()?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceEdge {
    pub from: usize,
    pub to: usize,
    pub action: Action,
}

/// Every training encoding as a vertex (tuple `t` gives vertices `2t`, `2t+1`)
/// and every action tuple as an edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceGraph {
    pub vertices: Vec<Vec<f64>>,
    /// Ground-truth state of each vertex, when known.
    pub states: Vec<Option<usize>>,
    pub edges: Vec<ReferenceEdge>,
}

pub fn build_reference_graph(tuples: &[LatentTuple]) -> Result<ReferenceGraph> {
    if tuples.is_empty() {
        return Err(LsrError::EmptyDataset("no latent tuples"));
    }
    let ld = tuples[0].z1.len();
    let mut g = ReferenceGraph {
        vertices: Vec::with_capacity(2 * tuples.len()),
        states: Vec::with_capacity(2 * tuples.len()),
        edges: Vec::new(),
    };
    for t in tuples {
        for z in [&t.z1, &t.z2] {
            if z.len() != ld {
                return Err(LsrError::DimensionMismatch {
                    expected: ld,
                    got: z.len(),
                });
            }
        }
        let i = g.vertices.len();
        g.vertices.push(t.z1.clone());
        g.vertices.push(t.z2.clone());
        g.states.push(t.s1);
        g.states.push(t.s2);
        if let Some(action) = t.action {
            g.edges.push(ReferenceEdge {
                from: i,
                to: i + 1,
                action,
            });
        }
    }
    Ok(g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoveredRegion {
    /// Vertex indices of the reference graph.
    pub members: Vec<usize>,
    pub mu: f64,
    pub sigma: f64,
    pub epsilon: f64,
    /// Vertex index of the member nearest the cluster mean.
    pub representative: usize,
    pub mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadmapEdge {
    pub from: usize,
    pub to: usize,
    /// Actions of every reference edge crossing from `from` to `to`.
    pub actions: Vec<Action>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Roadmap {
    pub points: Vec<Vec<f64>>,
    pub point_states: Vec<Option<usize>>,
    pub regions: Vec<CoveredRegion>,
    /// Sorted by (from, to).
    pub edges: Vec<RoadmapEdge>,
    pub metric: MetricKind,
    pub tau: f64,
    pub clustering: Clustering,
    pub components: usize,
    #[serde(skip)]
    adjacency: Vec<Vec<usize>>,
    #[serde(skip)]
    reverse: Vec<Vec<usize>>,
}

/// Directed region-level edges of `partition`, with their action multisets.
fn crossing_edges(graph: &ReferenceGraph, labels: &[usize]) -> BTreeMap<(usize, usize), Vec<Action>> {
    let mut edges: BTreeMap<(usize, usize), Vec<Action>> = BTreeMap::new();
    for e in &graph.edges {
        let (i, j) = (labels[e.from], labels[e.to]);
        if i != j {
            edges.entry((i, j)).or_default().push(e.action);
        }
    }
    edges
}

/// Weakly connected components over `n` nodes.
pub fn count_components(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> usize {
    let mut uf = UnionFind::<usize>::new(n);
    let mut count = n;
    for (i, j) in edges {
        if uf.union(i, j) {
            count -= 1;
        }
    }
    count
}

impl Roadmap {
    /// Roadmap over an explicit partition of the reference graph vertices.
    pub fn assemble(
        graph: &ReferenceGraph,
        partition: &Partition,
        metric: MetricKind,
        tau: f64,
        clustering: Clustering,
    ) -> Result<Roadmap> {
        if partition.labels.len() != graph.vertices.len() {
            return Err(LsrError::DimensionMismatch {
                expected: graph.vertices.len(),
                got: partition.labels.len(),
            });
        }
        let points = &graph.vertices;
        let ld = points.first().map_or(0, Vec::len);
        let mut regions = Vec::with_capacity(partition.n_clusters);
        for members in partition.members() {
            let mut mean = vec![0.0; ld];
            for &m in &members {
                for (w, x) in mean.iter_mut().zip(&points[m]) {
                    *w += x;
                }
            }
            mean.iter_mut().for_each(|w| *w /= members.len() as f64);
            let representative = members
                .iter()
                .map(|&m| (metric.distance(&points[m], &mean), m))
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .map(|(_, m)| m)
                .expect("clusters are non-empty");
            let spread = epsilon_of_cluster(points, &members, metric);
            regions.push(CoveredRegion {
                members,
                mu: spread.map_or(0.0, |s| s.mu),
                sigma: spread.map_or(0.0, |s| s.sigma),
                epsilon: spread.map_or(f64::NAN, |s| s.epsilon),
                representative,
                mean,
            });
        }
        // Singletons borrow the mean radius of the non-singleton regions.
        let spreads: Vec<f64> = regions.iter().filter(|r| r.members.len() > 1).map(|r| r.epsilon).collect();
        let fill = if spreads.is_empty() {
            0.0
        } else {
            spreads.iter().sum::<f64>() / spreads.len() as f64
        };
        for r in regions.iter_mut().filter(|r| r.members.len() == 1) {
            r.epsilon = fill;
        }
        let edges: Vec<RoadmapEdge> = crossing_edges(graph, &partition.labels)
            .into_iter()
            .map(|((from, to), actions)| RoadmapEdge { from, to, actions })
            .collect();
        let components = count_components(regions.len(), edges.iter().map(|e| (e.from, e.to)));
        let mut map = Roadmap {
            points: graph.vertices.clone(),
            point_states: graph.states.clone(),
            regions,
            edges,
            metric,
            tau,
            clustering,
            components,
            adjacency: Vec::new(),
            reverse: Vec::new(),
        };
        map.rebuild_index();
        Ok(map)
    }

    /// Reassembles a roadmap from stored parts, checking index consistency.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        points: Vec<Vec<f64>>,
        point_states: Vec<Option<usize>>,
        regions: Vec<CoveredRegion>,
        edges: Vec<RoadmapEdge>,
        metric: MetricKind,
        tau: f64,
        clustering: Clustering,
    ) -> Result<Roadmap> {
        let bad = |d: String| Err(LsrError::InvalidArgument(d));
        if point_states.len() != points.len() {
            return bad(format!("{} points but {} state labels", points.len(), point_states.len()));
        }
        let ld = points.first().map_or(0, Vec::len);
        if let Some(p) = points.iter().find(|p| p.len() != ld) {
            return Err(LsrError::DimensionMismatch { expected: ld, got: p.len() });
        }
        let mut seen = vec![false; points.len()];
        for (i, r) in regions.iter().enumerate() {
            if r.members.is_empty() || r.mean.len() != ld {
                return bad(format!("region {i} is empty or has a mean of the wrong dimension"));
            }
            for &m in &r.members {
                if m >= points.len() || std::mem::replace(&mut seen[m], true) {
                    return bad(format!("region {i}: member {m} out of range or shared"));
                }
            }
            if !r.members.contains(&r.representative) {
                return bad(format!("region {i}: representative {} is not a member", r.representative));
            }
        }
        if seen.iter().any(|s| !s) {
            return bad("some points belong to no region".into());
        }
        for e in &edges {
            if e.from >= regions.len() || e.to >= regions.len() || e.from == e.to || e.actions.is_empty() {
                return bad(format!("invalid edge ({}, {})", e.from, e.to));
            }
        }
        let mut map = Roadmap {
            points,
            point_states,
            regions,
            edges,
            metric,
            tau,
            clustering,
            components: 0,
            adjacency: Vec::new(),
            reverse: Vec::new(),
        };
        map.rebuild_index();
        if map.edges.windows(2).any(|w| (w[0].from, w[0].to) == (w[1].from, w[1].to)) {
            return bad("duplicate edge".into());
        }
        Ok(map)
    }

    /// Recomputes the adjacency lists; call after editing `edges` directly.
    pub fn rebuild_index(&mut self) {
        self.edges.sort_by_key(|e| (e.from, e.to));
        let mut adj = vec![Vec::new(); self.regions.len()];
        let mut rev = vec![Vec::new(); self.regions.len()];
        for e in &self.edges {
            adj[e.from].push(e.to);
            rev[e.to].push(e.from);
        }
        rev.iter_mut().for_each(|r| r.sort_unstable());
        self.adjacency = adj;
        self.reverse = rev;
        self.components = count_components(self.regions.len(), self.edges.iter().map(|e| (e.from, e.to)));
    }

    pub fn n_regions(&self) -> usize {
        self.regions.len()
    }

    pub fn ld(&self) -> usize {
        self.points.first().map_or(0, Vec::len)
    }

    /// Successor regions of `i`, ascending.
    pub fn successors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    /// Predecessor regions of `i`, ascending.
    pub fn predecessors(&self, i: usize) -> &[usize] {
        &self.reverse[i]
    }

    pub fn edge(&self, from: usize, to: usize) -> Option<&RoadmapEdge> {
        self.edges
            .binary_search_by_key(&(from, to), |e| (e.from, e.to))
            .ok()
            .map(|k| &self.edges[k])
    }

    pub fn representative(&self, i: usize) -> &[f64] {
        &self.points[self.regions[i].representative]
    }

    /// Ground-truth state most common among the members of region `i`.
    pub fn majority_state(&self, i: usize) -> Option<usize> {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for &m in &self.regions[i].members {
            if let Some(s) = self.point_states[m] {
                *counts.entry(s).or_default() += 1;
            }
        }
        counts.into_iter().max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0))).map(|(s, _)| s)
    }

    /// Region whose ε-neighbourhood of some member contains `z`. Several
    /// candidates resolve by smallest distance-to-ε ratio, then lowest index.
    pub fn is_covered(&self, z: &[f64]) -> Result<Option<usize>> {
        if z.len() != self.ld() {
            return Err(LsrError::DimensionMismatch {
                expected: self.ld(),
                got: z.len(),
            });
        }
        let mut best: Option<(f64, usize)> = None;
        for (i, r) in self.regions.iter().enumerate() {
            let d = r
                .members
                .iter()
                .map(|&m| self.metric.distance(z, &self.points[m]))
                .fold(f64::INFINITY, f64::min);
            if d <= r.epsilon {
                let ratio = if r.epsilon > 0.0 { d / r.epsilon } else { 0.0 };
                if best.is_none_or(|(b, _)| ratio < b) {
                    best = Some((ratio, i));
                }
            }
        }
        Ok(best.map(|(_, i)| i))
    }
}

/// Edge count when the roadmap has at most `c_max` graph-connected
/// components, otherwise −∞.
pub fn psi(roadmap: &Roadmap, c_max: usize) -> f64 {
    psi_of(roadmap.edges.len(), roadmap.components, c_max)
}

fn psi_of(edges: usize, components: usize, c_max: usize) -> f64 {
    if components <= c_max {
        edges as f64
    } else {
        f64::NEG_INFINITY
    }
}

/// Reference graph and dendrogram computed once, cut at many thresholds.
#[derive(Debug, Clone)]
pub struct RoadmapBuilder {
    pub graph: ReferenceGraph,
    pub metric: MetricKind,
    pub clustering: Clustering,
    dendrogram: Dendrogram,
}

impl RoadmapBuilder {
    pub fn new(tuples: &[LatentTuple], metric: MetricKind, clustering: Clustering) -> Result<Self> {
        let graph = build_reference_graph(tuples)?;
        Self::from_graph(graph, metric, clustering)
    }

    pub fn from_graph(graph: ReferenceGraph, metric: MetricKind, clustering: Clustering) -> Result<Self> {
        let linkage = match clustering {
            Clustering::Linkage(l) => l,
            Clustering::Epsilon(_) => Linkage::Single,
        };
        let dendrogram = agglomerate(&graph.vertices, metric, linkage)?;
        Ok(RoadmapBuilder {
            graph,
            metric,
            clustering,
            dendrogram,
        })
    }

    pub fn dendrogram(&self) -> &Dendrogram {
        &self.dendrogram
    }

    /// Flat clusters at threshold `t`: the cut height for linkage methods, the
    /// neighbourhood radius for epsilon clustering.
    pub fn partition(&self, t: f64) -> Partition {
        match self.clustering {
            Clustering::Linkage(_) => self.dendrogram.cut(t),
            Clustering::Epsilon(_) => self.dendrogram.cut_inclusive(t),
        }
    }

    /// ψ at threshold `t` without assembling the regions.
    pub fn psi(&self, t: f64, c_max: usize) -> f64 {
        let p = self.partition(t);
        let edges = crossing_edges(&self.graph, &p.labels);
        let components = count_components(p.n_clusters, edges.keys().copied());
        psi_of(edges.len(), components, c_max)
    }

    pub fn build(&self, t: f64) -> Result<Roadmap> {
        let clustering = match self.clustering {
            Clustering::Epsilon(_) => Clustering::Epsilon(t),
            c => c,
        };
        Roadmap::assemble(&self.graph, &self.partition(t), self.metric, t, clustering)
    }
}

/// Builds the roadmap at a fixed threshold. Epsilon clustering uses its own
/// radius and ignores `tau`.
pub fn build_lsr(tuples: &[LatentTuple], metric: MetricKind, tau: f64, clustering: Clustering) -> Result<Roadmap> {
    let builder = RoadmapBuilder::new(tuples, metric, clustering)?;
    match clustering {
        Clustering::Epsilon(r) => builder.build(r),
        Clustering::Linkage(_) => builder.build(tau),
    }
}

/// Roadmap whose regions are the ground-truth states of the encodings: the
/// best any clustering can do on this data.
pub fn ground_truth_roadmap(tuples: &[LatentTuple], metric: MetricKind) -> Result<Roadmap> {
    let graph = build_reference_graph(tuples)?;
    let keys = graph
        .states
        .iter()
        .map(|s| s.ok_or(LsrError::InvalidArgument("ground-truth roadmap needs state labels".into())))
        .collect::<Result<Vec<_>>>()?;
    Roadmap::assemble(&graph, &Partition::from_keys(&keys), metric, f64::NAN, Clustering::AVERAGE)
}

/// `n` regions on a line at x = 10·k with the given directed edges.
#[cfg(test)]
pub(crate) fn oracle_fixture(edges: &[(usize, usize)], n: usize) -> Roadmap {
    use crate::task::Cell;
    let point = |k: usize| vec![10.0 * k as f64];
    let mut tuples: Vec<LatentTuple> = (0..n)
        .map(|k| LatentTuple {
            z1: point(k),
            z2: point(k),
            action: None,
            s1: Some(k),
            s2: Some(k),
        })
        .collect();
    for &(i, j) in edges {
        tuples.push(LatentTuple {
            z1: point(i),
            z2: point(j),
            action: Some(Action::PickPlace {
                pick: Cell { row: 0, col: i as u8 % 3 },
                release: Cell { row: 0, col: j as u8 % 3 },
            }),
            s1: Some(i),
            s2: Some(j),
        });
    }
    ground_truth_roadmap(&tuples, MetricKind::L1).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::Cell;

    fn act(r: u8) -> Action {
        Action::PickPlace {
            pick: Cell { row: 0, col: 0 },
            release: Cell { row: r, col: 1 },
        }
    }

    fn tuple(z1: &[f64], z2: &[f64], action: Option<Action>) -> LatentTuple {
        LatentTuple {
            z1: z1.to_vec(),
            z2: z2.to_vec(),
            action,
            s1: None,
            s2: None,
        }
    }

    #[test]
    fn reference_graph_counts() {
        let t = vec![
            tuple(&[0.0], &[1.0], Some(act(0))),
            tuple(&[2.0], &[3.0], Some(act(1))),
            tuple(&[4.0], &[5.0], Some(act(2))),
            tuple(&[6.0], &[6.1], None),
            tuple(&[7.0], &[7.1], None),
        ];
        let g = build_reference_graph(&t).unwrap();
        assert_eq!(g.vertices.len(), 10);
        assert_eq!(g.edges.len(), 3);
        assert_eq!(g.edges[1], ReferenceEdge { from: 2, to: 3, action: act(1) });
        let none = build_reference_graph(&t[3..]).unwrap();
        assert!(none.edges.is_empty());
        assert!(build_reference_graph(&[]).is_err());
    }

    fn blobs() -> Vec<LatentTuple> {
        vec![
            tuple(&[0.0, 0.0], &[0.1, 0.0], None),
            tuple(&[0.0, 0.1], &[10.0, 10.0], Some(act(1))),
            tuple(&[10.1, 10.0], &[10.0, 10.1], None),
        ]
    }

    #[test]
    fn two_blobs_one_edge() {
        let map = build_lsr(&blobs(), MetricKind::L1, 1.0, Clustering::AVERAGE).unwrap();
        assert_eq!(map.n_regions(), 2);
        assert_eq!(map.edges.len(), 1);
        assert_eq!(map.components, 1);
        assert_eq!(map.edges[0].actions, vec![act(1)]);
        assert_eq!(psi(&map, 1), 1.0);
        for r in &map.regions {
            assert!(r.members.contains(&r.representative));
        }
    }

    #[test]
    fn tau_zero_gives_point_regions() {
        let map = build_lsr(&blobs(), MetricKind::L1, 0.0, Clustering::AVERAGE).unwrap();
        assert_eq!(map.n_regions(), 6);
        assert_eq!(map.edges.len(), 1);
        assert_eq!((map.edges[0].from, map.edges[0].to), (2, 3));
        assert_eq!(psi(&map, 1), f64::NEG_INFINITY);
        assert_eq!(psi(&map, usize::MAX), 1.0);
        // Singletons with no non-singleton cluster get ε = 0.
        assert!(map.regions.iter().all(|r| r.epsilon == 0.0));
    }

    #[test]
    fn singleton_epsilon_is_mean_of_others() {
        let t = vec![
            tuple(&[0.0], &[1.0], None),
            tuple(&[10.0], &[13.0], None),
            tuple(&[50.0], &[60.0], None),
        ];
        // Clusters {0,1}, {10,13}, {50}, {60}.
        let map = build_lsr(&t, MetricKind::L1, 5.0, Clustering::AVERAGE).unwrap();
        assert_eq!(map.n_regions(), 4);
        let eps: Vec<f64> = map.regions.iter().map(|r| r.epsilon).collect();
        assert_eq!(eps, vec![1.0, 3.0, 2.0, 2.0]);
    }

    #[test]
    fn coverage_queries() {
        let map = build_lsr(&blobs(), MetricKind::L1, 1.0, Clustering::AVERAGE).unwrap();
        for (k, p) in map.points.iter().enumerate() {
            let region = map.is_covered(p).unwrap().unwrap();
            assert!(map.regions[region].members.contains(&k));
        }
        assert_eq!(map.is_covered(&[5.0, 5.0]).unwrap(), None);
        assert!(map.is_covered(&[5.0]).is_err());
    }

    #[test]
    fn epsilon_clustering_uses_radius() {
        let map = build_lsr(&blobs(), MetricKind::L1, 100.0, Clustering::Epsilon(0.1)).unwrap();
        assert_eq!(map.clustering, Clustering::Epsilon(0.1));
        assert_eq!(map.n_regions(), 2);
    }

    #[test]
    fn builder_psi_matches_assembled() {
        let b = RoadmapBuilder::new(&blobs(), MetricKind::L1, Clustering::AVERAGE).unwrap();
        for t in [0.0, 0.05, 0.15, 1.0, 30.0] {
            let map = b.build(t).unwrap();
            assert_eq!(b.psi(t, 1), psi(&map, 1), "tau {t}");
        }
    }

    #[test]
    fn clustering_names_round_trip() {
        for c in [
            Clustering::AVERAGE,
            Clustering::Linkage(Linkage::Single),
            Clustering::Linkage(Linkage::Complete),
            Clustering::Epsilon(0.25),
        ] {
            assert_eq!(c.name().parse::<Clustering>().unwrap(), c);
        }
        assert!("ward".parse::<Clustering>().is_err());
    }
}
