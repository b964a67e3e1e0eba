//! Oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use lsr_core::mapping::{EncoderMode, EncoderModel, LatentTuple};
use lsr_core::roadmap::{ground_truth_roadmap, Dendrogram, Linkage, Roadmap};
use lsr_core::task::{Action, Cell, Observation, TaskKind};
use lsr_core::MetricKind;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub type Step = (BTreeSet<usize>, BTreeSet<usize>, f64);

/// Textbook agglomeration: linkage recomputed from the raw point distances at
/// every step, lowest-index pair first on ties.
pub fn naive(points: &[Vec<f64>], metric: MetricKind, linkage: Linkage) -> Vec<Step> {
    let mut clusters: Vec<Option<Vec<usize>>> = (0..points.len()).map(|i| Some(vec![i])).collect();
    let mut steps = Vec::new();
    while clusters.iter().flatten().count() > 1 {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let (Some(ca), Some(cb)) = (&clusters[a], &clusters[b]) else { continue };
                let ds: Vec<f64> = ca
                    .iter()
                    .flat_map(|&i| cb.iter().map(move |&j| (i, j)))
                    .map(|(i, j)| metric.distance(&points[i], &points[j]))
                    .collect();
                let h = match linkage {
                    Linkage::Average => ds.iter().sum::<f64>() / ds.len() as f64,
                    Linkage::Single => ds.iter().cloned().fold(f64::INFINITY, f64::min),
                    Linkage::Complete => ds.iter().cloned().fold(0.0, f64::max),
                };
                if best.is_none_or(|(bh, _, _)| h < bh) {
                    best = Some((h, a, b));
                }
            }
        }
        let (h, a, b) = best.unwrap();
        let ca = clusters[a].take().unwrap();
        let cb = clusters[b].take().unwrap();
        steps.push((ca.iter().copied().collect(), cb.iter().copied().collect(), h));
        clusters.push(Some(ca.into_iter().chain(cb).collect()));
    }
    steps
}

pub fn steps_of(d: &Dendrogram) -> Vec<Step> {
    let n = d.n_leaves();
    let mut leaves: Vec<BTreeSet<usize>> = (0..n).map(|i| BTreeSet::from([i])).collect();
    let mut out = Vec::new();
    for m in d.merges() {
        let (a, b) = (leaves[m.a].clone(), leaves[m.b].clone());
        leaves.push(a.union(&b).copied().collect());
        out.push((a, b, m.height));
    }
    out
}

pub fn same_steps(got: &[Step], want: &[Step]) -> bool {
    got.len() == want.len()
        && got.iter().zip(want).all(|(g, w)| {
            let pair_eq = (g.0 == w.0 && g.1 == w.1) || (g.0 == w.1 && g.1 == w.0);
            pair_eq && (g.2 - w.2).abs() <= 1e-9
        })
}

pub fn random_points(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect()).collect()
}

/// Roadmap with one region per node (at 2-D point `coords[k]`) and the given edges.
pub fn graph(coords: &[(f64, f64)], edges: &[(usize, usize)]) -> Roadmap {
    let p = |k: usize| vec![coords[k].0, coords[k].1];
    let act = Action::PickPlace {
        pick: Cell { row: 0, col: 0 },
        release: Cell { row: 0, col: 1 },
    };
    let mut tuples: Vec<LatentTuple> = (0..coords.len())
        .map(|k| LatentTuple {
            z1: p(k),
            z2: p(k),
            action: None,
            s1: Some(k),
            s2: Some(k),
        })
        .collect();
    tuples.extend(edges.iter().map(|&(i, j)| LatentTuple {
        z1: p(i),
        z2: p(j),
        action: Some(act),
        s1: Some(i),
        s2: Some(j),
    }));
    ground_truth_roadmap(&tuples, MetricKind::L1).unwrap()
}

/// Every simple path from `i` to `j`, by exhaustive depth-first search.
pub fn dfs_paths(map: &Roadmap, i: usize, j: usize) -> Vec<Vec<usize>> {
    fn go(map: &Roadmap, path: &mut Vec<usize>, j: usize, out: &mut Vec<Vec<usize>>) {
        let u = *path.last().unwrap();
        if u == j {
            out.push(path.clone());
            return;
        }
        for &v in map.successors(u) {
            if !path.contains(&v) {
                path.push(v);
                go(map, path, j, out);
                path.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(map, &mut vec![i], j, &mut out);
    out
}

/// Deterministic model whose encoder and decoder are both the identity up
/// to tanh curvature: x → tanh(s·x)/s with s small.
pub fn identity_model(task: TaskKind) -> EncoderModel {
    let d = task.obs_dim();
    let mut m = EncoderModel::new(EncoderMode::Deterministic, d, d, d, 0);
    m.task = Some(task);
    let s = 1e-3;
    for (layer, gain) in [(m.net.enc1, s), (m.net.enc2, 1.0 / s), (m.net.dec1, s), (m.net.dec2, 1.0 / s)] {
        let p = &mut m.params[layer.offset..layer.offset + layer.n_params()];
        p.fill(0.0);
        for i in 0..d {
            p[i * d + i] = gain;
        }
    }
    m
}

/// Ground-truth roadmap over every state and transition of `task`, with
/// noise-free templates as latent points, plus the matching identity model
/// and one template observation per state as holdout.
pub fn oracle_fixture(task: TaskKind) -> (Roadmap, EncoderModel, Vec<Observation>) {
    let space = task.space();
    let mut tuples = Vec::new();
    for s in 0..space.len() {
        let z = space.template(s).to_vec();
        tuples.push(LatentTuple {
            z1: z.clone(),
            z2: z.clone(),
            action: None,
            s1: Some(s),
            s2: Some(s),
        });
        for &(a, t) in space.transitions(s) {
            tuples.push(LatentTuple {
                z1: z.clone(),
                z2: space.template(t).to_vec(),
                action: Some(space.actions()[a]),
                s1: Some(s),
                s2: Some(t),
            });
        }
    }
    let map = ground_truth_roadmap(&tuples, MetricKind::L1).unwrap();
    let holdout = (0..space.len())
        .map(|s| Observation {
            features: space.template(s).to_vec(),
            state: Some(s),
        })
        .collect();
    (map, identity_model(task), holdout)
}
