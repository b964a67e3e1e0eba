//! Planning scores, coverage, relative contrast and separation statistics.

mod pipeline;

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use pipeline::{
    run_ablation, run_experiment, streams, AblationRow, AblationSpec, ExperimentConfig, ModelVariant, RunArtifacts, SeedOutcome,
};

use crate::error::{LsrError, Result};
use crate::mapping::{EncoderModel, LatentTuple};
use crate::metric::MetricKind;
use crate::planner::{plan_latent, PlannerConfig};
use crate::rng::stream_rng;
use crate::roadmap::Roadmap;
use crate::task::{decode_state_id, Observation, TaskKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    /// Queries whose every shortest path is correct, in percent.
    pub pct_all: f64,
    /// Queries with at least one correct shortest path.
    pub pct_any: f64,
    /// Valid single transitions over all proposed paths.
    pub pct_trans: f64,
    pub n_queries: usize,
    pub unreachable: usize,
    /// Queries whose path list hit the cap.
    pub truncated: usize,
}

#[derive(Debug, Default, Clone, Copy)]
struct QueryTally {
    all: usize,
    any: usize,
    good_t: usize,
    total_t: usize,
    unreachable: usize,
    truncated: usize,
}

/// Decoded state of every region's representative.
pub fn region_states(task: TaskKind, roadmap: &Roadmap, model: &EncoderModel) -> Result<Vec<usize>> {
    (0..roadmap.n_regions())
        .map(|i| {
            let x = model.decode(roadmap.representative(i))?;
            decode_state_id(task, &x.features)
        })
        .collect()
}

/// Plans between `n_queries` random (start, goal) pairs drawn from `holdout`
/// and checks every decoded plan against the task rules. A path is correct
/// when each transition is valid and it ends in the goal's state; an
/// unreachable query counts as one wrong path with one wrong transition.
pub fn score_planning(
    task: TaskKind,
    roadmap: &Roadmap,
    model: &EncoderModel,
    holdout: &[Observation],
    n_queries: usize,
    seed: u64,
    cfg: &PlannerConfig,
) -> Result<ScoreReport> {
    if holdout.is_empty() || n_queries == 0 {
        return Err(LsrError::EmptyDataset("no planning queries"));
    }
    let states = region_states(task, roadmap, model)?;
    let codes: Vec<Vec<f64>> = holdout.iter().map(|o| model.encode_mean(&o.features)).collect::<Result<_>>()?;
    let space = task.space();
    let mut rng = stream_rng(seed, 0x5c0e);
    let pairs: Vec<(usize, usize)> = (0..n_queries)
        .map(|_| (rng.random_range(0..holdout.len()), rng.random_range(0..holdout.len())))
        .collect();
    // Queries are independent; counts are summed, so the order of evaluation
    // does not affect the report.
    let tallies: Vec<QueryTally> = pairs
        .par_iter()
        .map(|&(s, g)| {
            let goal_state = holdout[g]
                .state
                .ok_or(LsrError::InvalidArgument("holdout observations need state labels".into()))?;
            let query = match plan_latent(roadmap, &codes[s], &codes[g], cfg) {
                Ok(q) => q,
                Err(LsrError::Unreachable { .. }) => {
                    return Ok(QueryTally {
                        unreachable: 1,
                        total_t: 1,
                        ..QueryTally::default()
                    })
                }
                Err(e) => return Err(e),
            };
            let mut t = QueryTally {
                truncated: query.truncated as usize,
                ..QueryTally::default()
            };
            let mut n_ok = 0;
            for path in &query.paths {
                let mut ok = states[*path.last().expect("paths are non-empty")] == goal_state;
                for w in path.windows(2) {
                    let valid = space.is_valid_transition_ids(states[w[0]], states[w[1]]);
                    t.good_t += valid as usize;
                    t.total_t += 1;
                    ok &= valid;
                }
                n_ok += ok as usize;
            }
            t.all = (n_ok == query.paths.len()) as usize;
            t.any = (n_ok > 0) as usize;
            Ok(t)
        })
        .collect::<Result<_>>()?;
    let sum = |f: fn(&QueryTally) -> usize| tallies.iter().map(f).sum::<usize>();
    let (all, any, good_t, total_t) = (sum(|t| t.all), sum(|t| t.any), sum(|t| t.good_t), sum(|t| t.total_t));
    let (unreachable, truncated) = (sum(|t| t.unreachable), sum(|t| t.truncated));
    let pct = |k: usize, n: usize| if n == 0 { 100.0 } else { 100.0 * k as f64 / n as f64 };
    Ok(ScoreReport {
        pct_all: pct(all, n_queries),
        pct_any: pct(any, n_queries),
        pct_trans: pct(good_t, total_t),
        n_queries,
        unreachable,
        truncated,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub in_distribution: f64,
    /// (source name, covered percentage).
    pub ood: Vec<(String, f64)>,
}

pub fn covered_fraction(roadmap: &Roadmap, model: &EncoderModel, obs: &[Observation]) -> Result<f64> {
    if obs.is_empty() {
        return Ok(0.0);
    }
    let mut covered = 0;
    for o in obs {
        let z = model.encode_mean(&o.features)?;
        covered += roadmap.is_covered(&z)?.is_some() as usize;
    }
    Ok(100.0 * covered as f64 / obs.len() as f64)
}

pub fn score_coverage(
    roadmap: &Roadmap,
    model: &EncoderModel,
    in_dist: &[Observation],
    ood_sources: &[(String, Vec<Observation>)],
) -> Result<CoverageReport> {
    Ok(CoverageReport {
        in_distribution: covered_fraction(roadmap, model, in_dist)?,
        ood: ood_sources
            .iter()
            .map(|(name, obs)| Ok((name.clone(), covered_fraction(roadmap, model, obs)?)))
            .collect::<Result<_>>()?,
    })
}

/// Observations of `source` zero-padded or truncated to `dim` features.
pub fn cross_task_observations(source: TaskKind, dim: usize, n: usize, seed: u64) -> Vec<Observation> {
    crate::task::render_holdout(source, n, seed)
        .into_iter()
        .map(|o| {
            let mut f = o.features;
            f.resize(dim, 0.0);
            Observation::unlabeled(f)
        })
        .collect()
}

/// Feature vectors uniform in [0, 1).
pub fn uniform_noise_observations(dim: usize, n: usize, seed: u64) -> Vec<Observation> {
    let mut rng = stream_rng(seed, 0x0dd);
    (0..n)
        .map(|_| Observation::unlabeled((0..dim).map(|_| rng.random::<f64>()).collect()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastReport {
    pub rc: f64,
    pub d_min: f64,
    pub d_max: f64,
    /// Every point coincides with its nearest neighbour's distance profile
    /// (mean nearest distance 0); `rc` is reported as 0.
    pub degenerate: bool,
}

/// Relative contrast measured separately on the first and on the second
/// states of the tuples: each point serves as origin against the rest of its
/// half, and the mean nearest/furthest distances give (D_max − D_min)/D_min.
pub fn relative_contrast(tuples: &[LatentTuple], metric: MetricKind) -> Result<ContrastReport> {
    if tuples.len() < 2 {
        return Err(LsrError::EmptyDataset("relative contrast needs at least two tuples"));
    }
    let halves: [Vec<&[f64]>; 2] = [
        tuples.iter().map(|t| t.z1.as_slice()).collect(),
        tuples.iter().map(|t| t.z2.as_slice()).collect(),
    ];
    let (mut sum_min, mut sum_max, mut count) = (0.0, 0.0, 0usize);
    for half in &halves {
        let n = half.len();
        let mut lo = vec![f64::INFINITY; n];
        let mut hi = vec![0.0f64; n];
        for i in 0..n {
            for j in i + 1..n {
                let d = metric.distance(half[i], half[j]);
                lo[i] = lo[i].min(d);
                lo[j] = lo[j].min(d);
                hi[i] = hi[i].max(d);
                hi[j] = hi[j].max(d);
            }
        }
        sum_min += lo.iter().sum::<f64>();
        sum_max += hi.iter().sum::<f64>();
        count += n;
    }
    let d_min = sum_min / count as f64;
    let d_max = sum_max / count as f64;
    let degenerate = d_min == 0.0;
    Ok(ContrastReport {
        rc: if degenerate { 0.0 } else { (d_max - d_min) / d_min },
        d_min,
        d_max,
        degenerate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSeparation {
    pub state: usize,
    pub samples: usize,
    pub max_intra: f64,
    pub min_inter: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub states: Vec<StateSeparation>,
    pub non_negative: usize,
    /// States seen only once (no intra-state distances).
    pub single_sample: Vec<usize>,
}

/// Per-state margin between the nearest other centroid and the furthest own
/// sample, from the ground-truth labels of the encodings.
pub fn separation_stats(tuples: &[LatentTuple], metric: MetricKind) -> Result<SeparationReport> {
    let mut groups: BTreeMap<usize, Vec<&[f64]>> = BTreeMap::new();
    for t in tuples {
        for (z, s) in [(&t.z1, t.s1), (&t.z2, t.s2)] {
            let s = s.ok_or(LsrError::InvalidArgument("separation needs state labels".into()))?;
            groups.entry(s).or_default().push(z);
        }
    }
    if groups.is_empty() {
        return Err(LsrError::EmptyDataset("no labelled encodings"));
    }
    let centroids: Vec<(usize, Vec<f64>)> = groups
        .iter()
        .map(|(&s, zs)| {
            let mut c = vec![0.0; zs[0].len()];
            for z in zs {
                c.iter_mut().zip(z.iter()).for_each(|(a, b)| *a += b);
            }
            c.iter_mut().for_each(|a| *a /= zs.len() as f64);
            (s, c)
        })
        .collect();
    let mut states = Vec::with_capacity(centroids.len());
    let mut single_sample = Vec::new();
    for (k, (s, c)) in centroids.iter().enumerate() {
        let zs = &groups[s];
        if zs.len() == 1 {
            single_sample.push(*s);
        }
        let max_intra = zs.iter().map(|z| metric.distance(z, c)).fold(0.0, f64::max);
        let min_inter = centroids
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != k)
            .map(|(_, (_, o))| metric.distance(c, o))
            .fold(f64::INFINITY, f64::min);
        states.push(StateSeparation {
            state: *s,
            samples: zs.len(),
            max_intra,
            min_inter,
            margin: min_inter - max_intra,
        });
    }
    let non_negative = states.iter().filter(|s| s.margin >= 0.0).count();
    Ok(SeparationReport {
        states,
        non_negative,
        single_sample,
    })
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}
