//! Shortest-path planning over a roadmap.

use serde::{Deserialize, Serialize};

use crate::error::{LsrError, Result};
use crate::mapping::EncoderModel;
use crate::roadmap::Roadmap;
use crate::task::{Action, Observation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    /// Largest total rank (start + goal) of substitute nodes to try.
    pub max_fallback: usize,
    /// Shortest paths kept per query, in lexicographic order.
    pub path_cap: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            max_fallback: 5,
            path_cap: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    /// Region ids along the path.
    pub nodes: Vec<usize>,
    /// Representatives of `nodes`.
    pub latent_plan: Vec<Vec<f64>>,
    /// Decoded representatives.
    pub decoded_plan: Vec<Observation>,
    /// One action per transition once filled in.
    pub action_plan: Vec<Action>,
    pub fallback_depth: usize,
    /// Whether the query had more shortest paths than the cap.
    pub truncated: bool,
}

/// Shortest paths between two latent points before decoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathQuery {
    pub start: usize,
    pub goal: usize,
    pub paths: Vec<Vec<usize>>,
    pub fallback_depth: usize,
    pub truncated: bool,
}

/// Regions ordered by distance from `z` to their representative, ties by index.
pub fn rank_regions(roadmap: &Roadmap, z: &[f64]) -> Result<Vec<usize>> {
    if z.len() != roadmap.ld() {
        return Err(LsrError::DimensionMismatch {
            expected: roadmap.ld(),
            got: z.len(),
        });
    }
    let mut order: Vec<(f64, usize)> = (0..roadmap.n_regions())
        .map(|i| (roadmap.metric.distance(z, roadmap.representative(i)), i))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(order.into_iter().map(|(_, i)| i).collect())
}

/// Region whose representative is the `rank`-th closest to `z` (0 = closest).
pub fn nearest_node(roadmap: &Roadmap, z: &[f64], rank: usize) -> Result<usize> {
    if rank >= roadmap.n_regions() {
        return Err(LsrError::RankOutOfRange {
            rank,
            regions: roadmap.n_regions(),
        });
    }
    Ok(rank_regions(roadmap, z)?[rank])
}

fn bfs(n: usize, source: usize, next: impl Fn(usize) -> Vec<usize>) -> Vec<usize> {
    let mut dist = vec![usize::MAX; n];
    let mut queue = std::collections::VecDeque::from([source]);
    dist[source] = 0;
    while let Some(u) = queue.pop_front() {
        for v in next(u) {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    dist
}

/// All fewest-hop directed paths from `i` to `j`, lexicographically ordered
/// and capped at `cap`; the flag reports whether paths were dropped.
pub fn all_shortest_paths(roadmap: &Roadmap, i: usize, j: usize, cap: usize) -> (Vec<Vec<usize>>, bool) {
    let n = roadmap.n_regions();
    let from_start = bfs(n, i, |u| roadmap.successors(u).to_vec());
    if from_start[j] == usize::MAX {
        return (Vec::new(), false);
    }
    let to_goal = bfs(n, j, |u| roadmap.predecessors(u).to_vec());
    let len = from_start[j];
    let mut paths = Vec::new();
    let mut truncated = false;
    let mut stack = vec![i];
    // Depth-first over the shortest-path layers, successors ascending.
    fn walk(
        roadmap: &Roadmap,
        stack: &mut Vec<usize>,
        len: usize,
        to_goal: &[usize],
        cap: usize,
        paths: &mut Vec<Vec<usize>>,
        truncated: &mut bool,
    ) {
        let u = *stack.last().expect("path has a start");
        if stack.len() == len + 1 {
            if paths.len() == cap {
                *truncated = true;
            } else {
                paths.push(stack.clone());
            }
            return;
        }
        let remaining = len + 1 - stack.len();
        for &v in roadmap.successors(u) {
            if to_goal[v] == remaining - 1 {
                stack.push(v);
                walk(roadmap, stack, len, to_goal, cap, paths, truncated);
                stack.pop();
                if *truncated {
                    return;
                }
            }
        }
    }
    walk(roadmap, &mut stack, len, &to_goal, cap, &mut paths, &mut truncated);
    (paths, truncated)
}

/// Finds shortest paths between the regions nearest `z_start` and `z_goal`,
/// substituting next-closest regions in order of total rank (then start rank)
/// until some path exists.
pub fn plan_latent(roadmap: &Roadmap, z_start: &[f64], z_goal: &[f64], cfg: &PlannerConfig) -> Result<PathQuery> {
    let starts = rank_regions(roadmap, z_start)?;
    let goals = rank_regions(roadmap, z_goal)?;
    let n = roadmap.n_regions();
    let mut attempts = 0;
    for depth in 0..=cfg.max_fallback {
        for rs in 0..=depth {
            let rg = depth - rs;
            if rs >= n || rg >= n {
                continue;
            }
            attempts += 1;
            let (paths, truncated) = all_shortest_paths(roadmap, starts[rs], goals[rg], cfg.path_cap);
            if !paths.is_empty() {
                return Ok(PathQuery {
                    start: starts[rs],
                    goal: goals[rg],
                    paths,
                    fallback_depth: depth,
                    truncated,
                });
            }
        }
    }
    Err(LsrError::Unreachable { attempts })
}

/// Encodes both observations (posterior means), plans, and decodes every
/// node of every path. Action plans are left empty.
pub fn plan(
    roadmap: &Roadmap,
    model: &EncoderModel,
    obs_start: &Observation,
    obs_goal: &Observation,
    cfg: &PlannerConfig,
) -> Result<Vec<PlanResult>> {
    let zs = model.encode_mean(&obs_start.features)?;
    let zg = model.encode_mean(&obs_goal.features)?;
    let query = plan_latent(roadmap, &zs, &zg, cfg)?;
    query
        .paths
        .iter()
        .map(|nodes| {
            let latent_plan: Vec<Vec<f64>> = nodes.iter().map(|&k| roadmap.representative(k).to_vec()).collect();
            let decoded_plan = latent_plan.iter().map(|z| model.decode(z)).collect::<Result<_>>()?;
            Ok(PlanResult {
                nodes: nodes.clone(),
                latent_plan,
                decoded_plan,
                action_plan: Vec::new(),
                fallback_depth: query.fallback_depth,
                truncated: query.truncated,
            })
        })
        .collect()
}
