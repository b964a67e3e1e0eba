use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::observe::{render_id, NoiseModel, Observation};
use super::{Action, TaskKind};
use crate::error::{LsrError, Result};
use crate::rng::stream_rng;

/// Training pair: an action pair (`action` set) or a no-action pair showing
/// the same state twice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetTuple {
    pub obs1: Observation,
    pub obs2: Observation,
    pub action: Option<Action>,
}

impl DatasetTuple {
    pub fn is_action(&self) -> bool {
        self.action.is_some()
    }
}

/// Samples `n_pairs` tuples: action pairs uniformly over all transitions of
/// the task and no-action pairs uniformly over states, each observation an
/// independent noisy render.
pub fn generate_dataset(task: TaskKind, n_pairs: usize, action_fraction: f64, seed: u64) -> Result<Vec<DatasetTuple>> {
    if n_pairs == 0 {
        return Err(LsrError::InvalidArgument("n_pairs must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&action_fraction) {
        return Err(LsrError::InvalidArgument(format!("action fraction {action_fraction} outside [0, 1]")));
    }
    let space = task.space();
    let noise = NoiseModel::for_task(task);
    let transitions: Vec<(usize, usize, usize)> = (0..space.len())
        .flat_map(|s| space.transitions(s).iter().map(move |&(a, t)| (s, a, t)))
        .collect();

    let n_action = (n_pairs as f64 * action_fraction).round() as usize;
    let mut rng = stream_rng(seed, 0x6461_7461);
    let mut out = Vec::with_capacity(n_pairs);
    for i in 0..n_pairs {
        let (s1, s2, action) = if i < n_action {
            let (s, a, t) = transitions[rng.random_range(0..transitions.len())];
            (s, t, Some(space.actions()[a]))
        } else {
            let s = rng.random_range(0..space.len());
            (s, s, None)
        };
        let obs1 = render_id(task, s1, &noise, rng.random());
        let obs2 = render_id(task, s2, &noise, rng.random());
        out.push(DatasetTuple { obs1, obs2, action });
    }
    out.shuffle(&mut rng);
    Ok(out)
}

/// `n` renders of uniformly drawn states, used as holdout observations.
pub fn render_holdout(task: TaskKind, n: usize, seed: u64) -> Vec<Observation> {
    let space = task.space();
    let noise = NoiseModel::for_task(task);
    let mut rng = stream_rng(seed, 0x686f_6c64);
    (0..n)
        .map(|_| {
            let s = rng.random_range(0..space.len());
            render_id(task, s, &noise, rng.random())
        })
        .collect()
}
