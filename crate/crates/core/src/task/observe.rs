//! Feature-vector observation model.
//!
//! Stacking layout: per-cell one-hot over {empty, box 1..4} (45 values), then
//! per-box (x, y) placement offsets (8 values); the hard variant blends the box
//! one-hots toward each other and appends two lighting channels.
//! Rope-box layout: one-hot cell of each box (18), rope routing one-hot over
//! (closest pillar, side) (8), box offsets (4), rope sag (2), lighting (2).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{TaskKind, TaskState, GRID, STACK_BOXES};
use crate::error::{LsrError, Result};

const CELLS: usize = GRID * GRID;
const CELL_CHANNELS: usize = STACK_BOXES as usize + 1;
const STACK_ONEHOT: usize = CELLS * CELL_CHANNELS;
const STACK_OFFSETS: usize = 2 * STACK_BOXES as usize;
const LIGHTING: usize = 2;
const ROPE_CHANNELS: usize = 8;
const RB_OFFSETS: usize = 4;
const RB_SAG: usize = 2;

/// Default weight of the placement offsets relative to the one-hot channels.
pub const DEFAULT_OFFSET_SCALE: f64 = 4.0;

/// Texture similarity of the hard stacking boxes.
pub const HARD_TEXTURE_SIMILARITY: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Half-width of the uniform placement jitter, in cell units.
    pub positional: f64,
    /// Half-width of the uniform lighting channels (hard stacking, rope-box).
    pub lighting: f64,
    /// Half-width of the uniform rope sag (rope-box).
    pub rope: f64,
    /// Feature units per cell of box displacement. A shifted box moves a large
    /// share of an image's pixels, so offsets are weighted well above a one-hot.
    pub offset_scale: f64,
}

impl NoiseModel {
    pub const NONE: NoiseModel = NoiseModel {
        positional: 0.0,
        lighting: 0.0,
        rope: 0.0,
        offset_scale: 0.0,
    };

    pub fn for_task(task: TaskKind) -> Self {
        match task {
            TaskKind::NormalStacking => NoiseModel {
                positional: 0.17,
                lighting: 0.0,
                rope: 0.0,
                offset_scale: DEFAULT_OFFSET_SCALE,
            },
            TaskKind::HardStacking => NoiseModel {
                positional: 0.17,
                lighting: 1.0,
                rope: 0.0,
                offset_scale: DEFAULT_OFFSET_SCALE,
            },
            TaskKind::RopeBox => NoiseModel {
                positional: 0.17,
                lighting: 1.0,
                rope: 0.5,
                offset_scale: DEFAULT_OFFSET_SCALE,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub features: Vec<f64>,
    /// Ground-truth state id the observation was rendered from.
    pub state: Option<usize>,
}

impl Observation {
    pub fn unlabeled(features: Vec<f64>) -> Self {
        Observation { features, state: None }
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }
}

pub(super) fn obs_dim(task: TaskKind) -> usize {
    match task {
        TaskKind::NormalStacking => STACK_ONEHOT + STACK_OFFSETS,
        TaskKind::HardStacking => STACK_ONEHOT + STACK_OFFSETS + LIGHTING,
        TaskKind::RopeBox => 2 * CELLS + ROPE_CHANNELS + RB_OFFSETS + RB_SAG + LIGHTING,
    }
}

pub(super) fn template(task: TaskKind, s: &TaskState) -> Vec<f64> {
    let mut v = vec![0.0; obs_dim(task)];
    match s {
        TaskState::Stacking(g) => {
            let flat = g.flat();
            let sim = if task == TaskKind::HardStacking {
                HARD_TEXTURE_SIMILARITY
            } else {
                0.0
            };
            for (cell, &id) in flat.iter().enumerate() {
                let block = &mut v[cell * CELL_CHANNELS..(cell + 1) * CELL_CHANNELS];
                if id == 0 {
                    block[0] = 1.0;
                } else {
                    for (k, x) in block.iter_mut().enumerate().skip(1) {
                        let own = if k == id as usize { 1.0 } else { 0.0 };
                        *x = (1.0 - sim) * own + sim / STACK_BOXES as f64;
                    }
                }
            }
        }
        TaskState::RopeBox(r) => {
            v[r.box_a.flat()] = 1.0;
            v[CELLS + r.box_b.flat()] = 1.0;
            v[2 * CELLS + 2 * r.closest_pillar() + r.rope_far as usize] = 1.0;
        }
    }
    v
}

/// Renders `s` with the task's default noise model.
pub fn render(task: TaskKind, s: &TaskState, seed: u64) -> Result<Observation> {
    render_with(task, s, &NoiseModel::for_task(task), seed)
}

pub fn render_with(task: TaskKind, s: &TaskState, noise: &NoiseModel, seed: u64) -> Result<Observation> {
    let space = task.space();
    let id = space
        .id_of(s)
        .ok_or_else(|| LsrError::InvalidState(format!("{s} is not a state of task {task}")))?;
    Ok(render_id(task, id, noise, seed))
}

pub(crate) fn render_id(task: TaskKind, id: usize, noise: &NoiseModel, seed: u64) -> Observation {
    let mut features = task.space().template(id).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jitter = |x: &mut f64, half: f64, scale: f64| {
        if half > 0.0 {
            *x += scale * rng.random_range(-half..=half);
        }
    };
    let pos_scale = noise.offset_scale;
    match task {
        TaskKind::NormalStacking | TaskKind::HardStacking => {
            let TaskState::Stacking(g) = task.space().state(id) else {
                unreachable!("stacking space holds stacking states")
            };
            for b in 0..STACK_BOXES {
                if g.locate(b + 1).is_some() {
                    for axis in 0..2 {
                        jitter(&mut features[STACK_ONEHOT + 2 * b as usize + axis], noise.positional, pos_scale);
                    }
                }
            }
            if task == TaskKind::HardStacking {
                for x in &mut features[STACK_ONEHOT + STACK_OFFSETS..] {
                    jitter(x, noise.lighting, 1.0);
                }
            }
        }
        TaskKind::RopeBox => {
            let base = 2 * CELLS + ROPE_CHANNELS;
            for x in &mut features[base..base + RB_OFFSETS] {
                jitter(x, noise.positional, pos_scale);
            }
            for x in &mut features[base + RB_OFFSETS..base + RB_OFFSETS + RB_SAG] {
                jitter(x, noise.rope, 1.0);
            }
            for x in &mut features[base + RB_OFFSETS + RB_SAG..] {
                jitter(x, noise.lighting, 1.0);
            }
        }
    }
    Observation {
        features,
        state: Some(id),
    }
}

/// Id of the state whose noise-free template is nearest (L2) to `features`.
pub fn decode_state_id(task: TaskKind, features: &[f64]) -> Result<usize> {
    let d = obs_dim(task);
    if features.len() != d {
        return Err(LsrError::DimensionMismatch {
            expected: d,
            got: features.len(),
        });
    }
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (id, t) in task.space().templates().iter().enumerate() {
        let dist: f64 = t.iter().zip(features).map(|(a, b)| (a - b) * (a - b)).sum();
        if dist < best_d {
            best_d = dist;
            best = id;
        }
    }
    Ok(best)
}

/// Nearest-template state classifier.
pub fn decode_state(task: TaskKind, obs: &Observation) -> Result<TaskState> {
    decode_state_id(task, &obs.features).map(|id| task.space().state(id).clone())
}
