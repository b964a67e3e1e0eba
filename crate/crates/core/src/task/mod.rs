//! Deterministic simulators for the box-stacking and rope-box tasks.
//!
//! Every task has a finite state space enumerated once and cached in a
//! [`StateSpace`]: canonical state ordering, the unique action catalogue, the
//! full transition table and the noise-free observation templates. The free
//! functions in this module are thin views over that cache.

mod dataset;
mod observe;
mod ropebox;
mod stacking;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{LsrError, Result};

pub use dataset::{generate_dataset, render_holdout, DatasetTuple};
pub use observe::{decode_state, decode_state_id, render, render_with, NoiseModel, Observation};
pub use ropebox::RopeBoxState;
pub use stacking::{enumerate_stacking, StackGrid, STACK_BOXES};

pub const GRID: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskKind {
    #[serde(rename = "ns")]
    NormalStacking,
    #[serde(rename = "hs")]
    HardStacking,
    #[serde(rename = "rb")]
    RopeBox,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::NormalStacking, TaskKind::HardStacking, TaskKind::RopeBox];

    pub fn code(self) -> &'static str {
        match self {
            TaskKind::NormalStacking => "ns",
            TaskKind::HardStacking => "hs",
            TaskKind::RopeBox => "rb",
        }
    }

    pub fn is_stacking(self) -> bool {
        !matches!(self, TaskKind::RopeBox)
    }

    /// Observation feature dimension.
    pub fn obs_dim(self) -> usize {
        observe::obs_dim(self)
    }

    /// Fraction of action pairs used for training datasets of this task.
    pub fn default_action_fraction(self) -> f64 {
        if self.is_stacking() {
            0.65
        } else {
            0.5
        }
    }

    pub fn space(self) -> &'static StateSpace {
        static NS: OnceLock<StateSpace> = OnceLock::new();
        static HS: OnceLock<StateSpace> = OnceLock::new();
        static RB: OnceLock<StateSpace> = OnceLock::new();
        let cell = match self {
            TaskKind::NormalStacking => &NS,
            TaskKind::HardStacking => &HS,
            TaskKind::RopeBox => &RB,
        };
        cell.get_or_init(|| StateSpace::build(self))
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for TaskKind {
    type Err = LsrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ns" | "normal" => Ok(TaskKind::NormalStacking),
            "hs" | "hard" => Ok(TaskKind::HardStacking),
            "rb" | "ropebox" => Ok(TaskKind::RopeBox),
            other => Err(LsrError::InvalidArgument(format!("unknown task '{other}' (expected ns, hs or rb)"))),
        }
    }
}

/// Grid cell. For stacking tasks `row` is the height above the ground.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub row: u8,
    pub col: u8,
}

impl Cell {
    pub const fn new(row: u8, col: u8) -> Self {
        Cell { row, col }
    }

    pub fn in_grid(self) -> bool {
        (self.row as usize) < GRID && (self.col as usize) < GRID
    }

    pub fn manhattan(self, other: Cell) -> u8 {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col)
    }

    pub fn flat(self) -> usize {
        self.row as usize * GRID + self.col as usize
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.row, self.col)
    }
}

fn parse_cell(s: &str) -> Option<Cell> {
    let (r, c) = s.split_once(',')?;
    let cell = Cell::new(r.trim().parse().ok()?, c.trim().parse().ok()?);
    cell.in_grid().then_some(cell)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    PickPlace { pick: Cell, release: Cell },
    BoxPush { pick: Cell, release: Cell },
    RopeMove,
}

impl Action {
    pub fn pick_release(&self) -> Option<(Cell, Cell)> {
        match *self {
            Action::PickPlace { pick, release } | Action::BoxPush { pick, release } => Some((pick, release)),
            Action::RopeMove => None,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::PickPlace { pick, release } => write!(f, "pp:{pick}>{release}"),
            Action::BoxPush { pick, release } => write!(f, "push:{pick}>{release}"),
            Action::RopeMove => f.write_str("rope"),
        }
    }
}

impl FromStr for Action {
    type Err = LsrError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || LsrError::InvalidArgument(format!("malformed action '{s}'"));
        if s == "rope" {
            return Ok(Action::RopeMove);
        }
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        let (p, r) = rest.split_once('>').ok_or_else(bad)?;
        let pick = parse_cell(p).ok_or_else(bad)?;
        let release = parse_cell(r).ok_or_else(bad)?;
        match kind {
            "pp" if pick != release => Ok(Action::PickPlace { pick, release }),
            "push" => Ok(Action::BoxPush { pick, release }),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskState {
    Stacking(StackGrid),
    RopeBox(RopeBoxState),
}

impl TaskState {
    /// Flattened grid used for canonical ordering.
    pub fn flat_key(&self) -> Vec<u8> {
        match self {
            TaskState::Stacking(g) => g.flat().to_vec(),
            TaskState::RopeBox(r) => r.flat_key(),
        }
    }

    fn validate_for(&self, task: TaskKind) -> Result<()> {
        match (task.is_stacking(), self) {
            (true, TaskState::Stacking(g)) => g.validate(),
            (false, TaskState::RopeBox(r)) => r.validate(),
            _ => Err(LsrError::InvalidState(format!("state kind does not match task {task}"))),
        }
    }
}

impl fmt::Display for TaskState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskState::Stacking(g) => write!(f, "{g}"),
            TaskState::RopeBox(r) => write!(f, "{r}"),
        }
    }
}

/// Cached state space of one task.
#[derive(Debug)]
pub struct StateSpace {
    task: TaskKind,
    states: Vec<TaskState>,
    index: HashMap<TaskState, usize>,
    actions: Vec<Action>,
    action_index: HashMap<Action, usize>,
    /// Per state: (action id, successor state id), sorted.
    transitions: Vec<Vec<(usize, usize)>>,
    templates: Vec<Vec<f64>>,
}

impl StateSpace {
    fn build(task: TaskKind) -> Self {
        let mut states = match task {
            TaskKind::NormalStacking | TaskKind::HardStacking => {
                enumerate_stacking(STACK_BOXES).into_iter().map(TaskState::Stacking).collect()
            }
            TaskKind::RopeBox => ropebox::reachable_states().into_iter().map(TaskState::RopeBox).collect::<Vec<_>>(),
        };
        states.sort_by_key(TaskState::flat_key);
        let index: HashMap<_, _> = states.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();

        let raw: Vec<Vec<(Action, TaskState)>> = states.iter().map(|s| successors(s)).collect();
        let mut actions: Vec<Action> = raw.iter().flatten().map(|(a, _)| *a).collect();
        actions.sort();
        actions.dedup();
        let action_index: HashMap<_, _> = actions.iter().enumerate().map(|(i, a)| (*a, i)).collect();

        let transitions = raw
            .iter()
            .map(|succ| {
                let mut t: Vec<(usize, usize)> = succ
                    .iter()
                    .map(|(a, s)| (action_index[a], *index.get(s).expect("successor closed under enumeration")))
                    .collect();
                t.sort_unstable();
                t
            })
            .collect();
        let templates = states.iter().map(|s| observe::template(task, s)).collect();

        StateSpace {
            task,
            states,
            index,
            actions,
            action_index,
            transitions,
            templates,
        }
    }

    pub fn task(&self) -> TaskKind {
        self.task
    }

    pub fn states(&self) -> &[TaskState] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, id: usize) -> &TaskState {
        &self.states[id]
    }

    pub fn id_of(&self, s: &TaskState) -> Option<usize> {
        self.index.get(s).copied()
    }

    /// Unique action catalogue in canonical order.
    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn action_id(&self, a: &Action) -> Option<usize> {
        self.action_index.get(a).copied()
    }

    pub fn transitions(&self, id: usize) -> &[(usize, usize)] {
        &self.transitions[id]
    }

    pub fn template(&self, id: usize) -> &[f64] {
        &self.templates[id]
    }

    pub fn templates(&self) -> &[Vec<f64>] {
        &self.templates
    }

    /// Whether `to` is reachable from `from` with at most one action.
    pub fn is_valid_transition_ids(&self, from: usize, to: usize) -> bool {
        from == to || self.transitions[from].iter().any(|&(_, s)| s == to)
    }

    /// Successor reached by applying `action` in state `from`, if allowed.
    pub fn apply(&self, from: usize, action: usize) -> Option<usize> {
        self.transitions[from].iter().find(|&&(a, _)| a == action).map(|&(_, s)| s)
    }

    /// Average fraction of the unique actions allowed per state.
    pub fn mean_allowed_fraction(&self) -> f64 {
        let total: usize = self.transitions.iter().map(Vec::len).sum();
        total as f64 / (self.states.len() * self.actions.len()) as f64
    }
}

fn successors(s: &TaskState) -> Vec<(Action, TaskState)> {
    match s {
        TaskState::Stacking(g) => g
            .successors()
            .into_iter()
            .map(|(a, g)| (a, TaskState::Stacking(g)))
            .collect(),
        TaskState::RopeBox(r) => r
            .successors()
            .into_iter()
            .map(|(a, r)| (a, TaskState::RopeBox(r)))
            .collect(),
    }
}

/// Every reachable state of `task` in canonical (lexicographic) order.
pub fn enumerate_states(task: TaskKind) -> Vec<TaskState> {
    task.space().states().to_vec()
}

/// All allowed actions in `s` together with the resulting states.
pub fn valid_actions(task: TaskKind, s: &TaskState) -> Result<Vec<(Action, TaskState)>> {
    s.validate_for(task)?;
    Ok(successors(s))
}

/// True iff `s2` equals `s1` or follows from it by a single allowed action.
pub fn is_valid_transition(task: TaskKind, s1: &TaskState, s2: &TaskState) -> bool {
    if s1 == s2 {
        return true;
    }
    let space = task.space();
    match (space.id_of(s1), space.id_of(s2)) {
        (Some(a), Some(b)) => space.is_valid_transition_ids(a, b),
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use std::collections::{HashSet, VecDeque};

    use super::*;

    fn bfs_dist(space: &StateSpace, from: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; space.len()];
        dist[from] = Some(0);
        let mut q = VecDeque::from([from]);
        while let Some(u) = q.pop_front() {
            for &(_, v) in space.transitions(u) {
                if dist[v].is_none() {
                    dist[v] = Some(dist[u].unwrap() + 1);
                    q.push_back(v);
                }
            }
        }
        dist
    }

    #[test]
    fn stacking_counts() {
        let space = TaskKind::NormalStacking.space();
        assert_eq!(space.len(), 288);
        assert_eq!(space.actions().len(), 48);
        assert_eq!(TaskKind::HardStacking.space().len(), 288);
        let frac = space.mean_allowed_fraction() * 100.0;
        assert!((frac - 9.4).abs() <= 1.5, "allowed fraction {frac}");
    }

    #[test]
    fn stacking_count_by_compositions() {
        // Column heights (a, b, c) with a + b + c = 4 and each <= 3, times 4! box orders.
        let compositions = (0..=3)
            .flat_map(|a| (0..=3).map(move |b| (a, b)))
            .filter(|&(a, b)| a + b <= 4 && 4 - a - b <= 3)
            .count();
        assert_eq!(compositions, 12);
        assert_eq!(compositions * 24, enumerate_states(TaskKind::NormalStacking).len());
    }

    #[test]
    fn ropebox_counts() {
        let space = TaskKind::RopeBox.space();
        assert_eq!(space.actions().len(), 25);
        let frac = space.mean_allowed_fraction() * 100.0;
        assert!((frac - 17.1).abs() <= 1.5, "allowed fraction {frac}");
    }

    #[test]
    fn canonical_order_is_lexicographic() {
        for task in TaskKind::ALL {
            let keys: Vec<_> = task.space().states().iter().map(TaskState::flat_key).collect();
            assert!(keys.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn transition_graph_strongly_connected() {
        for task in [TaskKind::NormalStacking, TaskKind::RopeBox] {
            let space = task.space();
            for s in 0..space.len() {
                assert!(bfs_dist(space, s).iter().all(Option::is_some), "{task}: state {s}");
            }
        }
    }

    #[test]
    fn two_move_states_are_not_transitions() {
        let space = TaskKind::NormalStacking.space();
        for s in (0..space.len()).step_by(17) {
            let dist = bfs_dist(space, s);
            for (t, d) in dist.iter().enumerate() {
                let expected = matches!(d, Some(0) | Some(1));
                let (a, b) = (space.state(s), space.state(t));
                assert_eq!(is_valid_transition(TaskKind::NormalStacking, a, b), expected);
            }
        }
    }

    #[test]
    fn transition_iff_valid_action() {
        for task in [TaskKind::NormalStacking, TaskKind::RopeBox] {
            let space = task.space();
            for s in space.states() {
                let succ: HashSet<_> = valid_actions(task, s).unwrap().into_iter().map(|(_, t)| t).collect();
                assert!(!succ.contains(s));
                for t in space.states() {
                    if t != s {
                        assert_eq!(is_valid_transition(task, s, t), succ.contains(t));
                    }
                }
            }
        }
    }

    #[test]
    fn covered_box_cannot_be_picked() {
        // Box 2 sits on box 1 in column 0.
        let mut grid = [[0u8; 3]; 3];
        grid[0][0] = 1;
        grid[1][0] = 2;
        grid[0][1] = 3;
        grid[0][2] = 4;
        let s = TaskState::Stacking(StackGrid::from_rows(grid).unwrap());
        let acts = valid_actions(TaskKind::NormalStacking, &s).unwrap();
        assert!(acts.iter().all(|(a, _)| a.pick_release().unwrap().0 != Cell::new(0, 0)));
        assert!(acts.iter().any(|(a, _)| a.pick_release().unwrap().0 == Cell::new(1, 0)));
    }

    #[test]
    fn invalid_state_rejected() {
        let mut grid = [[0u8; 3]; 3];
        grid[1][0] = 1; // floating box
        assert!(StackGrid::from_rows(grid).is_err());
        let floating = TaskState::Stacking(StackGrid::from_rows_unchecked(grid));
        assert!(valid_actions(TaskKind::NormalStacking, &floating).is_err());
        let rb = TaskKind::RopeBox.space().state(0).clone();
        assert!(valid_actions(TaskKind::NormalStacking, &rb).is_err());
    }

    #[test]
    fn action_text_round_trip() {
        for task in TaskKind::ALL {
            for a in task.space().actions() {
                assert_eq!(a.to_string().parse::<Action>().unwrap(), *a);
            }
        }
        assert!("pp:0,0>0,0".parse::<Action>().is_err());
        assert!("pp:0,3>0,0".parse::<Action>().is_err());
    }
}
