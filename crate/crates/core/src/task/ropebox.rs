use std::collections::{HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Action, Cell, GRID};
use crate::error::{LsrError, Result};

/// Two boxes joined by a rope, plus the rope routing flag relative to the
/// pillar closest to the boxes' midpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RopeBoxState {
    pub box_a: Cell,
    pub box_b: Cell,
    /// Rope on the far side of the closest pillar.
    pub rope_far: bool,
}

/// Pillars sit on the four interior grid corners, in cell-centre coordinates.
pub const PILLARS: [(f64, f64); 4] = [(0.5, 0.5), (0.5, 1.5), (1.5, 0.5), (1.5, 1.5)];

/// The rope spans at most two cells, so the boxes are at most one push away
/// from being adjacent.
pub const MAX_BOX_SEPARATION: u8 = 2;

impl RopeBoxState {
    pub fn new(box_a: Cell, box_b: Cell, rope_far: bool) -> Result<Self> {
        let s = RopeBoxState { box_a, box_b, rope_far };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.box_a.in_grid() || !self.box_b.in_grid() {
            return Err(LsrError::InvalidState("box outside the grid".into()));
        }
        if self.box_a == self.box_b {
            return Err(LsrError::InvalidState("boxes share a cell".into()));
        }
        if self.box_a.manhattan(self.box_b) > MAX_BOX_SEPARATION {
            return Err(LsrError::InvalidState("rope over-stretched".into()));
        }
        Ok(())
    }

    pub fn flat_key(&self) -> Vec<u8> {
        let mut key = vec![0u8; GRID * GRID + 1];
        key[self.box_a.flat()] = 1;
        key[self.box_b.flat()] = 2;
        key[GRID * GRID] = self.rope_far as u8;
        key
    }

    /// Index of the pillar closest to the box midpoint (lowest index on ties).
    pub fn closest_pillar(&self) -> usize {
        let mid = (
            (self.box_a.row + self.box_b.row) as f64 / 2.0,
            (self.box_a.col + self.box_b.col) as f64 / 2.0,
        );
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, p) in PILLARS.iter().enumerate() {
            let d = (mid.0 - p.0).hypot(mid.1 - p.1);
            if d < best_d - 1e-12 {
                best = i;
                best_d = d;
            }
        }
        best
    }

    pub fn successors(&self) -> Vec<(Action, RopeBoxState)> {
        const DIRS: [(i8, i8); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
        let mut out = Vec::new();
        for moving_a in [true, false] {
            let (from, other) = if moving_a {
                (self.box_a, self.box_b)
            } else {
                (self.box_b, self.box_a)
            };
            for (dr, dc) in DIRS {
                let r = from.row as i8 + dr;
                let c = from.col as i8 + dc;
                if !(0..GRID as i8).contains(&r) || !(0..GRID as i8).contains(&c) {
                    continue;
                }
                let to = Cell::new(r as u8, c as u8);
                if to == other || to.manhattan(other) > MAX_BOX_SEPARATION {
                    continue;
                }
                let mut next = *self;
                if moving_a {
                    next.box_a = to;
                } else {
                    next.box_b = to;
                }
                out.push((Action::BoxPush { pick: from, release: to }, next));
            }
        }
        let mut flipped = *self;
        flipped.rope_far = !self.rope_far;
        out.push((Action::RopeMove, flipped));
        out
    }
}

impl fmt::Display for RopeBoxState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let side = if self.rope_far { "far" } else { "near" };
        write!(f, "a{} b{} rope:{side}", self.box_a, self.box_b)
    }
}

/// Breadth-first closure of the rules from the canonical start state.
pub(super) fn reachable_states() -> Vec<RopeBoxState> {
    let start = RopeBoxState::new(Cell::new(0, 0), Cell::new(0, 1), false).expect("valid start");
    let mut seen = HashSet::from([start]);
    let mut queue = VecDeque::from([start]);
    while let Some(s) = queue.pop_front() {
        for (_, next) in s.successors() {
            if seen.insert(next) {
                queue.push_back(next);
            }
        }
    }
    seen.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reachable_set_is_every_valid_configuration() {
        let mut valid = 0;
        for a in 0..9u8 {
            for b in 0..9u8 {
                for far in [false, true] {
                    if RopeBoxState::new(Cell::new(a / 3, a % 3), Cell::new(b / 3, b % 3), far).is_ok() {
                        valid += 1;
                    }
                }
            }
        }
        assert_eq!(reachable_states().len(), valid);
        assert_eq!(valid, 104);
    }

    #[test]
    fn pushes_respect_rope_length() {
        for s in reachable_states() {
            for (a, next) in s.successors() {
                next.validate().unwrap();
                if let Action::BoxPush { pick, release } = a {
                    assert_eq!(pick.manhattan(release), 1);
                }
            }
        }
    }

    #[test]
    fn closest_pillar_of_corner_pair() {
        let s = RopeBoxState::new(Cell::new(0, 0), Cell::new(0, 1), false).unwrap();
        assert_eq!(s.closest_pillar(), 0);
        let s = RopeBoxState::new(Cell::new(2, 2), Cell::new(1, 2), false).unwrap();
        assert_eq!(s.closest_pillar(), 3);
    }
}
