use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Action, Cell, GRID};
use crate::error::{LsrError, Result};

/// Number of boxes in the stacking tasks.
pub const STACK_BOXES: u8 = 4;

/// 3x3 stacking grid, `rows[height][col]`, 0 = empty, otherwise box id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StackGrid {
    rows: [[u8; GRID]; GRID],
}

impl StackGrid {
    pub fn from_rows(rows: [[u8; GRID]; GRID]) -> Result<Self> {
        let g = StackGrid { rows };
        g.validate()?;
        Ok(g)
    }

    #[cfg(test)]
    pub(crate) fn from_rows_unchecked(rows: [[u8; GRID]; GRID]) -> Self {
        StackGrid { rows }
    }

    pub fn get(&self, cell: Cell) -> u8 {
        self.rows[cell.row as usize][cell.col as usize]
    }

    pub fn flat(&self) -> [u8; GRID * GRID] {
        let mut out = [0; GRID * GRID];
        for r in 0..GRID {
            out[r * GRID..(r + 1) * GRID].copy_from_slice(&self.rows[r]);
        }
        out
    }

    pub fn height(&self, col: usize) -> usize {
        (0..GRID).take_while(|&r| self.rows[r][col] != 0).count()
    }

    /// Position of box `id`, if present.
    pub fn locate(&self, id: u8) -> Option<Cell> {
        (0..GRID)
            .flat_map(|r| (0..GRID).map(move |c| Cell::new(r as u8, c as u8)))
            .find(|&cell| self.get(cell) == id)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = [false; 256];
        for r in 0..GRID {
            for c in 0..GRID {
                let id = self.rows[r][c];
                if id == 0 {
                    continue;
                }
                if id > STACK_BOXES {
                    return Err(LsrError::InvalidState(format!("box id {id} out of range")));
                }
                if seen[id as usize] {
                    return Err(LsrError::InvalidState(format!("box {id} appears twice")));
                }
                seen[id as usize] = true;
                if r > 0 && self.rows[r - 1][c] == 0 {
                    return Err(LsrError::InvalidState(format!("box {id} at ({r},{c}) is not supported")));
                }
            }
        }
        Ok(())
    }

    /// Moves allowed by the stacking rules: only the top box of a column can
    /// be picked, and it can be released on the ground or on top of another
    /// box in a different column.
    pub fn successors(&self) -> Vec<(Action, StackGrid)> {
        let mut out = Vec::new();
        for from in 0..GRID {
            let h = self.height(from);
            if h == 0 {
                continue;
            }
            for to in 0..GRID {
                let h2 = self.height(to);
                if to == from || h2 == GRID {
                    continue;
                }
                let pick = Cell::new(h as u8 - 1, from as u8);
                let release = Cell::new(h2 as u8, to as u8);
                let mut next = *self;
                next.rows[h2][to] = self.rows[h - 1][from];
                next.rows[h - 1][from] = 0;
                out.push((Action::PickPlace { pick, release }, next));
            }
        }
        out
    }
}

impl fmt::Display for StackGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (r, row) in self.rows.iter().enumerate() {
            if r > 0 {
                f.write_str("|")?;
            }
            for id in row {
                write!(f, "{id}")?;
            }
        }
        Ok(())
    }
}

/// All gravity-respecting placements of boxes `1..=n_boxes` on the grid.
pub fn enumerate_stacking(n_boxes: u8) -> Vec<StackGrid> {
    assert!(n_boxes <= STACK_BOXES, "at most {STACK_BOXES} boxes");
    let n = n_boxes as usize;
    let mut out = Vec::new();
    let mut ids: Vec<u8> = (1..=n_boxes).collect();
    for h0 in 0..=GRID.min(n) {
        for h1 in 0..=GRID.min(n - h0) {
            let h2 = n - h0 - h1;
            if h2 > GRID {
                continue;
            }
            let heights = [h0, h1, h2];
            for_each_permutation(&mut ids, 0, &mut |perm| {
                let mut rows = [[0u8; GRID]; GRID];
                let mut k = 0;
                for (c, &h) in heights.iter().enumerate() {
                    for row in rows.iter_mut().take(h) {
                        row[c] = perm[k];
                        k += 1;
                    }
                }
                out.push(StackGrid { rows });
            });
        }
    }
    out.sort_by_key(|g| g.flat());
    out
}

fn for_each_permutation(items: &mut [u8], k: usize, f: &mut impl FnMut(&[u8])) {
    if k == items.len() {
        f(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        for_each_permutation(items, k + 1, f);
        items.swap(k, i);
    }
}
