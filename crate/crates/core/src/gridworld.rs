//! Stochastic 8-connected gridworld with a loiter action.
//!
//! Cells are `[col, row]` with row 0 at the bottom; `North` increases the row.
//! State index is `row * width + col`. Actions 0..8 are the compass moves in
//! clockwise order starting at `North`; action 8 is `Loiter`.
//!
//! A move reaches its intended neighbour with probability `1 - slip` and
//! each of the other seven directions' neighbours with `slip / 7`. Targets
//! off the grid clamp to the current cell, and coinciding targets merge.

use serde::{Deserialize, Serialize};

use crate::constraints::ConstraintSet;
use crate::error::{Error, Result};
use crate::mdp::{Mdp, MdpBuilder};

pub const NUM_ACTIONS: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    North,
    NorthEast,
    East,
    SouthEast,
    South,
    SouthWest,
    West,
    NorthWest,
    Loiter,
}

impl Direction {
    pub const MOVES: [Direction; 8] = [
        Direction::North,
        Direction::NorthEast,
        Direction::East,
        Direction::SouthEast,
        Direction::South,
        Direction::SouthWest,
        Direction::West,
        Direction::NorthWest,
    ];

    pub const ALL: [Direction; NUM_ACTIONS] = [
        Direction::North,
        Direction::NorthEast,
        Direction::East,
        Direction::SouthEast,
        Direction::South,
        Direction::SouthWest,
        Direction::West,
        Direction::NorthWest,
        Direction::Loiter,
    ];

    pub fn action(self) -> usize {
        self as usize
    }

    pub fn from_action(a: usize) -> Option<Self> {
        Self::ALL.get(a).copied()
    }

    /// `(dcol, drow)` offset.
    pub fn offset(self) -> (i64, i64) {
        match self {
            Direction::North => (0, 1),
            Direction::NorthEast => (1, 1),
            Direction::East => (1, 0),
            Direction::SouthEast => (1, -1),
            Direction::South => (0, -1),
            Direction::SouthWest => (-1, -1),
            Direction::West => (-1, 0),
            Direction::NorthWest => (-1, 1),
            Direction::Loiter => (0, 0),
        }
    }

    pub fn is_diagonal(self) -> bool {
        let (dc, dr) = self.offset();
        dc != 0 && dr != 0
    }

    pub fn label(self) -> &'static str {
        match self {
            Direction::North => "N",
            Direction::NorthEast => "NE",
            Direction::East => "E",
            Direction::SouthEast => "SE",
            Direction::South => "S",
            Direction::SouthWest => "SW",
            Direction::West => "W",
            Direction::NorthWest => "NW",
            Direction::Loiter => "loiter",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstrainedCell {
    pub cell: [usize; 2],
    pub psi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    pub slip: f64,
    pub start: [usize; 2],
    pub goal: [usize; 2],
    pub horizon: usize,
    #[serde(default)]
    pub true_constraints: Vec<ConstrainedCell>,
}

impl GridSpec {
    fn check(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidGrid(msg));
        if self.width == 0 || self.height == 0 {
            return bad("width and height must be positive".into());
        }
        if !(0.0..1.0).contains(&self.slip) {
            return bad(format!("slip {} must lie in [0, 1)", self.slip));
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        let inside = |c: [usize; 2]| c[0] < self.width && c[1] < self.height;
        if !inside(self.start) {
            return bad(format!("start {:?} is off the grid", self.start));
        }
        if !inside(self.goal) {
            return bad(format!("goal {:?} is off the grid", self.goal));
        }
        for tc in &self.true_constraints {
            if !inside(tc.cell) {
                return bad(format!("constrained cell {:?} is off the grid", tc.cell));
            }
            if !(0.0..=1.0).contains(&tc.psi) {
                return bad(format!("psi {} at {:?} outside [0, 1]", tc.psi, tc.cell));
            }
            if tc.cell == self.goal && tc.psi < 1.0 {
                return bad("goal cell cannot be constrained".into());
            }
            if tc.cell == self.start && tc.psi == 0.0 {
                return bad("start cell cannot be excluded".into());
            }
        }
        Ok(())
    }
}

/// Bijection between state indices and `[col, row]` cells.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellMapping {
    pub width: usize,
    pub height: usize,
    /// `cells[state] = [col, row]`.
    pub cells: Vec<[usize; 2]>,
    pub actions: Vec<String>,
}

impl CellMapping {
    pub fn new(width: usize, height: usize) -> Self {
        let cells = (0..width * height)
            .map(|s| [s % width, s / width])
            .collect();
        Self {
            width,
            height,
            cells,
            actions: Direction::ALL
                .iter()
                .map(|d| d.label().to_string())
                .collect(),
        }
    }

    pub fn state(&self, cell: [usize; 2]) -> usize {
        cell[1] * self.width + cell[0]
    }

    pub fn cell(&self, state: usize) -> [usize; 2] {
        self.cells[state]
    }

    /// Neighbour in direction `d`, clamped to `cell` when off the grid.
    pub fn step(&self, cell: [usize; 2], d: Direction) -> [usize; 2] {
        let (dc, dr) = d.offset();
        let c = cell[0] as i64 + dc;
        let r = cell[1] as i64 + dr;
        if c < 0 || r < 0 || c >= self.width as i64 || r >= self.height as i64 {
            cell
        } else {
            [c as usize, r as usize]
        }
    }
}

#[derive(Debug, Clone)]
pub struct Gridworld {
    pub mdp: Mdp,
    pub ground_truth: ConstraintSet,
    pub mapping: CellMapping,
    pub start: usize,
    pub goal: usize,
}

/// Running reward of an action taken at `cell`: Euclidean step length, and
/// loitering is free only at the goal.
fn step_reward(d: Direction, at_goal: bool) -> f64 {
    match d {
        Direction::Loiter if at_goal => 0.0,
        Direction::Loiter => -1.0,
        d if d.is_diagonal() => -std::f64::consts::SQRT_2,
        _ => -1.0,
    }
}

pub fn build_gridworld(spec: &GridSpec) -> Result<Gridworld> {
    spec.check()?;
    let mapping = CellMapping::new(spec.width, spec.height);
    let n = spec.width * spec.height;
    let goal = mapping.state(spec.goal);
    let mut b = MdpBuilder::new(n, NUM_ACTIONS, spec.horizon);
    let slip_each = spec.slip / 7.0;
    for x in 0..n {
        let cell = mapping.cell(x);
        for d in Direction::ALL {
            let a = d.action();
            b.running_reward(x, a, step_reward(d, x == goal))?;
            if d == Direction::Loiter {
                b.add_transition(x, a, x, 1.0)?;
                continue;
            }
            b.add_transition(x, a, mapping.state(mapping.step(cell, d)), 1.0 - spec.slip)?;
            if slip_each > 0.0 {
                for other in Direction::MOVES.iter().filter(|&&o| o != d) {
                    b.add_transition(x, a, mapping.state(mapping.step(cell, *other)), slip_each)?;
                }
            }
        }
    }
    let mut ground_truth = ConstraintSet::unconstrained(n);
    for tc in &spec.true_constraints {
        let s = mapping.state(tc.cell);
        ground_truth.psi[s] = ground_truth.psi[s].min(tc.psi);
    }
    Ok(Gridworld {
        mdp: b.build()?,
        ground_truth,
        start: mapping.state(spec.start),
        goal,
        mapping,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(w: usize, h: usize, slip: f64) -> GridSpec {
        GridSpec {
            width: w,
            height: h,
            slip,
            start: [0, 0],
            goal: [w - 1, h - 1],
            horizon: 3,
            true_constraints: vec![],
        }
    }

    #[test]
    fn generated_kernels_validate() {
        for (w, h) in [(1, 1), (2, 2), (3, 5), (9, 9), (15, 15)] {
            for slip in [0.0, 0.1, 0.5] {
                let g = build_gridworld(&spec(w, h, slip)).unwrap();
                assert!(g.mdp.validate().is_empty(), "{w}x{h} slip {slip}");
            }
        }
    }

    #[test]
    fn zero_slip_is_deterministic() {
        let g = build_gridworld(&spec(4, 3, 0.0)).unwrap();
        assert!(g.mdp.is_deterministic());
    }

    #[test]
    fn interior_cell_masses() {
        let g = build_gridworld(&spec(3, 3, 0.1)).unwrap();
        let center = g.mapping.state([1, 1]);
        let succ = g.mdp.successors(center, Direction::North.action()).unwrap();
        assert_eq!(succ.len(), 8);
        let north = g.mapping.state([1, 2]);
        let total: f64 = succ.iter().map(|&(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-12);
        for &(y, p) in succ {
            let want = if y == north { 0.9 } else { 0.1 / 7.0 };
            assert!((p - want).abs() < 1e-15, "{y}: {p}");
        }
        assert!(!succ.iter().any(|&(y, _)| y == center));
    }

    #[test]
    fn corner_clamping_on_2x2() {
        // top-left corner [0, 1]: N, NE, NW, W, SW are off the grid
        let g = build_gridworld(&spec(2, 2, 0.1)).unwrap();
        let corner = g.mapping.state([0, 1]);
        let s = 0.1 / 7.0;
        let north = g.mdp.successors(corner, Direction::North.action()).unwrap();
        let home = north.iter().find(|&&(y, _)| y == corner).unwrap().1;
        assert!((home - (0.9 + 4.0 * s)).abs() < 1e-15);
        assert_eq!(north.len(), 4);
        let east = g.mdp.successors(corner, Direction::East.action()).unwrap();
        let expected = [
            (g.mapping.state([0, 0]), s),
            (g.mapping.state([1, 0]), s),
            (corner, 5.0 * s),
            (g.mapping.state([1, 1]), 0.9),
        ];
        let mut expected = expected.to_vec();
        expected.sort_by_key(|e| e.0);
        assert_eq!(east.len(), expected.len());
        for (got, want) in east.iter().zip(&expected) {
            assert_eq!(got.0, want.0);
            assert!((got.1 - want.1).abs() < 1e-15);
        }
    }

    #[test]
    fn rewards_and_goal_absorption() {
        let g = build_gridworld(&spec(3, 3, 0.1)).unwrap();
        let loiter = Direction::Loiter.action();
        assert_eq!(g.mdp.successors(g.goal, loiter).unwrap(), &[(g.goal, 1.0)]);
        assert_eq!(g.mdp.reward(g.goal, loiter), 0.0);
        assert_eq!(g.mdp.reward(g.start, loiter), -1.0);
        assert_eq!(g.mdp.reward(g.start, Direction::East.action()), -1.0);
        assert_eq!(
            g.mdp.reward(g.start, Direction::NorthEast.action()),
            -std::f64::consts::SQRT_2
        );
        assert!(g.mdp.terminal_rewards().iter().all(|&w| w == 0.0));
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = spec(3, 3, 1.0);
        assert!(build_gridworld(&s).is_err());
        s.slip = 0.1;
        s.true_constraints.push(ConstrainedCell {
            cell: s.goal,
            psi: 0.25,
        });
        assert!(build_gridworld(&s).is_err());
        s.true_constraints = vec![ConstrainedCell {
            cell: [0, 0],
            psi: 0.0,
        }];
        assert!(build_gridworld(&s).is_err());
        s.true_constraints = vec![ConstrainedCell {
            cell: [5, 0],
            psi: 0.5,
        }];
        assert!(build_gridworld(&s).is_err());
    }

    #[test]
    fn ground_truth_psi() {
        let mut s = spec(3, 3, 0.1);
        s.true_constraints.push(ConstrainedCell {
            cell: [1, 1],
            psi: 0.25,
        });
        let g = build_gridworld(&s).unwrap();
        assert_eq!(
            g.ground_truth.constrained_states().collect::<Vec<_>>(),
            vec![4]
        );
        assert_eq!(g.ground_truth.psi[4], 0.25);
    }
}
