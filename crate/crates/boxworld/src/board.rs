//! Board representation, level generation and the ASCII board format.

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::EnvError;

pub const GRID_SIZE: usize = 8;
pub const MAX_STEPS: u32 = 75;
pub const NUM_BOXES: usize = 12;
pub const NUM_GOALS: usize = 5;
pub const NUM_OBSTACLES: usize = 6;

/// Tile coordinate; row 0 is the top row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pos {
    pub row: usize,
    pub col: usize,
}

impl Pos {
    pub const fn new(row: usize, col: usize) -> Self {
        Pos { row, col }
    }

    /// Neighbouring tile in direction `a`, or `None` when it is off the grid.
    pub fn offset(self, a: Action) -> Option<Pos> {
        let (dr, dc) = a.delta();
        let row = self.row as isize + dr;
        let col = self.col as isize + dc;
        let n = GRID_SIZE as isize;
        if (0..n).contains(&row) && (0..n).contains(&col) {
            Some(Pos::new(row as usize, col as usize))
        } else {
            None
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    /// `(d_row, d_col)`.
    pub fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Action::Up => "up",
            Action::Down => "down",
            Action::Left => "left",
            Action::Right => "right",
        };
        f.write_str(s)
    }
}

/// Full environment state. `agent` is `None` once the agent has left the grid.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoardState {
    pub agent: Option<Pos>,
    pub boxes: BTreeSet<Pos>,
    pub goals: BTreeSet<Pos>,
    pub obstacles: BTreeSet<Pos>,
    pub steps_elapsed: u32,
    pub done: bool,
}

impl BoardState {
    /// Sample a fresh level: 24 distinct tiles drawn uniformly without
    /// replacement from the central 6×6 block, assigned in the order
    /// agent, boxes, goals, obstacles.
    pub fn generate<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut tiles: Vec<Pos> = (1..GRID_SIZE - 1)
            .flat_map(|r| (1..GRID_SIZE - 1).map(move |c| Pos::new(r, c)))
            .collect();
        let total = 1 + NUM_BOXES + NUM_GOALS + NUM_OBSTACLES;
        let (picked, _) = tiles.partial_shuffle(rng, total);
        let agent = picked[0];
        let boxes = picked[1..1 + NUM_BOXES].iter().copied().collect();
        let goals = picked[1 + NUM_BOXES..1 + NUM_BOXES + NUM_GOALS]
            .iter()
            .copied()
            .collect();
        let obstacles = picked[1 + NUM_BOXES + NUM_GOALS..]
            .iter()
            .copied()
            .collect();
        BoardState {
            agent: Some(agent),
            boxes,
            goals,
            obstacles,
            steps_elapsed: 0,
            done: false,
        }
    }

    /// Parse an 8×8 ASCII board (`A`, `B`, `G`, `O`, `.`); blank lines and
    /// lines starting with `#` are ignored. Exactly one agent is required.
    pub fn from_ascii(text: &str) -> Result<Self, EnvError> {
        let rows: Vec<&str> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect();
        if rows.len() != GRID_SIZE {
            return Err(EnvError::MalformedBoard(format!(
                "expected {GRID_SIZE} rows, found {}",
                rows.len()
            )));
        }
        let mut state = BoardState {
            agent: None,
            boxes: BTreeSet::new(),
            goals: BTreeSet::new(),
            obstacles: BTreeSet::new(),
            steps_elapsed: 0,
            done: false,
        };
        for (r, line) in rows.iter().enumerate() {
            let chars: Vec<char> = line.chars().collect();
            if chars.len() != GRID_SIZE {
                return Err(EnvError::MalformedBoard(format!(
                    "row {r} has {} tiles, expected {GRID_SIZE}",
                    chars.len()
                )));
            }
            for (c, ch) in chars.into_iter().enumerate() {
                let p = Pos::new(r, c);
                match ch {
                    'A' if state.agent.is_some() => {
                        return Err(EnvError::MalformedBoard("more than one agent".into()));
                    }
                    'A' => state.agent = Some(p),
                    'B' => {
                        state.boxes.insert(p);
                    }
                    'G' => {
                        state.goals.insert(p);
                    }
                    'O' => {
                        state.obstacles.insert(p);
                    }
                    '.' => {}
                    other => {
                        return Err(EnvError::MalformedBoard(format!(
                            "unknown tile '{other}' at ({r}, {c})"
                        )));
                    }
                }
            }
        }
        if state.agent.is_none() {
            return Err(EnvError::MalformedBoard("no agent on the board".into()));
        }
        state.done = state.boxes.is_empty();
        Ok(state)
    }

    /// One character per tile; overlapping entities show the first of
    /// agent, box, goal, obstacle.
    pub fn to_ascii(&self) -> String {
        let mut out = String::with_capacity(GRID_SIZE * (GRID_SIZE + 1));
        for r in 0..GRID_SIZE {
            for c in 0..GRID_SIZE {
                let p = Pos::new(r, c);
                let ch = if self.agent == Some(p) {
                    'A'
                } else if self.boxes.contains(&p) {
                    'B'
                } else if self.goals.contains(&p) {
                    'G'
                } else if self.obstacles.contains(&p) {
                    'O'
                } else {
                    '.'
                };
                out.push(ch);
            }
            out.push('\n');
        }
        out
    }
}

/// Deterministic level for a seed.
pub fn generate_level(seed: u64) -> BoardState {
    BoardState::generate(&mut ChaCha8Rng::seed_from_u64(seed))
}
