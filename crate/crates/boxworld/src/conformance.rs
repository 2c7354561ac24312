//! Hand-built board/action cases covering every movement and reward rule,
//! with the exact next state and reward each must produce.

use std::collections::BTreeSet;

use crate::board::{Action, BoardState, Pos};
use crate::rules::{self, Rules};

type Tiles = &'static [(usize, usize)];

pub struct Case {
    pub name: &'static str,
    pub agent: (usize, usize),
    pub boxes: Tiles,
    pub goals: Tiles,
    pub obstacles: Tiles,
    pub steps_elapsed: u32,
    pub goals_consumable: bool,
    pub action: Action,
    pub expect_agent: Option<(usize, usize)>,
    pub expect_boxes: Tiles,
    /// `None` when goals are unchanged.
    pub expect_goals: Option<Tiles>,
    pub expect_reward: f64,
    pub expect_done: bool,
}

impl Case {
    pub fn initial(&self) -> BoardState {
        BoardState {
            agent: Some(pos(self.agent)),
            boxes: set(self.boxes),
            goals: set(self.goals),
            obstacles: set(self.obstacles),
            steps_elapsed: self.steps_elapsed,
            done: false,
        }
    }

    /// Run the case; `Err` describes the first mismatch. Rewards must match
    /// to the last bit of the summed components.
    pub fn check(&self) -> Result<(), String> {
        let rules = Rules {
            goals_consumable: self.goals_consumable,
        };
        let (next, reward) =
            rules::step(&self.initial(), self.action, &rules).map_err(|e| e.to_string())?;
        let want_agent = self.expect_agent.map(pos);
        if next.agent != want_agent {
            return Err(format!("agent {:?}, expected {:?}", next.agent, want_agent));
        }
        if next.boxes != set(self.expect_boxes) {
            return Err(format!("boxes {:?}", next.boxes));
        }
        let want_goals = set(self.expect_goals.unwrap_or(self.goals));
        if next.goals != want_goals {
            return Err(format!("goals {:?}", next.goals));
        }
        if next.obstacles != set(self.obstacles) {
            return Err("obstacles changed".into());
        }
        if next.steps_elapsed != self.steps_elapsed + 1 {
            return Err(format!("steps_elapsed {}", next.steps_elapsed));
        }
        if reward != self.expect_reward {
            return Err(format!("reward {reward}, expected {}", self.expect_reward));
        }
        if next.done != self.expect_done {
            return Err(format!("done {}, expected {}", next.done, self.expect_done));
        }
        Ok(())
    }
}

fn pos((r, c): (usize, usize)) -> Pos {
    Pos::new(r, c)
}

fn set(t: Tiles) -> BTreeSet<Pos> {
    t.iter().copied().map(pos).collect()
}

// Reward sums are written as the same expression the rules evaluate, so
// exact comparison is meaningful.
const STEP: f64 = -0.01;
const OFF: f64 = -1.0 + STEP;
const BOX_OFF: f64 = -0.1 + STEP;
const BLOCKED: f64 = -0.1 + STEP;
const GOAL: f64 = 1.0 + STEP;
const OBST: f64 = -0.2 + STEP;
const OBST2: f64 = -0.2 + -0.2 + STEP;

const FAR: Tiles = &[(6, 6)];

macro_rules! case {
    ($name:expr, agent $a:expr, boxes $b:expr, goals $g:expr, obst $o:expr, steps $s:expr, consume $c:expr,
     $act:ident => agent $ea:expr, boxes $eb:expr, goals $eg:expr, reward $r:expr, done $d:expr) => {
        Case {
            name: $name,
            agent: $a,
            boxes: $b,
            goals: $g,
            obstacles: $o,
            steps_elapsed: $s,
            goals_consumable: $c,
            action: Action::$act,
            expect_agent: $ea,
            expect_boxes: $eb,
            expect_goals: $eg,
            expect_reward: $r,
            expect_done: $d,
        }
    };
}

pub const CASES: &[Case] = &[
    case!("move up", agent (3, 3), boxes FAR, goals &[], obst &[], steps 0, consume false,
          Up => agent Some((2, 3)), boxes FAR, goals None, reward STEP, done false),
    case!("move down", agent (3, 3), boxes FAR, goals &[], obst &[], steps 0, consume false,
          Down => agent Some((4, 3)), boxes FAR, goals None, reward STEP, done false),
    case!("move left", agent (3, 3), boxes FAR, goals &[], obst &[], steps 0, consume false,
          Left => agent Some((3, 2)), boxes FAR, goals None, reward STEP, done false),
    case!("move right", agent (3, 3), boxes FAR, goals &[], obst &[], steps 0, consume false,
          Right => agent Some((3, 4)), boxes FAR, goals None, reward STEP, done false),
    case!("walk onto empty goal", agent (3, 3), boxes FAR, goals &[(3, 4)], obst &[], steps 0, consume true,
          Right => agent Some((3, 4)), boxes FAR, goals None, reward STEP, done false),
    case!("off grid up", agent (0, 5), boxes FAR, goals &[], obst &[], steps 0, consume false,
          Up => agent None, boxes FAR, goals None, reward OFF, done true),
    case!("off grid down", agent (7, 2), boxes FAR, goals &[], obst &[], steps 0, consume false,
          Down => agent None, boxes FAR, goals None, reward OFF, done true),
    case!("off grid left", agent (4, 0), boxes FAR, goals &[], obst &[], steps 0, consume false,
          Left => agent None, boxes FAR, goals None, reward OFF, done true),
    case!("off grid right", agent (4, 7), boxes FAR, goals &[], obst &[], steps 0, consume false,
          Right => agent None, boxes FAR, goals None, reward OFF, done true),
    case!("off grid from obstacle", agent (0, 1), boxes FAR, goals &[], obst &[(0, 1)], steps 0, consume false,
          Up => agent None, boxes FAR, goals None, reward OFF, done true),
    case!("push box right", agent (3, 3), boxes &[(3, 4), (6, 6)], goals &[], obst &[], steps 0, consume false,
          Right => agent Some((3, 4)), boxes &[(3, 5), (6, 6)], goals None, reward STEP, done false),
    case!("push box up", agent (3, 3), boxes &[(2, 3), (6, 6)], goals &[], obst &[], steps 0, consume false,
          Up => agent Some((2, 3)), boxes &[(1, 3), (6, 6)], goals None, reward STEP, done false),
    case!("push box off right edge", agent (3, 6), boxes &[(3, 7), (0, 0)], goals &[], obst &[], steps 0, consume false,
          Right => agent Some((3, 7)), boxes &[(0, 0)], goals None, reward BOX_OFF, done false),
    case!("push box off top edge", agent (1, 2), boxes &[(0, 2), (6, 6)], goals &[], obst &[], steps 0, consume false,
          Up => agent Some((0, 2)), boxes FAR, goals None, reward BOX_OFF, done false),
    case!("push last box off grid", agent (6, 4), boxes &[(7, 4)], goals &[], obst &[], steps 0, consume false,
          Down => agent Some((7, 4)), boxes &[], goals None, reward BOX_OFF, done true),
    case!("blocked push", agent (2, 2), boxes &[(2, 3), (2, 4)], goals &[], obst &[], steps 0, consume false,
          Right => agent Some((2, 2)), boxes &[(2, 3), (2, 4)], goals None, reward BLOCKED, done false),
    case!("blocked push down", agent (1, 5), boxes &[(2, 5), (3, 5)], goals &[], obst &[], steps 0, consume false,
          Down => agent Some((1, 5)), boxes &[(2, 5), (3, 5)], goals None, reward BLOCKED, done false),
    case!("blocked push at edge", agent (3, 5), boxes &[(3, 6), (3, 7)], goals &[], obst &[], steps 0, consume false,
          Right => agent Some((3, 5)), boxes &[(3, 6), (3, 7)], goals None, reward BLOCKED, done false),
    case!("blocked by box on obstacle", agent (4, 1), boxes &[(4, 2), (4, 3)], goals &[], obst &[(4, 3)], steps 0, consume false,
          Right => agent Some((4, 1)), boxes &[(4, 2), (4, 3)], goals None, reward BLOCKED, done false),
    case!("deliver box to goal", agent (3, 3), boxes &[(3, 4), (0, 0)], goals &[(3, 5)], obst &[], steps 0, consume false,
          Right => agent Some((3, 4)), boxes &[(0, 0)], goals None, reward GOAL, done false),
    case!("deliver last box", agent (5, 2), boxes &[(4, 2)], goals &[(3, 2)], obst &[], steps 10, consume false,
          Up => agent Some((4, 2)), boxes &[], goals None, reward GOAL, done true),
    case!("consumable goal removed", agent (3, 3), boxes &[(3, 4), (0, 0)], goals &[(3, 5), (1, 1)], obst &[], steps 0, consume true,
          Right => agent Some((3, 4)), boxes &[(0, 0)], goals Some(&[(1, 1)]), reward GOAL, done false),
    case!("agent onto obstacle", agent (4, 4), boxes FAR, goals &[], obst &[(4, 5)], steps 0, consume false,
          Right => agent Some((4, 5)), boxes FAR, goals None, reward OBST, done false),
    case!("agent leaves obstacle", agent (4, 5), boxes FAR, goals &[], obst &[(4, 5)], steps 0, consume false,
          Left => agent Some((4, 4)), boxes FAR, goals None, reward STEP, done false),
    case!("box onto obstacle", agent (2, 2), boxes &[(3, 2), (6, 6)], goals &[], obst &[(4, 2)], steps 0, consume false,
          Down => agent Some((3, 2)), boxes &[(4, 2), (6, 6)], goals None, reward OBST, done false),
    case!("agent and box onto obstacles", agent (3, 3), boxes &[(3, 4), (6, 6)], goals &[], obst &[(3, 4), (3, 5)], steps 0, consume false,
          Right => agent Some((3, 4)), boxes &[(3, 5), (6, 6)], goals None, reward OBST2, done false),
    case!("box pushed off obstacle", agent (3, 3), boxes &[(3, 4), (6, 6)], goals &[], obst &[(3, 4)], steps 0, consume false,
          Right => agent Some((3, 4)), boxes &[(3, 5), (6, 6)], goals None, reward OBST, done false),
    case!("box off grid from obstacle", agent (5, 1), boxes &[(5, 0), (6, 6)], goals &[], obst &[(5, 0)], steps 0, consume false,
          Left => agent Some((5, 0)), boxes FAR, goals None, reward -0.1 + -0.2 + STEP, done false),
    case!("step 74 times out", agent (3, 3), boxes FAR, goals &[], obst &[], steps 74, consume false,
          Left => agent Some((3, 2)), boxes FAR, goals None, reward STEP, done true),
    case!("step 73 continues", agent (3, 3), boxes FAR, goals &[], obst &[], steps 73, consume false,
          Left => agent Some((3, 2)), boxes FAR, goals None, reward STEP, done false),
    case!("goal on final step", agent (3, 3), boxes &[(3, 4), (0, 0)], goals &[(3, 5)], obst &[], steps 74, consume false,
          Right => agent Some((3, 4)), boxes &[(0, 0)], goals None, reward GOAL, done true),
    case!("off grid on final step", agent (7, 7), boxes FAR, goals &[], obst &[], steps 74, consume false,
          Down => agent None, boxes FAR, goals None, reward OFF, done true),
];
