//! Movement, pushing and reward rules.

use serde::{Deserialize, Serialize};

use crate::board::{Action, BoardState, MAX_STEPS};
use crate::EnvError;

pub const STEP_PENALTY: f64 = -0.01;
pub const AGENT_OFF_GRID_PENALTY: f64 = -1.0;
pub const BOX_OFF_GRID_PENALTY: f64 = -0.1;
pub const BLOCKED_PUSH_PENALTY: f64 = -0.1;
pub const GOAL_REWARD: f64 = 1.0;
pub const OBSTACLE_PENALTY: f64 = -0.2;

/// Lowest and highest reward a single step can produce.
pub const MIN_STEP_REWARD: f64 = -1.01;
pub const MAX_STEP_REWARD: f64 = 0.99;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rules {
    /// Remove a goal once a box has been delivered to it.
    pub goals_consumable: bool,
}

/// Apply one action. Penalties from several rules in the same step add up;
/// the per-step penalty is always included.
pub fn step(
    state: &BoardState,
    action: Action,
    rules: &Rules,
) -> Result<(BoardState, f64), EnvError> {
    if state.done {
        return Err(EnvError::EpisodeDone);
    }
    let agent = state.agent.ok_or(EnvError::EpisodeDone)?;
    let mut next = state.clone();
    let mut reward = 0.0;

    match agent.offset(action) {
        None => {
            next.agent = None;
            reward += AGENT_OFF_GRID_PENALTY;
        }
        Some(target) => {
            let mut agent_moves = true;
            if next.boxes.contains(&target) {
                match target.offset(action) {
                    None => {
                        next.boxes.remove(&target);
                        reward += BOX_OFF_GRID_PENALTY;
                    }
                    Some(beyond) if next.boxes.contains(&beyond) => {
                        agent_moves = false;
                        reward += BLOCKED_PUSH_PENALTY;
                    }
                    Some(beyond) if next.goals.contains(&beyond) => {
                        next.boxes.remove(&target);
                        reward += GOAL_REWARD;
                        if rules.goals_consumable {
                            next.goals.remove(&beyond);
                        }
                    }
                    Some(beyond) => {
                        next.boxes.remove(&target);
                        next.boxes.insert(beyond);
                        if next.obstacles.contains(&beyond) {
                            reward += OBSTACLE_PENALTY;
                        }
                    }
                }
            }
            if agent_moves {
                next.agent = Some(target);
                if next.obstacles.contains(&target) {
                    reward += OBSTACLE_PENALTY;
                }
            }
        }
    }

    reward += STEP_PENALTY;
    next.steps_elapsed += 1;
    next.done = next.agent.is_none() || next.steps_elapsed >= MAX_STEPS || next.boxes.is_empty();
    Ok((next, reward))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::board::Pos;
    use std::collections::BTreeSet;

    fn board(
        agent: (usize, usize),
        boxes: &[(usize, usize)],
        goals: &[(usize, usize)],
        obstacles: &[(usize, usize)],
    ) -> BoardState {
        let set = |v: &[(usize, usize)]| {
            v.iter()
                .map(|&(r, c)| Pos::new(r, c))
                .collect::<BTreeSet<_>>()
        };
        BoardState {
            agent: Some(Pos::new(agent.0, agent.1)),
            boxes: set(boxes),
            goals: set(goals),
            obstacles: set(obstacles),
            steps_elapsed: 0,
            done: false,
        }
    }

    #[test]
    fn push_into_goal() {
        let s = board((3, 3), &[(3, 4), (0, 0)], &[(3, 5)], &[]);
        let (n, r) = step(&s, Action::Right, &Rules::default()).unwrap();
        assert_eq!(n.agent, Some(Pos::new(3, 4)));
        assert!(!n.boxes.contains(&Pos::new(3, 4)));
        assert!(n.goals.contains(&Pos::new(3, 5)));
        assert!((r - 0.99).abs() < 1e-12);
    }

    #[test]
    fn consumable_goals_disappear() {
        let s = board((3, 3), &[(3, 4), (0, 0)], &[(3, 5)], &[]);
        let rules = Rules {
            goals_consumable: true,
        };
        let (n, _) = step(&s, Action::Right, &rules).unwrap();
        assert!(n.goals.is_empty());
    }

    #[test]
    fn walking_off_grid_ends_episode() {
        let s = board((0, 5), &[(3, 3)], &[], &[]);
        let (n, r) = step(&s, Action::Up, &Rules::default()).unwrap();
        assert!(n.done);
        assert_eq!(n.agent, None);
        assert!((r + 1.01).abs() < 1e-12);
    }

    #[test]
    fn blocked_push_changes_nothing() {
        let s = board((2, 2), &[(2, 3), (2, 4)], &[], &[]);
        let (n, r) = step(&s, Action::Right, &Rules::default()).unwrap();
        assert_eq!(n.agent, s.agent);
        assert_eq!(n.boxes, s.boxes);
        assert!((r + 0.11).abs() < 1e-12);
    }

    #[test]
    fn stepping_on_obstacle() {
        let s = board((4, 4), &[(0, 0)], &[], &[(4, 5)]);
        let (n, r) = step(&s, Action::Right, &Rules::default()).unwrap();
        assert_eq!(n.agent, Some(Pos::new(4, 5)));
        assert!((r + 0.21).abs() < 1e-12);
    }

    #[test]
    fn step_after_done_is_an_error() {
        let mut s = board((4, 4), &[(0, 0)], &[], &[]);
        s.done = true;
        assert!(matches!(
            step(&s, Action::Up, &Rules::default()),
            Err(EnvError::EpisodeDone)
        ));
    }

    #[test]
    fn timeout_after_max_steps() {
        let mut s = board((4, 4), &[(0, 0)], &[], &[]);
        s.steps_elapsed = MAX_STEPS - 1;
        let (n, _) = step(&s, Action::Left, &Rules::default()).unwrap();
        assert!(n.done);
        assert_eq!(n.steps_elapsed, MAX_STEPS);
    }
}
