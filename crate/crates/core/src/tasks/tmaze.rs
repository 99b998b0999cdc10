//! T-maze: a corridor with a cue at the entrance and a binary decision at
//! the junction.
//!
//! The agent starts at position 0, where the observation shows which arm is
//! rewarded. Every action taken in the corridor moves the agent one cell
//! forward at a cost of −0.01. At the junction (position `corridor_len`) a
//! turn towards the cued arm pays +4, anything else −0.1, and the episode
//! ends. An episode is therefore exactly `corridor_len + 1` decisions, and
//! the observations after position 0 carry no information about the cue.
//!
//! Observations are `[cue_left, cue_right, at_junction]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{RealVector, Rng};

pub const OBS_DIM: usize = 3;
pub const STEP_COST: f64 = -0.01;
pub const MATCH_REWARD: f64 = 4.0;
pub const MISMATCH_REWARD: f64 = -0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cue {
    Left,
    Right,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Forward,
    Left,
    Right,
}

impl Action {
    /// Actions available to a two-way policy head, in head order.
    pub const TURNS: [Action; 2] = [Action::Left, Action::Right];

    pub fn from_turn_index(i: usize) -> Action {
        Action::TURNS[i]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TMazeEnv {
    pub corridor_len: usize,
    pub cue: Cue,
    pub pos: usize,
    pub done: bool,
}

impl TMazeEnv {
    pub fn new(corridor_len: usize, cue: Cue) -> Result<Self> {
        if corridor_len == 0 {
            return Err(Error::Config("corridor length must be at least 1".into()));
        }
        Ok(TMazeEnv { corridor_len, cue, pos: 0, done: false })
    }

    /// Start a fresh episode with a uniformly drawn cue; returns the first observation.
    pub fn reset(&mut self, rng: &mut Rng) -> RealVector {
        self.cue = if rng.bernoulli(0.5) { Cue::Left } else { Cue::Right };
        self.pos = 0;
        self.done = false;
        self.observe()
    }

    pub fn observe(&self) -> RealVector {
        let mut obs = RealVector::zeros(OBS_DIM);
        if self.done {
            return obs;
        }
        if self.pos == 0 {
            obs[match self.cue {
                Cue::Left => 0,
                Cue::Right => 1,
            }] = 1.0;
        }
        if self.pos == self.corridor_len {
            obs[2] = 1.0;
        }
        obs
    }

    pub fn at_junction(&self) -> bool {
        self.pos == self.corridor_len
    }
}

/// Advance the environment. Returns `(next_obs, reward, done)`.
pub fn tmaze_step(env: &mut TMazeEnv, action: Action) -> Result<(RealVector, f64, bool)> {
    if env.done {
        return Err(Error::Contract("stepping a finished T-maze episode".into()));
    }
    if env.at_junction() {
        let matched = matches!((env.cue, action), (Cue::Left, Action::Left) | (Cue::Right, Action::Right));
        env.done = true;
        let reward = if matched { MATCH_REWARD } else { MISMATCH_REWARD };
        return Ok((env.observe(), reward, true));
    }
    env.pos += 1;
    Ok((env.observe(), STEP_COST, false))
}

/// One environment interaction as recorded by an actor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: RealVector,
    pub action: usize,
    pub reward: f64,
    pub done: bool,
    pub value: f64,
    pub log_prob: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shortest_corridor_schedule() {
        let mut env = TMazeEnv::new(1, Cue::Left).unwrap();
        assert_eq!(env.observe().as_slice(), &[1.0, 0.0, 0.0]);
        let (obs, r, done) = tmaze_step(&mut env, Action::Forward).unwrap();
        assert_eq!((r, done), (-0.01, false));
        assert_eq!(obs.as_slice(), &[0.0, 0.0, 1.0]);
        let (_, r, done) = tmaze_step(&mut env, Action::Left).unwrap();
        assert_eq!((r, done), (4.0, true));
        assert!(matches!(tmaze_step(&mut env, Action::Left), Err(Error::Contract(_))));
    }

    #[test]
    fn mismatch_and_forward_at_junction() {
        for action in [Action::Left, Action::Forward] {
            let mut env = TMazeEnv::new(2, Cue::Right).unwrap();
            tmaze_step(&mut env, Action::Right).unwrap();
            tmaze_step(&mut env, Action::Left).unwrap();
            let (_, r, done) = tmaze_step(&mut env, action).unwrap();
            assert_eq!((r, done), (-0.1, true));
        }
    }

    #[test]
    fn episode_length_is_corridor_plus_one() {
        let mut rng = Rng::seed_from_u64(1);
        for len in [1, 5, 12] {
            let mut env = TMazeEnv::new(len, Cue::Left).unwrap();
            env.reset(&mut rng);
            let mut steps = 0;
            loop {
                steps += 1;
                let a = Action::TURNS[rng.int_inclusive(0, 1)];
                if tmaze_step(&mut env, a).unwrap().2 {
                    break;
                }
            }
            assert_eq!(steps, len + 1);
        }
        assert!(TMazeEnv::new(0, Cue::Left).is_err());
    }

    #[test]
    fn observations_after_start_ignore_the_cue() {
        let mut a = TMazeEnv::new(6, Cue::Left).unwrap();
        let mut b = TMazeEnv::new(6, Cue::Right).unwrap();
        assert_ne!(a.observe(), b.observe());
        for _ in 0..6 {
            let (oa, ..) = tmaze_step(&mut a, Action::Forward).unwrap();
            let (ob, ..) = tmaze_step(&mut b, Action::Forward).unwrap();
            let bytes = |v: &RealVector| v.iter().flat_map(|x| x.to_le_bytes()).collect::<Vec<u8>>();
            assert_eq!(bytes(&oa), bytes(&ob));
        }
    }

    #[test]
    fn random_policy_succeeds_half_the_time() {
        let mut rng = Rng::seed_from_u64(2);
        let mut env = TMazeEnv::new(3, Cue::Left).unwrap();
        let episodes = 20_000;
        let mut wins = 0;
        for _ in 0..episodes {
            env.reset(&mut rng);
            loop {
                let (_, r, done) = tmaze_step(&mut env, Action::TURNS[rng.int_inclusive(0, 1)]).unwrap();
                if done {
                    wins += usize::from(r == MATCH_REWARD);
                    break;
                }
            }
        }
        assert!((wins as f64 / episodes as f64 - 0.5).abs() < 0.02);
    }

    #[test]
    fn fixed_policy_return_in_closed_form() {
        // Always-left under cue left: −0.01 per corridor cell then +4.
        let gamma: f64 = 0.99;
        let len = 4;
        let mut env = TMazeEnv::new(len, Cue::Left).unwrap();
        let mut ret = 0.0;
        let mut discount = 1.0;
        loop {
            let (_, r, done) = tmaze_step(&mut env, Action::Left).unwrap();
            ret += discount * r;
            discount *= gamma;
            if done {
                break;
            }
        }
        let corridor: f64 = -0.01 * (1.0 - gamma.powi(len as i32)) / (1.0 - gamma);
        assert!((ret - (corridor + 4.0 * gamma.powi(len as i32))).abs() < 1e-12);
    }
}
