//! Episode-level safety/goal flags, batch fractions and reward terms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{JointState, Scenario};
use crate::safety;

use super::EpisodeRecord;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardParams {
    /// Weight of the arrival bonus.
    pub lambda: f64,
    /// Weight of the collision penalty.
    pub lambda_prime: f64,
    /// Arrival radius for the bonus and for the goal-reached flag.
    pub epsilon: f64,
}

impl RewardParams {
    pub fn for_scenario(s: &Scenario) -> Self {
        Self {
            lambda: 10.0,
            lambda_prime: 10.0,
            epsilon: s.r_goal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardTerms {
    pub goal: f64,
    pub bonus: f64,
    pub safe: f64,
    pub total: f64,
}

pub fn reward_terms(x: &JointState, s: &Scenario, p: &RewardParams) -> RewardTerms {
    let mut goal = 0.0;
    let mut bonus = 0.0;
    for (agent, g) in x.agents.iter().zip(x.goals.iter()) {
        let d = agent.position().distance(*g);
        goal -= d;
        if d <= p.epsilon {
            bonus += 1.0;
        }
    }
    let gap = safety::agent_clearance(s);
    let obstacle_gap = safety::obstacle_clearance(s);
    let mut penalty = 0.0;
    for (i, a) in x.agents.iter().enumerate() {
        let pa = a.position();
        for b in &x.agents[i + 1..] {
            if pa.distance(b.position()) < gap {
                penalty -= 1.0;
            }
        }
        for &z in x.obstacles.iter() {
            if pa.distance(z) < obstacle_gap {
                penalty -= 1.0;
            }
        }
    }
    RewardTerms {
        goal,
        bonus,
        safe: penalty,
        total: goal + p.lambda * bonus + p.lambda_prime * penalty,
    }
}

/// Per-agent flag: safe in every state of the trajectory.
pub fn safe_throughout(states: &[JointState], s: &Scenario) -> Vec<bool> {
    let n = states.first().map_or(0, JointState::n_agents);
    let mut flags = vec![true; n];
    for x in states {
        for (f, ok) in flags.iter_mut().zip(safety::safety_flags(x, s)) {
            *f &= ok;
        }
    }
    flags
}

/// Per-agent flag: within `epsilon` of its goal in at least one state.
pub fn reached_goal(states: &[JointState], epsilon: f64) -> Vec<bool> {
    let n = states.first().map_or(0, JointState::n_agents);
    let mut flags = vec![false; n];
    for x in states {
        for (i, (a, g)) in x.agents.iter().zip(x.goals.iter()).enumerate() {
            flags[i] |= a.position().distance(*g) <= epsilon;
        }
    }
    flags
}

/// Fraction of true entries over all agent/episode pairs.
pub fn pair_fraction<'a>(flags: impl IntoIterator<Item = &'a [bool]>) -> Result<f64> {
    let (mut hits, mut total) = (0usize, 0usize);
    for episode in flags {
        hits += episode.iter().filter(|&&f| f).count();
        total += episode.len();
    }
    if total == 0 {
        return Err(Error::EmptyRecords);
    }
    Ok(hits as f64 / total as f64)
}

pub fn metric_pr_safe(records: &[EpisodeRecord]) -> Result<f64> {
    pair_fraction(records.iter().map(|r| r.safe.as_slice()))
}

pub fn metric_pr_reach_goal(records: &[EpisodeRecord]) -> Result<f64> {
    pair_fraction(records.iter().map(|r| r.reached.as_slice()))
}
