//! Safe and stable state membership.
//!
//! Agent `i` is safe when its center is at least `2 r_robot + m` from every
//! other robot and `r_robot + r_obstacle + m` from every obstacle; equality
//! counts as safe. Agent `i` is stable when it is at rest *and the whole
//! system* is safe.

use crate::error::{Error, Result};
use crate::model::{JointState, Scenario};

/// Speeds at or below this count as "at rest".
pub const REST_TOLERANCE: f64 = 1e-6;

pub fn agent_clearance(s: &Scenario) -> f64 {
    2.0 * s.r_robot + s.margin_m
}

pub fn obstacle_clearance(s: &Scenario) -> f64 {
    s.r_robot + s.r_obstacle + s.margin_m
}

pub fn is_at_rest(v: f64) -> bool {
    v <= REST_TOLERANCE
}

fn check_index(x: &JointState, i: usize) -> Result<()> {
    if i < x.n_agents() {
        Ok(())
    } else {
        Err(Error::AgentIndex {
            index: i,
            n: x.n_agents(),
        })
    }
}

fn agent_safe_unchecked(x: &JointState, i: usize, s: &Scenario) -> bool {
    let p = x.agents[i].position();
    let gap = agent_clearance(s);
    let obstacle_gap = obstacle_clearance(s);
    x.agents
        .iter()
        .enumerate()
        .all(|(j, other)| j == i || p.distance(other.position()) >= gap)
        && x.obstacles.iter().all(|&z| p.distance(z) >= obstacle_gap)
}

pub fn is_safe_agent(x: &JointState, i: usize, s: &Scenario) -> Result<bool> {
    check_index(x, i)?;
    Ok(agent_safe_unchecked(x, i, s))
}

/// Per-agent safety verdicts, each unordered pair evaluated once.
pub fn safety_flags(x: &JointState, s: &Scenario) -> Vec<bool> {
    let n = x.n_agents();
    let gap = agent_clearance(s);
    let obstacle_gap = obstacle_clearance(s);
    let mut flags: Vec<bool> = x
        .agents
        .iter()
        .map(|a| {
            let p = a.position();
            x.obstacles.iter().all(|&z| p.distance(z) >= obstacle_gap)
        })
        .collect();
    for i in 0..n {
        let p = x.agents[i].position();
        for j in (i + 1)..n {
            if p.distance(x.agents[j].position()) < gap {
                flags[i] = false;
                flags[j] = false;
            }
        }
    }
    flags
}

pub fn is_safe(x: &JointState, s: &Scenario) -> bool {
    (0..x.n_agents()).all(|i| agent_safe_unchecked(x, i, s))
}

pub fn is_stable_agent(x: &JointState, i: usize, s: &Scenario) -> Result<bool> {
    check_index(x, i)?;
    Ok(is_at_rest(x.agents[i].v) && is_safe(x, s))
}

pub fn is_stable(x: &JointState, s: &Scenario) -> bool {
    x.agents.iter().all(|a| is_at_rest(a.v)) && is_safe(x, s)
}
