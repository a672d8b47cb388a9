//! Episode runner, evaluation metrics and batch driver.
//!
//! Episodes never end early: safety violations and goal arrivals are
//! recorded and the simulation continues for the full `episode_len` steps,
//! so the "safe throughout" and "reached at any point" flags cover the whole
//! horizon.

mod batch;
mod export;
mod metrics;

use std::fmt;
use std::str::FromStr;

use crate::dynamics::{step_joint, Policy};
use crate::error::{Error, Result};
use crate::model::{episode_rng, sample_initial_state, Configuration, JointAction, JointState, Scenario};
use crate::safety;
use crate::shield::{self, ShieldDecision};

pub use batch::{audit, run_batch, summarize, BatchSummary, ModeBatch};
pub use export::{
    check_outputs, read_summary, read_traces, trace_file_name, write_summary, write_traces, CheckReport, TraceHeader,
    TRACE_FORMAT,
};
pub use metrics::{
    metric_pr_reach_goal, metric_pr_safe, pair_fraction, reached_goal, reward_terms, safe_throughout, RewardParams,
    RewardTerms,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ShieldMode {
    /// Task policy applied directly.
    None,
    Naive,
    Mamps,
    /// Exhaustive configuration search.
    Oracle,
}

impl ShieldMode {
    pub const ALL: [ShieldMode; 4] = [
        ShieldMode::None,
        ShieldMode::Naive,
        ShieldMode::Mamps,
        ShieldMode::Oracle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ShieldMode::None => "none",
            ShieldMode::Naive => "naive",
            ShieldMode::Mamps => "mamps",
            ShieldMode::Oracle => "oracle",
        }
    }

    pub fn is_shielded(self) -> bool {
        self != ShieldMode::None
    }
}

impl fmt::Display for ShieldMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ShieldMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        ShieldMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown shield mode `{s}` (expected none, naive, mamps or oracle)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub action: JointAction,
    pub config: Configuration,
    pub fell_back: bool,
    /// Recoverability of the state the decision was made in; `None` when
    /// unshielded.
    pub precondition_held: Option<bool>,
    pub iterations: usize,
    pub reward: RewardTerms,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub seed: u64,
    /// `x_0 ..= x_T`, one more than the number of steps.
    pub states: Vec<JointState>,
    pub steps: Vec<StepRecord>,
    pub safe: Vec<bool>,
    pub reached: Vec<bool>,
}

impl EpisodeRecord {
    pub fn n_agents(&self) -> usize {
        self.safe.len()
    }

    /// Every stored flag matches a recomputation from the trajectory.
    pub fn flags_consistent(&self, s: &Scenario, epsilon: f64) -> bool {
        self.safe == safe_throughout(&self.states, s) && self.reached == reached_goal(&self.states, epsilon)
    }
}

/// Selects the joint action for state `x` under `mode`.
pub fn decide<P: Policy + ?Sized>(x: &JointState, mode: ShieldMode, task: &P, s: &Scenario) -> Result<ShieldDecision> {
    Ok(match mode {
        ShieldMode::None => ShieldDecision {
            config: Configuration::all_task(x.n_agents()),
            action: crate::dynamics::joint_action(x, task),
            iterations: 0,
            fell_back: false,
            precondition_held: true,
        },
        ShieldMode::Naive => shield::naive_shield(x, task, s),
        ShieldMode::Mamps => shield::mamps_shield(x, task, s),
        ShieldMode::Oracle => shield::oracle_shield(x, task, s)?,
    })
}

pub fn run_episode<P: Policy + ?Sized>(
    s: &Scenario,
    mode: ShieldMode,
    task: &P,
    episode: usize,
    seed: u64,
    rewards: &RewardParams,
) -> Result<EpisodeRecord> {
    s.validate().map_err(Error::InvalidScenario)?;
    let mut x = sample_initial_state(s, &mut episode_rng(seed))?;
    let mut states = Vec::with_capacity(s.episode_len + 1);
    let mut steps = Vec::with_capacity(s.episode_len);
    for _ in 0..s.episode_len {
        let d = decide(&x, mode, task, s)?;
        let next = step_joint(&x, &d.action, s)?;
        steps.push(StepRecord {
            reward: reward_terms(&x, s, rewards),
            action: d.action,
            config: d.config,
            fell_back: d.fell_back,
            precondition_held: mode.is_shielded().then_some(d.precondition_held),
            iterations: d.iterations,
        });
        states.push(std::mem::replace(&mut x, next));
    }
    states.push(x);
    let safe = safe_throughout(&states, s);
    let reached = reached_goal(&states, rewards.epsilon);
    Ok(EpisodeRecord {
        episode,
        seed,
        states,
        steps,
        safe,
        reached,
    })
}

/// Number of recorded states that violate safety.
pub fn unsafe_state_count(record: &EpisodeRecord, s: &Scenario) -> usize {
    record.states.iter().filter(|x| !safety::is_safe(x, s)).count()
}
