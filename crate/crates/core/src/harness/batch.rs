use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::Scenario;
use crate::policy::PolicyKind;

use super::{
    metric_pr_reach_goal, metric_pr_safe, run_episode, unsafe_state_count, EpisodeRecord, RewardParams, ShieldMode,
};

/// Aggregate metrics for one (preset, mode) batch. One row of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub preset: String,
    pub mode: String,
    pub episodes: usize,
    pub n_agents: usize,
    pub pr_safe: f64,
    pub pr_reach_goal: f64,
    /// Mean fraction of agents on the task policy per step.
    pub learned_fraction: f64,
    /// Fraction of steps that fell back to the all-backup configuration.
    pub fallback_rate: f64,
    pub unsafe_states: usize,
    pub precondition_failures: usize,
    /// Not exported; wall-clock time differs run to run.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone)]
pub struct ModeBatch {
    pub mode: ShieldMode,
    pub summary: BatchSummary,
    pub records: Vec<EpisodeRecord>,
}

pub fn summarize(preset: &str, mode: ShieldMode, s: &Scenario, records: &[EpisodeRecord]) -> Result<BatchSummary> {
    let pr_safe = metric_pr_safe(records)?;
    let pr_reach_goal = metric_pr_reach_goal(records)?;
    let mut task_agent_steps = 0usize;
    let mut agent_steps = 0usize;
    let mut fallbacks = 0usize;
    let mut steps = 0usize;
    let mut precondition_failures = 0usize;
    for r in records {
        for st in &r.steps {
            task_agent_steps += st.config.norm();
            agent_steps += st.config.len();
            fallbacks += usize::from(st.fell_back);
            precondition_failures += usize::from(st.precondition_held == Some(false));
            steps += 1;
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(BatchSummary {
        preset: preset.to_string(),
        mode: mode.to_string(),
        episodes: records.len(),
        n_agents: records.first().map_or(s.n_agents, EpisodeRecord::n_agents),
        pr_safe,
        pr_reach_goal,
        learned_fraction: ratio(task_agent_steps, agent_steps),
        fallback_rate: ratio(fallbacks, steps),
        unsafe_states: records.iter().map(|r| unsafe_state_count(r, s)).sum(),
        precondition_failures,
        wall_clock_secs: 0.0,
    })
}

/// Runs `episodes` seeded episodes per mode. Episode `i` uses seed
/// `base_seed + i` in every mode, so initial states are paired.
pub fn run_batch(
    s: &Scenario,
    preset: &str,
    modes: &[ShieldMode],
    task: &PolicyKind,
    episodes: usize,
    base_seed: u64,
    rewards: &RewardParams,
) -> Result<Vec<ModeBatch>> {
    let policy = task.build(s)?;
    modes
        .iter()
        .map(|&mode| {
            let started = Instant::now();
            let records = (0..episodes)
                .into_par_iter()
                .map(|i| run_episode(s, mode, policy.as_ref(), i, base_seed.wrapping_add(i as u64), rewards))
                .collect::<Result<Vec<_>>>()?;
            let mut summary = summarize(preset, mode, s, &records)?;
            summary.wall_clock_secs = started.elapsed().as_secs_f64();
            Ok(ModeBatch { mode, summary, records })
        })
        .collect()
}

/// Invariant violations for a batch; empty when everything holds.
///
/// Shielded modes must keep every state safe, start every decision from a
/// recoverable state and finish the greedy search within `N + 2` checks.
/// All modes must store flags that match their trajectories.
pub fn audit(mode: ShieldMode, s: &Scenario, records: &[EpisodeRecord], rewards: &RewardParams) -> Vec<String> {
    let mut failures = Vec::new();
    for r in records {
        if !r.flags_consistent(s, rewards.epsilon) {
            failures.push(format!(
                "{mode} episode {}: stored flags disagree with trajectory",
                r.episode
            ));
        }
        if !mode.is_shielded() {
            continue;
        }
        let unsafe_states = unsafe_state_count(r, s);
        if unsafe_states > 0 {
            failures.push(format!("{mode} episode {}: {unsafe_states} unsafe states", r.episode));
        }
        for (t, st) in r.steps.iter().enumerate() {
            if st.precondition_held == Some(false) {
                failures.push(format!("{mode} episode {} step {t}: state not recoverable", r.episode));
            }
            if mode == ShieldMode::Mamps && st.iterations > r.n_agents() + 2 {
                failures.push(format!(
                    "{mode} episode {} step {t}: {} greedy iterations",
                    r.episode, st.iterations
                ));
            }
        }
    }
    failures
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::ControllerGains;

    #[test]
    fn batch_is_paired_and_audited() {
        let s = Scenario {
            episode_len: 40,
            ..Scenario::preset("4A4O").unwrap()
        };
        let p = RewardParams::for_scenario(&s);
        let kind = PolicyKind::TaskProportional(ControllerGains::default());
        let out = run_batch(
            &s,
            "4A4O",
            &[ShieldMode::Mamps, ShieldMode::Naive, ShieldMode::None],
            &kind,
            6,
            100,
            &p,
        )
        .unwrap();
        assert_eq!(out.len(), 3);
        for i in 0..6 {
            assert_eq!(out[0].records[i].states[0], out[1].records[i].states[0]);
            assert_eq!(out[0].records[i].seed, 100 + i as u64);
        }
        for b in &out[..2] {
            assert_eq!(b.summary.pr_safe, 1.0);
            assert!(audit(b.mode, &s, &b.records, &p).is_empty());
            assert!((0.0..=1.0).contains(&b.summary.pr_reach_goal));
        }
        assert_eq!(out[2].summary.learned_fraction, 1.0);
        // Parallel scheduling must not change the aggregate.
        let again = run_batch(&s, "4A4O", &[ShieldMode::Mamps], &kind, 6, 100, &p).unwrap();
        let (mut a, mut b) = (again[0].summary.clone(), out[0].summary.clone());
        a.wall_clock_secs = 0.0;
        b.wall_clock_secs = 0.0;
        assert_eq!(a, b);
    }
}
