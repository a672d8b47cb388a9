//! Recoverability checking and the shields built on it.
//!
//! [`is_recoverable`] simulates the backup policy forward for `T_max` steps
//! and reports, per agent, whether it stayed safe until it reached a stable
//! state. [`mamps_shield`] greedily demotes irrecoverable agents to the
//! backup policy until the one-step successor is recoverable for everyone;
//! [`naive_shield`] accepts the task policy only when every agent is fine
//! and otherwise drops everyone to the backup. [`exhaustive_config_oracle`]
//! solves the underlying configuration argmax by enumeration.
//!
//! All simulation here is internal: it uses the same deterministic dynamics
//! as the episode runner but never advances the true state.

use crate::dynamics::{closed_loop_step, joint_action, Policy};
use crate::error::{Error, Result};
use crate::model::{Configuration, JointAction, JointState, RecoveryFlags, Scenario};
use crate::policy::{compose_pi_b, BackupPolicy};
use crate::safety;

/// Largest agent count accepted by the exhaustive search.
pub const EXHAUSTIVE_CAP: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct ShieldDecision {
    pub config: Configuration,
    /// `pi_b(x)` for the chosen configuration, evaluated on the input state.
    pub action: JointAction,
    /// Number of recoverability checks spent on candidate configurations.
    pub iterations: usize,
    /// The greedy search stalled and reset to the all-backup configuration
    /// (for the naive shield: the task policy was rejected).
    pub fell_back: bool,
    /// Whether the input state was recoverable. When it is not, the decision
    /// is the all-backup action and the safety guarantee no longer applies.
    pub precondition_held: bool,
}

/// Per-agent recoverability of `x` under the backup policy.
pub fn is_recoverable(x: &JointState, s: &Scenario) -> RecoveryFlags {
    let n = x.n_agents();
    let backup = BackupPolicy::new(*s);
    let mut eta_safe = vec![true; n];
    let mut eta_rec = vec![false; n];
    let mut x = x.clone();
    for t in 0..s.t_max_recovery {
        let flags = safety::safety_flags(&x, s);
        let system_safe = flags.iter().all(|&f| f);
        for i in 0..n {
            eta_safe[i] &= flags[i];
            let stable_i = system_safe && safety::is_at_rest(x.agents[i].v);
            eta_rec[i] |= eta_safe[i] && stable_i;
        }
        // Latched: nothing can change once every agent is decided.
        let decided = eta_rec.iter().zip(&eta_safe).all(|(&r, &sf)| r || !sf);
        if decided || t + 1 == s.t_max_recovery {
            break;
        }
        let actions: Vec<_> = (0..n).map(|i| backup.action_given_safety(&x, i, system_safe)).collect();
        x = crate::dynamics::step_joint(&x, &actions.into(), s).expect("one backup action per agent");
    }
    RecoveryFlags::from_vec(eta_rec)
}

/// Reference recoverability straight from the definition: agent `i` is
/// recoverable iff some prefix `x_0..x_{T-1}` (`T <= T_max`) of the backup
/// rollout keeps it safe and ends with it stable. Stores the whole rollout.
pub fn recoverability_oracle(x: &JointState, s: &Scenario) -> RecoveryFlags {
    let backup = BackupPolicy::new(*s);
    let mut trajectory = Vec::with_capacity(s.t_max_recovery);
    let mut state = x.clone();
    for _ in 0..s.t_max_recovery {
        let next = closed_loop_step(&state, &backup, s);
        trajectory.push(state);
        state = next;
    }
    let flags = (0..x.n_agents())
        .map(|i| {
            (1..=trajectory.len()).any(|horizon| {
                let prefix = &trajectory[..horizon];
                prefix
                    .iter()
                    .all(|xt| safety::is_safe_agent(xt, i, s).expect("index in range"))
                    && safety::is_stable_agent(&prefix[horizon - 1], i, s).expect("index in range")
            })
        })
        .collect();
    RecoveryFlags::from_vec(flags)
}

/// `f^(pi_b)(x)` is recoverable for every agent.
pub fn is_feasible<P: Policy + ?Sized>(x: &JointState, task: &P, b: &Configuration, s: &Scenario) -> bool {
    let pi_b = compose_pi_b(b, task, s).expect("configuration sized to scenario");
    is_recoverable(&closed_loop_step(x, &pi_b, s), s).all()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreedyOutcome {
    pub config: Configuration,
    pub iterations: usize,
    pub fell_back: bool,
    /// Every candidate that was checked, in order.
    pub trail: Vec<Configuration>,
}

/// Greedy demotion loop. `check` returns the recoverability flags of the
/// successor reached with a candidate configuration.
///
/// Starting from all-task, each round clears the bits of irrecoverable
/// agents. If a round clears nothing while some flag is still false, the
/// search resets to all-backup and stops.
pub fn greedy_search(n: usize, mut check: impl FnMut(&Configuration) -> RecoveryFlags) -> GreedyOutcome {
    let mut b = Configuration::all_task(n);
    let mut trail = Vec::new();
    loop {
        trail.push(b.clone());
        let eta = check(&b);
        if eta.all() {
            return GreedyOutcome {
                config: b,
                iterations: trail.len(),
                fell_back: false,
                trail,
            };
        }
        let demoted: Vec<bool> = b.bits().iter().zip(eta.flags()).map(|(&bi, &ri)| bi && ri).collect();
        if demoted == b.bits() {
            return GreedyOutcome {
                config: Configuration::all_backup(n),
                iterations: trail.len(),
                fell_back: true,
                trail,
            };
        }
        b = Configuration::new(demoted, n).expect("same length");
    }
}

fn decision<P: Policy + ?Sized>(
    x: &JointState,
    task: &P,
    s: &Scenario,
    config: Configuration,
    iterations: usize,
    fell_back: bool,
) -> ShieldDecision {
    let action = joint_action(x, &compose_pi_b(&config, task, s).expect("sized configuration"));
    ShieldDecision {
        config,
        action,
        iterations,
        fell_back,
        precondition_held: true,
    }
}

fn backup_decision(x: &JointState, s: &Scenario) -> ShieldDecision {
    ShieldDecision {
        config: Configuration::all_backup(x.n_agents()),
        action: BackupPolicy::new(*s).joint_action(x),
        iterations: 0,
        fell_back: false,
        precondition_held: false,
    }
}

pub fn mamps_shield<P: Policy + ?Sized>(x: &JointState, task: &P, s: &Scenario) -> ShieldDecision {
    if !is_recoverable(x, s).all() {
        return backup_decision(x, s);
    }
    let outcome = greedy_search(x.n_agents(), |b| {
        let pi_b = compose_pi_b(b, task, s).expect("sized configuration");
        is_recoverable(&closed_loop_step(x, &pi_b, s), s)
    });
    decision(x, task, s, outcome.config, outcome.iterations, outcome.fell_back)
}

pub fn naive_shield<P: Policy + ?Sized>(x: &JointState, task: &P, s: &Scenario) -> ShieldDecision {
    if !is_recoverable(x, s).all() {
        return backup_decision(x, s);
    }
    let n = x.n_agents();
    if is_recoverable(&closed_loop_step(x, task, s), s).all() {
        decision(x, task, s, Configuration::all_task(n), 1, false)
    } else {
        decision(x, task, s, Configuration::all_backup(n), 1, true)
    }
}

/// Feasible configuration with the most task agents; ties go to the
/// lexicographically largest bit vector (agent 0 most significant).
pub fn argmax_config(n: usize, mut feasible: impl FnMut(&Configuration) -> bool) -> Option<Configuration> {
    let total = 1u64 << n;
    for norm in (0..=n as u32).rev() {
        for mask in (0..total).rev().filter(|m| m.count_ones() == norm) {
            let b = Configuration::from_mask(mask, n);
            if feasible(&b) {
                return Some(b);
            }
        }
    }
    None
}

/// Exact solution of the configuration argmax. Falls back to all-backup when
/// nothing is feasible.
pub fn exhaustive_config_oracle<P: Policy + ?Sized>(x: &JointState, task: &P, s: &Scenario) -> Result<Configuration> {
    let n = x.n_agents();
    if n > EXHAUSTIVE_CAP {
        return Err(Error::ConfigCap { n, cap: EXHAUSTIVE_CAP });
    }
    Ok(argmax_config(n, |b| is_feasible(x, task, b, s)).unwrap_or_else(|| Configuration::all_backup(n)))
}

pub fn oracle_shield<P: Policy + ?Sized>(x: &JointState, task: &P, s: &Scenario) -> Result<ShieldDecision> {
    if !is_recoverable(x, s).all() {
        return Ok(backup_decision(x, s));
    }
    let config = exhaustive_config_oracle(x, task, s)?;
    Ok(decision(x, task, s, config, 1 << x.n_agents(), false))
}
