//! Stable, recovery, backup and task policies, and the per-agent
//! composition `pi_b` that a shield configuration selects.

mod mlp;

use std::path::PathBuf;

use crate::dynamics::{wrap_angle, Policy};
use crate::error::{Error, Result};
use crate::model::{Action, Configuration, JointAction, JointState, Scenario};
use crate::safety;

pub use mlp::{observation, observation_dim, Activation, Layer, MlpPolicy, WEIGHTS_MAGIC};

/// Zero acceleration and zero steering.
#[derive(Debug, Clone, Copy, Default)]
pub struct StablePolicy;

impl Policy for StablePolicy {
    fn action(&self, _x: &JointState, _agent: usize) -> Action {
        Action::ZERO
    }
}

/// Brakes as hard as allowed, stopping exactly when the remaining speed is
/// less than one step of full braking. Never steers.
#[derive(Debug, Clone, Copy)]
pub struct RecoveryPolicy {
    pub scenario: Scenario,
}

impl RecoveryPolicy {
    pub fn new(scenario: Scenario) -> Self {
        Self { scenario }
    }

    pub fn braking(v: f64, s: &Scenario) -> Action {
        if v == 0.0 {
            return Action::ZERO;
        }
        Action::new(-(v / s.dt).min(s.a_max), 0.0)
    }
}

impl Policy for RecoveryPolicy {
    fn action(&self, x: &JointState, agent: usize) -> Action {
        Self::braking(x.agents[agent].v, &self.scenario)
    }
}

/// Stable policy for stable agents, recovery policy for everyone else.
#[derive(Debug, Clone, Copy)]
pub struct BackupPolicy {
    pub scenario: Scenario,
}

impl BackupPolicy {
    pub fn new(scenario: Scenario) -> Self {
        Self { scenario }
    }

    /// Backup action for agent `agent` given whether the system is safe.
    pub(crate) fn action_given_safety(&self, x: &JointState, agent: usize, system_safe: bool) -> Action {
        let v = x.agents[agent].v;
        if system_safe && safety::is_at_rest(v) {
            Action::ZERO
        } else {
            RecoveryPolicy::braking(v, &self.scenario)
        }
    }

    /// All agents' backup actions, evaluating global safety once.
    pub fn joint_action(&self, x: &JointState) -> JointAction {
        let safe = safety::is_safe(x, &self.scenario);
        (0..x.n_agents())
            .map(|i| self.action_given_safety(x, i, safe))
            .collect::<Vec<_>>()
            .into()
    }
}

impl Policy for BackupPolicy {
    fn action(&self, x: &JointState, agent: usize) -> Action {
        let stable = safety::is_at_rest(x.agents[agent].v) && safety::is_safe(x, &self.scenario);
        if stable {
            StablePolicy.action(x, agent)
        } else {
            RecoveryPolicy::new(self.scenario).action(x, agent)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerGains {
    /// Speed commanded far from the goal.
    pub cruise_speed: f64,
    /// Inside this distance the commanded speed falls linearly to zero.
    pub slow_radius: f64,
    pub heading_gain: f64,
    pub speed_gain: f64,
}

impl Default for ControllerGains {
    fn default() -> Self {
        Self {
            cruise_speed: 1.0,
            slow_radius: 0.5,
            heading_gain: 4.0,
            speed_gain: 4.0,
        }
    }
}

/// Goal-seeking proportional controller that ignores obstacles and other
/// robots. Stands in for a learned policy.
#[derive(Debug, Clone, Copy)]
pub struct ProportionalTask {
    pub scenario: Scenario,
    pub gains: ControllerGains,
}

impl ProportionalTask {
    pub fn new(scenario: Scenario, gains: ControllerGains) -> Self {
        Self { scenario, gains }
    }
}

impl Policy for ProportionalTask {
    fn action(&self, x: &JointState, agent: usize) -> Action {
        let me = &x.agents[agent];
        let goal = x.goals[agent];
        let (dx, dy) = (goal.x - me.x, goal.y - me.y);
        let dist = (dx * dx + dy * dy).sqrt();
        let heading_err = if dist > 1e-9 {
            wrap_angle(libm::atan2(dy, dx) - me.theta)
        } else {
            0.0
        };
        let g = &self.gains;
        let alignment = libm::cos(heading_err).max(0.0);
        let desired = g.cruise_speed * (dist / g.slow_radius).min(1.0) * alignment;
        Action::new(g.speed_gain * (desired - me.v), g.heading_gain * heading_err).clamped(&self.scenario)
    }
}

/// `pi_b`: task policy for agents with `b_i = 1`, backup policy otherwise.
pub struct Composed<'a, P: Policy + ?Sized> {
    config: &'a Configuration,
    task: &'a P,
    backup: BackupPolicy,
}

impl<P: Policy + ?Sized> Policy for Composed<'_, P> {
    fn action(&self, x: &JointState, agent: usize) -> Action {
        if self.config.uses_task(agent) {
            self.task.action(x, agent)
        } else {
            self.backup.action(x, agent)
        }
    }
}

pub fn compose_pi_b<'a, P: Policy + ?Sized>(
    b: &'a Configuration,
    task: &'a P,
    s: &Scenario,
) -> Result<Composed<'a, P>> {
    if b.len() != s.n_agents {
        return Err(Error::LengthMismatch {
            expected: s.n_agents,
            found: b.len(),
        });
    }
    Ok(Composed {
        config: b,
        task,
        backup: BackupPolicy::new(*s),
    })
}

/// Selectable policy families.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyKind {
    Stable,
    Recovery,
    Backup,
    TaskProportional(ControllerGains),
    TaskFromFile(PathBuf),
}

impl PolicyKind {
    pub fn build(&self, s: &Scenario) -> Result<Box<dyn Policy>> {
        Ok(match self {
            PolicyKind::Stable => Box::new(StablePolicy),
            PolicyKind::Recovery => Box::new(RecoveryPolicy::new(*s)),
            PolicyKind::Backup => Box::new(BackupPolicy::new(*s)),
            PolicyKind::TaskProportional(gains) => Box::new(ProportionalTask::new(*s, *gains)),
            PolicyKind::TaskFromFile(path) => Box::new(MlpPolicy::load(path)?.bind(s)?),
        })
    }

    pub fn label(&self) -> String {
        match self {
            PolicyKind::Stable => "stable".into(),
            PolicyKind::Recovery => "recovery".into(),
            PolicyKind::Backup => "backup".into(),
            PolicyKind::TaskProportional(_) => "task-proportional".into(),
            PolicyKind::TaskFromFile(p) => format!("task-from-file:{}", p.display()),
        }
    }
}
