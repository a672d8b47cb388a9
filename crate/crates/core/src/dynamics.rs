//! Discrete-time robot kinematics and closed-loop stepping.
//!
//! Each robot is a unicycle with acceleration and heading-rate inputs. One
//! step advances the position with the pre-step speed and heading, then
//! integrates speed and heading:
//!
//! ```text
//! x'  = x + v cos(theta) dt
//! y'  = y + v sin(theta) dt
//! theta' = wrap(theta + delta dt)
//! v'  = clamp(v + a dt, 0, v_max)
//! ```
//!
//! Trigonometry goes through `libm` so results are bit-identical across
//! platforms.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::{Action, AgentState, JointAction, JointState, Scenario};

/// A vector of per-agent control policies, addressed by agent index.
///
/// Implementations must be pure: the same state and index always give the
/// same action.
pub trait Policy: Send + Sync {
    fn action(&self, x: &JointState, agent: usize) -> Action;
}

impl<P: Policy + ?Sized> Policy for &P {
    fn action(&self, x: &JointState, agent: usize) -> Action {
        (**self).action(x, agent)
    }
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn action(&self, x: &JointState, agent: usize) -> Action {
        (**self).action(x, agent)
    }
}

/// Wraps a closure as a [`Policy`].
pub struct FnPolicy<F>(pub F);

impl<F> Policy for FnPolicy<F>
where
    F: Fn(&JointState, usize) -> Action + Send + Sync,
{
    fn action(&self, x: &JointState, agent: usize) -> Action {
        (self.0)(x, agent)
    }
}

/// One independent policy object per agent; agent `i` is served by entry `i`.
pub struct PolicyVector(pub Vec<Box<dyn Policy>>);

impl Policy for PolicyVector {
    fn action(&self, x: &JointState, agent: usize) -> Action {
        self.0[agent].action(x, agent)
    }
}

/// Maps an angle into `[-pi, pi)`.
pub fn wrap_angle(theta: f64) -> f64 {
    if (-PI..PI).contains(&theta) {
        return theta;
    }
    let two_pi = 2.0 * PI;
    let wrapped = theta - two_pi * ((theta + PI) / two_pi).floor();
    if wrapped >= PI {
        wrapped - two_pi
    } else if wrapped < -PI {
        wrapped + two_pi
    } else {
        wrapped
    }
}

pub fn step_agent(agent: &AgentState, action: Action, s: &Scenario) -> AgentState {
    let u = action.clamped(s);
    let (sin, cos) = libm::sincos(agent.theta);
    AgentState {
        x: agent.x + agent.v * cos * s.dt,
        y: agent.y + agent.v * sin * s.dt,
        v: (agent.v + u.a * s.dt).clamp(0.0, s.v_max),
        theta: wrap_angle(agent.theta + u.delta * s.dt),
    }
}

pub fn step_joint(x: &JointState, u: &JointAction, s: &Scenario) -> Result<JointState> {
    if u.actions.len() != x.agents.len() {
        return Err(Error::LengthMismatch {
            expected: x.agents.len(),
            found: u.actions.len(),
        });
    }
    Ok(step_unchecked(x, &u.actions, s))
}

fn step_unchecked(x: &JointState, actions: &[Action], s: &Scenario) -> JointState {
    let agents = x
        .agents
        .iter()
        .zip(actions)
        .map(|(agent, &a)| step_agent(agent, a, s))
        .collect();
    x.with_agents(agents)
}

/// Evaluates every policy on the same pre-step state.
pub fn joint_action<P: Policy + ?Sized>(x: &JointState, pi: &P) -> JointAction {
    let actions = (0..x.n_agents()).map(|i| pi.action(x, i)).collect();
    JointAction { actions }
}

/// `f^(pi)(x)`: one simultaneous step with actions drawn from `pi`.
pub fn closed_loop_step<P: Policy + ?Sized>(x: &JointState, pi: &P, s: &Scenario) -> JointState {
    let u = joint_action(x, pi);
    step_unchecked(x, &u.actions, s)
}
