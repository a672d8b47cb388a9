//! Multi-agent model predictive shielding for unicycle robots.
//!
//! Each agent runs a learned or hand-written task policy. Before every step
//! the shield checks, by simulated rollouts of a braking backup policy, which
//! agents may keep their task action without losing recoverability, and
//! switches the rest to the backup.

pub mod dynamics;
pub mod error;
pub mod harness;
pub mod model;
pub mod policy;
pub mod safety;
pub mod shield;

pub use dynamics::{closed_loop_step, step_agent, step_joint, Policy};
pub use error::{Error, Result};
pub use model::{Action, AgentState, Configuration, JointAction, JointState, Point, RecoveryFlags, Scenario};
pub use shield::{is_recoverable, mamps_shield, naive_shield, oracle_shield, ShieldDecision};
