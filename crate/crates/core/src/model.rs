//! Domain types, scenario parameters and initial-state sampling.
//!
//! A [`JointState`] holds every robot's pose and speed together with the goal
//! and obstacle layout. Goals and obstacles never move during an episode, so
//! they are shared behind an `Arc` and cloning a state only copies the agents.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::safety;

/// Rejection-sampling budget for each placed entity.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

/// Names of the four evaluation layouts (agents x obstacles).
pub const PRESETS: [&str; 4] = ["3A3O", "3A4O", "4A3O", "4A4O"];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        (dx * dx + dy * dy).sqrt()
    }
}

/// Pose and speed of one robot.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AgentState {
    pub x: f64,
    pub y: f64,
    /// Forward speed, `0 <= v <= v_max`.
    pub v: f64,
    /// Heading in `[-pi, pi)`.
    pub theta: f64,
}

impl AgentState {
    pub const fn new(x: f64, y: f64, v: f64, theta: f64) -> Self {
        Self { x, y, v, theta }
    }

    pub fn at_rest(x: f64, y: f64, theta: f64) -> Self {
        Self::new(x, y, 0.0, theta)
    }

    pub fn position(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

/// Acceleration and steering rate for one robot.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    pub a: f64,
    pub delta: f64,
}

impl Action {
    pub const ZERO: Action = Action { a: 0.0, delta: 0.0 };

    pub const fn new(a: f64, delta: f64) -> Self {
        Self { a, delta }
    }

    /// Clamps both components into the scenario's actuator bounds. NaN maps to 0.
    pub fn clamped(self, s: &Scenario) -> Self {
        Self {
            a: clamp_finite(self.a, s.a_max),
            delta: clamp_finite(self.delta, s.delta_max),
        }
    }
}

fn clamp_finite(value: f64, bound: f64) -> f64 {
    if value.is_nan() {
        0.0
    } else {
        value.clamp(-bound, bound)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub agents: Vec<AgentState>,
    pub goals: Arc<[Point]>,
    pub obstacles: Arc<[Point]>,
}

impl JointState {
    pub fn new(agents: Vec<AgentState>, goals: Vec<Point>, obstacles: Vec<Point>) -> Result<Self> {
        if goals.len() != agents.len() {
            return Err(Error::LengthMismatch {
                expected: agents.len(),
                found: goals.len(),
            });
        }
        Ok(Self {
            agents,
            goals: goals.into(),
            obstacles: obstacles.into(),
        })
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    /// Same layout, different agent states.
    pub fn with_agents(&self, agents: Vec<AgentState>) -> Self {
        Self {
            agents,
            goals: Arc::clone(&self.goals),
            obstacles: Arc::clone(&self.obstacles),
        }
    }

    /// Checks agent/goal/obstacle counts against the scenario.
    pub fn check_against(&self, s: &Scenario) -> Result<()> {
        for (expected, found) in [
            (s.n_agents, self.agents.len()),
            (s.n_agents, self.goals.len()),
            (s.n_obstacles, self.obstacles.len()),
        ] {
            if expected != found {
                return Err(Error::LengthMismatch { expected, found });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct JointAction {
    pub actions: Vec<Action>,
}

impl JointAction {
    pub fn zeros(n: usize) -> Self {
        Self {
            actions: vec![Action::ZERO; n],
        }
    }
}

impl From<Vec<Action>> for JointAction {
    fn from(actions: Vec<Action>) -> Self {
        Self { actions }
    }
}

/// Per-agent policy selection: `true` runs the task policy, `false` the backup.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Configuration {
    bits: Vec<bool>,
}

impl Configuration {
    /// Builds a configuration for `n` agents, rejecting a wrong length.
    pub fn new(bits: Vec<bool>, n: usize) -> Result<Self> {
        if bits.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                found: bits.len(),
            });
        }
        Ok(Self { bits })
    }

    pub fn all_task(n: usize) -> Self {
        Self { bits: vec![true; n] }
    }

    pub fn all_backup(n: usize) -> Self {
        Self { bits: vec![false; n] }
    }

    /// Bit `i` of `mask` selects agent `n - 1 - i`, so agent 0 is the most
    /// significant bit and numeric order equals lexicographic order.
    pub fn from_mask(mask: u64, n: usize) -> Self {
        let bits = (0..n).map(|i| mask >> (n - 1 - i) & 1 == 1).collect();
        Self { bits }
    }

    pub fn to_mask(&self) -> u64 {
        self.bits.iter().fold(0u64, |acc, &b| (acc << 1) | u64::from(b))
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn uses_task(&self, agent: usize) -> bool {
        self.bits[agent]
    }

    /// Number of agents on the task policy (the L1 norm of the bit vector).
    pub fn norm(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_all_backup(&self) -> bool {
        self.bits.iter().all(|&b| !b)
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.bits {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Per-agent recoverability verdicts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecoveryFlags {
    flags: Vec<bool>,
}

impl RecoveryFlags {
    pub fn new(flags: Vec<bool>, n: usize) -> Result<Self> {
        if flags.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                found: flags.len(),
            });
        }
        Ok(Self { flags })
    }

    pub(crate) fn from_vec(flags: Vec<bool>) -> Self {
        Self { flags }
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn all(&self) -> bool {
        self.flags.iter().all(|&f| f)
    }
}

/// Physical, geometric and horizon parameters of an environment.
///
/// Every field maps one-to-one onto a key of the scenario file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub n_agents: usize,
    pub n_obstacles: usize,
    pub r_robot: f64,
    pub r_obstacle: f64,
    pub r_goal: f64,
    pub margin_m: f64,
    pub v_max: f64,
    pub a_max: f64,
    pub delta_max: f64,
    pub dt: f64,
    pub t_max_recovery: usize,
    pub episode_len: usize,
    pub arena_min: [f64; 2],
    pub arena_max: [f64; 2],
    pub seed: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self::with_counts(4, 4)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioError {
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl Scenario {
    /// Default environment parameters with the given agent and obstacle counts.
    pub fn with_counts(n_agents: usize, n_obstacles: usize) -> Self {
        Self {
            n_agents,
            n_obstacles,
            r_robot: 0.1,
            r_obstacle: 0.1,
            r_goal: 0.05,
            margin_m: 0.05,
            v_max: 3.0,
            a_max: 1.0,
            delta_max: 1.0,
            dt: 0.025,
            t_max_recovery: 120,
            episode_len: 300,
            arena_min: [-1.0, -1.0],
            arena_max: [1.0, 1.0],
            seed: 0,
        }
    }

    /// One of the named layouts in [`PRESETS`], e.g. `"4A3O"`.
    pub fn preset(name: &str) -> Option<Self> {
        let (n, m) = match name {
            "3A3O" => (3, 3),
            "3A4O" => (3, 4),
            "4A3O" => (4, 3),
            "4A4O" => (4, 4),
            _ => return None,
        };
        Some(Self {
            seed: (10 * n + m) as u64,
            ..Self::with_counts(n, m)
        })
    }

    /// Steps of full braking needed to stop from `v_max`.
    pub fn worst_case_stop_steps(&self) -> usize {
        let ratio = self.v_max / (self.a_max * self.dt);
        // 3 / (1 * 0.025) evaluates to 120.00000000000001 in binary
        // floating point; snap near-integers before taking the ceiling.
        let nearest = ratio.round();
        if (ratio - nearest).abs() <= 1e-9 * nearest.max(1.0) {
            nearest as usize
        } else {
            ratio.ceil() as usize
        }
    }

    /// Every violated invariant, or `Ok` when there are none.
    pub fn validate(&self) -> std::result::Result<(), Vec<ScenarioError>> {
        let mut errors = Vec::new();
        let mut push = |field: &'static str, message: String| {
            errors.push(ScenarioError { field, message });
        };
        let positive = [
            ("r_robot", self.r_robot),
            ("r_obstacle", self.r_obstacle),
            ("r_goal", self.r_goal),
            ("margin_m", self.margin_m),
            ("v_max", self.v_max),
            ("a_max", self.a_max),
            ("delta_max", self.delta_max),
            ("dt", self.dt),
        ];
        for (field, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                push(field, format!("{field} must be positive (got {value})"));
            }
        }
        if self.n_agents == 0 {
            push("n_agents", "n_agents must be at least 1".into());
        }
        if self.episode_len == 0 {
            push("episode_len", "episode_len must be at least 1".into());
        }
        for (axis, (lo, hi)) in ["x", "y"]
            .into_iter()
            .zip(self.arena_min.into_iter().zip(self.arena_max))
        {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                push(
                    "arena_min",
                    format!("arena {axis}-range must satisfy min < max (got [{lo}, {hi}])"),
                );
            }
        }
        let physics_ok = [self.v_max, self.a_max, self.dt]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if physics_ok {
            let needed = self.worst_case_stop_steps();
            if self.t_max_recovery < needed {
                push(
                    "t_max_recovery",
                    format!(
                        "t_max_recovery must be >= ceil(v_max / (a_max * dt)) = {needed} (got {})",
                        self.t_max_recovery
                    ),
                );
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }

    /// Non-fatal observations, currently only the inter-step tunneling check.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        let max_step = self.v_max * self.dt;
        let clearance = safety::agent_clearance(self).min(safety::obstacle_clearance(self));
        if max_step > clearance {
            out.push(format!(
                "v_max * dt = {max_step} exceeds the smallest clearance {clearance}; \
                 collisions between sampled states may go unseen"
            ));
        }
        out
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::ScenarioFile(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario fields are plain numbers")
    }

    /// Reads and validates a scenario file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let s = Self::from_toml_str(&text)?;
        s.validate().map_err(Error::InvalidScenario)?;
        Ok(s)
    }

    fn uniform_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        Point::new(
            rng.gen_range(self.arena_min[0]..self.arena_max[0]),
            rng.gen_range(self.arena_min[1]..self.arena_max[1]),
        )
    }
}

/// Draws a stable initial state: obstacles first, then goals clear of
/// obstacles, then agents at rest clear of obstacles and of each other.
pub fn sample_initial_state<R: Rng + ?Sized>(s: &Scenario, rng: &mut R) -> Result<JointState> {
    s.validate().map_err(Error::InvalidScenario)?;

    let obstacles: Vec<Point> = (0..s.n_obstacles).map(|_| s.uniform_point(rng)).collect();

    let goal_clearance = s.r_robot + s.r_goal;
    let mut goals = Vec::with_capacity(s.n_agents);
    for index in 0..s.n_agents {
        let goal = place(rng, s, "goal", index, |p| {
            obstacles.iter().all(|&z| p.distance(z) >= goal_clearance)
        })?;
        goals.push(goal);
    }

    let agent_gap = safety::agent_clearance(s);
    let obstacle_gap = safety::obstacle_clearance(s);
    let mut agents: Vec<AgentState> = Vec::with_capacity(s.n_agents);
    for index in 0..s.n_agents {
        let p = place(rng, s, "agent", index, |p| {
            obstacles.iter().all(|&z| p.distance(z) >= obstacle_gap)
                && agents.iter().all(|a| p.distance(a.position()) >= agent_gap)
        })?;
        let theta = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        agents.push(AgentState::at_rest(p.x, p.y, theta));
    }

    JointState::new(agents, goals, obstacles)
}

fn place<R: Rng + ?Sized>(
    rng: &mut R,
    s: &Scenario,
    entity: &'static str,
    index: usize,
    accept: impl Fn(Point) -> bool,
) -> Result<Point> {
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let p = s.uniform_point(rng);
        if accept(p) {
            return Ok(p);
        }
    }
    Err(Error::Placement {
        entity,
        index,
        attempts: MAX_PLACEMENT_ATTEMPTS,
    })
}

/// Deterministic generator for episode `seed`.
pub fn episode_rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    rand::SeedableRng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_scenario_is_valid() {
        assert_eq!(Scenario::default().validate(), Ok(()));
        for name in PRESETS {
            assert_eq!(Scenario::preset(name).unwrap().validate(), Ok(()));
        }
        assert!(Scenario::preset("5A5O").is_none());
    }

    #[test]
    fn zero_dt_is_rejected() {
        let s = Scenario {
            dt: 0.0,
            ..Scenario::default()
        };
        let errs = s.validate().unwrap_err();
        assert!(errs.iter().any(|e| e.to_string().contains("dt must be positive")));
    }

    #[test]
    fn short_recovery_horizon_is_rejected() {
        let s = Scenario {
            t_max_recovery: 100,
            ..Scenario::default()
        };
        assert_eq!(s.worst_case_stop_steps(), 120);
        let errs = s.validate().unwrap_err();
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].field, "t_max_recovery");
        assert!(errs[0].message.contains("120"));
        let ok = Scenario {
            t_max_recovery: 120,
            ..Scenario::default()
        };
        assert!(ok.validate().is_ok());
    }

    #[test]
    fn reports_every_violation() {
        let s = Scenario {
            r_robot: -1.0,
            margin_m: 0.0,
            n_agents: 0,
            arena_min: [1.0, -1.0],
            ..Scenario::default()
        };
        let fields: Vec<_> = s.validate().unwrap_err().iter().map(|e| e.field).collect();
        assert_eq!(fields, vec!["r_robot", "margin_m", "n_agents", "arena_min"]);
    }

    #[test]
    fn default_has_no_tunneling_warning() {
        assert!(Scenario::default().warnings().is_empty());
        let fast = Scenario {
            dt: 0.1,
            t_max_recovery: 30,
            ..Scenario::default()
        };
        assert_eq!(fast.warnings().len(), 1);
    }

    #[test]
    fn toml_round_trip_and_unknown_keys() {
        let s = Scenario::preset("3A4O").unwrap();
        let text = s.to_toml_string();
        assert_eq!(Scenario::from_toml_str(&text).unwrap(), s);
        let bad = format!("{text}\nwall_penalty = 1.0\n");
        let err = Scenario::from_toml_str(&bad).unwrap_err().to_string();
        assert!(err.contains("wall_penalty"), "{err}");
        let missing = text.replace("dt = 0.025\n", "");
        assert!(Scenario::from_toml_str(&missing).is_err());
    }

    #[test]
    fn configuration_masks_are_msb_first() {
        let c = Configuration::from_mask(0b10, 2);
        assert_eq!(c.bits(), &[true, false]);
        assert_eq!(c.to_mask(), 0b10);
        assert_eq!(c.to_string(), "10");
        assert_eq!(Configuration::from_mask(0b011, 3).norm(), 2);
        assert!(Configuration::new(vec![true], 2).is_err());
        assert!(RecoveryFlags::new(vec![true; 3], 2).is_err());
    }

    #[test]
    fn sampling_is_deterministic_and_stable() {
        let s = Scenario::preset("4A4O").unwrap();
        let a = sample_initial_state(&s, &mut episode_rng(9)).unwrap();
        let b = sample_initial_state(&s, &mut episode_rng(9)).unwrap();
        assert_eq!(a, b);
        let c = sample_initial_state(&s, &mut episode_rng(10)).unwrap();
        assert_ne!(a, c);
        a.check_against(&s).unwrap();
    }

    #[test]
    fn sampled_states_are_stable() {
        let s = Scenario::preset("4A4O").unwrap();
        for seed in 0..1000 {
            let x = sample_initial_state(&s, &mut episode_rng(seed)).unwrap();
            assert!(safety::is_stable(&x, &s), "seed {seed}");
            for g in x.goals.iter() {
                for z in x.obstacles.iter() {
                    assert!(g.distance(*z) >= s.r_robot + s.r_goal);
                }
            }
            for a in &x.agents {
                assert!((-std::f64::consts::PI..std::f64::consts::PI).contains(&a.theta));
            }
        }
    }

    #[test]
    fn overcrowded_scenario_fails_placement() {
        let s = Scenario {
            n_agents: 200,
            n_obstacles: 0,
            ..Scenario::default()
        };
        match sample_initial_state(&s, &mut episode_rng(1)) {
            Err(Error::Placement { entity: "agent", .. }) => {}
            other => panic!("expected placement failure, got {other:?}"),
        }
    }

    #[test]
    fn action_clamp_handles_nan() {
        let s = Scenario::default();
        let a = Action::new(f64::NAN, -5.0).clamped(&s);
        assert_eq!(a, Action::new(0.0, -1.0));
    }
}
