use mamps::dynamics::{closed_loop_step, joint_action, step_joint, FnPolicy, Policy};
use mamps::harness::{run_batch, run_episode, RewardParams, ShieldMode};
use mamps::model::{episode_rng, sample_initial_state, Action, AgentState, JointState, Point, Scenario, PRESETS};
use mamps::policy::{compose_pi_b, Activation, ControllerGains, Layer, MlpPolicy, PolicyKind, ProportionalTask};
use mamps::safety::is_safe;
use mamps::shield::{
    exhaustive_config_oracle, greedy_search, is_feasible, is_recoverable, mamps_shield, naive_shield, oracle_shield,
    recoverability_oracle,
};
use proptest::prelude::*;
use rand::Rng;

/// Per-agent constant commands, deliberately reckless.
fn constant_task(commands: Vec<(f64, f64)>) -> impl Policy {
    FnPolicy(move |_: &JointState, i: usize| {
        let (a, d) = commands[i % commands.len()];
        Action::new(a, d)
    })
}

fn short(preset: &str, len: usize) -> Scenario {
    Scenario {
        episode_len: len,
        ..Scenario::preset(preset).unwrap()
    }
}

fn preset() -> impl Strategy<Value = &'static str> {
    prop::sample::select(PRESETS.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn shielded_runs_stay_safe_and_recoverable(
        name in preset(),
        seed in any::<u64>(),
        commands in prop::collection::vec((-1.5f64..1.5, -1.5f64..1.5), 1..5),
        naive in any::<bool>(),
    ) {
        let s = short(name, 80);
        let task = constant_task(commands);
        let mut x = sample_initial_state(&s, &mut episode_rng(seed)).unwrap();
        for _ in 0..s.episode_len {
            let d = if naive { naive_shield(&x, &task, &s) } else { mamps_shield(&x, &task, &s) };
            prop_assert!(d.precondition_held);
            prop_assert!(d.iterations <= s.n_agents + 2);
            x = step_joint(&x, &d.action, &s).unwrap();
            prop_assert!(is_safe(&x, &s));
            prop_assert!(is_recoverable(&x, &s).all());
        }
    }

    #[test]
    fn oracle_keeps_at_least_as_many_task_agents(
        seed in any::<u64>(),
        commands in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..4),
    ) {
        let s = short("3A4O", 40);
        let task = constant_task(commands);
        let mut x = sample_initial_state(&s, &mut episode_rng(seed)).unwrap();
        for _ in 0..s.episode_len {
            let greedy = mamps_shield(&x, &task, &s);
            let oracle = oracle_shield(&x, &task, &s).unwrap();
            prop_assert!(oracle.config.norm() >= greedy.config.norm());
            prop_assert!(is_feasible(&x, &task, &greedy.config, &s));
            prop_assert!(naive_shield(&x, &task, &s).config.norm() <= greedy.config.norm());
            x = step_joint(&x, &oracle.action, &s).unwrap();
            prop_assert!(is_safe(&x, &s));
        }
    }

    #[test]
    fn fast_and_definitional_recoverability_agree(
        n in 1usize..5,
        m in 0usize..5,
        raw in prop::collection::vec((-0.7f64..0.7, -0.7f64..0.7, 0.0f64..3.0, -3.2f64..3.2), 4),
        obstacles in prop::collection::vec((-0.7f64..0.7, -0.7f64..0.7), 4),
        resting in prop::collection::vec(any::<bool>(), 4),
    ) {
        let s = Scenario::with_counts(n, m);
        let agents = raw[..n]
            .iter()
            .zip(&resting)
            .map(|(&(x, y, v, th), &rest)| AgentState::new(x, y, if rest { 0.0 } else { v }, th))
            .collect();
        let x = JointState::new(
            agents,
            vec![Point::default(); n],
            obstacles[..m].iter().map(|&(x, y)| Point::new(x, y)).collect(),
        )
        .unwrap();
        prop_assert_eq!(is_recoverable(&x, &s), recoverability_oracle(&x, &s));
    }
}

#[test]
fn greedy_over_demotes_when_one_collision_blocks_global_stability() {
    // Agent 1 under its task command ends in an obstacle during the backup
    // rollout. Stability needs the whole system safe, so agents 0 and 2 lose
    // recoverability too and the greedy step demotes everyone, while keeping
    // agent 1 alone on backup would have been feasible.
    let s = Scenario::preset("3A3O").unwrap();
    let x = JointState::new(
        vec![
            AgentState::new(-0.2420201680944829, -0.6539892829713225, 0.0, 2.3561795123706775),
            AgentState::new(0.6071617429278161, -0.03105602148446518, 0.0, 2.052358274028301),
            AgentState::new(0.751591472833902, 0.8426229142647859, 0.0, 2.136421123812785),
        ],
        vec![
            Point::new(0.9964747113404178, 0.6080088578534766),
            Point::new(0.22715758251802587, 0.03209172100425839),
            Point::new(-0.7640948090416613, 0.5388475096424923),
        ],
        vec![
            Point::new(0.45092050248231663, 0.16456058212211966),
            Point::new(0.07983504991353163, -0.18011900436220918),
            Point::new(0.39560219448797396, 0.680931611623798),
        ],
    )
    .unwrap();
    let task = ProportionalTask::new(s, ControllerGains::default());
    assert!(is_recoverable(&x, &s).all());
    let out = greedy_search(3, |b| {
        is_recoverable(&closed_loop_step(&x, &compose_pi_b(b, &task, &s).unwrap(), &s), &s)
    });
    let trail: Vec<String> = out.trail.iter().map(ToString::to_string).collect();
    assert_eq!(trail, ["111", "000"]);
    assert!(!out.fell_back);
    assert_eq!(exhaustive_config_oracle(&x, &task, &s).unwrap().to_string(), "101");
    let d = mamps_shield(&x, &task, &s);
    assert_eq!(d.config.to_string(), "000");
    assert_eq!(d.iterations, 2);
}

#[test]
fn weights_file_policy_is_shielded() {
    let s = short("3A3O", 60);
    let dim = mamps::policy::observation_dim(s.n_agents, s.n_obstacles);
    let mut rng = episode_rng(9);
    let mut layer = |rows: usize, cols: usize, activation| Layer {
        rows,
        cols,
        weights: (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        bias: (0..rows).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        activation,
    };
    let net = MlpPolicy::new(vec![layer(8, dim, Activation::Tanh), layer(2, 8, Activation::Linear)]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.txt");
    std::fs::write(&path, net.to_text()).unwrap();

    let kind = PolicyKind::TaskFromFile(path);
    let rewards = RewardParams::for_scenario(&s);
    let out = run_batch(
        &s,
        "3A3O",
        &[ShieldMode::Mamps, ShieldMode::Naive],
        &kind,
        8,
        3,
        &rewards,
    )
    .unwrap();
    for b in &out {
        assert_eq!(b.summary.pr_safe, 1.0);
        assert_eq!(b.summary.unsafe_states, 0);
    }

    let wrong = Scenario::preset("4A4O").unwrap();
    assert!(kind.build(&wrong).is_err());
}

#[test]
fn unshielded_run_matches_direct_simulation() {
    let s = short("4A3O", 50);
    let task = ProportionalTask::new(s, ControllerGains::default());
    let r = run_episode(&s, ShieldMode::None, &task, 0, 77, &RewardParams::for_scenario(&s)).unwrap();
    let mut x = sample_initial_state(&s, &mut episode_rng(77)).unwrap();
    for (t, recorded) in r.states.iter().enumerate() {
        assert_eq!(&x, recorded, "step {t}");
        x = step_joint(&x, &joint_action(&x, &task), &s).unwrap();
    }
}
