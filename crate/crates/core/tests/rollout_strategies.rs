use std::sync::Arc;

use proptest::prelude::{
    any, prop_assert, prop_assert_eq, proptest, ProptestConfig, TestCaseError,
};

use agent_forge::providers::mock::REWRITE_TAG;
use agent_forge::providers::{sample_instructions, MockChat};
use agent_forge::rollout::Strategy;
use agent_forge::rollout::*;
use agent_forge::sim::spec::default_suite;
use agent_forge::sim::{shortest_plan, ActionCommand, EnvState, SimAppSpec};

fn suite() -> Vec<Arc<SimAppSpec>> {
    default_suite(7).into_iter().map(Arc::new).collect()
}

fn tasks(specs: &[Arc<SimAppSpec>], per_app: usize, seed: u64) -> Vec<RolloutTask> {
    specs
        .iter()
        .flat_map(|s| {
            sample_instructions(s, per_app, seed)
                .into_iter()
                .enumerate()
                .map(|(i, instruction)| RolloutTask {
                    id: format!("{}-{i:04}", s.app_name.to_lowercase()),
                    app: s.app_name.clone(),
                    instruction,
                })
        })
        .collect()
}

fn seeds(policy: u64, strategy: u64) -> RolloutSeeds {
    RolloutSeeds {
        policy,
        strategy,
        round: 0,
    }
}

/// A policy that always proposes the same action.
struct Fixed(ActionCommand);

impl Policy for Fixed {
    fn decide(&self, _: &DecisionContext<'_>) -> Result<Decision, PolicyError> {
        Ok(Decision {
            thought: "fixed".into(),
            action: self.0.clone(),
        })
    }
}

/// A monitor that reports a deviation after every learner step.
struct AlwaysDeviated;

impl Monitor for AlwaysDeviated {
    fn check(
        &self,
        _: &RolloutTask,
        _: &[TrajectoryStep],
        _: &agent_forge::sim::Observation,
        _: &agent_forge::sim::Observation,
    ) -> Result<MonitorVerdict, PolicyError> {
        Ok(MonitorVerdict {
            deviated: true,
            analysis: "off track".into(),
        })
    }
}

fn synthetic(z: &[PolicyLabel], outcome: Outcome) -> Trajectory {
    let n = z.len();
    let steps = z
        .iter()
        .enumerate()
        .map(|(t, &z)| TrajectoryStep {
            t,
            observation: ObservationRef {
                screen_id: 0,
                render_key: format!("k{t}"),
            },
            thought: format!("thought {t}"),
            action: if t + 1 == n {
                ActionCommand::Complete
            } else {
                ActionCommand::Back
            },
            z,
            monitor_verdict: None,
            action_error: None,
            counterpart_action: None,
            rewrite_failed: false,
        })
        .collect();
    Trajectory {
        task: RolloutTask {
            id: "t".into(),
            app: "Notes".into(),
            instruction: "do it".into(),
        },
        strategy: Strategy::ErrorIntervention,
        steps,
        outcome,
        seeds: seeds(0, 0),
        judge_success: None,
    }
}

use PolicyLabel::{Expert as E, Learner as L};

#[test]
fn expert_length_is_plan_plus_terminal() {
    let specs = suite();
    let oracle = SimOracle::new(specs.clone());
    let expert = OracleExpert::new(oracle.clone());
    for task in tasks(&specs, 8, 13) {
        let spec = oracle.spec(&task.app).unwrap();
        let goal = oracle.goal(&task).unwrap();
        let plan = shortest_plan(spec, &EnvState::initial(spec), &goal).unwrap();
        let (traj, _) = rollout_expert(
            &task,
            &mut oracle.env(&task.app).unwrap(),
            &expert,
            30,
            seeds(1, 2),
        );
        assert!(traj.outcome.is_terminal(), "{}", task.instruction);
        assert_eq!(traj.steps.len(), plan.len() + 1, "{}", task.instruction);
        assert!(traj.steps.iter().all(|s| s.z == E));
    }
}

#[test]
fn looping_expert_exhausts_budget() {
    let specs = suite();
    let oracle = SimOracle::new(specs.clone());
    let task = &tasks(&specs, 1, 13)[0];
    let (traj, _) = rollout_expert(
        task,
        &mut oracle.env(&task.app).unwrap(),
        &Fixed(ActionCommand::Back),
        7,
        seeds(1, 2),
    );
    assert_eq!(traj.outcome, Outcome::StepBudgetExhausted);
    assert_eq!(traj.steps.len(), 7);
}

#[test]
fn terminal_learner_proposal_is_never_executed() {
    let specs = suite();
    let oracle = SimOracle::new(specs.clone());
    let expert = OracleExpert::new(oracle.clone());
    for task in tasks(&specs, 4, 13) {
        let (traj, _) = rollout_random_switch(
            &task,
            &mut oracle.env(&task.app).unwrap(),
            &expert,
            &Fixed(ActionCommand::Complete),
            1.0,
            30,
            seeds(1, 2),
        );
        assert_eq!(traj.steps[0].z, E);
        assert!(traj.steps.iter().all(|s| s.z == E));
    }
}

#[test]
fn learner_fraction_matches_coin_replay() {
    let specs = suite();
    let oracle = SimOracle::new(specs.clone());
    let expert = OracleExpert::new(oracle.clone());
    let learner = NoisyLearner::new(oracle.clone(), 0.5, 4);
    let p = 0.5;
    let s = seeds(4, 9);
    let (mut steps, mut learner_steps, mut eligible, mut replayed) =
        (0usize, 0usize, 0usize, 0usize);
    for task in tasks(&specs, 34, 17).into_iter().take(100) {
        let (traj, _) = rollout_random_switch(
            &task,
            &mut oracle.env(&task.app).unwrap(),
            &expert,
            &learner,
            p,
            30,
            s,
        );
        for step in &traj.steps {
            let (e, l) = match step.z {
                E => (&step.action, step.counterpart_action.as_ref().unwrap()),
                L => (step.counterpart_action.as_ref().unwrap(), &step.action),
            };
            steps += 1;
            learner_steps += (step.z == L) as usize;
            if e.disagrees_with(l) && !l.is_terminal() {
                eligible += 1;
                if switch_coin(s.strategy, &task.id, step.t, p) {
                    replayed += 1;
                }
            }
        }
    }
    assert_eq!(learner_steps, replayed);
    let observed = learner_steps as f64 / steps as f64;
    let expected = p * eligible as f64 / steps as f64;
    assert!(
        (observed - expected).abs() <= 0.1,
        "observed {observed:.3} expected {expected:.3}"
    );
}

#[test]
fn perfect_learner_needs_no_intervention() {
    let specs = suite();
    let oracle = SimOracle::new(specs.clone());
    let expert = OracleExpert::new(oracle.clone());
    let learner = NoisyLearner::new(oracle.clone(), 0.0, 1);
    let monitor = OracleMonitor::new(oracle.clone());
    for task in tasks(&specs, 10, 13) {
        let (traj, _) = rollout_error_intervention(
            &task,
            &mut oracle.env(&task.app).unwrap(),
            &learner,
            &expert,
            &monitor,
            &InterventionConfig::default(),
            30,
            seeds(1, 2),
        );
        assert_eq!(count_interventions(&traj), 0);
        assert!(traj.steps.iter().all(|s| s.z == L));
        assert!(traj.outcome.is_terminal());
    }
}

#[test]
fn random_learner_on_short_task_gets_rescued() {
    let specs = suite();
    let oracle = SimOracle::new(specs.clone());
    let expert = OracleExpert::new(oracle.clone());
    let learner = NoisyLearner::new(oracle.clone(), 1.0, 3);
    let monitor = OracleMonitor::new(oracle.clone());
    let judge = OracleJudge::new(oracle.clone());
    let short: Vec<RolloutTask> = tasks(&specs, 40, 19)
        .into_iter()
        .filter(|t| {
            let (traj, _) = rollout_expert(
                t,
                &mut oracle.env(&t.app).unwrap(),
                &expert,
                30,
                seeds(0, 0),
            );
            traj.steps.len() == 3
        })
        .collect();
    assert!(short.len() >= 5, "only {} three-step tasks", short.len());
    let mut rescued = 0;
    for task in &short {
        let (traj, last) = rollout_error_intervention(
            task,
            &mut oracle.env(&task.app).unwrap(),
            &learner,
            &expert,
            &monitor,
            &InterventionConfig::default(),
            30,
            seeds(5, 6),
        );
        assert!(count_interventions(&traj) >= 1, "{}", task.instruction);
        if traj.outcome.is_terminal() && judge.judge(&traj, &last).unwrap() {
            assert_eq!(
                traj.steps.last().unwrap().z,
                E,
                "completion came from the expert"
            );
            rescued += 1;
        }
    }
    assert!(
        rescued * 2 >= short.len(),
        "{rescued} of {} completed",
        short.len()
    );
}

#[test]
fn third_deviation_is_ignored() {
    let specs = suite();
    let oracle = SimOracle::new(specs.clone());
    let task = &tasks(&specs, 1, 13)[0];
    let (traj, _) = rollout_error_intervention(
        task,
        &mut oracle.env(&task.app).unwrap(),
        &Fixed(ActionCommand::Back),
        &Fixed(ActionCommand::Back),
        &AlwaysDeviated,
        &InterventionConfig::default(),
        20,
        seeds(1, 2),
    );
    let flagged = traj
        .steps
        .iter()
        .filter(|s| s.monitor_verdict.as_ref().is_some_and(|v| v.deviated))
        .count();
    assert!(flagged >= 3);
    assert_eq!(count_interventions(&traj), 2);
    assert_eq!(
        traj.z_sequence()[..9],
        [L, E, E, E, L, E, E, E, L],
        "two three-step expert segments, then the learner keeps control"
    );
    assert!(traj.steps[8..].iter().all(|s| s.z == L));
}

#[test]
fn zero_rounds_leave_learner_untouched() {
    let specs = suite();
    let oracle = SimOracle::new(specs.clone());
    let mut learner = TabularLearner::new(NoisyLearner::new(oracle.clone(), 0.3, 1));
    let judge = OracleJudge::new(oracle.clone());
    let make_env = |t: &RolloutTask| -> Box<dyn agent_forge::sim::Environment> {
        Box::new(oracle.env(&t.app).unwrap())
    };
    let (kept, report) = self_evolution(
        &tasks(&specs, 3, 13),
        &make_env,
        &mut learner,
        &judge,
        0,
        30,
        1,
    );
    assert!(kept.is_empty());
    assert!(report.successes_per_round.is_empty());
    assert!(learner.is_empty());
}

#[test]
fn evolution_trajectories_are_learner_only() {
    let specs = suite();
    let oracle = SimOracle::new(specs.clone());
    let mut learner = TabularLearner::new(NoisyLearner::new(oracle.clone(), 0.3, 1));
    let judge = OracleJudge::new(oracle.clone());
    let make_env = |t: &RolloutTask| -> Box<dyn agent_forge::sim::Environment> {
        Box::new(oracle.env(&t.app).unwrap())
    };
    let (kept, report) = self_evolution(
        &tasks(&specs, 10, 13),
        &make_env,
        &mut learner,
        &judge,
        3,
        30,
        1,
    );
    assert_eq!(report.successes_per_round.len(), 3);
    assert!(!kept.is_empty());
    assert!(kept
        .iter()
        .all(|t| t.steps.iter().all(|s| s.z == L) && t.judge_success == Some(true)));
}

#[test]
fn samples_follow_the_expert_steps() {
    let traj = synthetic(&[L, L, E, E, E, L], Outcome::Completed);
    let samples = extract_training_samples(&traj);
    assert_eq!(
        samples.iter().map(|s| s.history.len()).collect::<Vec<_>>(),
        [2, 3, 4]
    );
    assert_eq!(samples[0].target_thought, "thought 2");

    assert!(extract_training_samples(&synthetic(&[L, L, L], Outcome::Completed)).is_empty());
    assert!(extract_training_samples(&synthetic(&[E, E], Outcome::StepBudgetExhausted)).is_empty());
    assert_eq!(
        extract_training_samples(&synthetic(&[E; 5], Outcome::Answer { text: "x".into() })).len(),
        5
    );
}

#[test]
fn handover_counts() {
    assert_eq!(count_handovers(&[E, E, E]), 0);
    assert_eq!(count_handovers(&[L, E, E, L, E]), 2);
    assert_eq!(
        count_interventions(&synthetic(&[L, E, L, L, E], Outcome::Completed)),
        2
    );
}

#[test]
fn rewrite_tags_thoughts_and_commutes_with_extraction() {
    let specs = suite();
    let oracle = SimOracle::new(specs.clone());
    let expert = OracleExpert::new(oracle.clone());
    let learner = NoisyLearner::new(oracle.clone(), 0.5, 2);
    let monitor = OracleMonitor::new(oracle.clone());
    let chat = MockChat::new(0);
    for task in tasks(&specs, 3, 13) {
        let (traj, _) = rollout_error_intervention(
            &task,
            &mut oracle.env(&task.app).unwrap(),
            &learner,
            &expert,
            &monitor,
            &InterventionConfig::default(),
            30,
            seeds(1, 2),
        );
        let rewritten = rewrite_thoughts(&traj, &chat, Some(oracle.spec(&task.app).unwrap()));
        assert!(rewritten
            .steps
            .iter()
            .all(|s| s.thought.starts_with(REWRITE_TAG)));
        assert_eq!(
            rewritten.actions().collect::<Vec<_>>(),
            traj.actions().collect::<Vec<_>>()
        );
        assert_eq!(rewritten.z_sequence(), traj.z_sequence());
        let a: Vec<ActionCommand> = extract_training_samples(&rewritten)
            .into_iter()
            .map(|s| s.target_action)
            .collect();
        let b: Vec<ActionCommand> = extract_training_samples(&traj)
            .into_iter()
            .map(|s| s.target_action)
            .collect();
        assert_eq!(a, b);
    }
    let empty = synthetic(&[], Outcome::Completed);
    assert_eq!(rewrite_thoughts(&empty, &chat, None), empty);
}

#[test]
fn rollouts_are_reproducible() {
    let specs = suite();
    let oracle = SimOracle::new(specs.clone());
    let expert = OracleExpert::new(oracle.clone());
    let learner = NoisyLearner::new(oracle.clone(), 0.4, 8);
    let monitor = OracleMonitor::new(oracle.clone());
    for task in tasks(&specs, 5, 13) {
        let run = || {
            let (a, _) = rollout_error_intervention(
                &task,
                &mut oracle.env(&task.app).unwrap(),
                &learner,
                &expert,
                &monitor,
                &InterventionConfig::default(),
                30,
                seeds(8, 9),
            );
            let (b, _) = rollout_random_switch(
                &task,
                &mut oracle.env(&task.app).unwrap(),
                &expert,
                &learner,
                0.5,
                30,
                seeds(8, 9),
            );
            serde_json::to_string(&(a, b)).unwrap()
        };
        assert_eq!(run(), run());
    }
}

fn check_common(traj: &Trajectory, max_steps: usize) -> Result<(), TestCaseError> {
    prop_assert!(traj.steps.len() <= max_steps);
    for (i, s) in traj.steps.iter().enumerate() {
        prop_assert_eq!(s.t, i);
        if s.action.is_terminal() {
            prop_assert_eq!(
                i + 1,
                traj.steps.len(),
                "terminal action before the last step"
            );
        }
        if let Some(v) = &s.monitor_verdict {
            prop_assert_eq!(s.z, L);
            prop_assert!(!v.deviated || !v.analysis.is_empty());
        }
    }
    let lengths: Vec<usize> = extract_training_samples(traj)
        .iter()
        .map(|s| s.history.len())
        .collect();
    prop_assert!(lengths.windows(2).all(|w| w[0] < w[1]));
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn intervention_invariants(epsilon in 0.0f64..=1.0, policy in any::<u64>(), task_ix in 0usize..30, max_steps in 5usize..31) {
        let specs = suite();
        let oracle = SimOracle::new(specs.clone());
        let all = tasks(&specs, 10, 29);
        let task = &all[task_ix % all.len()];
        let learner = NoisyLearner::new(oracle.clone(), epsilon, policy);
        let (traj, _) = rollout_error_intervention(
            task,
            &mut oracle.env(&task.app).unwrap(),
            &learner,
            &OracleExpert::new(oracle.clone()),
            &OracleMonitor::new(oracle.clone()),
            &InterventionConfig::default(),
            max_steps,
            seeds(policy, 0),
        );
        check_common(&traj, max_steps)?;
        let z = traj.z_sequence();
        prop_assert_eq!(z.first(), Some(&L));
        prop_assert!(count_interventions(&traj) <= 2);
        let mut start = 0;
        while start < z.len() {
            let end = (start..z.len()).find(|&i| z[i] != z[start]).unwrap_or(z.len());
            if z[start] == E {
                prop_assert!(end - start >= 3 || end == z.len());
            }
            start = end;
        }
    }

    #[test]
    fn random_switch_invariants(epsilon in 0.0f64..=1.0, p in 0.0f64..=1.0, policy in any::<u64>(), strategy in any::<u64>(), task_ix in 0usize..30) {
        let specs = suite();
        let oracle = SimOracle::new(specs.clone());
        let all = tasks(&specs, 10, 29);
        let task = &all[task_ix % all.len()];
        let learner = NoisyLearner::new(oracle.clone(), epsilon, policy);
        let (traj, _) = rollout_random_switch(
            task,
            &mut oracle.env(&task.app).unwrap(),
            &OracleExpert::new(oracle.clone()),
            &learner,
            p,
            30,
            seeds(policy, strategy),
        );
        check_common(&traj, 30)?;
        for s in traj.steps.iter().filter(|s| s.z == L) {
            prop_assert!(!s.action.is_terminal());
        }
    }
}
