//! Compares expert-only, random-switch, error-intervention and self-evolution rollouts.

use agent_forge::providers::sample_instructions;
use agent_forge::rollout::{
    count_interventions, extract_training_samples, rollout_error_intervention, rollout_expert,
    rollout_random_switch, self_evolution, InterventionConfig, Judge, NoisyLearner, OracleExpert,
    OracleJudge, OracleMonitor, RolloutSeeds, RolloutTask, SimOracle, TabularLearner, Trajectory,
};
use agent_forge::sim::spec::default_suite;
use agent_forge::sim::{Environment, Observation};

const MAX_STEPS: usize = 30;

type Run = (Trajectory, std::sync::Arc<Observation>);

fn main() {
    let specs: Vec<_> = default_suite(7)
        .into_iter()
        .map(std::sync::Arc::new)
        .collect();
    let tasks: Vec<RolloutTask> = specs
        .iter()
        .flat_map(|s| {
            sample_instructions(s, 20, 11)
                .into_iter()
                .enumerate()
                .map(|(i, instruction)| RolloutTask {
                    id: format!("{}-{i:02}", s.app_name),
                    app: s.app_name.clone(),
                    instruction,
                })
        })
        .collect();

    let oracle = SimOracle::new(specs);
    let expert = OracleExpert::new(oracle.clone());
    let learner = NoisyLearner::new(oracle.clone(), 0.3, 1);
    let monitor = OracleMonitor::new(oracle.clone());
    let judge = OracleJudge::new(oracle.clone());
    let seeds = RolloutSeeds {
        policy: 1,
        strategy: 2,
        round: 0,
    };
    let config = InterventionConfig::default();

    let mut rows: Vec<(&str, Vec<Run>)> = vec![
        ("expert", vec![]),
        ("random-switch", vec![]),
        ("error-intervention", vec![]),
    ];
    for task in &tasks {
        let env = || oracle.env(&task.app).unwrap();
        rows[0]
            .1
            .push(rollout_expert(task, &mut env(), &expert, MAX_STEPS, seeds));
        rows[1].1.push(rollout_random_switch(
            task,
            &mut env(),
            &expert,
            &learner,
            0.5,
            MAX_STEPS,
            seeds,
        ));
        rows[2].1.push(rollout_error_intervention(
            task,
            &mut env(),
            &learner,
            &expert,
            &monitor,
            &config,
            MAX_STEPS,
            seeds,
        ));
    }

    println!(
        "{:<20} {:>8} {:>10} {:>14} {:>8}",
        "strategy", "success", "avg steps", "interventions", "samples"
    );
    for (name, runs) in &rows {
        let successes = runs
            .iter()
            .filter(|(t, last)| t.outcome.is_terminal() && judge.judge(t, last).unwrap_or(false))
            .count();
        let steps: usize = runs.iter().map(|(t, _)| t.steps.len()).sum();
        let interventions: usize = runs.iter().map(|(t, _)| count_interventions(t)).sum();
        let samples: usize = runs
            .iter()
            .map(|(t, _)| extract_training_samples(t).len())
            .sum();
        println!(
            "{name:<20} {:>8.3} {:>10.2} {interventions:>14} {samples:>8}",
            successes as f64 / runs.len() as f64,
            steps as f64 / runs.len() as f64,
        );
    }

    let mut tabular = TabularLearner::new(NoisyLearner::new(oracle.clone(), 0.3, 5));
    let make_env =
        |task: &RolloutTask| Box::new(oracle.env(&task.app).unwrap()) as Box<dyn Environment>;
    let (kept, report) = self_evolution(&tasks, &make_env, &mut tabular, &judge, 3, MAX_STEPS, 5);
    println!(
        "\nself-evolution: successes per round {:?}, {} trajectories kept, {} memorized states",
        report.successes_per_round,
        kept.len(),
        tabular.len()
    );
}
