//! Policy-switching rollouts.
//!
//! Each step of a [`Trajectory`] records which policy acted (`z`): the expert
//! (`e`) or the learner (`l`). Four strategies are provided:
//!
//! * [`rollout_expert`]: the expert acts throughout.
//! * [`rollout_random_switch`]: both policies propose; on disagreement the
//!   learner's proposal runs with probability `p`, but never a terminal one.
//! * [`rollout_error_intervention`]: the learner acts under a monitor; a
//!   reported deviation hands control to the expert for a bounded segment.
//! * [`self_evolution`]: learner-only rounds, with judged successes fed back
//!   through the learner's update hook.
//!
//! [`extract_training_samples`] keeps the expert steps of a trajectory, each
//! with its full mixed-policy history.

pub mod policies;

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use policies::{
    ChatJudge, ChatMonitor, ChatPolicy, NoisyLearner, OracleExpert, OracleJudge, OracleMonitor,
    SimOracle, TabularLearner,
};

use crate::hashing::derive_seed;
use crate::providers::{prompts, ChatModel, GenerationRequest, ProviderError};
use crate::sim::{ActionCommand, Environment, InvalidAction, Observation, ScreenId, SimAppSpec};
use crate::store::{read_json, read_jsonl, write_json, write_jsonl, StoreError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PolicyLabel {
    #[serde(rename = "e")]
    Expert,
    #[serde(rename = "l")]
    Learner,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Expert,
    RandomSwitch,
    ErrorIntervention,
    SelfEvolution,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Expert,
        Strategy::RandomSwitch,
        Strategy::ErrorIntervention,
        Strategy::SelfEvolution,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Expert => "expert",
            Strategy::RandomSwitch => "random-switch",
            Strategy::ErrorIntervention => "error-intervention",
            Strategy::SelfEvolution => "self-evolution",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown strategy {s:?}; expected one of expert, random-switch, error-intervention, self-evolution"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonitorVerdict {
    pub deviated: bool,
    pub analysis: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationRef {
    pub screen_id: ScreenId,
    pub render_key: String,
}

impl From<&Observation> for ObservationRef {
    fn from(o: &Observation) -> Self {
        Self {
            screen_id: o.screen_id,
            render_key: o.render_key.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub t: usize,
    pub observation: ObservationRef,
    pub thought: String,
    pub action: ActionCommand,
    pub z: PolicyLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monitor_verdict: Option<MonitorVerdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_error: Option<InvalidAction>,
    /// The other policy's proposal, when both were queried.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counterpart_action: Option<ActionCommand>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub rewrite_failed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    Answer { text: String },
    StepBudgetExhausted,
    Aborted { reason: String },
}

impl Outcome {
    pub fn is_terminal(&self) -> bool {
        matches!(self, Outcome::Completed | Outcome::Answer { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolloutTask {
    pub id: String,
    pub app: String,
    pub instruction: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolloutSeeds {
    pub policy: u64,
    pub strategy: u64,
    pub round: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task: RolloutTask,
    pub strategy: Strategy,
    pub steps: Vec<TrajectoryStep>,
    pub outcome: Outcome,
    pub seeds: RolloutSeeds,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_success: Option<bool>,
}

impl Trajectory {
    pub fn z_sequence(&self) -> Vec<PolicyLabel> {
        self.steps.iter().map(|s| s.z).collect()
    }

    /// Actions that changed or attempted to change the environment, in order.
    pub fn actions(&self) -> impl Iterator<Item = &ActionCommand> {
        self.steps.iter().map(|s| &s.action)
    }
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("task cannot be grounded: {0}")]
    Ungrounded(String),
    #[error("could not decode policy output: {0}")]
    Decode(String),
}

/// Everything a policy sees when choosing an action.
#[derive(Debug, Clone, Copy)]
pub struct DecisionContext<'a> {
    pub task: &'a RolloutTask,
    pub observation: &'a Observation,
    pub history: &'a [TrajectoryStep],
    /// Monitor analysis handed over at the start of an intervention.
    pub guidance: Option<&'a str>,
    pub round: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decision {
    pub thought: String,
    pub action: ActionCommand,
}

pub trait Policy: Send + Sync {
    fn decide(&self, ctx: &DecisionContext<'_>) -> Result<Decision, PolicyError>;
}

/// A learner that can be retrained on successful trajectories.
pub trait Learner: Policy {
    fn update(&mut self, successes: &[Trajectory]);
}

pub trait Monitor: Send + Sync {
    /// Called after a learner step; `history` ends with that step.
    fn check(
        &self,
        task: &RolloutTask,
        history: &[TrajectoryStep],
        before: &Observation,
        after: &Observation,
    ) -> Result<MonitorVerdict, PolicyError>;
}

pub trait Judge: Send + Sync {
    fn judge(
        &self,
        trajectory: &Trajectory,
        final_observation: &Observation,
    ) -> Result<bool, PolicyError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterventionConfig {
    pub max_interventions: usize,
    pub min_expert_steps: usize,
}

impl Default for InterventionConfig {
    fn default() -> Self {
        Self {
            max_interventions: 2,
            min_expert_steps: 3,
        }
    }
}

struct Recorder<'a> {
    task: &'a RolloutTask,
    env: &'a mut dyn Environment,
    obs: std::sync::Arc<Observation>,
    steps: Vec<TrajectoryStep>,
    outcome: Option<Outcome>,
}

impl<'a> Recorder<'a> {
    fn new(task: &'a RolloutTask, env: &'a mut dyn Environment) -> Self {
        let obs = env.reset();
        Self {
            task,
            env,
            obs,
            steps: Vec::new(),
            outcome: None,
        }
    }

    fn ctx<'b>(&'b self, guidance: Option<&'b str>, round: usize) -> DecisionContext<'b> {
        DecisionContext {
            task: self.task,
            observation: &self.obs,
            history: &self.steps,
            guidance,
            round,
        }
    }

    /// Executes `decision`, recording invalid actions as no-ops.
    fn execute(
        &mut self,
        decision: Decision,
        z: PolicyLabel,
        counterpart: Option<ActionCommand>,
    ) -> &mut TrajectoryStep {
        let before = ObservationRef::from(self.obs.as_ref());
        let action_error = match self.env.step(&decision.action) {
            Ok(next) => {
                self.obs = next;
                None
            }
            Err(e) => Some(e),
        };
        if action_error.is_none() {
            match &decision.action {
                ActionCommand::Complete => self.outcome = Some(Outcome::Completed),
                ActionCommand::Answer { text } => {
                    self.outcome = Some(Outcome::Answer { text: text.clone() })
                }
                _ => {}
            }
        }
        self.steps.push(TrajectoryStep {
            t: self.steps.len(),
            observation: before,
            thought: decision.thought,
            action: decision.action,
            z,
            monitor_verdict: None,
            action_error,
            counterpart_action: counterpart,
            rewrite_failed: false,
        });
        self.steps.last_mut().expect("just pushed")
    }

    fn done(&self) -> bool {
        self.outcome.is_some()
    }

    fn finish(
        self,
        strategy: Strategy,
        seeds: RolloutSeeds,
    ) -> (Trajectory, std::sync::Arc<Observation>) {
        let outcome = self.outcome.unwrap_or(Outcome::StepBudgetExhausted);
        (
            Trajectory {
                task: self.task.clone(),
                strategy,
                steps: self.steps,
                outcome,
                seeds,
                judge_success: None,
            },
            self.obs,
        )
    }

    fn abort(
        self,
        strategy: Strategy,
        seeds: RolloutSeeds,
        err: PolicyError,
    ) -> (Trajectory, std::sync::Arc<Observation>) {
        log::warn!("task {} aborted under {strategy}: {err}", self.task.id);
        let obs = self.obs;
        let t = Trajectory {
            task: self.task.clone(),
            strategy,
            steps: self.steps,
            outcome: Outcome::Aborted {
                reason: err.to_string(),
            },
            seeds,
            judge_success: None,
        };
        (t, obs)
    }
}

/// Result of one rollout: the trajectory and the final observation.
pub type RolloutResult = (Trajectory, std::sync::Arc<Observation>);

pub fn rollout_expert(
    task: &RolloutTask,
    env: &mut dyn Environment,
    expert: &dyn Policy,
    max_steps: usize,
    seeds: RolloutSeeds,
) -> RolloutResult {
    let mut rec = Recorder::new(task, env);
    while rec.steps.len() < max_steps && !rec.done() {
        match expert.decide(&rec.ctx(None, seeds.round)) {
            Ok(d) => {
                rec.execute(d, PolicyLabel::Expert, None);
            }
            Err(e) => return rec.abort(Strategy::Expert, seeds, e),
        }
    }
    rec.finish(Strategy::Expert, seeds)
}

/// The seeded coin used by random switching at step `t`.
pub fn switch_coin(strategy_seed: u64, task_id: &str, t: usize, p: f64) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
        strategy_seed,
        &[b"switch", task_id.as_bytes(), &(t as u64).to_le_bytes()],
    ));
    rng.gen_bool(p.clamp(0.0, 1.0))
}

pub fn rollout_random_switch(
    task: &RolloutTask,
    env: &mut dyn Environment,
    expert: &dyn Policy,
    learner: &dyn Policy,
    p: f64,
    max_steps: usize,
    seeds: RolloutSeeds,
) -> RolloutResult {
    let mut rec = Recorder::new(task, env);
    while rec.steps.len() < max_steps && !rec.done() {
        let (e, l) = {
            let ctx = rec.ctx(None, seeds.round);
            (expert.decide(&ctx), learner.decide(&ctx))
        };
        let (e, l) = match (e, l) {
            (Ok(e), Ok(l)) => (e, l),
            (Err(err), _) | (_, Err(err)) => return rec.abort(Strategy::RandomSwitch, seeds, err),
        };
        let t = rec.steps.len();
        let learner_runs = e.action.disagrees_with(&l.action)
            && !l.action.is_terminal()
            && switch_coin(seeds.strategy, &task.id, t, p);
        if learner_runs {
            let counterpart = Some(e.action.clone());
            rec.execute(l, PolicyLabel::Learner, counterpart);
        } else {
            let counterpart = Some(l.action.clone());
            rec.execute(e, PolicyLabel::Expert, counterpart);
        }
    }
    rec.finish(Strategy::RandomSwitch, seeds)
}

#[allow(clippy::too_many_arguments)]
pub fn rollout_error_intervention(
    task: &RolloutTask,
    env: &mut dyn Environment,
    learner: &dyn Policy,
    expert: &dyn Policy,
    monitor: &dyn Monitor,
    config: &InterventionConfig,
    max_steps: usize,
    seeds: RolloutSeeds,
) -> RolloutResult {
    let mut rec = Recorder::new(task, env);
    let mut interventions = 0;
    // Some(n): expert in control with n steps taken in the current segment.
    let mut expert_segment: Option<usize> = None;
    let mut guidance: Option<String> = None;
    while rec.steps.len() < max_steps && !rec.done() {
        match expert_segment {
            Some(n) => {
                let decision = match expert
                    .decide(&rec.ctx(guidance.as_deref().filter(|_| n == 0), seeds.round))
                {
                    Ok(d) => d,
                    Err(e) => return rec.abort(Strategy::ErrorIntervention, seeds, e),
                };
                rec.execute(decision, PolicyLabel::Expert, None);
                expert_segment = if n + 1 >= config.min_expert_steps {
                    None
                } else {
                    Some(n + 1)
                };
            }
            None => {
                let decision = match learner.decide(&rec.ctx(None, seeds.round)) {
                    Ok(d) => d,
                    Err(e) => return rec.abort(Strategy::ErrorIntervention, seeds, e),
                };
                let before = rec.obs.clone();
                rec.execute(decision, PolicyLabel::Learner, None);
                if rec.done() {
                    break;
                }
                let verdict = match monitor.check(task, &rec.steps, &before, &rec.obs) {
                    Ok(v) => v,
                    Err(e) => return rec.abort(Strategy::ErrorIntervention, seeds, e),
                };
                if verdict.deviated && interventions < config.max_interventions {
                    interventions += 1;
                    expert_segment = Some(0);
                    guidance = Some(verdict.analysis.clone());
                }
                rec.steps.last_mut().expect("step recorded").monitor_verdict = Some(verdict);
            }
        }
    }
    rec.finish(Strategy::ErrorIntervention, seeds)
}

pub fn rollout_learner(
    task: &RolloutTask,
    env: &mut dyn Environment,
    learner: &dyn Policy,
    max_steps: usize,
    seeds: RolloutSeeds,
) -> RolloutResult {
    let mut rec = Recorder::new(task, env);
    while rec.steps.len() < max_steps && !rec.done() {
        match learner.decide(&rec.ctx(None, seeds.round)) {
            Ok(d) => {
                rec.execute(d, PolicyLabel::Learner, None);
            }
            Err(e) => return rec.abort(Strategy::SelfEvolution, seeds, e),
        }
    }
    rec.finish(Strategy::SelfEvolution, seeds)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvolutionReport {
    /// Judged successes per round.
    pub successes_per_round: Vec<usize>,
    pub judge_failures: usize,
}

/// Learner-only rounds over `tasks`. Judged successes of each round are fed
/// to [`Learner::update`] before the next round. `make_env` builds a fresh
/// environment for a task.
pub fn self_evolution(
    tasks: &[RolloutTask],
    make_env: &(dyn Fn(&RolloutTask) -> Box<dyn Environment> + Sync),
    learner: &mut dyn Learner,
    judge: &dyn Judge,
    rounds: usize,
    max_steps: usize,
    policy_seed: u64,
) -> (Vec<Trajectory>, EvolutionReport) {
    use rayon::prelude::*;
    let mut kept = Vec::new();
    let mut report = EvolutionReport::default();
    for round in 0..rounds {
        let seeds = RolloutSeeds {
            policy: policy_seed,
            strategy: 0,
            round,
        };
        let shared: &dyn Policy = &*learner;
        let results: Vec<(Trajectory, Result<bool, String>)> = tasks
            .par_iter()
            .map(|task| {
                let mut env = make_env(task);
                let (mut traj, last) =
                    rollout_learner(task, env.as_mut(), shared, max_steps, seeds);
                let verdict = if traj.outcome.is_terminal() {
                    judge.judge(&traj, &last).map_err(|e| e.to_string())
                } else {
                    Ok(false)
                };
                if let Ok(v) = verdict {
                    traj.judge_success = Some(v);
                }
                (traj, verdict)
            })
            .collect();
        let mut successes = Vec::new();
        for (traj, verdict) in results {
            match verdict {
                Ok(true) => successes.push(traj),
                Ok(false) => {}
                Err(e) => {
                    report.judge_failures += 1;
                    log::warn!("judge failed on {} in round {round}: {e}", traj.task.id);
                }
            }
        }
        report.successes_per_round.push(successes.len());
        learner.update(&successes);
        kept.extend(successes);
    }
    (kept, report)
}

/// Number of maximal learner-to-expert handovers in the z sequence.
pub fn count_interventions(trajectory: &Trajectory) -> usize {
    count_handovers(&trajectory.z_sequence())
}

pub fn count_handovers(z: &[PolicyLabel]) -> usize {
    z.windows(2)
        .filter(|w| w[0] == PolicyLabel::Learner && w[1] == PolicyLabel::Expert)
        .count()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub task_id: String,
    pub instruction: String,
    pub history: Vec<TrajectoryStep>,
    pub target_thought: String,
    pub target_action: ActionCommand,
}

/// One sample per expert step of a terminated trajectory, carrying every
/// earlier step as history.
pub fn extract_training_samples(trajectory: &Trajectory) -> Vec<TrainingSample> {
    if !trajectory.outcome.is_terminal() {
        return Vec::new();
    }
    trajectory
        .steps
        .iter()
        .enumerate()
        .filter(|(_, s)| s.z == PolicyLabel::Expert)
        .map(|(i, s)| TrainingSample {
            task_id: trajectory.task.id.clone(),
            instruction: trajectory.task.instruction.clone(),
            history: trajectory.steps[..i].to_vec(),
            target_thought: s.thought.clone(),
            target_action: s.action.clone(),
        })
        .collect()
}

fn describe_step(s: &TrajectoryStep) -> String {
    let mut line = format!(
        "{}. [{}] {}",
        s.t,
        if s.z == PolicyLabel::Expert { "e" } else { "l" },
        serde_json::to_string(&s.action).expect("action serializes")
    );
    if let Some(err) = &s.action_error {
        line.push_str(&format!(" (failed: {})", err.reason));
    }
    line
}

fn describe_screen(spec: Option<&SimAppSpec>, obs: &ObservationRef) -> String {
    let Some(screen) = spec.and_then(|s| s.screen(obs.screen_id)) else {
        return format!("screen {} (render {})", obs.screen_id, obs.render_key);
    };
    let mut lines = vec![format!("{} (screen {})", screen.title, screen.screen_id)];
    lines.extend(
        screen
            .elements
            .iter()
            .map(|e| format!("- [{}] {} '{}'", e.element_id, e.kind.name(), e.label)),
    );
    lines.join("\n")
}

/// Replaces each step's thought with the generator's rewrite. A failed
/// rewrite keeps the original thought and flags the step. `spec`, when
/// given, supplies the element listing of each screen.
pub fn rewrite_thoughts(
    trajectory: &Trajectory,
    generator: &dyn ChatModel,
    spec: Option<&SimAppSpec>,
) -> Trajectory {
    let mut out = trajectory.clone();
    for i in 0..out.steps.len() {
        let history: Vec<String> = trajectory.steps[..i].iter().map(describe_step).collect();
        let step = &trajectory.steps[i];
        let req = GenerationRequest::new(prompts::REWRITE_SYSTEM).text(prompts::rewrite_user(
            &trajectory.task.instruction,
            &if history.is_empty() {
                "(none)".to_string()
            } else {
                history.join("\n")
            },
            &describe_screen(spec, &step.observation),
            &serde_json::to_string(&step.action).expect("action serializes"),
            &step.thought,
        ));
        match generator.chat_generate(&req) {
            Ok(text) if !text.trim().is_empty() => out.steps[i].thought = text.trim().to_string(),
            Ok(_) => out.steps[i].rewrite_failed = true,
            Err(e) => {
                log::warn!("rewrite failed at step {i} of {}: {e}", trajectory.task.id);
                out.steps[i].rewrite_failed = true;
            }
        }
    }
    out
}

pub fn save_trajectory(root: &Path, trajectory: &Trajectory) -> Result<(), StoreError> {
    let path = root
        .join("trajectories")
        .join(trajectory.strategy.name())
        .join(format!("{}.json", trajectory.task.id));
    write_json(&path, trajectory)
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory, StoreError> {
    read_json(path)
}

/// Loads every trajectory saved for `strategy`, ordered by task id.
pub fn load_strategy_trajectories(
    root: &Path,
    strategy: Strategy,
) -> Result<Vec<Trajectory>, StoreError> {
    let dir = root.join("trajectories").join(strategy.name());
    let mut paths: Vec<_> = std::fs::read_dir(&dir)
        .map_err(|e| StoreError::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| load_trajectory(p)).collect()
}

pub fn write_training_jsonl(path: &Path, samples: &[TrainingSample]) -> Result<(), StoreError> {
    write_jsonl(path, samples)
}

pub fn read_training_jsonl(path: &Path) -> Result<Vec<TrainingSample>, StoreError> {
    read_jsonl(path)
}
