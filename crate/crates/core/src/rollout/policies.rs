//! Simulator-backed oracle policies and model-backed chat policies.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use super::{
    Decision, DecisionContext, Judge, Learner, Monitor, MonitorVerdict, Policy, PolicyError,
    RolloutTask, Trajectory, TrajectoryStep,
};
use crate::hashing::derive_seed;
use crate::providers::{outermost_object, prompts, ChatModel, GenerationRequest, ProviderError};
use crate::sim::goal::{goal_check, resolve_goal, TaskGoal};
use crate::sim::plan::{distance_to_goal, oracle_action, PlanError};
use crate::sim::{apply, ActionCommand, EnvState, Observation, SimAppSpec, SimEnv};

/// Ground truth shared by the oracle policies: app specs by name.
#[derive(Debug, Clone, Default)]
pub struct SimOracle {
    specs: BTreeMap<String, Arc<SimAppSpec>>,
}

impl SimOracle {
    pub fn new(specs: impl IntoIterator<Item = Arc<SimAppSpec>>) -> Self {
        Self {
            specs: specs.into_iter().map(|s| (s.app_name.clone(), s)).collect(),
        }
    }

    pub fn spec(&self, app: &str) -> Result<&Arc<SimAppSpec>, PolicyError> {
        self.specs
            .get(app)
            .ok_or_else(|| PolicyError::Ungrounded(format!("no simulator spec for app {app}")))
    }

    pub fn env(&self, app: &str) -> Result<SimEnv, PolicyError> {
        Ok(SimEnv::new(self.spec(app)?.clone()))
    }

    pub fn goal(&self, task: &RolloutTask) -> Result<TaskGoal, PolicyError> {
        let spec = self.spec(&task.app)?;
        resolve_goal(spec, &task.instruction).ok_or_else(|| {
            PolicyError::Ungrounded(format!(
                "instruction {:?} references nothing in {}",
                task.instruction, task.app
            ))
        })
    }

    /// State after executing the successful actions of `steps` from reset.
    pub fn replay(&self, app: &str, steps: &[TrajectoryStep]) -> Result<EnvState, PolicyError> {
        let spec = self.spec(app)?;
        let mut state = EnvState::initial(spec);
        for s in steps.iter().filter(|s| s.action_error.is_none()) {
            if let Ok(next) = apply(spec, &state, &s.action) {
                state = next;
            }
        }
        Ok(state)
    }
}

fn element_label(spec: &SimAppSpec, state: &EnvState, action: &ActionCommand) -> String {
    action
        .target()
        .and_then(|id| spec.screen(state.current_screen)?.element(id))
        .map(|e| e.label.clone())
        .unwrap_or_else(|| "Back".to_string())
}

/// Follows a shortest plan to the goal.
#[derive(Debug, Clone)]
pub struct OracleExpert {
    oracle: SimOracle,
}

impl OracleExpert {
    pub fn new(oracle: SimOracle) -> Self {
        Self { oracle }
    }
}

impl Policy for OracleExpert {
    fn decide(&self, ctx: &DecisionContext<'_>) -> Result<Decision, PolicyError> {
        let spec = self.oracle.spec(&ctx.task.app)?;
        let goal = self.oracle.goal(ctx.task)?;
        let state = self.oracle.replay(&ctx.task.app, ctx.history)?;
        let prefix = ctx
            .guidance
            .filter(|g| !g.is_empty())
            .map(|g| format!("Supervisor noted: {g} "))
            .unwrap_or_default();
        let (thought, action) = match oracle_action(spec, &state, &goal) {
            Ok(ActionCommand::Complete) => (
                "Every requirement now holds, so the task is complete.".to_string(),
                ActionCommand::Complete,
            ),
            Ok(ActionCommand::Answer { text }) => (
                format!("The requested value is '{text}', so I report it."),
                ActionCommand::Answer { text },
            ),
            Ok(action) => {
                let remaining = distance_to_goal(spec, &state, &goal).unwrap_or(1);
                let label = element_label(spec, &state, &action);
                let verb = match &action {
                    ActionCommand::Type { text, .. } => format!("type '{text}' into '{label}'"),
                    ActionCommand::Back => "go back".to_string(),
                    _ => format!("tap '{label}'"),
                };
                (
                    format!("{remaining} step(s) remain; next I {verb}."),
                    action,
                )
            }
            Err(PlanError::EmptyGoal) => {
                return Err(PolicyError::Ungrounded("goal has no components".into()))
            }
            Err(e) => (
                format!("No path to the goal is visible ({e}); backing out."),
                ActionCommand::Back,
            ),
        };
        Ok(Decision {
            thought: format!("{prefix}{thought}"),
            action,
        })
    }
}

/// The oracle expert with probability-`epsilon` random non-terminal actions.
#[derive(Debug, Clone)]
pub struct NoisyLearner {
    expert: OracleExpert,
    epsilon: f64,
    seed: u64,
}

impl NoisyLearner {
    pub fn new(oracle: SimOracle, epsilon: f64, seed: u64) -> Self {
        Self {
            expert: OracleExpert::new(oracle),
            epsilon: epsilon.clamp(0.0, 1.0),
            seed,
        }
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

impl Policy for NoisyLearner {
    fn decide(&self, ctx: &DecisionContext<'_>) -> Result<Decision, PolicyError> {
        let t = ctx.history.len() as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            self.seed,
            &[
                b"learner",
                ctx.task.id.as_bytes(),
                &t.to_le_bytes(),
                &(ctx.round as u64).to_le_bytes(),
            ],
        ));
        if rng.gen_bool(self.epsilon) {
            let mut options: Vec<(ActionCommand, String)> = ctx
                .observation
                .a11y
                .iter()
                .map(|n| {
                    (
                        ActionCommand::Click {
                            element_id: n.element_id,
                        },
                        n.label.clone(),
                    )
                })
                .collect();
            options.push((ActionCommand::Back, "Back".into()));
            let (action, label) = options
                .choose(&mut rng)
                .cloned()
                .expect("back is always an option");
            return Ok(Decision {
                thought: format!("Trying '{label}'."),
                action,
            });
        }
        self.expert.decide(&DecisionContext {
            guidance: None,
            ..*ctx
        })
    }
}

/// A noisy learner that memorizes the steps of judged-successful trajectories,
/// keyed by task, step index and screen render.
#[derive(Debug, Clone)]
pub struct TabularLearner {
    base: NoisyLearner,
    table: BTreeMap<(String, usize, String), (String, ActionCommand)>,
}

impl TabularLearner {
    pub fn new(base: NoisyLearner) -> Self {
        Self {
            base,
            table: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl Policy for TabularLearner {
    fn decide(&self, ctx: &DecisionContext<'_>) -> Result<Decision, PolicyError> {
        let key = (
            ctx.task.id.clone(),
            ctx.history.len(),
            ctx.observation.render_key.clone(),
        );
        match self.table.get(&key) {
            Some((thought, action)) => Ok(Decision {
                thought: thought.clone(),
                action: action.clone(),
            }),
            None => self.base.decide(ctx),
        }
    }
}

impl Learner for TabularLearner {
    fn update(&mut self, successes: &[Trajectory]) {
        for traj in successes {
            for s in &traj.steps {
                self.table
                    .entry((traj.task.id.clone(), s.t, s.observation.render_key.clone()))
                    .or_insert_with(|| (s.thought.clone(), s.action.clone()));
            }
        }
    }
}

/// Flags a learner step when the plan distance to the goal did not shrink.
#[derive(Debug, Clone)]
pub struct OracleMonitor {
    oracle: SimOracle,
}

impl OracleMonitor {
    pub fn new(oracle: SimOracle) -> Self {
        Self { oracle }
    }
}

impl Monitor for OracleMonitor {
    fn check(
        &self,
        task: &RolloutTask,
        history: &[TrajectoryStep],
        _before: &Observation,
        _after: &Observation,
    ) -> Result<MonitorVerdict, PolicyError> {
        let Some((last, earlier)) = history.split_last() else {
            return Ok(MonitorVerdict {
                deviated: false,
                analysis: String::new(),
            });
        };
        let spec = self.oracle.spec(&task.app)?;
        let goal = self.oracle.goal(task)?;
        let d_before = distance_to_goal(spec, &self.oracle.replay(&task.app, earlier)?, &goal);
        let d_after = distance_to_goal(spec, &self.oracle.replay(&task.app, history)?, &goal);
        let deviated = match (d_before, d_after) {
            (Some(b), Some(a)) => a >= b,
            (None, Some(_)) => false,
            (_, None) => true,
        };
        let analysis = if !deviated {
            String::new()
        } else if let Some(err) = &last.action_error {
            format!(
                "Step {} failed ({}); the screen did not change.",
                last.t, err.reason
            )
        } else {
            match d_after {
                Some(d) => format!(
                    "Step {} did not bring the task closer; {d} step(s) remain from here.",
                    last.t
                ),
                None => format!(
                    "Step {} left the task unreachable from the current screen.",
                    last.t
                ),
            }
        };
        Ok(MonitorVerdict { deviated, analysis })
    }
}

/// Success iff the episode terminated and the goal check holds.
#[derive(Debug, Clone)]
pub struct OracleJudge {
    oracle: SimOracle,
}

impl OracleJudge {
    pub fn new(oracle: SimOracle) -> Self {
        Self { oracle }
    }
}

impl Judge for OracleJudge {
    fn judge(
        &self,
        trajectory: &Trajectory,
        _final_observation: &Observation,
    ) -> Result<bool, PolicyError> {
        let goal = self.oracle.goal(&trajectory.task)?;
        let state = self
            .oracle
            .replay(&trajectory.task.app, &trajectory.steps)?;
        Ok(state.terminated.is_some() && goal_check(&state, &goal, state.final_answer()))
    }
}

fn action_lines(steps: &[TrajectoryStep]) -> String {
    steps
        .iter()
        .filter(|s| s.action_error.is_none())
        .map(|s| serde_json::to_string(&s.action).expect("action serializes"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn decode<T: for<'de> Deserialize<'de>>(raw: &str) -> Result<T, PolicyError> {
    let body = outermost_object(raw)
        .ok_or_else(|| PolicyError::Decode(format!("no JSON object in {raw:?}")))?;
    serde_json::from_str(body).map_err(|e| PolicyError::Decode(format!("{e} in {raw:?}")))
}

/// An agent served by a chat model.
#[derive(Clone)]
pub struct ChatPolicy {
    model: Arc<dyn ChatModel>,
}

impl ChatPolicy {
    pub fn new(model: Arc<dyn ChatModel>) -> Self {
        Self { model }
    }
}

impl Policy for ChatPolicy {
    fn decide(&self, ctx: &DecisionContext<'_>) -> Result<Decision, PolicyError> {
        #[derive(Deserialize)]
        struct Reply {
            #[serde(default)]
            thought: String,
            action: ActionCommand,
        }
        let mut text = format!("App: {}\nTask: {}\n", ctx.task.app, ctx.task.instruction);
        if let Some(g) = ctx.guidance {
            text.push_str(&format!("Supervisor analysis: {g}\n"));
        }
        text.push_str(&format!(
            "Previous actions:\n{}\nElements:\n",
            action_lines(ctx.history)
        ));
        for n in &ctx.observation.a11y {
            text.push_str(&format!(
                "- [{}] {} '{}'{}\n",
                n.element_id,
                n.kind,
                n.label,
                if n.interactable { "" } else { " (static)" }
            ));
        }
        let req = GenerationRequest::new(prompts::AGENT_SYSTEM)
            .text(text)
            .image(ctx.observation.render.clone())
            .with_seed(ctx.round as u64);
        let reply: Reply = decode(&self.model.chat_generate(&req)?)?;
        Ok(Decision {
            thought: reply.thought,
            action: reply.action,
        })
    }
}

/// Model weights are updated outside this crate; successes are only logged.
impl Learner for ChatPolicy {
    fn update(&mut self, successes: &[Trajectory]) {
        log::info!(
            "{} successful trajectories available for learner retraining",
            successes.len()
        );
    }
}

#[derive(Clone)]
pub struct ChatMonitor {
    model: Arc<dyn ChatModel>,
}

impl ChatMonitor {
    pub fn new(model: Arc<dyn ChatModel>) -> Self {
        Self { model }
    }
}

impl Monitor for ChatMonitor {
    fn check(
        &self,
        task: &RolloutTask,
        history: &[TrajectoryStep],
        before: &Observation,
        after: &Observation,
    ) -> Result<MonitorVerdict, PolicyError> {
        #[derive(Deserialize)]
        struct Reply {
            deviated: bool,
            #[serde(default)]
            analysis: String,
        }
        let recent = &history[history.len().saturating_sub(5)..];
        let req = GenerationRequest::new(prompts::MONITOR_SYSTEM)
            .text(format!(
                "Task: {}\nRecent actions:\n{}",
                task.instruction,
                action_lines(recent)
            ))
            .image(before.render.clone())
            .image(after.render.clone());
        let reply: Reply = decode(&self.model.chat_generate(&req)?)?;
        let analysis = if reply.deviated && reply.analysis.trim().is_empty() {
            "The last action was flagged as a deviation.".to_string()
        } else {
            reply.analysis
        };
        Ok(MonitorVerdict {
            deviated: reply.deviated,
            analysis,
        })
    }
}

#[derive(Clone)]
pub struct ChatJudge {
    model: Arc<dyn ChatModel>,
}

impl ChatJudge {
    pub fn new(model: Arc<dyn ChatModel>) -> Self {
        Self { model }
    }
}

impl Judge for ChatJudge {
    fn judge(
        &self,
        trajectory: &Trajectory,
        final_observation: &Observation,
    ) -> Result<bool, PolicyError> {
        #[derive(Deserialize)]
        struct Reply {
            success: bool,
        }
        let req = GenerationRequest::new(prompts::JUDGE_SYSTEM)
            .text(format!(
                "App: {}\nTask: {}\nActions:\n{}",
                trajectory.task.app,
                trajectory.task.instruction,
                action_lines(&trajectory.steps)
            ))
            .image(final_observation.render.clone());
        let raw = self
            .model
            .chat_generate(&req)
            .map_err(|e: ProviderError| PolicyError::Provider(e))?;
        Ok(decode::<Reply>(&raw)?.success)
    }
}
