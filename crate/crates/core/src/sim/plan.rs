//! Breadth-first planning over the product of screens and goal-relevant data.

use std::collections::{HashMap, VecDeque};

use thiserror::Error;

use super::goal::TaskGoal;
use super::spec::{ElementKind, FieldValue, ScreenId, SimAppSpec};
use super::{apply, ActionCommand, EnvState};

/// Upper bound on expanded planner states.
pub const MAX_PLAN_STATES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("goal is unreachable from the current state")]
    Unreachable,
    #[error("planner exceeded {0} states")]
    StateSpaceExceeded(usize),
    #[error("goal has no components")]
    EmptyGoal,
}

type Key = (ScreenId, Vec<FieldValue>);

fn key_of(state: &EnvState, relevant: &[String]) -> Key {
    let values = relevant
        .iter()
        .map(|f| {
            state
                .data
                .get(f)
                .cloned()
                .unwrap_or(FieldValue::Bool(false))
        })
        .collect();
    (state.current_screen, values)
}

/// Candidate actions from `state` that can change the planner key, in tie-break
/// order: ascending element id (click before type on the same id), then the
/// system back command.
pub fn candidate_actions(
    spec: &SimAppSpec,
    state: &EnvState,
    goal: &TaskGoal,
) -> Vec<ActionCommand> {
    let Some(screen) = spec.screen(state.current_screen) else {
        return Vec::new();
    };
    let mut ids: Vec<_> = screen.elements.iter().filter(|e| e.interactable).collect();
    ids.sort_by_key(|e| e.element_id);
    let mut out = Vec::new();
    for el in ids {
        match &el.kind {
            ElementKind::Nav { .. } | ElementKind::Back => out.push(ActionCommand::Click {
                element_id: el.element_id,
            }),
            ElementKind::Toggle { field } if goal.required_data.contains_key(field) => {
                out.push(ActionCommand::Click {
                    element_id: el.element_id,
                })
            }
            ElementKind::Input { field } => {
                if let Some(FieldValue::Text(want)) = goal.required_data.get(field) {
                    if state.data.get(field).and_then(FieldValue::as_text) != Some(want.as_str()) {
                        out.push(ActionCommand::Type {
                            element_id: el.element_id,
                            text: want.clone(),
                        });
                    }
                }
            }
            _ => {}
        }
    }
    if !state.history_stack.is_empty() {
        out.push(ActionCommand::Back);
    }
    out
}

/// Minimum-length action sequence from `state` to a state satisfying the
/// non-answer components of `goal`. The terminal action is not included.
///
/// Back-stack contents are carried along the first path that reaches each
/// planner state. Generated apps have symmetric navigation, so for them a
/// back move never beats a click and the result is exactly minimal.
pub fn shortest_plan(
    spec: &SimAppSpec,
    state: &EnvState,
    goal: &TaskGoal,
) -> Result<Vec<ActionCommand>, PlanError> {
    if !goal.is_valid() {
        return Err(PlanError::EmptyGoal);
    }
    if goal.state_satisfied(state) {
        return Ok(Vec::new());
    }
    let relevant: Vec<String> = goal.required_data.keys().cloned().collect();
    let mut nodes: Vec<(EnvState, Option<(usize, ActionCommand)>)> = vec![(state.clone(), None)];
    let mut seen: HashMap<Key, usize> = HashMap::from([(key_of(state, &relevant), 0)]);
    let mut queue = VecDeque::from([0usize]);
    while let Some(idx) = queue.pop_front() {
        let current = nodes[idx].0.clone();
        for action in candidate_actions(spec, &current, goal) {
            let Ok(next) = apply(spec, &current, &action) else {
                continue;
            };
            let key = key_of(&next, &relevant);
            if seen.contains_key(&key) {
                continue;
            }
            if nodes.len() >= MAX_PLAN_STATES {
                return Err(PlanError::StateSpaceExceeded(MAX_PLAN_STATES));
            }
            let done = goal.state_satisfied(&next);
            nodes.push((next, Some((idx, action))));
            let new_idx = nodes.len() - 1;
            seen.insert(key, new_idx);
            if done {
                let mut plan = Vec::new();
                let mut cursor = new_idx;
                while let Some((parent, act)) = &nodes[cursor].1 {
                    plan.push(act.clone());
                    cursor = *parent;
                }
                plan.reverse();
                return Ok(plan);
            }
            queue.push_back(new_idx);
        }
    }
    Err(PlanError::Unreachable)
}

/// Plan length to the goal, or `None` if unreachable.
pub fn distance_to_goal(spec: &SimAppSpec, state: &EnvState, goal: &TaskGoal) -> Option<usize> {
    shortest_plan(spec, state, goal).ok().map(|p| p.len())
}

/// The action an optimal agent takes next: the first planned step, or the
/// terminal action once the goal state holds.
pub fn oracle_action(
    spec: &SimAppSpec,
    state: &EnvState,
    goal: &TaskGoal,
) -> Result<ActionCommand, PlanError> {
    if goal.state_satisfied(state) {
        return Ok(match &goal.required_answer {
            Some(answer) => ActionCommand::Answer {
                text: answer.clone(),
            },
            None => ActionCommand::Complete,
        });
    }
    let plan = shortest_plan(spec, state, goal)?;
    Ok(plan
        .into_iter()
        .next()
        .expect("non-satisfied goal yields a non-empty plan"))
}
