//! Deterministic simulated mobile apps.
//!
//! An app is a [`SimAppSpec`]; an episode is an [`EnvState`] advanced by
//! [`step`]. Observations carry a grayscale render and an accessibility
//! listing. [`plan::shortest_plan`] is the breadth-first oracle used as the
//! expert policy in desk-scale rollouts.

pub mod goal;
pub mod plan;
pub mod render;
pub mod spec;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use goal::{goal_check, resolve_goal, TaskGoal};
pub use plan::{shortest_plan, PlanError};
pub use render::PixelGrid;
pub use spec::{
    generate_app, AppGenParams, ElementId, ElementKind, FieldValue, ScreenId, SimAppSpec,
    SimScreenSpec, UiElement,
};

use crate::hashing::sha256_hex;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid generation parameters: {0}")]
    InvalidParams(String),
    #[error("invalid app spec: {0}")]
    InvalidSpec(String),
    #[error("i/o error on {0}: {1}")]
    Io(String, #[source] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActionCommand {
    Click { element_id: ElementId },
    Type { element_id: ElementId, text: String },
    Back,
    Complete,
    Answer { text: String },
}

impl ActionCommand {
    pub fn is_terminal(&self) -> bool {
        matches!(self, ActionCommand::Complete | ActionCommand::Answer { .. })
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ActionCommand::Click { .. } => "click",
            ActionCommand::Type { .. } => "type",
            ActionCommand::Back => "back",
            ActionCommand::Complete => "complete",
            ActionCommand::Answer { .. } => "answer",
        }
    }

    pub fn target(&self) -> Option<ElementId> {
        match self {
            ActionCommand::Click { element_id } | ActionCommand::Type { element_id, .. } => {
                Some(*element_id)
            }
            _ => None,
        }
    }

    /// Two actions disagree when their kinds or target elements differ.
    pub fn disagrees_with(&self, other: &ActionCommand) -> bool {
        self.kind_name() != other.kind_name() || self.target() != other.target()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Completed,
    Answered(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvState {
    pub current_screen: ScreenId,
    pub data: BTreeMap<String, FieldValue>,
    pub history_stack: Vec<ScreenId>,
    pub terminated: Option<Termination>,
}

impl EnvState {
    /// Home screen, initial data, empty back stack.
    pub fn initial(spec: &SimAppSpec) -> Self {
        Self {
            current_screen: 0,
            data: spec.data_fields.clone(),
            history_stack: Vec::new(),
            terminated: None,
        }
    }

    pub fn final_answer(&self) -> Option<&str> {
        match &self.terminated {
            Some(Termination::Answered(text)) => Some(text),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct A11yNode {
    pub element_id: ElementId,
    pub kind: String,
    pub label: String,
    pub interactable: bool,
    pub bounds: [usize; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checked: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub screen_id: ScreenId,
    pub render_key: String,
    #[serde(skip)]
    pub render: Arc<PixelGrid>,
    pub a11y: Vec<A11yNode>,
}

impl Observation {
    pub fn build(spec: &SimAppSpec, state: &EnvState) -> Self {
        let render = render::render(spec, state);
        let screen = spec.screen(state.current_screen).expect("valid screen");
        let a11y = screen
            .elements
            .iter()
            .enumerate()
            .map(|(i, el)| A11yNode {
                element_id: el.element_id,
                kind: el.kind.name().to_string(),
                label: el.label.clone(),
                interactable: el.interactable,
                bounds: render::element_bounds(i),
                checked: match &el.kind {
                    ElementKind::Toggle { field } => {
                        state.data.get(field).and_then(FieldValue::as_bool)
                    }
                    _ => None,
                },
                text: match &el.kind {
                    ElementKind::Input { field } => state
                        .data
                        .get(field)
                        .and_then(FieldValue::as_text)
                        .map(str::to_string),
                    _ => None,
                },
            })
            .collect();
        Self {
            screen_id: state.current_screen,
            render_key: render.content_key(),
            render: Arc::new(render),
            a11y,
        }
    }

    /// Stable digest of the accessibility listing.
    pub fn a11y_digest(&self) -> String {
        sha256_hex(
            &serde_json::to_vec(&self.a11y).expect("a11y serializes"),
            32,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionRecord {
    pub before: Arc<Observation>,
    pub action: ActionCommand,
    pub after: Arc<Observation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("invalid action {action:?} on screen {screen_id}: {reason}")]
pub struct InvalidAction {
    pub screen_id: ScreenId,
    pub action: ActionCommand,
    pub reason: String,
}

/// Resets to the home screen.
pub fn reset(spec: &SimAppSpec) -> (EnvState, Observation) {
    let state = EnvState::initial(spec);
    let obs = Observation::build(spec, &state);
    (state, obs)
}

/// Pure state transition; does not render.
pub fn apply(
    spec: &SimAppSpec,
    state: &EnvState,
    action: &ActionCommand,
) -> Result<EnvState, InvalidAction> {
    let invalid = |reason: &str| InvalidAction {
        screen_id: state.current_screen,
        action: action.clone(),
        reason: reason.to_string(),
    };
    if state.terminated.is_some() {
        return Err(invalid("episode already terminated"));
    }
    let screen = spec
        .screen(state.current_screen)
        .ok_or_else(|| invalid("state references a missing screen"))?;
    let mut next = state.clone();
    match action {
        ActionCommand::Complete => next.terminated = Some(Termination::Completed),
        ActionCommand::Answer { text } => {
            next.terminated = Some(Termination::Answered(text.clone()))
        }
        ActionCommand::Back => pop_back(&mut next),
        ActionCommand::Click { element_id } => {
            let el = screen
                .element(*element_id)
                .ok_or_else(|| invalid("no such element"))?;
            if !el.interactable {
                return Err(invalid("element is not interactable"));
            }
            match &el.kind {
                ElementKind::Nav { target_screen } => {
                    next.history_stack.push(next.current_screen);
                    next.current_screen = *target_screen;
                }
                ElementKind::Toggle { field } => {
                    let current = next
                        .data
                        .get(field)
                        .and_then(FieldValue::as_bool)
                        .unwrap_or(false);
                    next.data.insert(field.clone(), FieldValue::Bool(!current));
                }
                ElementKind::Back => pop_back(&mut next),
                ElementKind::Input { .. } | ElementKind::Terminal => {}
            }
        }
        ActionCommand::Type { element_id, text } => {
            let el = screen
                .element(*element_id)
                .ok_or_else(|| invalid("no such element"))?;
            if !el.interactable {
                return Err(invalid("element is not interactable"));
            }
            match &el.kind {
                ElementKind::Input { field } => {
                    next.data
                        .insert(field.clone(), FieldValue::Text(text.clone()));
                }
                _ => return Err(invalid("element does not accept text")),
            }
        }
    }
    Ok(next)
}

fn pop_back(state: &mut EnvState) {
    if let Some(prev) = state.history_stack.pop() {
        state.current_screen = prev;
    }
}

/// Applies `action` and renders the result. On error the caller keeps `state`.
pub fn step(
    spec: &SimAppSpec,
    state: &EnvState,
    action: &ActionCommand,
) -> Result<(EnvState, Observation, TransitionRecord), InvalidAction> {
    let next = apply(spec, state, action)?;
    let before = Observation::build(spec, state);
    let after = Observation::build(spec, &next);
    let record = TransitionRecord {
        before: Arc::new(before),
        action: action.clone(),
        after: Arc::new(after.clone()),
    };
    Ok((next, after, record))
}

/// Environment interface targeted by the explorer and rollout engine.
///
/// The simulator is the only backend shipped; a device-backed adapter would
/// implement the same three calls.
pub trait Environment {
    fn app_name(&self) -> &str;
    fn reset(&mut self) -> Arc<Observation>;
    fn observation(&self) -> Arc<Observation>;
    /// Executes `action`. Invalid actions leave the state unchanged.
    fn step(&mut self, action: &ActionCommand) -> Result<Arc<Observation>, InvalidAction>;
    fn is_terminated(&self) -> bool;
}

/// One episode over a shared spec.
#[derive(Debug, Clone)]
pub struct SimEnv {
    spec: Arc<SimAppSpec>,
    state: EnvState,
    obs: Arc<Observation>,
}

impl SimEnv {
    pub fn new(spec: Arc<SimAppSpec>) -> Self {
        let (state, obs) = reset(&spec);
        Self {
            spec,
            state,
            obs: Arc::new(obs),
        }
    }

    pub fn spec(&self) -> &Arc<SimAppSpec> {
        &self.spec
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }
}

impl Environment for SimEnv {
    fn app_name(&self) -> &str {
        &self.spec.app_name
    }

    fn reset(&mut self) -> Arc<Observation> {
        let (state, obs) = reset(&self.spec);
        self.state = state;
        self.obs = Arc::new(obs);
        self.obs.clone()
    }

    fn observation(&self) -> Arc<Observation> {
        self.obs.clone()
    }

    fn step(&mut self, action: &ActionCommand) -> Result<Arc<Observation>, InvalidAction> {
        let next = apply(&self.spec, &self.state, action)?;
        if next != self.state {
            self.obs = Arc::new(Observation::build(&self.spec, &next));
            self.state = next;
        }
        Ok(self.obs.clone())
    }

    fn is_terminated(&self) -> bool {
        self.state.terminated.is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn app() -> SimAppSpec {
        generate_app(
            "Settings",
            AppGenParams {
                n_screens: 8,
                elements_per_screen: 4,
                n_fields: 8,
            },
            11,
        )
        .unwrap()
    }

    fn find(
        spec: &SimAppSpec,
        screen: ScreenId,
        pred: impl Fn(&UiElement) -> bool,
    ) -> Option<UiElement> {
        spec.screen(screen)
            .unwrap()
            .elements
            .iter()
            .find(|e| pred(e))
            .cloned()
    }

    #[test]
    fn reset_starts_home_and_is_pure() {
        let spec = app();
        let (s1, o1) = reset(&spec);
        let (_, o2) = reset(&spec);
        assert_eq!(o1.screen_id, 0);
        assert!(s1.history_stack.is_empty());
        assert_eq!(o1.render.pixels, o2.render.pixels);
    }

    #[test]
    fn reset_isolates_episodes() {
        let spec = Arc::new(app());
        let mut env = SimEnv::new(spec.clone());
        let nav = find(&spec, 0, |e| matches!(e.kind, ElementKind::Nav { .. })).unwrap();
        env.step(&ActionCommand::Click {
            element_id: nav.element_id,
        })
        .unwrap();
        env.reset();
        assert_eq!(env.state(), &EnvState::initial(&spec));
    }

    #[test]
    fn nav_click_moves_and_back_returns() {
        let spec = app();
        let (state, _) = reset(&spec);
        let nav = find(&spec, 0, |e| matches!(e.kind, ElementKind::Nav { .. })).unwrap();
        let ElementKind::Nav { target_screen } = nav.kind else {
            unreachable!()
        };
        let (s2, o2, rec) = step(
            &spec,
            &state,
            &ActionCommand::Click {
                element_id: nav.element_id,
            },
        )
        .unwrap();
        assert_eq!(o2.screen_id, target_screen);
        assert_eq!(rec.before.screen_id, 0);
        let (s3, o3, _) = step(&spec, &s2, &ActionCommand::Back).unwrap();
        assert_eq!(o3.screen_id, 0);
        assert!(s3.history_stack.is_empty());
        // Back on an empty stack is a no-op.
        let (s4, _, _) = step(&spec, &s3, &ActionCommand::Back).unwrap();
        assert_eq!(s4, s3);
    }

    #[test]
    fn toggle_is_an_involution() {
        let spec = app();
        let (screen, el) = spec
            .screens
            .iter()
            .find_map(|s| {
                s.elements
                    .iter()
                    .find(|e| matches!(e.kind, ElementKind::Toggle { .. }))
                    .map(|e| (s, e))
            })
            .unwrap();
        let mut state = EnvState::initial(&spec);
        state.current_screen = screen.screen_id;
        let click = ActionCommand::Click {
            element_id: el.element_id,
        };
        let once = apply(&spec, &state, &click).unwrap();
        assert_ne!(once.data, state.data);
        let twice = apply(&spec, &once, &click).unwrap();
        assert_eq!(twice, state);
    }

    #[test]
    fn non_interactable_click_is_rejected() {
        let spec = app();
        let (screen, el) = spec
            .screens
            .iter()
            .find_map(|s| s.elements.iter().find(|e| !e.interactable).map(|e| (s, e)))
            .expect("generated apps contain static elements");
        let mut env_state = EnvState::initial(&spec);
        env_state.current_screen = screen.screen_id;
        let err = step(
            &spec,
            &env_state,
            &ActionCommand::Click {
                element_id: el.element_id,
            },
        )
        .unwrap_err();
        assert_eq!(err.screen_id, screen.screen_id);
        let mut env = SimEnv::new(Arc::new(spec.clone()));
        env.state = env_state.clone();
        env.obs = Arc::new(Observation::build(&spec, &env_state));
        assert!(env
            .step(&ActionCommand::Click {
                element_id: el.element_id
            })
            .is_err());
        assert_eq!(env.state(), &env_state);
    }

    #[test]
    fn terminal_actions_freeze() {
        let spec = app();
        let s = EnvState::initial(&spec);
        let done = apply(&spec, &s, &ActionCommand::Answer { text: "x".into() }).unwrap();
        assert_eq!(done.final_answer(), Some("x"));
        assert!(apply(&spec, &done, &ActionCommand::Back).is_err());
    }

    #[test]
    fn a11y_interactable_set_matches_legal_clicks() {
        let spec = app();
        for screen in &spec.screens {
            let mut state = EnvState::initial(&spec);
            state.current_screen = screen.screen_id;
            let obs = Observation::build(&spec, &state);
            assert_eq!(obs.a11y.len(), screen.elements.len());
            for node in &obs.a11y {
                let ok = apply(
                    &spec,
                    &state,
                    &ActionCommand::Click {
                        element_id: node.element_id,
                    },
                )
                .is_ok();
                assert_eq!(ok, node.interactable);
            }
        }
    }
}
