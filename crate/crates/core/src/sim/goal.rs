//! Verifiable task goals and grounding of instruction text onto them.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::spec::{ElementKind, FieldValue, ScreenId, SimAppSpec};
use super::EnvState;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TaskGoal {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_screen: Option<ScreenId>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub required_data: BTreeMap<String, FieldValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub required_answer: Option<String>,
}

impl TaskGoal {
    pub fn is_valid(&self) -> bool {
        self.target_screen.is_some()
            || !self.required_data.is_empty()
            || self.required_answer.is_some()
    }

    /// Whether the non-answer components hold in `state`.
    pub fn state_satisfied(&self, state: &EnvState) -> bool {
        self.target_screen.is_none_or(|t| t == state.current_screen)
            && self
                .required_data
                .iter()
                .all(|(k, v)| state.data.get(k) == Some(v))
    }
}

pub fn normalize_answer(text: &str) -> String {
    text.trim().to_lowercase()
}

/// True iff every present goal component matches. Answers compare
/// case-insensitively after trimming.
pub fn goal_check(state: &EnvState, goal: &TaskGoal, final_answer: Option<&str>) -> bool {
    if !goal.state_satisfied(state) {
        return false;
    }
    match &goal.required_answer {
        None => true,
        Some(expected) => {
            final_answer.is_some_and(|a| normalize_answer(a) == normalize_answer(expected))
        }
    }
}

fn clause_patterns() -> &'static [(Clause, Regex)] {
    static PATTERNS: OnceLock<Vec<(Clause, Regex)>> = OnceLock::new();
    PATTERNS.get_or_init(|| {
        vec![
            (
                Clause::TurnOn,
                Regex::new(r"(?i)turn on '([^']+)'").unwrap(),
            ),
            (
                Clause::TurnOff,
                Regex::new(r"(?i)turn off '([^']+)'").unwrap(),
            ),
            (
                Clause::Set,
                Regex::new(r"(?i)set '([^']+)' to '([^']*)'").unwrap(),
            ),
            (Clause::Open, Regex::new(r"(?i)open '([^']+)'").unwrap()),
            (
                Clause::Ask,
                Regex::new(r"(?i)what is the current value of '([^']+)'").unwrap(),
            ),
        ]
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Clause {
    TurnOn,
    TurnOff,
    Set,
    Open,
    Ask,
}

/// Maps an instruction phrased with quoted element labels onto a [`TaskGoal`]
/// for `spec`. Returns `None` when a referenced label does not exist in the app
/// or the instruction carries no recognizable clause.
///
/// Recognized clauses: `turn on 'X'`, `turn off 'X'`, `set 'X' to 'v'`,
/// `open 'Screen'`, `what is the current value of 'X'`.
pub fn resolve_goal(spec: &SimAppSpec, instruction: &str) -> Option<TaskGoal> {
    let mut field_by_label: BTreeMap<String, (String, bool)> = BTreeMap::new();
    for screen in &spec.screens {
        for el in &screen.elements {
            match &el.kind {
                ElementKind::Toggle { field } => {
                    field_by_label.insert(el.label.to_lowercase(), (field.clone(), true));
                }
                ElementKind::Input { field } => {
                    field_by_label.insert(el.label.to_lowercase(), (field.clone(), false));
                }
                _ => {}
            }
        }
    }
    let screen_by_title: BTreeMap<String, ScreenId> = spec
        .screens
        .iter()
        .map(|s| (s.title.to_lowercase(), s.screen_id))
        .collect();

    let mut hits: Vec<(usize, Clause, Vec<String>)> = Vec::new();
    for (clause, re) in clause_patterns() {
        for cap in re.captures_iter(instruction) {
            let start = cap.get(0).unwrap().start();
            let groups = cap
                .iter()
                .skip(1)
                .map(|g| g.map(|m| m.as_str().to_string()).unwrap_or_default())
                .collect();
            hits.push((start, *clause, groups));
        }
    }
    if hits.is_empty() {
        return None;
    }
    hits.sort_by_key(|(start, _, _)| *start);

    let mut goal = TaskGoal::default();
    for (_, clause, groups) in hits {
        let key = groups[0].to_lowercase();
        match clause {
            Clause::TurnOn | Clause::TurnOff => {
                let (field, is_toggle) = field_by_label.get(&key)?;
                if !is_toggle {
                    return None;
                }
                goal.required_data
                    .insert(field.clone(), FieldValue::Bool(clause == Clause::TurnOn));
            }
            Clause::Set => {
                let (field, is_toggle) = field_by_label.get(&key)?;
                if *is_toggle {
                    return None;
                }
                goal.required_data
                    .insert(field.clone(), FieldValue::Text(groups[1].clone()));
            }
            Clause::Open => {
                goal.target_screen = Some(*screen_by_title.get(&key)?);
            }
            Clause::Ask => {
                let (field, is_toggle) = field_by_label.get(&key)?;
                if *is_toggle {
                    return None;
                }
                let (screen, _) = spec.field_location(field)?;
                let value = spec.data_fields.get(field)?.as_text()?.to_string();
                goal.target_screen = Some(screen.screen_id);
                goal.required_answer = Some(value);
            }
        }
    }
    goal.is_valid().then_some(goal)
}
