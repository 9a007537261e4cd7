//! Deterministic offline chat backend.
//!
//! [`MockChat`] recognizes the request family by its system prompt and answers
//! with a pure function of the request and its seed. Roles that need to read
//! screens (annotation, judging) consult the simulator app specs they were
//! constructed with.

use std::sync::{Arc, OnceLock};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde_json::json;

use super::annotations::{AnnotationKind, AnnotationRecord};
use super::prompts;
use super::{outermost_list, ChatModel, GenerationRequest, ProviderError};
use crate::hashing::{derive_seed, fnv1a64};
use crate::sim::render::decode_screen_id;
use crate::sim::spec::LEXICON;
use crate::sim::{
    apply, goal_check, reset, resolve_goal, ActionCommand, ElementKind, SimAppSpec, UiElement,
};

/// Prefix the mock rewriter puts in front of every thought.
pub const REWRITE_TAG: &str = "[rewritten] ";

#[derive(Debug, Clone, Default)]
pub struct MockChat {
    seed: u64,
    specs: Arc<Vec<Arc<SimAppSpec>>>,
}

impl MockChat {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            specs: Arc::default(),
        }
    }

    pub fn with_specs(mut self, specs: Arc<Vec<Arc<SimAppSpec>>>) -> Self {
        self.specs = specs;
        self
    }

    fn spec(&self, app: &str) -> Option<&Arc<SimAppSpec>> {
        self.specs.iter().find(|s| s.app_name == app)
    }

    fn rng(&self, request: &GenerationRequest) -> ChaCha8Rng {
        let images: String = request.images().map(|i| i.key.as_str()).collect();
        let seed = derive_seed(
            self.seed,
            &[
                &request.seed.unwrap_or(0).to_le_bytes(),
                request.system_text.as_bytes(),
                request.user_text().as_bytes(),
                images.as_bytes(),
            ],
        );
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn annotate(&self, request: &GenerationRequest) -> Result<String, ProviderError> {
        let text = request.user_text();
        let app = line_value(&text, "App:").ok_or_else(|| {
            ProviderError::InvalidRequest("annotation request names no app".into())
        })?;
        let spec = self.spec(app).ok_or_else(|| {
            ProviderError::Unsupported(format!("no simulator spec for app {app}"))
        })?;
        let image = request.images().last().ok_or_else(|| {
            ProviderError::InvalidRequest("annotation request carries no screenshot".into())
        })?;
        let screen_id = decode_screen_id(&image.grid).ok_or_else(|| {
            ProviderError::Unsupported("screenshot is not a simulator render".into())
        })?;
        let screen = spec.screen(screen_id).ok_or_else(|| {
            ProviderError::Unsupported(format!("screen {screen_id} not in {app}"))
        })?;
        let records: Vec<AnnotationRecord> = screen
            .elements
            .iter()
            .map(|el| describe_element(app, &screen.title, el))
            .collect();
        Ok(serde_json::to_string(&records).expect("records serialize"))
    }

    fn synthesize(&self, request: &GenerationRequest) -> Result<String, ProviderError> {
        let text = request.user_text();
        let app = line_value(&text, "**App**:")
            .unwrap_or("the app")
            .to_string();
        let mut items: Vec<(Item, String)> = Vec::new();
        for cap in item_regex().captures_iter(&text) {
            let kind = match &cap[1] {
                "Toggle" => Item::Toggle,
                "Text field" => Item::TextField,
                _ => Item::Link,
            };
            let label = cap[2].to_string();
            if !items.iter().any(|(_, l)| *l == label) {
                items.push((kind, label));
            }
        }
        let mut rng = self.rng(request);
        let n_tasks = rng.gen_range(1..=3);
        let mut tasks = Vec::new();
        for k in 0..n_tasks {
            if items.is_empty() {
                break;
            }
            let chosen: Vec<usize> = if k == 0 {
                (0..items.len().min(3)).collect()
            } else {
                let size = rng.gen_range(2..=4).min(items.len());
                sample(&mut rng, items.len(), size).into_vec()
            };
            if let Some(task) = compose_task(&app, chosen.iter().map(|&i| &items[i]), &mut rng) {
                let reasoning = format!(
                    "Combines {} functionalities of {app} recalled from memory.",
                    chosen.len()
                );
                tasks.push(json!({"reasoning": reasoning, "task": task}));
            }
        }
        Ok(serde_json::to_string_pretty(&tasks).expect("tasks serialize"))
    }

    fn score(&self, request: &GenerationRequest) -> Result<String, ProviderError> {
        let text = request.user_text();
        let instruction = line_value(&text, "Instruction:").ok_or_else(|| {
            ProviderError::InvalidRequest("scoring request has no instruction".into())
        })?;
        let clauses = clause_regex().find_iter(instruction).count();
        let h = fnv1a64(format!("{}|{instruction}", self.seed).as_bytes());
        Ok(json!({
            "complexity": (1 + clauses).min(5),
            "clarity": 3 + h % 3,
            "reasonableness": 3 + (h >> 8) % 3,
        })
        .to_string())
    }

    fn monitor(&self, request: &GenerationRequest) -> Result<String, ProviderError> {
        let keys: Vec<&str> = request.images().map(|i| i.key.as_str()).collect();
        let stalled = keys.len() >= 2 && keys[keys.len() - 1] == keys[keys.len() - 2];
        let analysis = if stalled {
            "The last action left the screen unchanged; pick a different element."
        } else {
            ""
        };
        Ok(json!({"deviated": stalled, "analysis": analysis}).to_string())
    }

    fn judge(&self, request: &GenerationRequest) -> Result<String, ProviderError> {
        let text = request.user_text();
        let verdict = (|| {
            let app = line_value(&text, "App:")?;
            let task = line_value(&text, "Task:")?;
            let spec = self.spec(app)?;
            let goal = resolve_goal(spec, task)?;
            let (mut state, _) = reset(spec);
            let actions = text
                .split_once("Actions:\n")
                .map(|(_, rest)| rest)
                .unwrap_or("");
            for line in actions.lines().filter(|l| !l.trim().is_empty()) {
                let action: ActionCommand = serde_json::from_str(line).ok()?;
                if let Ok(next) = apply(spec, &state, &action) {
                    state = next;
                }
            }
            Some(state.terminated.is_some() && goal_check(&state, &goal, state.final_answer()))
        })();
        let success = verdict.unwrap_or(false);
        let reason = if success {
            "final state satisfies the task"
        } else {
            "final state does not satisfy the task"
        };
        Ok(json!({"success": success, "reason": reason}).to_string())
    }

    fn rewrite(&self, request: &GenerationRequest) -> Result<String, ProviderError> {
        let text = request.user_text();
        let thought = text
            .split_once("Original thought: ")
            .map(|(_, t)| t)
            .unwrap_or("");
        Ok(format!("{REWRITE_TAG}{thought}"))
    }

    fn decompose(&self, request: &GenerationRequest) -> Result<String, ProviderError> {
        let text = request.user_text();
        let task = text.split_once("Task: ").map(|(_, t)| t).unwrap_or(&text);
        static SPLIT: OnceLock<Regex> = OnceLock::new();
        let split = SPLIT.get_or_init(|| Regex::new(r"(?i)\band\b|\bthen\b|[,;.?]").unwrap());
        let phrases: Vec<String> = split
            .split(task)
            .map(|p| p.trim().to_lowercase())
            .filter(|p| !p.is_empty())
            .collect();
        Ok(serde_json::to_string(&phrases).expect("phrases serialize"))
    }
}

impl ChatModel for MockChat {
    fn chat_generate(&self, request: &GenerationRequest) -> Result<String, ProviderError> {
        request.validate()?;
        match request.system_text.as_str() {
            prompts::FUNCTIONALITY_SYSTEM => self.annotate(request),
            prompts::SYNTHESIS_SYSTEM => self.synthesize(request),
            prompts::SCORING_SYSTEM => self.score(request),
            prompts::MONITOR_SYSTEM => self.monitor(request),
            prompts::JUDGE_SYSTEM => self.judge(request),
            prompts::REWRITE_SYSTEM => self.rewrite(request),
            prompts::DECOMPOSE_SYSTEM => self.decompose(request),
            _ => Err(ProviderError::Unsupported(
                "mock backend does not recognize this prompt".into(),
            )),
        }
    }
}

/// Annotation the mock gives a simulator element.
pub fn describe_element(app: &str, screen_title: &str, el: &UiElement) -> AnnotationRecord {
    let place = format!("{app} > {screen_title}");
    let (kind, description) = match &el.kind {
        ElementKind::Nav { .. } => (
            AnnotationKind::Functionality,
            format!("Link '{0}' under {place} opens the {0} page.", el.label),
        ),
        ElementKind::Toggle { .. } => (
            AnnotationKind::Functionality,
            format!(
                "Toggle '{0}' under {place} switches {0} on or off.",
                el.label
            ),
        ),
        ElementKind::Input { .. } => (
            AnnotationKind::Functionality,
            format!(
                "Text field '{0}' under {place} edits the {0} value.",
                el.label
            ),
        ),
        ElementKind::Back => (
            AnnotationKind::Functionality,
            format!("Button 'Back' under {place} returns to the previous page."),
        ),
        ElementKind::Terminal if el.interactable => (
            AnnotationKind::Functionality,
            format!("Button '{0}' under {place} shows {0}.", el.label),
        ),
        ElementKind::Terminal => (
            AnnotationKind::Data,
            format!("Label '{0}' under {place} displays {0}.", el.label),
        ),
    };
    AnnotationRecord {
        kind,
        label: el.label.clone(),
        description,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Item {
    Toggle,
    TextField,
    Link,
}

fn item_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(Toggle|Text field|Link) '([^']+)'").unwrap())
}

fn clause_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)(turn on|turn off|set|open|value of) '").unwrap())
}

fn compose_task<'a>(
    app: &str,
    items: impl Iterator<Item = &'a (Item, String)>,
    rng: &mut ChaCha8Rng,
) -> Option<String> {
    let mut clauses = Vec::new();
    let mut opened = false;
    let mut asked: Option<&str> = None;
    for (kind, label) in items {
        match kind {
            Item::Toggle => {
                let verb = if rng.gen_bool(0.5) {
                    "turn on"
                } else {
                    "turn off"
                };
                clauses.push(format!("{verb} '{label}'"));
            }
            Item::TextField => {
                if asked.is_none() && !opened && rng.gen_bool(0.3) {
                    asked = Some(label);
                } else {
                    let word = LEXICON[rng.gen_range(0..LEXICON.len())];
                    clauses.push(format!("set '{label}' to '{word}'"));
                }
            }
            Item::Link => {
                if !opened && asked.is_none() {
                    opened = true;
                    clauses.push(format!("open '{label}'"));
                }
            }
        }
    }
    let question =
        asked.map(|l| format!("what is the current value of '{l}'? Answer with the text only."));
    match (clauses.is_empty(), question) {
        (true, None) => None,
        (true, Some(q)) => Some(format!("In {app}, {q}")),
        (false, q) => {
            let body = match clauses.len() {
                1 => clauses[0].clone(),
                n => format!("{} and {}", clauses[..n - 1].join(", "), clauses[n - 1]),
            };
            Some(match q {
                None => format!("In {app}, {body}."),
                Some(q) => format!("In {app}, {body}, then tell me: {q}"),
            })
        }
    }
}

/// `count` instructions over random 2 to 4 element subsets of `spec`, phrased
/// like the mock generator's output. Useful as a task set that does not
/// depend on exploration.
pub fn sample_instructions(spec: &SimAppSpec, count: usize, seed: u64) -> Vec<String> {
    let mut items: Vec<(Item, String)> = Vec::new();
    for s in &spec.screens {
        for el in &s.elements {
            let kind = match el.kind {
                ElementKind::Toggle { .. } => Item::Toggle,
                ElementKind::Input { .. } => Item::TextField,
                ElementKind::Nav { .. } => Item::Link,
                _ => continue,
            };
            if !items.iter().any(|(_, l)| *l == el.label) {
                items.push((kind, el.label.clone()));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
        seed,
        &[b"sample-instructions", spec.app_name.as_bytes()],
    ));
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count && !items.is_empty() && attempts < count * 20 {
        attempts += 1;
        let n = rng.gen_range(2..=4).min(items.len());
        let idx = sample(&mut rng, items.len(), n).into_vec();
        if let Some(task) = compose_task(&spec.app_name, idx.iter().map(|&i| &items[i]), &mut rng) {
            out.push(task);
        }
    }
    out
}

/// Value following `prefix` on the first line that starts with it.
fn line_value<'a>(text: &'a str, prefix: &str) -> Option<&'a str> {
    text.lines()
        .find_map(|l| l.trim_start().strip_prefix(prefix))
        .map(str::trim)
}

/// Parses a mock or remote JSON list of strings.
pub fn parse_string_list(raw: &str) -> Option<Vec<String>> {
    serde_json::from_str(outermost_list(raw)?).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::parse_annotations;
    use crate::sim::spec::{generate_app, AppGenParams};
    use crate::sim::Observation;

    fn spec() -> Arc<SimAppSpec> {
        Arc::new(
            generate_app(
                "Settings",
                AppGenParams {
                    n_screens: 6,
                    elements_per_screen: 3,
                    n_fields: 6,
                },
                9,
            )
            .unwrap(),
        )
    }

    #[test]
    fn annotator_returns_one_record_per_element() {
        let spec = spec();
        let chat = MockChat::new(1).with_specs(Arc::new(vec![spec.clone()]));
        for screen in &spec.screens {
            let (mut state, _) = reset(&spec);
            state.current_screen = screen.screen_id;
            let obs = Observation::build(&spec, &state);
            let req = GenerationRequest::new(prompts::FUNCTIONALITY_SYSTEM)
                .image(obs.render.clone())
                .text(prompts::functionality_user_without_context("Settings"));
            let recs = parse_annotations(&chat.chat_generate(&req).unwrap()).unwrap();
            assert_eq!(recs.len(), screen.elements.len());
            for (r, el) in recs.iter().zip(&screen.elements) {
                assert_eq!(r.label, el.label);
                assert_eq!(r.kind == AnnotationKind::Functionality, el.interactable);
            }
        }
    }

    #[test]
    fn generator_is_deterministic_and_uses_context_labels() {
        let chat = MockChat::new(7);
        let req = GenerationRequest::new(prompts::SYNTHESIS_SYSTEM).text(
            "**App**: Settings\n- Toggle 'Wi-Fi' under Settings > Network switches Wi-Fi on or off.\n\
             - Text field 'Device name' under Settings > About edits the Device name value.",
        );
        let a = chat.chat_generate(&req).unwrap();
        assert_eq!(a, chat.chat_generate(&req).unwrap());
        let tasks: Vec<serde_json::Value> = serde_json::from_str(&a).unwrap();
        assert!((1..=3).contains(&tasks.len()));
        let first = tasks[0]["task"].as_str().unwrap();
        assert!(
            first.contains("'Wi-Fi'") && first.contains("'Device name'"),
            "{first}"
        );
    }

    #[test]
    fn scorer_emits_scores_in_range() {
        let chat = MockChat::new(3);
        for i in 0..50 {
            let req = GenerationRequest::new(prompts::SCORING_SYSTEM).text(prompts::scoring_user(
                "Notes",
                &format!("In Notes, turn on 'Item {i}'."),
            ));
            let v: serde_json::Value =
                serde_json::from_str(&chat.chat_generate(&req).unwrap()).unwrap();
            for k in ["complexity", "clarity", "reasonableness"] {
                assert!((1..=5).contains(&v[k].as_u64().unwrap()));
            }
            assert_eq!(v["complexity"], 2);
        }
    }

    #[test]
    fn composed_tasks_ground_onto_goals() {
        let spec = spec();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut items = Vec::new();
        for s in &spec.screens {
            for el in &s.elements {
                let kind = match el.kind {
                    ElementKind::Toggle { .. } => Item::Toggle,
                    ElementKind::Input { .. } => Item::TextField,
                    ElementKind::Nav { .. } => Item::Link,
                    _ => continue,
                };
                if !items.iter().any(|(_, l)| *l == el.label) {
                    items.push((kind, el.label.clone()));
                }
            }
        }
        for _ in 0..100 {
            let idx = sample(&mut rng, items.len(), 3).into_vec();
            if let Some(task) = compose_task("Settings", idx.iter().map(|&i| &items[i]), &mut rng) {
                assert!(resolve_goal(&spec, &task).is_some(), "{task}");
            }
        }
    }

    #[test]
    fn decomposer_splits_clauses() {
        let chat = MockChat::new(0);
        let req = GenerationRequest::new(prompts::DECOMPOSE_SYSTEM).text(prompts::decompose_user(
            "Turn on wifi and then set name, open display.",
        ));
        let list = parse_string_list(&chat.chat_generate(&req).unwrap()).unwrap();
        assert_eq!(list, vec!["turn on wifi", "set name", "open display"]);
    }

    #[test]
    fn unknown_prompt_is_unsupported() {
        let err = MockChat::new(0)
            .chat_generate(&GenerationRequest::new("hello").text("x"))
            .unwrap_err();
        assert!(matches!(err, ProviderError::Unsupported(_)));
    }
}
