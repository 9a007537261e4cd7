//! Random-walk exploration campaigns.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hashing::{derive_seed, sha256_hex};
use crate::sim::spec::LEXICON;
use crate::sim::{
    ActionCommand, ElementId, Environment, Observation, SimAppSpec, SimEnv, TransitionRecord,
};
use crate::store::{read_json, read_jsonl, write_json, write_jsonl, RenderStore, StoreError};

#[derive(Debug, Error)]
pub enum ExploreError {
    #[error("sessions_per_app must be at least 1")]
    NoSessions,
    #[error("environment rejected an on-screen interactable element: {0}")]
    Environment(String),
    #[error("every exploration session of {app} failed")]
    AllSessionsFailed { app: String },
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExplorationTrajectory {
    pub app_name: String,
    pub session_id: u32,
    pub seed: u64,
    pub transitions: Vec<TransitionRecord>,
}

impl ExplorationTrajectory {
    /// Whether each transition starts where the previous one ended.
    pub fn is_chained(&self) -> bool {
        self.transitions
            .windows(2)
            .all(|w| w[0].after == w[1].before)
    }
}

/// Fingerprint of a screen's element structure, ignoring data values.
pub fn screen_fingerprint(obs: &Observation) -> String {
    let mut text = String::new();
    for node in &obs.a11y {
        text.push_str(&format!(
            "{}|{}|{}|{};",
            node.element_id, node.kind, node.label, node.interactable
        ));
    }
    sha256_hex(text.as_bytes(), 16)
}

/// Elements whose activation changed nothing, keyed by screen fingerprint.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElementBlacklist {
    pub entries: BTreeSet<(String, ElementId)>,
}

impl ElementBlacklist {
    pub fn contains(&self, fingerprint: &str, element_id: ElementId) -> bool {
        self.entries
            .contains(&(fingerprint.to_string(), element_id))
    }

    pub fn insert(&mut self, fingerprint: String, element_id: ElementId) -> bool {
        self.entries.insert((fingerprint, element_id))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// One session from the home screen. Each step activates a uniformly drawn
/// interactable, non-blacklisted element: inputs receive a lexicon word,
/// everything else is clicked. The session ends early when no candidate is left.
pub fn random_walk(
    env: &mut dyn Environment,
    steps: usize,
    blacklist: &mut ElementBlacklist,
    seed: u64,
    session_id: u32,
) -> Result<ExplorationTrajectory, ExploreError> {
    let mut rng =
        ChaCha8Rng::seed_from_u64(derive_seed(seed, &[b"walk", env.app_name().as_bytes()]));
    let mut obs = env.reset();
    let mut transitions = Vec::with_capacity(steps);
    for _ in 0..steps {
        let fingerprint = screen_fingerprint(&obs);
        let candidates: Vec<_> = obs
            .a11y
            .iter()
            .filter(|n| n.interactable && !blacklist.contains(&fingerprint, n.element_id))
            .collect();
        if candidates.is_empty() {
            break;
        }
        let node = candidates[rng.gen_range(0..candidates.len())];
        let action = if node.kind == "input" {
            ActionCommand::Type {
                element_id: node.element_id,
                text: LEXICON[rng.gen_range(0..LEXICON.len())].to_string(),
            }
        } else {
            ActionCommand::Click {
                element_id: node.element_id,
            }
        };
        let after = env
            .step(&action)
            .map_err(|e| ExploreError::Environment(e.to_string()))?;
        if after.render_key == obs.render_key && after.a11y_digest() == obs.a11y_digest() {
            blacklist.insert(fingerprint, node.element_id);
        }
        transitions.push(TransitionRecord {
            before: obs.clone(),
            action,
            after: after.clone(),
        });
        obs = after;
        if env.is_terminated() {
            break;
        }
    }
    Ok(ExplorationTrajectory {
        app_name: env.app_name().to_string(),
        session_id,
        seed,
        transitions,
    })
}

/// Runs `sessions_per_app` walks per app with seeds `base_seed + session`.
/// Apps run in parallel; sessions of one app share a blacklist and run in order.
pub fn run_campaign(
    specs: &[Arc<SimAppSpec>],
    sessions_per_app: usize,
    steps: usize,
    base_seed: u64,
) -> Result<Vec<ExplorationTrajectory>, ExploreError> {
    if sessions_per_app == 0 {
        return Err(ExploreError::NoSessions);
    }
    let per_app: Vec<Result<Vec<ExplorationTrajectory>, ExploreError>> = specs
        .par_iter()
        .map(|spec| {
            let mut env = SimEnv::new(spec.clone());
            let mut blacklist = ElementBlacklist::default();
            let mut out = Vec::with_capacity(sessions_per_app);
            for session in 0..sessions_per_app {
                match random_walk(
                    &mut env,
                    steps,
                    &mut blacklist,
                    base_seed + session as u64,
                    session as u32,
                ) {
                    Ok(t) => out.push(t),
                    Err(e) => log::warn!("{} session {session} failed: {e}", spec.app_name),
                }
            }
            if out.is_empty() {
                return Err(ExploreError::AllSessionsFailed {
                    app: spec.app_name.clone(),
                });
            }
            Ok(out)
        })
        .collect();
    let mut all = Vec::new();
    for r in per_app {
        all.extend(r?);
    }
    Ok(all)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TransitionLine {
    step: usize,
    action: ActionCommand,
    before: Observation,
    after: Observation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionEntry {
    pub app: String,
    pub session_id: u32,
    pub seed: u64,
    pub steps: usize,
    pub file: String,
}

/// Writes `exploration/index.json`, one JSONL file per session, and every
/// render into `renders`.
pub fn save_trajectories(
    root: &Path,
    renders: &RenderStore,
    trajectories: &[ExplorationTrajectory],
) -> Result<(), ExploreError> {
    let mut index = Vec::with_capacity(trajectories.len());
    for t in trajectories {
        let file = format!("{}/session_{:04}.jsonl", t.app_name, t.session_id);
        let mut lines = Vec::with_capacity(t.transitions.len());
        for (step, tr) in t.transitions.iter().enumerate() {
            renders.put(&tr.before.render)?;
            renders.put(&tr.after.render)?;
            lines.push(TransitionLine {
                step,
                action: tr.action.clone(),
                before: (*tr.before).clone(),
                after: (*tr.after).clone(),
            });
        }
        write_jsonl(&root.join("exploration").join(&file), &lines)?;
        index.push(SessionEntry {
            app: t.app_name.clone(),
            session_id: t.session_id,
            seed: t.seed,
            steps: t.transitions.len(),
            file,
        });
    }
    write_json(&root.join("exploration/index.json"), &index)?;
    Ok(())
}

pub fn load_index(root: &Path) -> Result<Vec<SessionEntry>, ExploreError> {
    Ok(read_json(&root.join("exploration/index.json"))?)
}

/// Reloads trajectories in campaign order, re-attaching renders.
pub fn load_trajectories(
    root: &Path,
    renders: &RenderStore,
) -> Result<Vec<ExplorationTrajectory>, ExploreError> {
    let mut out = Vec::new();
    for entry in load_index(root)? {
        let lines: Vec<TransitionLine> = read_jsonl(&root.join("exploration").join(&entry.file))?;
        let mut transitions = Vec::with_capacity(lines.len());
        let mut prev: Option<Arc<Observation>> = None;
        for mut line in lines {
            renders.hydrate(&mut line.before)?;
            renders.hydrate(&mut line.after)?;
            let before = match prev.take() {
                Some(p) if *p == line.before => p,
                _ => Arc::new(line.before),
            };
            let after = Arc::new(line.after);
            prev = Some(after.clone());
            transitions.push(TransitionRecord {
                before,
                action: line.action,
                after,
            });
        }
        out.push(ExplorationTrajectory {
            app_name: entry.app,
            session_id: entry.session_id,
            seed: entry.seed,
            transitions,
        });
    }
    Ok(out)
}
