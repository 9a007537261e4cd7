//! Global environment memory: deduplicated screens, their neighborhood, the
//! functionalities found on each screen, and a per-app retrieval index.
//!
//! [`build_memory`] runs three stages per app. Observations are clustered by
//! perceptual hash ([`dedup_screens`]); transitions between clusters become
//! symmetric neighbor links ([`build_neighborhood`]) and each cluster's
//! representative is annotated ([`annotate_screen`]); finally all
//! descriptions are embedded and indexed ([`index::RetrievalIndex::build`]).

pub mod index;
pub mod phash;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use index::{IndexEntry, RetrievalIndex};
pub use phash::{phash, phash_similarity, PHash};

use crate::explorer::ExplorationTrajectory;
use crate::providers::annotations::AnnotationParseError;
use crate::providers::{
    parse_annotations, prompts, AnnotationKind, AnnotationRecord, ChatModel, Embedder, Embedding,
    GenerationRequest, ProviderBundle, ProviderError,
};
use crate::sim::{ActionCommand, Observation, PixelGrid, ScreenId};
use crate::store::{read_json, read_jsonl, write_json, write_jsonl, StoreError};

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("memory construction needs at least one trajectory")]
    NoTrajectories,
    #[error("dedup threshold must lie in (0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("provider failure while building memory for {app}: {source}")]
    Provider { app: String, source: ProviderError },
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MemoryConfig {
    pub tau: f64,
    pub diversity_threshold: f64,
    pub embed_batch: usize,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self {
            tau: 0.95,
            diversity_threshold: 0.8,
            embed_batch: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenNode {
    pub node_id: usize,
    /// Render key of the first member.
    pub representative: String,
    /// Environment screen id of the representative, kept for inspection.
    pub observed_screen: ScreenId,
    pub phash: PHash,
    pub members: Vec<String>,
    pub neighbors: BTreeSet<usize>,
    pub functionality_ids: Vec<usize>,
    #[serde(default)]
    pub annotation_failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Functionality {
    pub id: usize,
    pub node_id: usize,
    pub kind: AnnotationKind,
    pub label: String,
    pub description: String,
    pub embedding: Embedding,
    /// Row in the retrieval index, if admitted.
    pub index_row: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub count: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentMemory {
    pub app_name: String,
    pub config: MemoryConfig,
    pub nodes: Vec<ScreenNode>,
    pub functionalities: Vec<Functionality>,
    /// Directed transition counts between distinct nodes.
    pub edges: BTreeMap<(usize, usize), u32>,
    pub index: RetrievalIndex,
}

impl EnvironmentMemory {
    pub fn node_functionalities(&self, node_id: usize) -> impl Iterator<Item = &Functionality> {
        self.nodes[node_id]
            .functionality_ids
            .iter()
            .map(|&i| &self.functionalities[i])
    }

    /// Sources of transitions into `node_id`.
    pub fn inbound(&self, node_id: usize) -> Vec<usize> {
        self.edges
            .keys()
            .filter(|(_, to)| *to == node_id)
            .map(|(from, _)| *from)
            .collect()
    }

    /// Targets of transitions out of `node_id`.
    pub fn outbound(&self, node_id: usize) -> Vec<usize> {
        self.edges
            .keys()
            .filter(|(from, _)| *from == node_id)
            .map(|(_, to)| *to)
            .collect()
    }

    /// The node itself plus its neighbors.
    pub fn default_exclusion(&self, node_id: usize) -> BTreeSet<usize> {
        let mut set = self.nodes[node_id].neighbors.clone();
        set.insert(node_id);
        set
    }

    /// Renormalized mean of the node's functionality embeddings, or the
    /// embedding of the app name for a node without functionalities.
    pub fn query_embedding(
        &self,
        node_id: usize,
        embedder: &dyn Embedder,
    ) -> Result<Embedding, ProviderError> {
        let vectors: Vec<&Embedding> = self
            .node_functionalities(node_id)
            .map(|f| &f.embedding)
            .collect();
        match Embedding::mean(&vectors) {
            Some(v) => Ok(v),
            None => embedder.embed_one(&self.app_name),
        }
    }
}

/// Long-term memory lookup for `node_id`: the top-`k` diversified index
/// entries whose screens are not in `exclude`.
pub fn retrieve_related<'a>(
    memory: &'a EnvironmentMemory,
    node_id: usize,
    k: usize,
    exclude: &BTreeSet<usize>,
    embedder: &dyn Embedder,
) -> Result<Vec<&'a Functionality>, ProviderError> {
    if k == 0 || memory.index.is_empty() {
        return Ok(Vec::new());
    }
    let query = memory.query_embedding(node_id, embedder)?;
    Ok(memory
        .index
        .retrieve(&query, k, exclude, memory.config.diversity_threshold)
        .into_iter()
        .map(|e| &memory.functionalities[e.functionality_id])
        .collect())
}

/// Distinct observations in campaign order (by render key).
pub fn distinct_observations(trajectories: &[ExplorationTrajectory]) -> Vec<Arc<Observation>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for t in trajectories {
        for tr in &t.transitions {
            for obs in [&tr.before, &tr.after] {
                if seen.insert(obs.render_key.clone()) {
                    out.push(obs.clone());
                }
            }
        }
    }
    out
}

/// Greedy single-pass clustering. Each observation joins the first node
/// whose representative hash has similarity at least `tau`, or founds a new
/// node. Returns the nodes and the render-key to node mapping.
pub fn dedup_screens(
    trajectories: &[ExplorationTrajectory],
    tau: f64,
) -> Result<(Vec<ScreenNode>, BTreeMap<String, usize>), MemoryError> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(MemoryError::InvalidThreshold(tau));
    }
    let mut nodes: Vec<ScreenNode> = Vec::new();
    let mut mapping = BTreeMap::new();
    for obs in distinct_observations(trajectories) {
        let h = phash(&obs.render);
        let id = match nodes
            .iter()
            .position(|n| phash_similarity(n.phash, h) >= tau)
        {
            Some(id) => {
                nodes[id].members.push(obs.render_key.clone());
                id
            }
            None => {
                let id = nodes.len();
                nodes.push(ScreenNode {
                    node_id: id,
                    representative: obs.render_key.clone(),
                    observed_screen: obs.screen_id,
                    phash: h,
                    members: vec![obs.render_key.clone()],
                    neighbors: BTreeSet::new(),
                    functionality_ids: Vec::new(),
                    annotation_failed: false,
                });
                id
            }
        };
        mapping.insert(obs.render_key.clone(), id);
    }
    Ok((nodes, mapping))
}

/// Directed edge counts and symmetric neighbor sets, self-loops dropped.
pub fn build_neighborhood(
    n_nodes: usize,
    mapping: &BTreeMap<String, usize>,
    trajectories: &[ExplorationTrajectory],
) -> (BTreeMap<(usize, usize), u32>, Vec<BTreeSet<usize>>) {
    let mut edges = BTreeMap::new();
    let mut neighbors = vec![BTreeSet::new(); n_nodes];
    for t in trajectories {
        for tr in &t.transitions {
            let a = mapping[&tr.before.render_key];
            let b = mapping[&tr.after.render_key];
            if a != b {
                *edges.entry((a, b)).or_insert(0) += 1;
                neighbors[a].insert(b);
                neighbors[b].insert(a);
            }
        }
    }
    (edges, neighbors)
}

/// The screen and action that led to a node.
#[derive(Debug, Clone)]
pub struct PredecessorContext {
    pub render: Arc<PixelGrid>,
    pub action: ActionCommand,
    pub description: String,
    pub bounds: Option<[usize; 4]>,
}

impl PredecessorContext {
    pub fn from_transition(before: &Observation, action: &ActionCommand) -> Self {
        let node = action
            .target()
            .and_then(|id| before.a11y.iter().find(|n| n.element_id == id));
        let label = node.map(|n| n.label.as_str()).unwrap_or("?");
        let description = match action {
            ActionCommand::Click { .. } => format!("click on '{label}'"),
            ActionCommand::Type { text, .. } => format!("type '{text}' into '{label}'"),
            ActionCommand::Back => "system back".to_string(),
            ActionCommand::Complete => "complete".to_string(),
            ActionCommand::Answer { text } => format!("answer '{text}'"),
        };
        Self {
            render: before.render.clone(),
            action: action.clone(),
            description,
            bounds: node.map(|n| n.bounds),
        }
    }
}

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error(transparent)]
    Parse(#[from] AnnotationParseError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// Builds the functionality-extraction request for one screen.
pub fn annotation_request(
    render: Arc<PixelGrid>,
    predecessor: Option<&PredecessorContext>,
    app_name: &str,
) -> GenerationRequest {
    let req = GenerationRequest::new(prompts::FUNCTIONALITY_SYSTEM);
    match predecessor {
        Some(p) => {
            let marked = match p.bounds {
                Some([x, y, w, h]) => Arc::new(p.render.with_outline(x, y, w, h)),
                None => p.render.clone(),
            };
            req.image(marked)
                .image(render)
                .text(prompts::functionality_user(app_name, &p.description))
        }
        None => req
            .image(render)
            .text(prompts::functionality_user_without_context(app_name)),
    }
}

pub fn annotate_screen(
    render: Arc<PixelGrid>,
    predecessor: Option<&PredecessorContext>,
    app_name: &str,
    annotator: &dyn ChatModel,
) -> Result<Vec<AnnotationRecord>, AnnotateError> {
    let raw = annotator.chat_generate(&annotation_request(render, predecessor, app_name))?;
    Ok(parse_annotations(&raw)?)
}

/// Groups trajectories by app, keeping first-occurrence order.
pub fn group_by_app(
    trajectories: &[ExplorationTrajectory],
) -> Vec<(String, Vec<ExplorationTrajectory>)> {
    let mut groups: Vec<(String, Vec<ExplorationTrajectory>)> = Vec::new();
    for t in trajectories {
        match groups.iter_mut().find(|(app, _)| *app == t.app_name) {
            Some((_, list)) => list.push(t.clone()),
            None => groups.push((t.app_name.clone(), vec![t.clone()])),
        }
    }
    groups
}

/// Builds one memory per app present in `trajectories`.
pub fn build_memory(
    trajectories: &[ExplorationTrajectory],
    providers: &ProviderBundle,
    config: &MemoryConfig,
) -> Result<Vec<EnvironmentMemory>, MemoryError> {
    if trajectories.is_empty() {
        return Err(MemoryError::NoTrajectories);
    }
    group_by_app(trajectories)
        .into_iter()
        .map(|(app, ts)| build_app_memory(&app, &ts, providers, config))
        .collect()
}

pub fn build_app_memory(
    app: &str,
    trajectories: &[ExplorationTrajectory],
    providers: &ProviderBundle,
    config: &MemoryConfig,
) -> Result<EnvironmentMemory, MemoryError> {
    let provider_err = |source| MemoryError::Provider {
        app: app.to_string(),
        source,
    };
    let (mut nodes, mapping) = dedup_screens(trajectories, config.tau)?;
    let (edges, neighbors) = build_neighborhood(nodes.len(), &mapping, trajectories);
    for (node, n) in nodes.iter_mut().zip(neighbors) {
        node.neighbors = n;
    }

    let observations: BTreeMap<String, Arc<Observation>> = distinct_observations(trajectories)
        .into_iter()
        .map(|o| (o.render_key.clone(), o))
        .collect();
    let mut predecessors: Vec<Option<PredecessorContext>> = vec![None; nodes.len()];
    for t in trajectories {
        for tr in &t.transitions {
            let (a, b) = (
                mapping[&tr.before.render_key],
                mapping[&tr.after.render_key],
            );
            if a != b && predecessors[b].is_none() {
                predecessors[b] = Some(PredecessorContext::from_transition(&tr.before, &tr.action));
            }
        }
    }

    let annotations: Vec<Result<Vec<AnnotationRecord>, AnnotateError>> = nodes
        .par_iter()
        .map(|node| {
            let render = observations[&node.representative].render.clone();
            annotate_screen(
                render,
                predecessors[node.node_id].as_ref(),
                app,
                providers.annotator.as_ref(),
            )
        })
        .collect();

    let mut records: Vec<(usize, AnnotationRecord)> = Vec::new();
    for (node, result) in nodes.iter_mut().zip(annotations) {
        match result {
            Ok(recs) => records.extend(recs.into_iter().map(|r| (node.node_id, r))),
            Err(AnnotateError::Parse(e)) => {
                log::warn!(
                    "{app}: skipping screen {} after annotation parse failure: {e}",
                    node.node_id
                );
                node.annotation_failed = true;
            }
            Err(AnnotateError::Provider(e)) => return Err(provider_err(e)),
        }
    }

    let texts: Vec<String> = records.iter().map(|(_, r)| r.description.clone()).collect();
    let mut embeddings = Vec::with_capacity(texts.len());
    for chunk in texts.chunks(config.embed_batch.max(1)) {
        embeddings.extend(
            providers
                .embedder
                .embed_texts(chunk)
                .map_err(provider_err)?,
        );
    }
    let mut functionalities: Vec<Functionality> = records
        .into_iter()
        .zip(embeddings)
        .enumerate()
        .map(|(id, ((node_id, r), embedding))| Functionality {
            id,
            node_id,
            kind: r.kind,
            label: r.label,
            description: r.description,
            embedding,
            index_row: None,
        })
        .collect();
    for f in &functionalities {
        nodes[f.node_id].functionality_ids.push(f.id);
    }

    let index = RetrievalIndex::build(
        functionalities.iter().map(|f| IndexEntry {
            functionality_id: f.id,
            node_id: f.node_id,
            embedding: f.embedding.clone(),
        }),
        config.diversity_threshold,
    );
    for (row, e) in index.entries.iter().enumerate() {
        functionalities[e.functionality_id].index_row = Some(row);
    }
    Ok(EnvironmentMemory {
        app_name: app.to_string(),
        config: *config,
        nodes,
        functionalities,
        edges,
        index,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MemoryMeta {
    app_name: String,
    config: MemoryConfig,
    dimension: usize,
    nodes: usize,
    functionalities: usize,
    indexed: usize,
}

/// Writes `memory/{app}/` through a staging directory so a partial store is
/// never visible under the final name.
pub fn save_memory(root: &Path, memory: &EnvironmentMemory) -> Result<(), MemoryError> {
    let final_dir = root.join("memory").join(&memory.app_name);
    let staging = root
        .join("memory")
        .join(format!(".{}.partial", memory.app_name));
    if staging.exists() {
        std::fs::remove_dir_all(&staging).map_err(|e| StoreError::io(&staging, e))?;
    }
    write_jsonl(&staging.join("nodes.jsonl"), &memory.nodes)?;
    let edges: Vec<Edge> = memory
        .edges
        .iter()
        .map(|(&(from, to), &count)| Edge { from, to, count })
        .collect();
    write_jsonl(&staging.join("edges.jsonl"), &edges)?;
    write_jsonl(
        &staging.join("functionalities.jsonl"),
        &memory.functionalities,
    )?;
    memory.index.save(&staging.join("index.bin"))?;
    write_json(
        &staging.join("meta.json"),
        &MemoryMeta {
            app_name: memory.app_name.clone(),
            config: memory.config,
            dimension: memory.index.dimension,
            nodes: memory.nodes.len(),
            functionalities: memory.functionalities.len(),
            indexed: memory.index.len(),
        },
    )?;
    if final_dir.exists() {
        std::fs::remove_dir_all(&final_dir).map_err(|e| StoreError::io(&final_dir, e))?;
    }
    std::fs::rename(&staging, &final_dir).map_err(|e| StoreError::io(&final_dir, e))?;
    Ok(())
}

pub fn save_memories(root: &Path, memories: &[EnvironmentMemory]) -> Result<(), MemoryError> {
    for m in memories {
        save_memory(root, m)?;
    }
    let apps: Vec<&str> = memories.iter().map(|m| m.app_name.as_str()).collect();
    write_json(&root.join("memory/apps.json"), &apps)?;
    Ok(())
}

pub fn load_memory(root: &Path, app: &str) -> Result<EnvironmentMemory, MemoryError> {
    let dir = root.join("memory").join(app);
    let meta: MemoryMeta = read_json(&dir.join("meta.json"))?;
    let nodes: Vec<ScreenNode> = read_jsonl(&dir.join("nodes.jsonl"))?;
    let edges: Vec<Edge> = read_jsonl(&dir.join("edges.jsonl"))?;
    let functionalities: Vec<Functionality> = read_jsonl(&dir.join("functionalities.jsonl"))?;
    let mut rows: Vec<&Functionality> = functionalities
        .iter()
        .filter(|f| f.index_row.is_some())
        .collect();
    rows.sort_by_key(|f| f.index_row);
    let index = RetrievalIndex {
        dimension: meta.dimension,
        entries: rows
            .into_iter()
            .map(|f| IndexEntry {
                functionality_id: f.id,
                node_id: f.node_id,
                embedding: f.embedding.clone(),
            })
            .collect(),
    };
    Ok(EnvironmentMemory {
        app_name: meta.app_name,
        config: meta.config,
        edges: edges
            .into_iter()
            .map(|e| ((e.from, e.to), e.count))
            .collect(),
        nodes,
        functionalities,
        index,
    })
}

pub fn load_memories(root: &Path) -> Result<Vec<EnvironmentMemory>, MemoryError> {
    let apps: Vec<String> = read_json(&root.join("memory/apps.json"))?;
    apps.iter().map(|a| load_memory(root, a)).collect()
}
