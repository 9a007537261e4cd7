//! Memory-augmented instruction synthesis and quality filtering.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hashing::derive_seed;
use crate::memory::{retrieve_related, EnvironmentMemory, Functionality};
use crate::providers::{
    cosine, outermost_list, outermost_object, prompts, reaches, ChatModel, Embedder, Embedding,
    GenerationRequest, ProviderBundle, ProviderError,
};
use crate::store::{read_json, read_jsonl, write_jsonl, RenderStore, StoreError};

pub const MAX_INSTRUCTION_CHARS: usize = 600;
pub const MAX_TASKS_PER_CALL: usize = 3;

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("no candidate instructions to filter")]
    NoCandidates,
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisContext {
    pub app_name: String,
    pub focal: usize,
    pub predecessor: Option<usize>,
    pub successors: Vec<usize>,
    /// Functionality ids retrieved from distant screens.
    pub long_term: Vec<usize>,
}

impl SynthesisContext {
    pub fn short_term(&self) -> impl Iterator<Item = usize> + '_ {
        self.predecessor
            .iter()
            .copied()
            .chain(self.successors.iter().copied())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualityScores {
    pub complexity: u8,
    pub clarity: u8,
    pub reasonableness: u8,
}

impl QualityScores {
    pub fn in_range(&self) -> bool {
        [self.complexity, self.clarity, self.reasonableness]
            .iter()
            .all(|v| (1..=5).contains(v))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateInstruction {
    pub text: String,
    pub reasoning: String,
    pub source_screen: usize,
    pub app_name: String,
    pub context: SynthesisContext,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstruction {
    pub id: String,
    pub app: String,
    pub text: String,
    pub reasoning: String,
    pub source_screen: usize,
    pub context: SynthesisContext,
    pub scores: QualityScores,
    #[serde(skip)]
    pub embedding: Embedding,
}

/// Picks the predecessor among inbound neighbors and up to three successors
/// among outbound neighbors, then retrieves up to `k` related
/// functionalities from screens outside the focal neighborhood.
pub fn build_context(
    memory: &EnvironmentMemory,
    node_id: usize,
    seed: u64,
    k: usize,
    embedder: &dyn Embedder,
) -> Result<SynthesisContext, ProviderError> {
    let mut rng = context_rng(&memory.app_name, node_id, seed);
    let inbound = memory.inbound(node_id);
    let outbound = memory.outbound(node_id);
    let predecessor = (!inbound.is_empty()).then(|| inbound[rng.gen_range(0..inbound.len())]);
    let successors = sample(&mut rng, outbound.len(), outbound.len().min(3))
        .into_iter()
        .map(|i| outbound[i])
        .collect();
    let exclude = memory.default_exclusion(node_id);
    let long_term = retrieve_related(memory, node_id, k, &exclude, embedder)?
        .into_iter()
        .map(|f| f.id)
        .collect();
    Ok(SynthesisContext {
        app_name: memory.app_name.clone(),
        focal: node_id,
        predecessor,
        successors,
        long_term,
    })
}

/// RNG used by [`build_context`] for a given node and seed.
pub fn context_rng(app: &str, node_id: usize, seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(
        seed,
        &[b"context", app.as_bytes(), &(node_id as u64).to_le_bytes()],
    ))
}

fn functionality_lines<'a>(items: impl Iterator<Item = &'a Functionality>) -> String {
    let lines: Vec<String> = items
        .map(|f| format!("- ({}) {}: {}", kind_name(f), f.label, f.description))
        .collect();
    if lines.is_empty() {
        "- (none recorded)".to_string()
    } else {
        lines.join("\n")
    }
}

fn kind_name(f: &Functionality) -> &'static str {
    match f.kind {
        crate::providers::AnnotationKind::Functionality => "functionality",
        crate::providers::AnnotationKind::Data => "data",
    }
}

/// Assembles the synthesis request: recalled screen, short-term screens,
/// long-term functionalities, then the task footer.
pub fn synthesis_request(
    context: &SynthesisContext,
    memory: &EnvironmentMemory,
    renders: &RenderStore,
    seed: u64,
) -> Result<GenerationRequest, StoreError> {
    let node = &memory.nodes[context.focal];
    let mut req = GenerationRequest::new(prompts::SYNTHESIS_SYSTEM)
        .text(format!(
            "## Recalled Screen\n**App**: {}\n**Screen**: {}\n**Functionalities**:\n{}",
            memory.app_name,
            node.node_id,
            functionality_lines(memory.node_functionalities(node.node_id))
        ))
        .image(renders.get(&node.representative)?)
        .with_seed(seed);
    req = req.text("## Short-Term Memory".to_string());
    if let Some(p) = context.predecessor {
        req = req
            .text(format!(
                "### Predecessor screen (leads to the recalled screen)\n**Functionalities**:\n{}",
                functionality_lines(memory.node_functionalities(p))
            ))
            .image(renders.get(&memory.nodes[p].representative)?);
    }
    for (i, &s) in context.successors.iter().enumerate() {
        req = req
            .text(format!(
                "### Successor screen {} (reachable from the recalled screen)\n**Functionalities**:\n{}",
                i + 1,
                functionality_lines(memory.node_functionalities(s))
            ))
            .image(renders.get(&memory.nodes[s].representative)?);
    }
    req = req.text(format!(
        "## Long-Term Memory\nFunctionalities of other screens in this app:\n{}",
        functionality_lines(
            context
                .long_term
                .iter()
                .map(|&id| &memory.functionalities[id])
        )
    ));
    Ok(req.text(prompts::SYNTHESIS_TASK_FOOTER))
}

#[derive(Debug, Deserialize)]
struct GeneratedTask {
    #[serde(default)]
    reasoning: String,
    task: String,
}

/// Parses the generator's `[{reasoning, task}]` list. Keeps at most three
/// non-empty tasks of bounded length; returns `None` if no list parses.
pub fn parse_generated(raw: &str) -> Option<Vec<(String, String)>> {
    let items: Vec<serde_json::Value> = serde_json::from_str(outermost_list(raw)?).ok()?;
    let mut out = Vec::new();
    for item in items {
        let Ok(t) = serde_json::from_value::<GeneratedTask>(item) else {
            continue;
        };
        let task = t.task.trim().to_string();
        if task.is_empty() || task.chars().count() > MAX_INSTRUCTION_CHARS {
            continue;
        }
        out.push((t.reasoning, task));
        if out.len() == MAX_TASKS_PER_CALL {
            break;
        }
    }
    Some(out)
}

pub fn generate_instructions(
    context: &SynthesisContext,
    memory: &EnvironmentMemory,
    renders: &RenderStore,
    generator: &dyn ChatModel,
    seed: u64,
) -> Result<Vec<CandidateInstruction>, SynthesisError> {
    let req = synthesis_request(context, memory, renders, seed)?;
    let raw = generator.chat_generate(&req)?;
    let Some(tasks) = parse_generated(&raw) else {
        log::warn!(
            "{} screen {}: generator output has no task list",
            memory.app_name,
            context.focal
        );
        return Ok(Vec::new());
    };
    Ok(tasks
        .into_iter()
        .map(|(reasoning, text)| CandidateInstruction {
            text,
            reasoning,
            source_screen: context.focal,
            app_name: memory.app_name.clone(),
            context: context.clone(),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub clarity_min: u8,
    pub reason_min: u8,
    pub dedup_threshold: f64,
    pub per_app_cap: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            clarity_min: 4,
            reason_min: 4,
            dedup_threshold: 0.8,
            per_app_cap: 140,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterStats {
    pub candidates: usize,
    pub scorer_failures: usize,
    pub below_threshold: usize,
    pub duplicates: usize,
    pub over_cap: usize,
    pub kept: usize,
}

/// Parses a strict `{complexity, clarity, reasonableness}` record.
pub fn parse_scores(raw: &str) -> Option<QualityScores> {
    let v: serde_json::Value = serde_json::from_str(outermost_object(raw)?).ok()?;
    let field = |k: &str| {
        v.get(k)?
            .as_u64()
            .filter(|x| (1..=5).contains(x))
            .map(|x| x as u8)
    };
    Some(QualityScores {
        complexity: field("complexity")?,
        clarity: field("clarity")?,
        reasonableness: field("reasonableness")?,
    })
}

/// Scores one candidate, retrying once on an unparseable response.
pub fn score_instruction(
    candidate: &CandidateInstruction,
    scorer: &dyn ChatModel,
) -> Option<QualityScores> {
    for attempt in 0..2u64 {
        let req = GenerationRequest::new(prompts::SCORING_SYSTEM)
            .text(prompts::scoring_user(&candidate.app_name, &candidate.text))
            .with_seed(attempt);
        match scorer.chat_generate(&req) {
            Ok(raw) => match parse_scores(&raw) {
                Some(s) => return Some(s),
                None => log::debug!("unparseable scores for {:?}: {raw}", candidate.text),
            },
            Err(e) => {
                log::warn!("scorer failed on {:?}: {e}", candidate.text);
                return None;
            }
        }
    }
    None
}

/// Stage 1 drops candidates below the clarity or reasonableness minimum.
/// Stage 2 orders survivors by (complexity, clarity, reasonableness) descending
/// then text, and keeps each one whose cosine to every kept instruction is
/// below the dedup threshold. Stage 3 truncates each app to `per_app_cap`.
pub fn filter_instructions(
    candidates: &[CandidateInstruction],
    embedder: &dyn Embedder,
    scorer: &dyn ChatModel,
    config: &FilterConfig,
) -> Result<(Vec<TaskInstruction>, FilterStats), SynthesisError> {
    if candidates.is_empty() {
        return Err(SynthesisError::NoCandidates);
    }
    let mut stats = FilterStats {
        candidates: candidates.len(),
        ..Default::default()
    };
    let scores: Vec<Option<QualityScores>> = candidates
        .par_iter()
        .map(|c| score_instruction(c, scorer))
        .collect();
    let mut survivors: Vec<(&CandidateInstruction, QualityScores)> = Vec::new();
    for (c, s) in candidates.iter().zip(scores) {
        match s {
            None => stats.scorer_failures += 1,
            Some(s) if s.clarity < config.clarity_min || s.reasonableness < config.reason_min => {
                stats.below_threshold += 1
            }
            Some(s) => survivors.push((c, s)),
        }
    }
    survivors.sort_by(|(a, sa), (b, sb)| {
        sb.complexity
            .cmp(&sa.complexity)
            .then(sb.clarity.cmp(&sa.clarity))
            .then(sb.reasonableness.cmp(&sa.reasonableness))
            .then(a.text.cmp(&b.text))
    });
    let embeddings = if survivors.is_empty() {
        Vec::new()
    } else {
        embedder.embed_texts(
            &survivors
                .iter()
                .map(|(c, _)| c.text.clone())
                .collect::<Vec<_>>(),
        )?
    };
    let mut kept: Vec<(&CandidateInstruction, QualityScores, Embedding)> = Vec::new();
    for ((c, s), e) in survivors.into_iter().zip(embeddings) {
        if kept
            .iter()
            .all(|(_, _, k)| !reaches(cosine(k, &e), config.dedup_threshold))
        {
            kept.push((c, s, e));
        } else {
            stats.duplicates += 1;
        }
    }
    let mut per_app: BTreeMap<&str, usize> = BTreeMap::new();
    let mut out = Vec::new();
    for (c, scores, embedding) in kept {
        let n = per_app.entry(c.app_name.as_str()).or_insert(0);
        if *n >= config.per_app_cap {
            stats.over_cap += 1;
            continue;
        }
        out.push(TaskInstruction {
            id: format!("{}-{:04}", c.app_name.to_lowercase().replace(' ', "_"), *n),
            app: c.app_name.clone(),
            text: c.text.clone(),
            reasoning: c.reasoning.clone(),
            source_screen: c.source_screen,
            context: c.context.clone(),
            scores,
            embedding,
        });
        *n += 1;
    }
    stats.kept = out.len();
    Ok((out, stats))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthesisConfig {
    pub retrieval_k: usize,
    pub contexts_per_node: usize,
    pub seed: u64,
    pub filter: FilterConfig,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            retrieval_k: 30,
            contexts_per_node: 1,
            seed: 0,
            filter: FilterConfig::default(),
        }
    }
}

/// Builds contexts for every node of every memory, prompts the generator,
/// and filters the pooled candidates.
pub fn synthesize(
    memories: &[EnvironmentMemory],
    renders: &RenderStore,
    providers: &ProviderBundle,
    config: &SynthesisConfig,
) -> Result<(Vec<CandidateInstruction>, Vec<TaskInstruction>, FilterStats), SynthesisError> {
    let jobs: Vec<(&EnvironmentMemory, usize, u64)> = memories
        .iter()
        .flat_map(|m| {
            (0..m.nodes.len()).flat_map(move |node| {
                (0..config.contexts_per_node as u64)
                    .map(move |round| (m, node, derive_seed(config.seed, &[&round.to_le_bytes()])))
            })
        })
        .collect();
    let batches: Vec<Result<Vec<CandidateInstruction>, SynthesisError>> = jobs
        .par_iter()
        .map(|&(memory, node, seed)| {
            let context = build_context(
                memory,
                node,
                seed,
                config.retrieval_k,
                providers.embedder.as_ref(),
            )?;
            generate_instructions(
                &context,
                memory,
                renders,
                providers.generator.as_ref(),
                seed,
            )
        })
        .collect();
    let mut candidates = Vec::new();
    for b in batches {
        candidates.extend(b?);
    }
    let (kept, stats) = filter_instructions(
        &candidates,
        providers.embedder.as_ref(),
        providers.generator.as_ref(),
        &config.filter,
    )?;
    Ok((candidates, kept, stats))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct InstructionLine {
    id: String,
    app: String,
    text: String,
    reasoning: String,
    source_screen: usize,
    context: SynthesisContext,
    scores: QualityScores,
    embedding_ref: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EmbeddingLine {
    id: String,
    embedding: Embedding,
}

/// Writes `instructions/{app}.jsonl` with embeddings in
/// `instructions/embeddings/{app}.jsonl`, plus `instructions/apps.json`.
pub fn save_instructions(root: &Path, instructions: &[TaskInstruction]) -> Result<(), StoreError> {
    let mut by_app: Vec<(&str, Vec<&TaskInstruction>)> = Vec::new();
    for inst in instructions {
        match by_app.iter_mut().find(|(a, _)| *a == inst.app) {
            Some((_, v)) => v.push(inst),
            None => by_app.push((&inst.app, vec![inst])),
        }
    }
    by_app.sort_by(|a, b| a.0.cmp(b.0));
    for (app, list) in &by_app {
        let lines: Vec<InstructionLine> = list
            .iter()
            .enumerate()
            .map(|(row, i)| InstructionLine {
                id: i.id.clone(),
                app: i.app.clone(),
                text: i.text.clone(),
                reasoning: i.reasoning.clone(),
                source_screen: i.source_screen,
                context: i.context.clone(),
                scores: i.scores,
                embedding_ref: format!("embeddings/{app}.jsonl#{row}"),
            })
            .collect();
        write_jsonl(
            &root.join("instructions").join(format!("{app}.jsonl")),
            &lines,
        )?;
        let embeddings: Vec<EmbeddingLine> = list
            .iter()
            .map(|i| EmbeddingLine {
                id: i.id.clone(),
                embedding: i.embedding.clone(),
            })
            .collect();
        write_jsonl(
            &root
                .join("instructions/embeddings")
                .join(format!("{app}.jsonl")),
            &embeddings,
        )?;
    }
    let apps: Vec<&str> = by_app.iter().map(|(a, _)| *a).collect();
    crate::store::write_json(&root.join("instructions/apps.json"), &apps)
}

/// Loads all instructions in app order.
pub fn load_instructions(root: &Path) -> Result<Vec<TaskInstruction>, StoreError> {
    let apps: Vec<String> = read_json(&root.join("instructions/apps.json"))?;
    let mut out = Vec::new();
    for app in apps {
        let lines: Vec<InstructionLine> =
            read_jsonl(&root.join("instructions").join(format!("{app}.jsonl")))?;
        let embeddings: Vec<EmbeddingLine> = read_jsonl(
            &root
                .join("instructions/embeddings")
                .join(format!("{app}.jsonl")),
        )?;
        for (l, e) in lines.into_iter().zip(embeddings) {
            out.push(TaskInstruction {
                id: l.id,
                app: l.app,
                text: l.text,
                reasoning: l.reasoning,
                source_screen: l.source_screen,
                context: l.context,
                scores: l.scores,
                embedding: e.embedding,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explorer::{run_campaign, save_trajectories};
    use crate::memory::{build_memory, MemoryConfig};
    use crate::sim::spec::{generate_app, AppGenParams};
    use std::sync::Arc;

    fn setup(dir: &Path) -> (EnvironmentMemory, RenderStore, ProviderBundle) {
        let spec = Arc::new(
            generate_app(
                "Settings",
                AppGenParams {
                    n_screens: 10,
                    elements_per_screen: 3,
                    n_fields: 8,
                },
                3,
            )
            .unwrap(),
        );
        let renders = RenderStore::new(dir.join("renders"));
        let ts = run_campaign(std::slice::from_ref(&spec), 30, 10, 0).unwrap();
        save_trajectories(dir, &renders, &ts).unwrap();
        let bundle = ProviderBundle::mock(5, vec![spec]);
        let mem = build_memory(&ts, &bundle, &MemoryConfig::default())
            .unwrap()
            .remove(0);
        (mem, renders, bundle)
    }

    #[test]
    fn contexts_respect_neighborhood_rules() {
        let dir = tempfile::tempdir().unwrap();
        let (mem, _, b) = setup(dir.path());
        for node in 0..mem.nodes.len() {
            let ctx = build_context(&mem, node, 3, 30, b.embedder.as_ref()).unwrap();
            for s in ctx.short_term() {
                assert!(mem.nodes[node].neighbors.contains(&s));
            }
            assert!(ctx.successors.len() <= 3 && ctx.long_term.len() <= 30);
            let ex = mem.default_exclusion(node);
            assert!(ctx
                .long_term
                .iter()
                .all(|&f| !ex.contains(&mem.functionalities[f].node_id)));
            assert_eq!(
                ctx,
                build_context(&mem, node, 3, 30, b.embedder.as_ref()).unwrap()
            );
        }
    }

    #[test]
    fn generation_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (mem, renders, b) = setup(dir.path());
        let ctx = build_context(&mem, 0, 1, 30, b.embedder.as_ref()).unwrap();
        let cands = generate_instructions(&ctx, &mem, &renders, b.generator.as_ref(), 1).unwrap();
        assert!((1..=3).contains(&cands.len()));
        assert_eq!(
            cands,
            generate_instructions(&ctx, &mem, &renders, b.generator.as_ref(), 1).unwrap()
        );
    }

    struct Garbage;
    impl ChatModel for Garbage {
        fn chat_generate(&self, _: &GenerationRequest) -> Result<String, ProviderError> {
            Ok("Sorry, no tasks today.".into())
        }
    }

    #[test]
    fn malformed_generator_output_yields_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let (mem, renders, b) = setup(dir.path());
        let ctx = build_context(&mem, 0, 1, 30, b.embedder.as_ref()).unwrap();
        assert!(generate_instructions(&ctx, &mem, &renders, &Garbage, 1)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn parse_generated_truncates_and_validates() {
        let raw = r#"ok [{"reasoning":"a","task":"t1"},{"task":"t2"},{"task":""},{"task":"t3"},{"task":"t4"}]"#;
        let got = parse_generated(raw).unwrap();
        assert_eq!(
            got.iter().map(|(_, t)| t.as_str()).collect::<Vec<_>>(),
            ["t1", "t2", "t3"]
        );
        assert!(parse_generated("none").is_none());
    }

    #[test]
    fn score_parsing_is_strict() {
        assert!(parse_scores(r#"{"complexity":3,"clarity":4,"reasonableness":5}"#).is_some());
        assert!(parse_scores(r#"{"complexity":3,"clarity":"4","reasonableness":5}"#).is_none());
        assert!(parse_scores(r#"{"complexity":0,"clarity":4,"reasonableness":5}"#).is_none());
    }

    struct FixedScorer(&'static str);
    impl ChatModel for FixedScorer {
        fn chat_generate(&self, _: &GenerationRequest) -> Result<String, ProviderError> {
            Ok(self.0.into())
        }
    }

    fn cand(app: &str, text: &str) -> CandidateInstruction {
        CandidateInstruction {
            text: text.into(),
            reasoning: String::new(),
            source_screen: 0,
            app_name: app.into(),
            context: SynthesisContext {
                app_name: app.into(),
                focal: 0,
                predecessor: None,
                successors: vec![],
                long_term: vec![],
            },
        }
    }

    #[test]
    fn threshold_and_duplicate_rules() {
        let emb = crate::providers::MockEmbedder::default();
        let low = FixedScorer(r#"{"complexity":5,"clarity":3,"reasonableness":5}"#);
        let (kept, stats) =
            filter_instructions(&[cand("A", "x")], &emb, &low, &FilterConfig::default()).unwrap();
        assert!(kept.is_empty());
        assert_eq!(stats.below_threshold, 1);

        let good = FixedScorer(r#"{"complexity":5,"clarity":5,"reasonableness":5}"#);
        let (kept, _) = filter_instructions(
            &[cand("A", "same text"), cand("A", "same text")],
            &emb,
            &good,
            &FilterConfig::default(),
        )
        .unwrap();
        assert_eq!(kept.len(), 1);

        let bad = FixedScorer("five");
        let (kept, stats) =
            filter_instructions(&[cand("A", "x")], &emb, &bad, &FilterConfig::default()).unwrap();
        assert!(kept.is_empty());
        assert_eq!(stats.scorer_failures, 1);
        assert!(filter_instructions(&[], &emb, &bad, &FilterConfig::default()).is_err());
    }

    #[test]
    fn instructions_persist_losslessly() {
        let dir = tempfile::tempdir().unwrap();
        let (mem, renders, b) = setup(dir.path());
        let (_, kept, _) = synthesize(
            &[mem],
            &renders,
            &b,
            &SynthesisConfig {
                contexts_per_node: 2,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(!kept.is_empty());
        save_instructions(dir.path(), &kept).unwrap();
        assert_eq!(load_instructions(dir.path()).unwrap(), kept);
    }
}
