use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use agent_forge::analyzer::{
    coverage, coverage_curve, fraction_above, overlap_report, removal_subsets, AtomicFunctionality,
    CorpusItem, Decomposition,
};
use agent_forge::explorer::{run_campaign, screen_fingerprint};
use agent_forge::memory::{build_memory, distinct_observations, retrieve_related, MemoryConfig};
use agent_forge::providers::{
    cosine, sample_instructions, Embedder, Embedding, MockChat, MockEmbedder, ProviderBundle,
    ProviderError,
};
use agent_forge::sim::{
    apply, generate_app, resolve_goal, shortest_plan, ActionCommand, AppGenParams, EnvState,
    Observation, SimAppSpec,
};
use agent_forge::synthesizer::{
    filter_instructions, CandidateInstruction, FilterConfig, SynthesisContext,
};

fn small_app(name: &str, screens: usize, seed: u64) -> SimAppSpec {
    generate_app(
        name,
        AppGenParams {
            n_screens: screens,
            elements_per_screen: 3,
            n_fields: screens / 2 + 2,
        },
        seed,
    )
    .unwrap()
}

/// Embeds the i-th distinct text as the i-th basis vector.
struct OneHot {
    dim: usize,
    vocabulary: std::sync::Mutex<BTreeMap<String, usize>>,
}

impl Embedder for OneHot {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed_texts(&self, texts: &[String]) -> Result<Vec<Embedding>, ProviderError> {
        let mut vocab = self.vocabulary.lock().unwrap();
        Ok(texts
            .iter()
            .map(|t| {
                let next = vocab.len();
                let i = *vocab.entry(t.clone()).or_insert(next);
                let mut v = vec![0.0; self.dim];
                v[i] = 1.0;
                Embedding(v)
            })
            .collect())
    }
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Embedding {
    Embedding::normalized((0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sim_is_deterministic_and_a11y_matches_legal_clicks(app_seed in 0u64..500, picks in proptest::collection::vec(0usize..16, 1..25)) {
        let spec = small_app("Prop", 10, app_seed);
        let walk = || {
            let mut state = EnvState::initial(&spec);
            let mut observations = vec![Observation::build(&spec, &state)];
            for &p in &picks {
                let obs = observations.last().unwrap().clone();
                let action = match obs.a11y.get(p) {
                    Some(node) if node.kind == "input" => ActionCommand::Type { element_id: node.element_id, text: "memo".into() },
                    Some(node) => ActionCommand::Click { element_id: node.element_id },
                    None => ActionCommand::Back,
                };
                if action.is_terminal() || state.terminated.is_some() {
                    break;
                }
                if let Ok(next) = apply(&spec, &state, &action) {
                    state = next;
                }
                observations.push(Observation::build(&spec, &state));
            }
            (state, observations)
        };
        let (state_a, obs_a) = walk();
        let (state_b, obs_b) = walk();
        prop_assert_eq!(&state_a, &state_b);
        prop_assert_eq!(&obs_a, &obs_b);
        for (a, b) in obs_a.iter().zip(&obs_b) {
            prop_assert_eq!(&a.render.pixels, &b.render.pixels);
        }
        if state_a.terminated.is_none() {
            let obs = Observation::build(&spec, &state_a);
            for node in &obs.a11y {
                let action = if node.kind == "input" {
                    ActionCommand::Type { element_id: node.element_id, text: "x".into() }
                } else {
                    ActionCommand::Click { element_id: node.element_id }
                };
                prop_assert_eq!(apply(&spec, &state_a, &action).is_ok(), node.interactable, "{:?}", node);
            }
        }
    }

    #[test]
    fn plans_replay_to_their_goal(app_seed in 0u64..500, task_seed in any::<u64>()) {
        let spec = small_app("Planner", 9, app_seed);
        for instruction in sample_instructions(&spec, 3, task_seed) {
            let goal = resolve_goal(&spec, &instruction).expect("sampled instructions resolve");
            let mut state = EnvState::initial(&spec);
            for action in shortest_plan(&spec, &state, &goal).unwrap() {
                state = apply(&spec, &state, &action).unwrap();
            }
            prop_assert!(goal.state_satisfied(&state), "{}", instruction);
        }
    }

    #[test]
    fn campaigns_are_chained_bounded_and_respect_the_blacklist(seed in any::<u64>(), sessions in 1usize..5, steps in 0usize..12) {
        let specs = vec![Arc::new(small_app("Alpha", 8, seed % 97)), Arc::new(small_app("Beta", 6, seed % 89))];
        let trajectories = run_campaign(&specs, sessions, steps, seed).unwrap();
        prop_assert_eq!(trajectories.len(), specs.len() * sessions);
        let total: usize = trajectories.iter().map(|t| t.transitions.len()).sum();
        prop_assert!(total <= specs.len() * sessions * steps);
        let mut blacklist: BTreeSet<(String, String, u32)> = BTreeSet::new();
        for t in &trajectories {
            prop_assert!(t.is_chained());
            if let Some(first) = t.transitions.first() {
                prop_assert_eq!(first.before.screen_id, 0);
            }
            for tr in &t.transitions {
                let fp = screen_fingerprint(&tr.before);
                let element = tr.action.target().unwrap();
                prop_assert!(!blacklist.contains(&(t.app_name.clone(), fp.clone(), element)));
                if tr.before.render_key == tr.after.render_key && tr.before.a11y_digest() == tr.after.a11y_digest() {
                    blacklist.insert((t.app_name.clone(), fp, element));
                }
            }
        }
    }

    #[test]
    fn memory_structure_invariants(seed in any::<u64>(), sessions in 1usize..8) {
        let specs = vec![Arc::new(small_app("Gamma", 12, seed % 101))];
        let trajectories = run_campaign(&specs, sessions, 10, seed).unwrap();
        prop_assume!(trajectories.iter().any(|t| !t.transitions.is_empty()));
        let providers = ProviderBundle::mock(seed, specs.to_vec());
        let config = MemoryConfig::default();
        let memory = build_memory(&trajectories, &providers, &config).unwrap().remove(0);

        let distinct = distinct_observations(&trajectories);
        prop_assert_eq!(memory.nodes.iter().map(|n| n.members.len()).sum::<usize>(), distinct.len());
        let mut owner: BTreeMap<&str, usize> = BTreeMap::new();
        for n in &memory.nodes {
            for m in &n.members {
                prop_assert!(owner.insert(m.as_str(), n.node_id).is_none(), "render in two nodes");
            }
        }
        for t in &trajectories {
            for tr in &t.transitions {
                prop_assert!(owner.contains_key(tr.before.render_key.as_str()));
                prop_assert!(owner.contains_key(tr.after.render_key.as_str()));
            }
        }
        for n in &memory.nodes {
            prop_assert!(!n.neighbors.contains(&n.node_id));
            for &m in &n.neighbors {
                prop_assert!(memory.nodes[m].neighbors.contains(&n.node_id));
            }
        }
        for (i, a) in memory.index.entries.iter().enumerate() {
            for b in &memory.index.entries[i + 1..] {
                prop_assert!(cosine(&a.embedding, &b.embedding) < config.diversity_threshold);
            }
        }
        let embedder = MockEmbedder::new(256);
        for node in 0..memory.nodes.len() {
            let exclude = memory.default_exclusion(node);
            for f in retrieve_related(&memory, node, 30, &exclude, &embedder).unwrap() {
                prop_assert!(!exclude.contains(&f.node_id));
            }
        }
    }

    #[test]
    fn filter_output_invariants(picks in proptest::collection::vec(0usize..90, 1..40), cap in 1usize..10, scorer_seed in any::<u64>()) {
        let specs: Vec<SimAppSpec> = agent_forge::sim::spec::default_suite(7);
        let pool: Vec<(String, String)> = specs
            .iter()
            .flat_map(|s| sample_instructions(s, 30, 3).into_iter().map(move |t| (s.app_name.clone(), t)))
            .collect();
        let candidates: Vec<CandidateInstruction> = picks
            .iter()
            .map(|&i| {
                let (app, text) = pool[i % pool.len()].clone();
                CandidateInstruction {
                    text,
                    reasoning: String::new(),
                    source_screen: 0,
                    context: SynthesisContext { app_name: app.clone(), focal: 0, predecessor: None, successors: vec![], long_term: vec![] },
                    app_name: app,
                }
            })
            .collect();
        let embedder = MockEmbedder::new(256);
        let config = FilterConfig { per_app_cap: cap, ..FilterConfig::default() };
        let (kept, stats) = filter_instructions(&candidates, &embedder, &MockChat::new(scorer_seed), &config).unwrap();
        prop_assert_eq!(stats.kept, kept.len());
        prop_assert_eq!(stats.candidates, stats.scorer_failures + stats.below_threshold + stats.duplicates + stats.over_cap + stats.kept);
        let mut per_app: BTreeMap<&str, usize> = BTreeMap::new();
        for (i, a) in kept.iter().enumerate() {
            prop_assert!(a.scores.clarity >= 4 && a.scores.reasonableness >= 4);
            *per_app.entry(a.app.as_str()).or_default() += 1;
            for b in kept[i + 1..].iter().filter(|b| b.app == a.app) {
                prop_assert!(cosine(&embedder.embed_str(&a.text), &embedder.embed_str(&b.text)) < 0.8);
            }
        }
        prop_assert!(per_app.values().all(|&n| n <= cap));
    }

    #[test]
    fn fraction_above_is_non_increasing(values in proptest::collection::vec(0.0f64..1.0, 0..50), mut thresholds in proptest::collection::vec(0.0f64..1.0, 2..6)) {
        thresholds.sort_by(f64::total_cmp);
        let fractions: Vec<f64> = thresholds.iter().map(|&t| fraction_above(&values, t)).collect();
        prop_assert!(fractions.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn removal_subsets_have_matching_sizes(n in 1usize..120, ratios in proptest::collection::vec(0.01f64..0.99, 1..4), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let words = ["alarm", "note", "event", "wifi", "sound", "title", "reminder", "share"];
        let item = |prefix: &str, i: usize, rng: &mut ChaCha8Rng| CorpusItem {
            id: format!("{prefix}{i:03}"),
            text: (0..4).map(|_| words[rng.gen_range(0..words.len())]).collect::<Vec<_>>().join(" "),
        };
        let synthetic: Vec<CorpusItem> = (0..n).map(|i| item("s", i, &mut rng)).collect();
        let test: Vec<CorpusItem> = (0..5).map(|i| item("t", i, &mut rng)).collect();
        let report = overlap_report(&synthetic, &test, &MockEmbedder::new(256), &[0.7]).unwrap();
        for subset in removal_subsets(&synthetic, &report, &ratios, seed).unwrap() {
            prop_assert_eq!(subset.most_similar_removed.len(), subset.random_removed.len());
            prop_assert_eq!(subset.most_similar_removed.len(), n - subset.removed);
        }
    }

    #[test]
    fn disjoint_one_hot_corpora_never_overlap(n in 1usize..20, m in 1usize..20, t in 0.001f64..1.0) {
        let embedder = OneHot { dim: n + m, vocabulary: Default::default() };
        let items = |prefix: &str, k: usize| -> Vec<CorpusItem> {
            (0..k).map(|i| CorpusItem { id: format!("{prefix}{i}"), text: format!("{prefix} text {i}") }).collect()
        };
        let report = overlap_report(&items("s", n), &items("t", m), &embedder, &[t]).unwrap();
        prop_assert_eq!(report.fraction_above(t), Some(0.0));
    }

    #[test]
    fn coverage_grows_with_the_pool(seed in any::<u64>(), cuts in proptest::collection::btree_set(1usize..40, 1..6)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let atoms: Vec<Embedding> = (0..30).map(|_| random_unit(&mut rng, 16)).collect();
        let atom = |i: usize| AtomicFunctionality { text: format!("atom {i}"), embedding: atoms[i].clone() };
        let synthetic: Vec<Decomposition> = (0..40)
            .map(|i| Decomposition {
                task: format!("task {i}"),
                functionalities: (0..rng.gen_range(0..4)).map(|_| atom(rng.gen_range(0..30))).collect(),
                flagged: false,
            })
            .collect();
        let required: Vec<(String, Vec<AtomicFunctionality>)> = (0..10)
            .map(|i| (format!("req{i}"), (0..rng.gen_range(0..5)).map(|_| atom(rng.gen_range(0..30))).collect()))
            .collect();
        let sizes: Vec<usize> = cuts.into_iter().collect();
        let curve = coverage_curve(&synthetic, &sizes, &required, 0.8).unwrap();
        prop_assert!(curve.windows(2).all(|w| w[0].coverage <= w[1].coverage));
        let full: Vec<AtomicFunctionality> = synthetic.iter().flat_map(|d| d.functionalities.clone()).collect();
        let whole = coverage(&required, &full, 0.8).aggregate;
        prop_assert!(curve.iter().all(|p| p.coverage <= whole + 1e-12));
    }
}

struct Scripted(&'static str);

impl agent_forge::providers::ChatModel for Scripted {
    fn chat_generate(
        &self,
        _: &agent_forge::providers::GenerationRequest,
    ) -> Result<String, ProviderError> {
        Ok(self.0.to_string())
    }
}

#[test]
fn calendar_task_decomposes_into_four_functionalities() {
    let reply = "Sure:\n```json\n[\"create calendar event\", \"set date\", \"set title\", \"set start time\"]\n```";
    let d = agent_forge::analyzer::decompose_task(
        "Create a calendar event titled Meeting with Team for tomorrow at 10am",
        &Scripted(reply),
        &MockEmbedder::new(256),
    )
    .unwrap();
    assert!(!d.flagged);
    let texts: Vec<&str> = d.functionalities.iter().map(|f| f.text.as_str()).collect();
    assert_eq!(
        texts,
        [
            "create calendar event",
            "set date",
            "set title",
            "set start time"
        ]
    );
    assert!(d
        .functionalities
        .iter()
        .all(|f| (f.embedding.0.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-9));
}

#[test]
fn unparseable_decomposition_is_flagged() {
    let d = agent_forge::analyzer::decompose_task(
        "Turn on Wi-Fi",
        &Scripted("no list here"),
        &MockEmbedder::new(64),
    )
    .unwrap();
    assert!(d.flagged && d.functionalities.is_empty());
}

#[test]
fn identical_corpora_are_fully_covered() {
    let embedder = MockEmbedder::new(256);
    let phrases = ["set alarm time", "enable wifi", "search notes"];
    let atoms: Vec<AtomicFunctionality> = phrases
        .iter()
        .map(|p| AtomicFunctionality {
            text: p.to_string(),
            embedding: embedder.embed_str(p),
        })
        .collect();
    let required = vec![("task".to_string(), atoms.clone())];
    assert_eq!(coverage(&required, &atoms, 0.8).aggregate, 1.0);
}
