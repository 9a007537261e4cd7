//! Stage orchestration over an output root.
//!
//! Each stage writes its artifacts and then `manifests/{stage}.json`. A stage
//! whose manifest digest matches the current configuration is skipped; a
//! mismatching manifest is only replaced with `force`. Wall-clock timings go
//! to `logs/{stage}.timing.json` so that the artifact tree stays reproducible.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analyzer::{self, AnalyzerError, CorpusItem};
use crate::config::{Agent, ConfigError, PipelineConfig};
use crate::explorer::{self, ExploreError};
use crate::hashing::{derive_seed, sha256_hex};
use crate::memory::{self, MemoryError};
use crate::providers::{ProviderBundle, ProviderError};
use crate::rollout::{
    self, count_interventions, ChatJudge, ChatMonitor, ChatPolicy, InterventionConfig, Judge,
    Learner, Monitor, NoisyLearner, OracleExpert, OracleJudge, OracleMonitor, Outcome, Policy,
    RolloutSeeds, RolloutTask, SimOracle, Strategy, TabularLearner, Trajectory,
};
use crate::sim::{Environment, SimAppSpec, SimEnv, SimError};
use crate::store::{read_json, write_json, RenderStore, StoreError};
use crate::synthesizer::{self, SynthesisError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{stage} needs the output of `agent-forge {command}`; run that command first")]
    MissingPrerequisite { stage: String, command: String },
    #[error("{stage} artifacts in {root} were produced by a different configuration; rerun with --force to overwrite them")]
    Conflict { stage: String, root: PathBuf },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Explore(#[from] ExploreError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error(transparent)]
    Analyzer(#[from] AnalyzerError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: String,
    pub config_digest: String,
    pub counts: BTreeMap<String, u64>,
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
    pub seeds: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StageOutcome {
    Ran(RunManifest),
    UpToDate(RunManifest),
}

impl StageOutcome {
    pub fn manifest(&self) -> &RunManifest {
        match self {
            StageOutcome::Ran(m) | StageOutcome::UpToDate(m) => m,
        }
    }
}

/// Per-strategy rollout summary written next to the trajectory directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RolloutSummary {
    pub strategy: Option<Strategy>,
    pub retained: Vec<String>,
    pub aborted: Vec<String>,
    pub successes_per_round: Vec<usize>,
}

pub struct Pipeline {
    pub config: PipelineConfig,
    pub root: PathBuf,
    pub force: bool,
}

fn stage_seed(seed: u64, label: &str) -> u64 {
    derive_seed(seed, &[label.as_bytes()])
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Self {
        let root = config.output_root.clone();
        Self {
            config,
            root,
            force: false,
        }
    }

    pub fn with_force(mut self, force: bool) -> Self {
        self.force = force;
        self
    }

    pub fn with_root(mut self, root: impl Into<PathBuf>) -> Self {
        self.root = root.into();
        self
    }

    pub fn renders(&self) -> RenderStore {
        RenderStore::new(self.root.join("renders"))
    }

    fn manifest_path(&self, stage: &str) -> PathBuf {
        self.root.join("manifests").join(format!("{stage}.json"))
    }

    pub fn manifest(&self, stage: &str) -> Option<RunManifest> {
        read_json(&self.manifest_path(stage)).ok()
    }

    fn require(
        &self,
        stage: &str,
        upstream: &str,
        command: &str,
    ) -> Result<RunManifest, PipelineError> {
        self.manifest(upstream)
            .ok_or_else(|| PipelineError::MissingPrerequisite {
                stage: stage.into(),
                command: command.into(),
            })
    }

    fn digest(&self, stage: &str, parts: serde_json::Value, upstream: &[&RunManifest]) -> String {
        let c = &self.config;
        let body = serde_json::json!({
            "stage": stage,
            "version": c.version,
            "seed": c.seed,
            "parts": parts,
            "upstream": upstream.iter().map(|m| m.config_digest.as_str()).collect::<Vec<_>>(),
        });
        sha256_hex(
            &serde_json::to_vec(&body).expect("digest body serializes"),
            64,
        )
    }

    /// Skips, refuses, or clears `dirs` before running `stage`.
    fn begin(
        &self,
        stage: &str,
        digest: &str,
        dirs: &[PathBuf],
    ) -> Result<Option<RunManifest>, PipelineError> {
        if let Some(existing) = self.manifest(stage) {
            if existing.config_digest == digest && !self.force {
                log::info!("{stage} is up to date");
                return Ok(Some(existing));
            }
            if !self.force {
                return Err(PipelineError::Conflict {
                    stage: stage.into(),
                    root: self.root.clone(),
                });
            }
        }
        for d in dirs {
            if d.is_dir() {
                std::fs::remove_dir_all(d).map_err(|e| StoreError::io(d, e))?;
            } else if d.is_file() {
                std::fs::remove_file(d).map_err(|e| StoreError::io(d, e))?;
            }
        }
        Ok(None)
    }

    fn finish(
        &self,
        manifest: RunManifest,
        started: Instant,
    ) -> Result<StageOutcome, PipelineError> {
        #[derive(Serialize)]
        struct Timing<'a> {
            stage: &'a str,
            seconds: f64,
        }
        write_json(
            &self
                .root
                .join("logs")
                .join(format!("{}.timing.json", manifest.stage)),
            &Timing {
                stage: &manifest.stage,
                seconds: started.elapsed().as_secs_f64(),
            },
        )?;
        write_json(&self.manifest_path(&manifest.stage), &manifest)?;
        Ok(StageOutcome::Ran(manifest))
    }

    /// App specs saved by the explore stage, in suite order.
    pub fn load_specs(&self) -> Result<Vec<Arc<SimAppSpec>>, PipelineError> {
        let names: Vec<String> = read_json(&self.root.join("env/apps.json"))?;
        names
            .iter()
            .map(|n| {
                Ok(Arc::new(SimAppSpec::load(
                    &self.root.join("env").join(format!("{n}.json")),
                )?))
            })
            .collect()
    }

    fn providers(&self, specs: &[Arc<SimAppSpec>]) -> Result<ProviderBundle, PipelineError> {
        Ok(self.config.providers(specs)?)
    }

    pub fn explore(&self) -> Result<StageOutcome, PipelineError> {
        let c = &self.config;
        let digest = self.digest(
            "explore",
            serde_json::json!({"environment": c.environment, "explore": c.explore}),
            &[],
        );
        if let Some(m) = self.begin(
            "explore",
            &digest,
            &[self.root.join("env"), self.root.join("exploration")],
        )? {
            return Ok(StageOutcome::UpToDate(m));
        }
        let started = Instant::now();
        let specs: Vec<Arc<SimAppSpec>> = c
            .environment
            .build_specs()?
            .into_iter()
            .map(Arc::new)
            .collect();
        for s in &specs {
            s.save(&self.root.join("env").join(format!("{}.json", s.app_name)))?;
        }
        write_json(
            &self.root.join("env/apps.json"),
            &specs
                .iter()
                .map(|s| s.app_name.as_str())
                .collect::<Vec<_>>(),
        )?;
        let trajectories =
            explorer::run_campaign(&specs, c.explore.sessions_per_app, c.explore.steps, c.seed)?;
        explorer::save_trajectories(&self.root, &self.renders(), &trajectories)?;
        let screens: BTreeSet<(&str, u32)> = trajectories
            .iter()
            .flat_map(|t| {
                t.transitions.iter().flat_map(move |tr| {
                    [
                        (t.app_name.as_str(), tr.before.screen_id),
                        (t.app_name.as_str(), tr.after.screen_id),
                    ]
                })
            })
            .collect();
        let counts = BTreeMap::from([
            ("apps".into(), specs.len() as u64),
            ("trajectories".into(), trajectories.len() as u64),
            (
                "transitions".into(),
                trajectories
                    .iter()
                    .map(|t| t.transitions.len() as u64)
                    .sum(),
            ),
            ("screens_visited".into(), screens.len() as u64),
        ]);
        let seeds = BTreeMap::from([("base".into(), c.seed)]);
        self.finish(
            RunManifest {
                stage: "explore".into(),
                config_digest: digest,
                counts,
                metrics: BTreeMap::new(),
                seeds,
            },
            started,
        )
    }

    pub fn build_memory(&self) -> Result<StageOutcome, PipelineError> {
        let up = self.require("build-memory", "explore", "explore")?;
        let c = &self.config;
        let digest = self.digest(
            "build-memory",
            serde_json::json!({"providers": c.providers, "memory": c.memory}),
            &[&up],
        );
        if let Some(m) = self.begin("build-memory", &digest, &[self.root.join("memory")])? {
            return Ok(StageOutcome::UpToDate(m));
        }
        let started = Instant::now();
        let specs = self.load_specs()?;
        let providers = self.providers(&specs)?;
        let trajectories = explorer::load_trajectories(&self.root, &self.renders())?;
        let memories = memory::build_memory(&trajectories, &providers, &c.memory)?;
        memory::save_memories(&self.root, &memories)?;
        let sum = |f: &dyn Fn(&memory::EnvironmentMemory) -> usize| {
            memories.iter().map(f).sum::<usize>() as u64
        };
        let counts = BTreeMap::from([
            ("apps".into(), memories.len() as u64),
            ("nodes".into(), sum(&|m| m.nodes.len())),
            ("edges".into(), sum(&|m| m.edges.len())),
            ("functionalities".into(), sum(&|m| m.functionalities.len())),
            ("indexed".into(), sum(&|m| m.index.len())),
            (
                "annotation_failures".into(),
                sum(&|m| m.nodes.iter().filter(|n| n.annotation_failed).count()),
            ),
        ]);
        let seeds = BTreeMap::from([("mock".into(), c.mock_seed())]);
        self.finish(
            RunManifest {
                stage: "build-memory".into(),
                config_digest: digest,
                counts,
                metrics: BTreeMap::new(),
                seeds,
            },
            started,
        )
    }

    pub fn synthesize(&self) -> Result<StageOutcome, PipelineError> {
        let up = self.require("synthesize", "build-memory", "build-memory")?;
        let c = &self.config;
        let digest = self.digest(
            "synthesize",
            serde_json::json!({"providers": c.providers, "synthesize": c.synthesize}),
            &[&up],
        );
        if let Some(m) = self.begin("synthesize", &digest, &[self.root.join("instructions")])? {
            return Ok(StageOutcome::UpToDate(m));
        }
        let started = Instant::now();
        let specs = self.load_specs()?;
        let providers = self.providers(&specs)?;
        let memories = memory::load_memories(&self.root)?;
        let seed = stage_seed(c.seed, "synthesize");
        let (candidates, kept, stats) = synthesizer::synthesize(
            &memories,
            &self.renders(),
            &providers,
            &c.synthesize.to_synthesis(seed),
        )?;
        synthesizer::save_instructions(&self.root, &kept)?;
        crate::store::write_jsonl(
            &self.root.join("instructions/candidates.jsonl"),
            &candidates,
        )?;
        write_json(&self.root.join("instructions/filter_stats.json"), &stats)?;
        let counts = BTreeMap::from([
            ("candidates".into(), stats.candidates as u64),
            ("scorer_failures".into(), stats.scorer_failures as u64),
            ("below_threshold".into(), stats.below_threshold as u64),
            ("duplicates".into(), stats.duplicates as u64),
            ("over_cap".into(), stats.over_cap as u64),
            ("instructions".into(), kept.len() as u64),
        ]);
        let seeds = BTreeMap::from([("synthesis".into(), seed), ("mock".into(), c.mock_seed())]);
        self.finish(
            RunManifest {
                stage: "synthesize".into(),
                config_digest: digest,
                counts,
                metrics: BTreeMap::new(),
                seeds,
            },
            started,
        )
    }

    fn rollout_policies(
        &self,
        oracle: &SimOracle,
        providers: &ProviderBundle,
        policy_seed: u64,
    ) -> (
        Box<dyn Policy>,
        Box<dyn Learner>,
        Box<dyn Monitor>,
        Box<dyn Judge>,
    ) {
        let r = &self.config.rollout;
        let expert: Box<dyn Policy> = match r.expert {
            Agent::Oracle => Box::new(OracleExpert::new(oracle.clone())),
            Agent::Model => Box::new(ChatPolicy::new(providers.generator.clone())),
        };
        let learner: Box<dyn Learner> = match r.learner {
            Agent::Oracle => Box::new(TabularLearner::new(NoisyLearner::new(
                oracle.clone(),
                r.learner_epsilon,
                policy_seed,
            ))),
            Agent::Model => Box::new(ChatPolicy::new(providers.generator.clone())),
        };
        let monitor: Box<dyn Monitor> = match r.monitor {
            Agent::Oracle => Box::new(OracleMonitor::new(oracle.clone())),
            Agent::Model => Box::new(ChatMonitor::new(providers.monitor.clone())),
        };
        let judge: Box<dyn Judge> = match r.judge {
            Agent::Oracle => Box::new(OracleJudge::new(oracle.clone())),
            Agent::Model => Box::new(ChatJudge::new(providers.judge.clone())),
        };
        (expert, learner, monitor, judge)
    }

    pub fn rollout(&self, strategy: Strategy) -> Result<StageOutcome, PipelineError> {
        let stage = format!("rollout-{strategy}");
        let up = self.require(&stage, "synthesize", "synthesize")?;
        let c = &self.config;
        let mut rollout_cfg = c.rollout.clone();
        rollout_cfg.strategy = strategy;
        let digest = self.digest(
            &stage,
            serde_json::json!({"providers": c.providers, "rollout": rollout_cfg}),
            &[&up],
        );
        let dir = self.root.join("trajectories").join(strategy.name());
        let summary_path = self
            .root
            .join("trajectories")
            .join(format!("{}.summary.json", strategy.name()));
        if let Some(m) = self.begin(&stage, &digest, &[dir, summary_path.clone()])? {
            return Ok(StageOutcome::UpToDate(m));
        }
        let started = Instant::now();
        let specs = self.load_specs()?;
        let providers = self.providers(&specs)?;
        let oracle = SimOracle::new(specs.iter().cloned());
        let tasks: Vec<RolloutTask> = synthesizer::load_instructions(&self.root)?
            .into_iter()
            .map(|i| RolloutTask {
                id: i.id,
                app: i.app,
                instruction: i.text,
            })
            .collect();
        let policy_seed = stage_seed(c.seed, "policy");
        let strategy_seed = stage_seed(c.seed, "strategy");
        let (expert, mut learner, monitor, judge) =
            self.rollout_policies(&oracle, &providers, policy_seed);
        let r = &c.rollout;
        let seeds = RolloutSeeds {
            policy: policy_seed,
            strategy: strategy_seed,
            round: 0,
        };
        let intervention = InterventionConfig {
            max_interventions: r.max_interventions,
            min_expert_steps: r.min_expert_steps,
        };

        let mut summary = RolloutSummary {
            strategy: Some(strategy),
            ..Default::default()
        };
        let mut saved: Vec<(Trajectory, bool)> = Vec::new();
        if strategy == Strategy::SelfEvolution {
            let make_env = |t: &RolloutTask| -> Box<dyn Environment> {
                match oracle.spec(&t.app) {
                    Ok(spec) => Box::new(SimEnv::new(spec.clone())),
                    Err(_) => Box::new(SimEnv::new(specs[0].clone())),
                }
            };
            let (kept, report) = rollout::self_evolution(
                &tasks,
                &make_env,
                learner.as_mut(),
                judge.as_ref(),
                r.evolution_rounds,
                r.max_steps,
                policy_seed,
            );
            summary.successes_per_round = report.successes_per_round;
            let mut seen = BTreeSet::new();
            for t in kept {
                if seen.insert(t.task.id.clone()) {
                    saved.push((t, true));
                }
            }
        } else {
            let learner_policy: &dyn Policy = &*learner;
            let results: Vec<(Trajectory, bool)> = tasks
                .par_iter()
                .map(|task| {
                    let mut env = match oracle.env(&task.app) {
                        Ok(env) => env,
                        Err(e) => {
                            let t = Trajectory {
                                task: task.clone(),
                                strategy,
                                steps: Vec::new(),
                                outcome: Outcome::Aborted {
                                    reason: e.to_string(),
                                },
                                seeds,
                                judge_success: None,
                            };
                            return (t, false);
                        }
                    };
                    let (mut traj, last) = match strategy {
                        Strategy::Expert => rollout::rollout_expert(
                            task,
                            &mut env,
                            expert.as_ref(),
                            r.max_steps,
                            seeds,
                        ),
                        Strategy::RandomSwitch => rollout::rollout_random_switch(
                            task,
                            &mut env,
                            expert.as_ref(),
                            learner_policy,
                            r.switch_probability,
                            r.max_steps,
                            seeds,
                        ),
                        Strategy::ErrorIntervention => rollout::rollout_error_intervention(
                            task,
                            &mut env,
                            learner_policy,
                            expert.as_ref(),
                            monitor.as_ref(),
                            &intervention,
                            r.max_steps,
                            seeds,
                        ),
                        Strategy::SelfEvolution => unreachable!("handled above"),
                    };
                    let retained = match strategy {
                        Strategy::Expert => traj.outcome.is_terminal(),
                        _ if traj.outcome.is_terminal() => {
                            let verdict = judge.judge(&traj, &last).unwrap_or_else(|e| {
                                log::warn!("judge failed on {}: {e}", task.id);
                                false
                            });
                            traj.judge_success = Some(verdict);
                            verdict
                        }
                        _ => false,
                    };
                    (traj, retained)
                })
                .collect();
            saved = results;
        }

        let renders = self.renders();
        let mut interventions = 0usize;
        let mut steps = 0usize;
        for (traj, retained) in &mut saved {
            if *retained && r.rewrite_thoughts {
                let spec = oracle.spec(&traj.task.app).ok().map(|s| s.as_ref());
                *traj = rollout::rewrite_thoughts(traj, providers.generator.as_ref(), spec);
            }
            if let Ok(spec) = oracle.spec(&traj.task.app) {
                store_renders(spec, traj, &renders)?;
            }
            if *retained {
                summary.retained.push(traj.task.id.clone());
            }
            if matches!(traj.outcome, Outcome::Aborted { .. }) {
                summary.aborted.push(traj.task.id.clone());
            }
            interventions += count_interventions(traj);
            steps += traj.steps.len();
            rollout::save_trajectory(&self.root, traj)?;
        }
        write_json(&summary_path, &summary)?;
        let n = saved.len().max(1) as f64;
        let counts = BTreeMap::from([
            ("tasks".into(), tasks.len() as u64),
            ("trajectories".into(), saved.len() as u64),
            ("retained".into(), summary.retained.len() as u64),
            ("aborted".into(), summary.aborted.len() as u64),
            (
                "terminal".into(),
                saved
                    .iter()
                    .filter(|(t, _)| t.outcome.is_terminal())
                    .count() as u64,
            ),
        ]);
        let metrics = BTreeMap::from([
            ("mean_interventions".into(), interventions as f64 / n),
            ("mean_steps".into(), steps as f64 / n),
        ]);
        let seeds = BTreeMap::from([
            ("policy".into(), policy_seed),
            ("strategy".into(), strategy_seed),
            ("mock".into(), c.mock_seed()),
        ]);
        self.finish(
            RunManifest {
                stage,
                config_digest: digest,
                counts,
                metrics,
                seeds,
            },
            started,
        )
    }

    /// Strategies with a completed rollout manifest.
    pub fn completed_strategies(&self) -> Vec<Strategy> {
        Strategy::ALL
            .into_iter()
            .filter(|s| self.manifest(&format!("rollout-{s}")).is_some())
            .collect()
    }

    pub fn export_training(&self, only: Option<Strategy>) -> Result<StageOutcome, PipelineError> {
        let strategies: Vec<Strategy> = match only {
            Some(s) => vec![s],
            None => self.completed_strategies(),
        };
        if strategies.is_empty() {
            return Err(PipelineError::MissingPrerequisite {
                stage: "export-training".into(),
                command: "rollout".into(),
            });
        }
        let ups: Vec<RunManifest> = strategies
            .iter()
            .map(|s| {
                self.require(
                    "export-training",
                    &format!("rollout-{s}"),
                    &format!("rollout --strategy {s}"),
                )
            })
            .collect::<Result<_, _>>()?;
        let digest = self.digest(
            "export-training",
            serde_json::json!({"strategies": strategies}),
            &ups.iter().collect::<Vec<_>>(),
        );
        if let Some(m) = self.begin("export-training", &digest, &[self.root.join("training")])? {
            return Ok(StageOutcome::UpToDate(m));
        }
        let started = Instant::now();
        let mut counts = BTreeMap::new();
        let mut total = 0u64;
        for s in &strategies {
            let summary: RolloutSummary = read_json(
                &self
                    .root
                    .join("trajectories")
                    .join(format!("{}.summary.json", s.name())),
            )?;
            let mut samples = Vec::new();
            for id in &summary.retained {
                let traj = rollout::load_trajectory(
                    &self
                        .root
                        .join("trajectories")
                        .join(s.name())
                        .join(format!("{id}.json")),
                )?;
                samples.extend(rollout::extract_training_samples(&traj));
            }
            rollout::write_training_jsonl(
                &self
                    .root
                    .join("training")
                    .join(format!("{}.jsonl", s.name())),
                &samples,
            )?;
            counts.insert(format!("samples.{s}"), samples.len() as u64);
            counts.insert(format!("trajectories.{s}"), summary.retained.len() as u64);
            total += samples.len() as u64;
        }
        counts.insert("samples".into(), total);
        self.finish(
            RunManifest {
                stage: "export-training".into(),
                config_digest: digest,
                counts,
                metrics: BTreeMap::new(),
                seeds: BTreeMap::new(),
            },
            started,
        )
    }

    fn test_corpus(
        &self,
        path: Option<&Path>,
    ) -> Result<(PathBuf, Vec<CorpusItem>), PipelineError> {
        let path = path
            .map(Path::to_path_buf)
            .or_else(|| self.config.analyze.test_corpus.clone())
            .ok_or_else(|| {
                PipelineError::Usage(
                    "no test corpus: pass --test FILE or set analyze.test_corpus".into(),
                )
            })?;
        let items = analyzer::load_corpus(&path)?;
        Ok((path, items))
    }

    fn synthetic_corpus(&self) -> Result<Vec<CorpusItem>, PipelineError> {
        Ok(synthesizer::load_instructions(&self.root)?
            .into_iter()
            .map(|i| CorpusItem {
                id: i.id,
                text: i.text,
            })
            .collect())
    }

    fn corpus_digest(items: &[CorpusItem]) -> String {
        sha256_hex(&serde_json::to_vec(items).expect("corpus serializes"), 64)
    }

    pub fn analyze_overlap(&self, test: Option<&Path>) -> Result<StageOutcome, PipelineError> {
        let up = self.require("analyze-overlap", "synthesize", "synthesize")?;
        let (_, test_items) = self.test_corpus(test)?;
        let a = &self.config.analyze;
        let parts = serde_json::json!({
            "providers": self.config.providers,
            "thresholds": a.thresholds,
            "ratios": a.removal_ratios,
            "test": Self::corpus_digest(&test_items),
        });
        let digest = self.digest("analyze-overlap", parts, &[&up]);
        let dir = self.root.join("analysis/overlap");
        if let Some(m) = self.begin("analyze-overlap", &digest, std::slice::from_ref(&dir))? {
            return Ok(StageOutcome::UpToDate(m));
        }
        let started = Instant::now();
        let specs = self.load_specs()?;
        let providers = self.providers(&specs)?;
        let synthetic = self.synthetic_corpus()?;
        let report = analyzer::overlap_report(
            &synthetic,
            &test_items,
            providers.embedder.as_ref(),
            &a.thresholds,
        )?;
        let seed = stage_seed(self.config.seed, "removal");
        let removal = analyzer::removal_subsets(&synthetic, &report, &a.removal_ratios, seed)?;
        analyzer::save_overlap(&dir, &report, &removal)?;
        let counts = BTreeMap::from([
            ("synthetic".into(), synthetic.len() as u64),
            ("test".into(), test_items.len() as u64),
        ]);
        let metrics = report
            .fraction_above
            .iter()
            .map(|f| (format!("fraction_above.{}", f.threshold), f.fraction))
            .collect();
        let seeds = BTreeMap::from([("removal".into(), seed)]);
        self.finish(
            RunManifest {
                stage: "analyze-overlap".into(),
                config_digest: digest,
                counts,
                metrics,
                seeds,
            },
            started,
        )
    }

    pub fn analyze_coverage(&self, test: Option<&Path>) -> Result<StageOutcome, PipelineError> {
        let up = self.require("analyze-coverage", "synthesize", "synthesize")?;
        let (_, test_items) = self.test_corpus(test)?;
        let a = &self.config.analyze;
        let parts = serde_json::json!({
            "providers": self.config.providers,
            "match_threshold": a.match_threshold,
            "curve_sizes": a.curve_sizes,
            "test": Self::corpus_digest(&test_items),
        });
        let digest = self.digest("analyze-coverage", parts, &[&up]);
        let dir = self.root.join("analysis/coverage");
        if let Some(m) = self.begin("analyze-coverage", &digest, std::slice::from_ref(&dir))? {
            return Ok(StageOutcome::UpToDate(m));
        }
        let started = Instant::now();
        let specs = self.load_specs()?;
        let providers = self.providers(&specs)?;
        let synthetic = self.synthetic_corpus()?;
        let texts = |items: &[CorpusItem]| items.iter().map(|i| i.text.clone()).collect::<Vec<_>>();
        let decomposer = providers.generator.as_ref();
        let required_d =
            analyzer::decompose_all(&texts(&test_items), decomposer, providers.embedder.as_ref())?;
        let synthetic_d =
            analyzer::decompose_all(&texts(&synthetic), decomposer, providers.embedder.as_ref())?;
        let required: Vec<_> = test_items
            .iter()
            .zip(required_d)
            .map(|(i, d)| (i.id.clone(), d.functionalities))
            .collect();
        let pool: Vec<_> = synthetic_d
            .iter()
            .flat_map(|d| d.functionalities.iter().cloned())
            .collect();
        let report = analyzer::coverage(&required, &pool, a.match_threshold);
        let sizes = if a.curve_sizes.is_empty() {
            default_curve_sizes(synthetic.len())
        } else {
            a.curve_sizes.clone()
        };
        let curve = analyzer::coverage_curve(&synthetic_d, &sizes, &required, a.match_threshold)?;
        analyzer::save_coverage(&dir, &report, &curve)?;
        let counts = BTreeMap::from([
            ("synthetic".into(), synthetic.len() as u64),
            ("test".into(), test_items.len() as u64),
            ("skipped".into(), report.skipped.len() as u64),
            (
                "flagged".into(),
                synthetic_d.iter().filter(|d| d.flagged).count() as u64,
            ),
        ]);
        let metrics = BTreeMap::from([("aggregate_coverage".into(), report.aggregate)]);
        self.finish(
            RunManifest {
                stage: "analyze-coverage".into(),
                config_digest: digest,
                counts,
                metrics,
                seeds: BTreeMap::new(),
            },
            started,
        )
    }

    /// explore, build-memory, synthesize, rollout (configured strategy) and
    /// export-training, in order.
    pub fn run_all(&self) -> Result<Vec<StageOutcome>, PipelineError> {
        Ok(vec![
            self.explore()?,
            self.build_memory()?,
            self.synthesize()?,
            self.rollout(self.config.rollout.strategy)?,
            self.export_training(None)?,
        ])
    }
}

/// 10, 20, 40, ... below `n`, then `n`.
pub fn default_curve_sizes(n: usize) -> Vec<usize> {
    let mut sizes = Vec::new();
    let mut k = 10;
    while k < n {
        sizes.push(k);
        k *= 2;
    }
    if n > 0 {
        sizes.push(n);
    }
    sizes
}

/// Replays `trajectory` and stores every observed render.
pub fn store_renders(
    spec: &Arc<SimAppSpec>,
    trajectory: &Trajectory,
    renders: &RenderStore,
) -> Result<(), StoreError> {
    let mut env = SimEnv::new(spec.clone());
    renders.put(&env.reset().render)?;
    for s in &trajectory.steps {
        if let Ok(obs) = env.step(&s.action) {
            renders.put(&obs.render)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_sizes_double() {
        assert_eq!(default_curve_sizes(45), vec![10, 20, 40, 45]);
        assert_eq!(default_curve_sizes(10), vec![10]);
        assert_eq!(default_curve_sizes(0), Vec::<usize>::new());
    }
}
