//! Pipeline configuration loaded from TOML.
//!
//! Every section has defaults, so an empty file is a valid configuration.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory::MemoryConfig;
use crate::providers::{
    BackendKind, MockChat, MockEmbedder, ProviderBundle, RemoteBackend, RetryPolicy, BASE_URL_VAR,
};
use crate::providers::{ChatModel, Embedder, ProviderError};
use crate::sim::spec::{default_suite, generate_app, AppGenParams};
use crate::sim::SimAppSpec;
use crate::synthesizer::{FilterConfig, SynthesisConfig};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config value {field}: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub version: u32,
    pub output_root: PathBuf,
    pub seed: u64,
    pub providers: ProvidersConfig,
    pub environment: EnvironmentConfig,
    pub explore: ExploreConfig,
    pub memory: MemoryConfig,
    pub synthesize: SynthesizeConfig,
    pub rollout: RolloutConfig,
    pub analyze: AnalyzeConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            output_root: PathBuf::from("agent-forge-out"),
            seed: 0,
            providers: ProvidersConfig::default(),
            environment: EnvironmentConfig::default(),
            explore: ExploreConfig::default(),
            memory: MemoryConfig::default(),
            synthesize: SynthesizeConfig::default(),
            rollout: RolloutConfig::default(),
            analyze: AnalyzeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProvidersConfig {
    /// Seed for the mock backends; the pipeline seed when absent.
    pub mock_seed: Option<u64>,
    /// Overrides the base URL environment variable for remote roles.
    pub base_url: Option<String>,
    pub retry_attempts: u32,
    pub retry_backoff_ms: u64,
    pub embedding_dimension: usize,
    pub embedder: BackendKind,
    pub generator: BackendKind,
    pub annotator: BackendKind,
    pub monitor: BackendKind,
    pub judge: BackendKind,
}

impl Default for ProvidersConfig {
    fn default() -> Self {
        Self {
            mock_seed: None,
            base_url: None,
            retry_attempts: 3,
            retry_backoff_ms: 500,
            embedding_dimension: crate::providers::embedding::MOCK_DIMENSION,
            embedder: BackendKind::Mock,
            generator: BackendKind::Mock,
            annotator: BackendKind::Mock,
            monitor: BackendKind::Mock,
            judge: BackendKind::Mock,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppEntry {
    pub name: Option<String>,
    /// Loads a saved spec instead of generating one.
    pub spec_file: Option<PathBuf>,
    #[serde(default)]
    pub params: Option<AppGenParams>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvironmentConfig {
    pub seed: u64,
    /// Empty means the built-in three-app suite.
    pub apps: Vec<AppEntry>,
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            apps: Vec::new(),
        }
    }
}

impl EnvironmentConfig {
    pub fn build_specs(&self) -> Result<Vec<SimAppSpec>, ConfigError> {
        if self.apps.is_empty() {
            return Ok(default_suite(self.seed));
        }
        self.apps
            .iter()
            .enumerate()
            .map(|(i, app)| {
                let field = |f: &str| format!("environment.apps[{i}].{f}");
                match (&app.spec_file, &app.name) {
                    (Some(path), _) => SimAppSpec::load(path)
                        .map_err(|e| invalid(&field("spec_file"), e.to_string())),
                    (None, Some(name)) => generate_app(
                        name,
                        app.params.unwrap_or_default(),
                        app.seed.unwrap_or(self.seed.wrapping_add(i as u64)),
                    )
                    .map_err(|e| invalid(&field("params"), e.to_string())),
                    (None, None) => Err(invalid(
                        &field("name"),
                        "each app needs a name or a spec_file",
                    )),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExploreConfig {
    pub sessions_per_app: usize,
    pub steps: usize,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        Self {
            sessions_per_app: 50,
            steps: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesizeConfig {
    pub retrieval_k: usize,
    pub contexts_per_node: usize,
    pub clarity_min: u8,
    pub reasonableness_min: u8,
    pub dedup_threshold: f64,
    pub per_app_cap: usize,
}

impl Default for SynthesizeConfig {
    fn default() -> Self {
        let f = FilterConfig::default();
        Self {
            retrieval_k: 30,
            contexts_per_node: 1,
            clarity_min: f.clarity_min,
            reasonableness_min: f.reason_min,
            dedup_threshold: f.dedup_threshold,
            per_app_cap: f.per_app_cap,
        }
    }
}

impl SynthesizeConfig {
    pub fn to_synthesis(&self, seed: u64) -> SynthesisConfig {
        SynthesisConfig {
            retrieval_k: self.retrieval_k,
            contexts_per_node: self.contexts_per_node,
            seed,
            filter: FilterConfig {
                clarity_min: self.clarity_min,
                reason_min: self.reasonableness_min,
                dedup_threshold: self.dedup_threshold,
                per_app_cap: self.per_app_cap,
            },
        }
    }
}

/// Who acts as a policy, monitor or judge during rollouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Agent {
    /// Simulator ground truth.
    Oracle,
    /// The configured chat model role.
    Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutConfig {
    pub strategy: crate::rollout::Strategy,
    pub max_steps: usize,
    pub switch_probability: f64,
    pub learner_epsilon: f64,
    pub max_interventions: usize,
    pub min_expert_steps: usize,
    pub evolution_rounds: usize,
    pub rewrite_thoughts: bool,
    pub expert: Agent,
    pub learner: Agent,
    pub monitor: Agent,
    pub judge: Agent,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            strategy: crate::rollout::Strategy::ErrorIntervention,
            max_steps: 30,
            switch_probability: 0.5,
            learner_epsilon: 0.3,
            max_interventions: 2,
            min_expert_steps: 3,
            evolution_rounds: 3,
            rewrite_thoughts: true,
            expert: Agent::Oracle,
            learner: Agent::Oracle,
            monitor: Agent::Oracle,
            judge: Agent::Oracle,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeConfig {
    /// Test-set corpus: JSONL with `text` fields or one instruction per line.
    pub test_corpus: Option<PathBuf>,
    pub thresholds: Vec<f64>,
    pub removal_ratios: Vec<f64>,
    pub match_threshold: f64,
    /// Prefix sizes for the coverage curve; empty means doubling from 10.
    pub curve_sizes: Vec<usize>,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        Self {
            test_corpus: None,
            thresholds: vec![0.7],
            removal_ratios: vec![0.1, 0.2, 0.4],
            match_threshold: 0.8,
            curve_sizes: Vec::new(),
        }
    }
}

fn unit_interval(field: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(invalid(field, format!("{v} is outside (0, 1]")))
    }
}

fn positive(field: &str, v: usize) -> Result<(), ConfigError> {
    if v >= 1 {
        Ok(())
    } else {
        Err(invalid(field, "must be at least 1"))
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let config = Self::from_toml(&text).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })?;
        Ok(config)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: PathBuf::new(),
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.version != CONFIG_VERSION {
            return Err(invalid(
                "version",
                format!(
                    "unsupported version {}; expected {CONFIG_VERSION}",
                    self.version
                ),
            ));
        }
        positive("explore.sessions_per_app", self.explore.sessions_per_app)?;
        positive("explore.steps", self.explore.steps)?;
        unit_interval("memory.tau", self.memory.tau)?;
        unit_interval(
            "memory.diversity_threshold",
            self.memory.diversity_threshold,
        )?;
        positive("memory.embed_batch", self.memory.embed_batch)?;
        positive("synthesize.retrieval_k", self.synthesize.retrieval_k)?;
        positive(
            "synthesize.contexts_per_node",
            self.synthesize.contexts_per_node,
        )?;
        for (field, v) in [
            ("synthesize.clarity_min", self.synthesize.clarity_min),
            (
                "synthesize.reasonableness_min",
                self.synthesize.reasonableness_min,
            ),
        ] {
            if !(1..=5).contains(&v) {
                return Err(invalid(field, format!("{v} is outside 1..=5")));
            }
        }
        unit_interval(
            "synthesize.dedup_threshold",
            self.synthesize.dedup_threshold,
        )?;
        positive("synthesize.per_app_cap", self.synthesize.per_app_cap)?;
        let r = &self.rollout;
        positive("rollout.max_steps", r.max_steps)?;
        if !(0.0..=1.0).contains(&r.switch_probability) {
            return Err(invalid(
                "rollout.switch_probability",
                format!("{} is outside [0, 1]", r.switch_probability),
            ));
        }
        if !(0.0..=1.0).contains(&r.learner_epsilon) {
            return Err(invalid(
                "rollout.learner_epsilon",
                format!("{} is outside [0, 1]", r.learner_epsilon),
            ));
        }
        positive("rollout.max_interventions", r.max_interventions)?;
        positive("rollout.min_expert_steps", r.min_expert_steps)?;
        let a = &self.analyze;
        for (i, t) in a.thresholds.iter().enumerate() {
            unit_interval(&format!("analyze.thresholds[{i}]"), *t)?;
        }
        for (i, t) in a.removal_ratios.iter().enumerate() {
            if !(*t > 0.0 && *t < 1.0) {
                return Err(invalid(
                    &format!("analyze.removal_ratios[{i}]"),
                    format!("{t} is outside (0, 1)"),
                ));
            }
        }
        unit_interval("analyze.match_threshold", a.match_threshold)?;
        if a.curve_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid(
                "analyze.curve_sizes",
                "sizes must be strictly increasing",
            ));
        }
        if let Some(p) = &a.test_corpus {
            if !p.exists() {
                return Err(invalid(
                    "analyze.test_corpus",
                    format!("{} does not exist", p.display()),
                ));
            }
        }
        for (i, app) in self.environment.apps.iter().enumerate() {
            if let Some(p) = &app.spec_file {
                if !p.exists() {
                    return Err(invalid(
                        &format!("environment.apps[{i}].spec_file"),
                        format!("{} does not exist", p.display()),
                    ));
                }
            }
        }
        positive(
            "providers.embedding_dimension",
            self.providers.embedding_dimension,
        )?;
        positive(
            "providers.retry_attempts",
            self.providers.retry_attempts as usize,
        )?;
        Ok(())
    }

    pub fn mock_seed(&self) -> u64 {
        self.providers.mock_seed.unwrap_or(self.seed)
    }

    /// Instantiates the five provider roles. Mock roles share `specs`.
    pub fn providers(&self, specs: &[Arc<SimAppSpec>]) -> Result<ProviderBundle, ProviderError> {
        let p = &self.providers;
        let specs = Arc::new(specs.to_vec());
        let seed = self.mock_seed();
        let remote = |model: &str| -> Result<RemoteBackend, ProviderError> {
            let backend = match &p.base_url {
                Some(url) => {
                    let key = std::env::var(crate::providers::API_KEY_VAR).map_err(|_| {
                        ProviderError::MissingConfig(format!(
                            "environment variable {} is not set",
                            crate::providers::API_KEY_VAR
                        ))
                    })?;
                    RemoteBackend::new(url.clone(), key, model)
                }
                None => RemoteBackend::from_env(model).map_err(|e| match e {
                    ProviderError::MissingConfig(m) => ProviderError::MissingConfig(format!(
                        "{m} (or set providers.base_url; {BASE_URL_VAR})"
                    )),
                    other => other,
                })?,
            };
            Ok(backend.with_retry(RetryPolicy {
                attempts: p.retry_attempts,
                initial_backoff: std::time::Duration::from_millis(p.retry_backoff_ms),
            }))
        };
        let chat = |kind: &BackendKind, offset: u64| -> Result<Arc<dyn ChatModel>, ProviderError> {
            Ok(match kind {
                BackendKind::Mock => {
                    Arc::new(MockChat::new(seed.wrapping_add(offset)).with_specs(specs.clone()))
                }
                BackendKind::Remote { model } => Arc::new(remote(model)?),
            })
        };
        let embedder: Arc<dyn Embedder> = match &p.embedder {
            BackendKind::Mock => Arc::new(MockEmbedder::new(p.embedding_dimension)),
            BackendKind::Remote { model } => Arc::new(remote(model)?),
        };
        Ok(ProviderBundle {
            embedder,
            generator: chat(&p.generator, 0)?,
            annotator: chat(&p.annotator, 1)?,
            monitor: chat(&p.monitor, 2)?,
            judge: chat(&p.judge, 3)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = PipelineConfig::from_toml("").unwrap();
        assert_eq!(c, PipelineConfig::default());
        assert_eq!(c.memory.tau, 0.95);
        assert_eq!(c.synthesize.retrieval_k, 30);
        assert_eq!(c.rollout.max_interventions, 2);
        assert_eq!(c.rollout.min_expert_steps, 3);
        assert_eq!(c.explore.steps, 10);
    }

    #[test]
    fn round_trips_through_toml() {
        let c = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn validation_names_field() {
        let err = PipelineConfig::from_toml("[memory]\ntau = 1.5\n").unwrap_err();
        assert!(err.to_string().contains("memory.tau"), "{err}");
        let err =
            PipelineConfig::from_toml("[analyze]\nremoval_ratios = [0.1, 1.0]\n").unwrap_err();
        assert!(
            err.to_string().contains("analyze.removal_ratios[1]"),
            "{err}"
        );
        let err = PipelineConfig::from_toml("[rollout]\nstrategy = \"greedy\"\n").unwrap_err();
        assert!(matches!(err, ConfigError::Parse { .. }));
        let err = PipelineConfig::from_toml("[explore]\nsesions_per_app = 3\n").unwrap_err();
        assert!(err.to_string().contains("sesions_per_app"), "{err}");
    }

    #[test]
    fn remote_roles_parse() {
        let c = PipelineConfig::from_toml(
            "[providers.generator]\nkind = \"remote\"\nmodel = \"gpt\"\n",
        )
        .unwrap();
        assert_eq!(
            c.providers.generator,
            BackendKind::Remote {
                model: "gpt".into()
            }
        );
    }

    #[test]
    fn custom_apps() {
        let c = PipelineConfig::from_toml(
            "[[environment.apps]]\nname = \"Clock\"\nparams = { n_screens = 6, elements_per_screen = 3, n_fields = 4 }\n",
        )
        .unwrap();
        let specs = c.environment.build_specs().unwrap();
        assert_eq!(specs.len(), 1);
        assert_eq!(specs[0].screens.len(), 6);
        let bad = PipelineConfig::from_toml("[[environment.apps]]\nseed = 1\n")
            .unwrap()
            .environment
            .build_specs()
            .unwrap_err();
        assert!(bad.to_string().contains("environment.apps[0].name"));
    }
}
