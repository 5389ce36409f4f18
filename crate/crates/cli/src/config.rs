//! JSON run configuration. Relative paths are resolved against the directory
//! holding the config file, and the resolved form is what gets snapshotted
//! into run manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use radar_core::agents::{AgentRole, AgentSuite, DEFAULT_MAX_RETRIES, DEFAULT_MAX_TOKENS, DEFAULT_N_QUERIES};
use radar_core::chunking::{ChunkParams, DEFAULT_CHUNK_CHARS, DEFAULT_OVERLAP_CHARS};
use radar_core::index::DEFAULT_TOP_K;
use radar_core::kb::{DEFAULT_BASE_URL, MIN_DELAY_MS};
use radar_core::provider::{RetryPolicy, Sampling, DEFAULT_EMBED_DIM};
use radar_core::topology::{RetrievalScope, TopologySettings, DEFAULT_COLLAB_AGENTS, DEFAULT_COLLAB_ROUNDS};
use radar_core::trace::Topology;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const DEFAULT_WORKERS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub topology: Topology,
    pub seed: u64,
    pub workers: usize,
    pub provider: ProviderConfig,
    pub kb: KbConfig,
    pub agents: AgentsConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            topology: Topology::Radar,
            seed: 0,
            workers: DEFAULT_WORKERS,
            provider: ProviderConfig::default(),
            kb: KbConfig::default(),
            agents: AgentsConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProviderConfig {
    pub chat: ChatConfig,
    pub embed: EmbedConfig,
    pub timeout_ms: u64,
    pub retry: RetryPolicy,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            chat: ChatConfig::Scripted { script: PathBuf::from("script.json") },
            embed: EmbedConfig::Hash { dim: DEFAULT_EMBED_DIM },
            timeout_ms: 120_000,
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChatConfig {
    Scripted { script: PathBuf },
    Http { url: String, model: Option<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbedConfig {
    Hash {
        #[serde(default = "default_dim")]
        dim: usize,
    },
    Http {
        url: String,
        model: Option<String>,
        dim: usize,
    },
}

impl EmbedConfig {
    pub fn dim(&self) -> usize {
        match self {
            EmbedConfig::Hash { dim } | EmbedConfig::Http { dim, .. } => *dim,
        }
    }
}

fn default_dim() -> usize {
    DEFAULT_EMBED_DIM
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KbConfig {
    pub chunk_chars: usize,
    pub overlap_chars: usize,
    /// Where the knowledge base persists between runs; in-memory when unset.
    pub dir: Option<PathBuf>,
    pub source: SourceConfig,
    /// Retries for document source requests.
    pub retry: RetryPolicy,
}

impl Default for KbConfig {
    fn default() -> Self {
        Self {
            chunk_chars: DEFAULT_CHUNK_CHARS,
            overlap_chars: DEFAULT_OVERLAP_CHARS,
            dir: None,
            source: SourceConfig::Fixture {
                corpus: PathBuf::from("corpus"),
                fail_keywords: Vec::new(),
            },
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceConfig {
    Fixture {
        corpus: PathBuf,
        /// Keywords whose searches fail, for degradation drills.
        #[serde(default)]
        fail_keywords: Vec<String>,
    },
    Live {
        #[serde(default = "default_base_url")]
        base_url: String,
        #[serde(default = "default_delay")]
        delay_ms: u64,
        cache_dir: Option<PathBuf>,
    },
}

fn default_base_url() -> String {
    DEFAULT_BASE_URL.to_string()
}

fn default_delay() -> u64 {
    MIN_DELAY_MS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentsConfig {
    pub n_queries: usize,
    pub top_k: usize,
    pub template_dir: Option<PathBuf>,
    /// Sampling per agent role (`initial_doctor`, `answer_generator`, …);
    /// roles not listed keep their defaults.
    pub temperatures: BTreeMap<AgentRole, Sampling>,
    pub max_retries: u32,
    pub max_tokens: u32,
    pub collab_agents: usize,
    pub collab_max_rounds: usize,
    pub retrieval_scope: RetrievalScope,
}

impl Default for AgentsConfig {
    fn default() -> Self {
        Self {
            n_queries: DEFAULT_N_QUERIES,
            top_k: DEFAULT_TOP_K,
            template_dir: None,
            temperatures: BTreeMap::new(),
            max_retries: DEFAULT_MAX_RETRIES,
            max_tokens: DEFAULT_MAX_TOKENS,
            collab_agents: DEFAULT_COLLAB_AGENTS,
            collab_max_rounds: DEFAULT_COLLAB_ROUNDS,
            retrieval_scope: RetrievalScope::Global,
        }
    }
}

impl AgentsConfig {
    pub fn suite(&self) -> AgentSuite {
        let mut suite = AgentSuite::default();
        for cfg in suite.all_mut() {
            if let Some(s) = self.temperatures.get(&cfg.role) {
                cfg.sampling = *s;
            }
            cfg.max_retries = self.max_retries;
            cfg.max_tokens = self.max_tokens;
        }
        suite
    }

    pub fn topology_settings(&self) -> TopologySettings {
        TopologySettings {
            n_queries: self.n_queries,
            top_k: self.top_k,
            collab_agents: self.collab_agents,
            collab_max_rounds: self.collab_max_rounds,
            retrieval_scope: self.retrieval_scope,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizerKind {
    Dictionary,
    Provider,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub normalizer: NormalizerKind,
    pub synonyms: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            normalizer: NormalizerKind::Dictionary,
            synonyms: None,
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn must_exist(what: &str, p: &Path, problems: &mut Vec<String>) {
    if !p.exists() {
        problems.push(format!("{what} {} does not exist", p.display()));
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CliError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("reading {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("parsing {}: {e}", path.display())))?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let base = base.canonicalize().unwrap_or_else(|_| base.to_path_buf());
        cfg.resolve_paths(&base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let ChatConfig::Scripted { script } = &mut self.provider.chat {
            resolve(base, script);
        }
        if let Some(d) = &mut self.kb.dir {
            resolve(base, d);
        }
        match &mut self.kb.source {
            SourceConfig::Fixture { corpus, .. } => resolve(base, corpus),
            SourceConfig::Live { cache_dir: Some(d), .. } => resolve(base, d),
            SourceConfig::Live { .. } => {}
        }
        if let Some(d) = &mut self.agents.template_dir {
            resolve(base, d);
        }
        if let Some(s) = &mut self.eval.synonyms {
            resolve(base, s);
        }
    }

    /// Every violated constraint, reported together.
    pub fn validate(&self) -> Result<(), CliError> {
        let mut problems = Vec::new();
        if self.workers == 0 {
            problems.push("workers must be positive".to_string());
        }
        if let Err(e) = ChunkParams::new(self.kb.chunk_chars, self.kb.overlap_chars) {
            problems.push(e.to_string());
        }
        if self.provider.embed.dim() == 0 {
            problems.push("provider.embed.dim must be positive".to_string());
        }
        if self.provider.timeout_ms == 0 {
            problems.push("provider.timeout_ms must be positive".to_string());
        }
        if let Err(e) = self.agents.topology_settings().validate() {
            problems.extend(e.violations);
        }
        if self.agents.max_tokens == 0 {
            problems.push("agents.max_tokens must be positive".to_string());
        }
        for (role, s) in &self.agents.temperatures {
            if !(s.temperature.is_finite() && s.temperature >= 0.0) {
                problems.push(format!("agents.temperatures.{role}: temperature must be >= 0"));
            }
            if !(s.top_p > 0.0 && s.top_p <= 1.0) {
                problems.push(format!("agents.temperatures.{role}: top_p outside (0, 1]"));
            }
        }
        if let ChatConfig::Scripted { script } = &self.provider.chat {
            must_exist("script", script, &mut problems);
        }
        if let SourceConfig::Fixture { corpus, .. } = &self.kb.source {
            must_exist("corpus", corpus, &mut problems);
        }
        if let Some(d) = &self.agents.template_dir {
            must_exist("template_dir", d, &mut problems);
        }
        if let Some(s) = &self.eval.synonyms {
            must_exist("synonyms", s, &mut problems);
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(problems.join("; ")))
        }
    }

    pub fn chunk_params(&self) -> ChunkParams {
        ChunkParams::new(self.kb.chunk_chars, self.kb.overlap_chars).expect("validated on load")
    }
}
