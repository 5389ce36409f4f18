//! Builds providers, document source, templates and knowledge base from a
//! resolved config.

use std::fs;
use std::path::Path;
use std::time::Duration;

use radar_core::agents::TemplateRegistry;
use radar_core::kb::{DocumentSource, FixtureSource, KnowledgeBase, LiveSource, LiveSourceSettings};
use radar_core::provider::http::{HttpChatProvider, HttpEmbedder, HttpSettings};
use radar_core::provider::{ChatProvider, Embedder, HashEmbedder, ScriptedProvider};
use sha2::{Digest, Sha256};

use crate::config::{ChatConfig, EmbedConfig, RunConfig, SourceConfig};
use crate::CliError;

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn http_settings(cfg: &RunConfig, url: &str, model: &Option<String>) -> HttpSettings {
    let mut s = HttpSettings::new(url);
    s.model = model.clone();
    s.timeout = Duration::from_millis(cfg.provider.timeout_ms);
    s.retry = cfg.provider.retry;
    s
}

pub fn chat_provider(cfg: &RunConfig) -> Result<Box<dyn ChatProvider>, CliError> {
    Ok(match &cfg.provider.chat {
        ChatConfig::Scripted { script } => Box::new(ScriptedProvider::from_file(script).map_err(config_err)?),
        ChatConfig::Http { url, model } => {
            Box::new(HttpChatProvider::new(http_settings(cfg, url, model)).map_err(config_err)?)
        }
    })
}

pub fn embedder(cfg: &RunConfig) -> Result<Box<dyn Embedder>, CliError> {
    Ok(match &cfg.provider.embed {
        EmbedConfig::Hash { dim } => Box::new(HashEmbedder::new(*dim)),
        EmbedConfig::Http { url, model, dim } => {
            Box::new(HttpEmbedder::new(http_settings(cfg, url, model), *dim).map_err(config_err)?)
        }
    })
}

pub fn source(cfg: &RunConfig) -> Result<Box<dyn DocumentSource>, CliError> {
    Ok(match &cfg.kb.source {
        SourceConfig::Fixture { corpus, fail_keywords } => Box::new(
            FixtureSource::from_dir(corpus)
                .map_err(config_err)?
                .with_failing_keywords(fail_keywords),
        ),
        SourceConfig::Live {
            base_url,
            delay_ms,
            cache_dir,
        } => Box::new(
            LiveSource::new(LiveSourceSettings {
                base_url: base_url.clone(),
                delay_ms: *delay_ms,
                cache_dir: cache_dir.clone(),
                timeout: Duration::from_millis(cfg.provider.timeout_ms),
            })
            .map_err(config_err)?,
        ),
    })
}

pub fn templates(cfg: &RunConfig) -> Result<TemplateRegistry, CliError> {
    match &cfg.agents.template_dir {
        Some(dir) => TemplateRegistry::with_overrides(dir).map_err(config_err),
        None => Ok(TemplateRegistry::builtin()),
    }
}

/// Opens the persisted knowledge base at `kb.dir`, or a fresh in-memory one.
pub fn knowledge_base(cfg: &RunConfig) -> Result<KnowledgeBase, CliError> {
    let dim = cfg.provider.embed.dim();
    match &cfg.kb.dir {
        Some(dir) => KnowledgeBase::open(dir, dim, cfg.chunk_params(), cfg.kb.retry).map_err(config_err),
        None => KnowledgeBase::new(dim, cfg.chunk_params(), cfg.kb.retry).map_err(config_err),
    }
}

/// SHA-256 over the fixture corpus files (name and bytes, in name order), or
/// over the base URL for a live source.
pub fn corpus_digest(cfg: &RunConfig) -> Result<String, CliError> {
    let mut h = Sha256::new();
    match &cfg.kb.source {
        SourceConfig::Fixture { corpus, .. } => {
            let mut files: Vec<_> = fs::read_dir(corpus)
                .map_err(|e| CliError::Config(format!("reading corpus {}: {e}", corpus.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file())
                .collect();
            files.sort();
            for f in files {
                let name = f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                let bytes = fs::read(&f).map_err(|e| CliError::Config(format!("reading {}: {e}", f.display())))?;
                h.update(name.as_bytes());
                h.update([0]);
                h.update(&bytes);
                h.update([0]);
            }
        }
        SourceConfig::Live { base_url, .. } => h.update(base_url.as_bytes()),
    }
    Ok(hex::encode(h.finalize()))
}

pub fn combined_digest(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0]);
    }
    hex::encode(h.finalize())
}

/// File name for a per-case artifact; anything outside `[A-Za-z0-9._-]`
/// becomes `_`.
pub fn file_stem(case_id: &str) -> String {
    case_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') { c } else { '_' })
        .collect()
}

pub(crate) fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Failed(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::Failed(format!("writing {}: {e}", path.display())))
}
