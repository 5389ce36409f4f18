//! `radar kb fetch` and `radar kb stats`.

use std::path::Path;

use radar_core::kb::{KbStats, RetrievalOutcome};

use crate::config::RunConfig;
use crate::engine;
use crate::CliError;

#[derive(Debug)]
pub struct FetchSummary {
    pub outcomes: Vec<RetrievalOutcome>,
    /// `(keyword, error)` for keywords that could not be fetched.
    pub failures: Vec<(String, String)>,
    pub stats: KbStats,
}

fn persisted(config: &Path) -> Result<RunConfig, CliError> {
    let cfg = RunConfig::load(config)?;
    if cfg.kb.dir.is_none() {
        return Err(CliError::Config("kb.dir must be set to use the kb commands".into()));
    }
    Ok(cfg)
}

/// Looks up or fetches each keyword and persists the knowledge base,
/// including whatever succeeded when some keywords fail.
pub fn cmd_fetch(config: &Path, keywords: &[String]) -> Result<FetchSummary, CliError> {
    let cfg = persisted(config)?;
    let kb = engine::knowledge_base(&cfg)?;
    let source = engine::source(&cfg)?;
    let embedder = engine::embedder(&cfg)?;
    let mut outcomes = Vec::new();
    let mut failures = Vec::new();
    for k in keywords {
        match kb.lookup_or_fetch(k, source.as_ref(), embedder.as_ref()) {
            Ok(o) => outcomes.push(o),
            Err(e) => failures.push((k.clone(), e.to_string())),
        }
    }
    let dir = cfg.kb.dir.as_ref().expect("checked above");
    kb.save(dir).map_err(|e| CliError::Failed(e.to_string()))?;
    Ok(FetchSummary {
        outcomes,
        failures,
        stats: kb.stats(),
    })
}

pub fn cmd_stats(config: &Path) -> Result<KbStats, CliError> {
    let cfg = persisted(config)?;
    Ok(engine::knowledge_base(&cfg)?.stats())
}

pub fn format_stats(s: &KbStats) -> String {
    format!(
        "keywords: {}\ndocuments: {}\nchunks: {}\ndim: {}\n",
        s.keywords, s.documents, s.chunks, s.dim
    )
}
