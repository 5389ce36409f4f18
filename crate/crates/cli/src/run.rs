//! `radar run`: diagnoses every case with one topology and writes the run
//! directory (manifest.json, reports.jsonl, failures.jsonl, traces/).

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use chrono::{SecondsFormat, Utc};
use radar_core::agents::Agents;
use radar_core::domain::{parse_cases_jsonl, Case};
use radar_core::provider::ChatProvider;
use radar_core::topology::{Retrieval, RunResult, Runner};
use radar_core::trace::Topology;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::engine::{self, file_stem, write_json};
use crate::CliError;

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub config: PathBuf,
    pub cases: PathBuf,
    pub out: PathBuf,
    pub topology: Option<Topology>,
    /// Only cases with this paraphrase id.
    pub paraphrase: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderIds {
    pub chat: String,
    pub embed: String,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub topology: Topology,
    pub seed: u64,
    pub config: RunConfig,
    pub providers: ProviderIds,
    pub cases_file: PathBuf,
    pub paraphrase: Option<u32>,
    pub case_count: usize,
    pub templates_digest: String,
    pub corpus_digest: String,
    /// Digest over templates and corpus together.
    pub content_digest: String,
    pub started_at: String,
    pub ended_at: Option<String>,
    pub reports: Option<usize>,
    pub failures: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub case_id: String,
    pub trace_id: String,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub run_id: String,
    pub out: PathBuf,
    pub case_count: usize,
    pub reports: usize,
    pub failures: Vec<FailureRecord>,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

pub fn load_cases(path: &Path, paraphrase: Option<u32>) -> Result<Vec<Case>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("reading cases {}: {e}", path.display())))?;
    let mut cases = parse_cases_jsonl(&text).map_err(|e| CliError::Config(format!("cases {}: {e}", path.display())))?;
    if let Some(p) = paraphrase {
        cases.retain(|c| c.paraphrase_id == p);
    }
    let mut seen = HashSet::new();
    let dups: Vec<&str> = cases.iter().filter(|c| !seen.insert(c.id.as_str())).map(|c| c.id.as_str()).collect();
    if !dups.is_empty() {
        return Err(CliError::Config(format!(
            "case ids repeat within the run: {} (select one paraphrase with --paraphrase)",
            dups.join(", ")
        )));
    }
    if cases.is_empty() {
        return Err(CliError::Config(format!("no cases to run in {}", path.display())));
    }
    Ok(cases)
}

pub fn cmd_run(opts: &RunOptions) -> Result<RunSummary, CliError> {
    let mut config = RunConfig::load(&opts.config)?;
    if let Some(t) = opts.topology {
        config.topology = t;
    }
    let chat = engine::chat_provider(&config)?;
    run_with_provider(&config, opts, chat.as_ref())
}

/// `cmd_run` with an already-built chat provider; `opts.config` and
/// `opts.topology` are ignored in favour of `config`.
pub fn run_with_provider(config: &RunConfig, opts: &RunOptions, chat: &dyn ChatProvider) -> Result<RunSummary, CliError> {
    let cases = load_cases(&opts.cases, opts.paraphrase)?;
    let templates = engine::templates(config)?;
    let suite = config.agents.suite();
    suite.validate(&templates).map_err(|e| CliError::Config(e.to_string()))?;
    let embedder = engine::embedder(config)?;
    let source = engine::source(config)?;
    let kb = engine::knowledge_base(config)?;

    let out = &opts.out;
    let traces_dir = out.join("traces");
    fs::create_dir_all(&traces_dir).map_err(|e| CliError::Failed(format!("creating {}: {e}", traces_dir.display())))?;
    let run_id = out
        .canonicalize()
        .ok()
        .and_then(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "run".to_string());
    let templates_digest = templates.digest();
    let corpus_digest = engine::corpus_digest(config)?;
    let mut manifest = RunManifest {
        run_id: run_id.clone(),
        topology: config.topology,
        seed: config.seed,
        config: config.clone(),
        providers: ProviderIds {
            chat: chat.id().to_string(),
            embed: embedder.id().to_string(),
            source: source.id().to_string(),
        },
        cases_file: opts.cases.canonicalize().unwrap_or_else(|_| opts.cases.clone()),
        paraphrase: opts.paraphrase,
        case_count: cases.len(),
        content_digest: engine::combined_digest(&[&templates_digest, &corpus_digest]),
        templates_digest,
        corpus_digest,
        started_at: now(),
        ended_at: None,
        reports: None,
        failures: None,
    };
    let manifest_path = out.join("manifest.json");
    write_json(&manifest_path, &manifest)?;

    let mut agents = Agents::new(chat, &templates);
    agents.seed = Some(config.seed);
    let runner = Runner {
        agents,
        suite: &suite,
        settings: config.agents.topology_settings(),
        retrieval: Some(Retrieval {
            kb: &kb,
            source: source.as_ref(),
            embedder: embedder.as_ref(),
        }),
    };
    let results = run_all(&runner, config.topology, &cases, config.workers, &traces_dir)?;

    let mut reports = String::new();
    let mut failures = Vec::new();
    for (case, result) in cases.iter().zip(results) {
        match result {
            Ok((report, _)) => {
                reports.push_str(&serde_json::to_string(&report).map_err(|e| CliError::Failed(e.to_string()))?);
                reports.push('\n');
            }
            Err(f) => failures.push(FailureRecord {
                case_id: case.id.clone(),
                trace_id: f.trace.trace_id.clone(),
                error: f.error.to_string(),
            }),
        }
    }
    fs::write(out.join("reports.jsonl"), &reports).map_err(|e| CliError::Failed(format!("writing reports: {e}")))?;
    let mut fail_file =
        fs::File::create(out.join("failures.jsonl")).map_err(|e| CliError::Failed(format!("writing failures: {e}")))?;
    for f in &failures {
        writeln!(fail_file, "{}", serde_json::to_string(f).map_err(|e| CliError::Failed(e.to_string()))?)
            .map_err(|e| CliError::Failed(format!("writing failures: {e}")))?;
    }
    if let Some(dir) = &config.kb.dir {
        kb.save(dir).map_err(|e| CliError::Failed(e.to_string()))?;
    }

    let n_reports = cases.len() - failures.len();
    manifest.ended_at = Some(now());
    manifest.reports = Some(n_reports);
    manifest.failures = Some(failures.len());
    write_json(&manifest_path, &manifest)?;
    Ok(RunSummary {
        run_id,
        out: out.clone(),
        case_count: cases.len(),
        reports: n_reports,
        failures,
    })
}

/// Runs cases on up to `workers` threads; results come back in input order.
/// Each trace is written as soon as its case finishes.
fn run_all(
    runner: &Runner,
    topology: Topology,
    cases: &[Case],
    workers: usize,
    traces_dir: &Path,
) -> Result<Vec<RunResult>, CliError> {
    let slots: Vec<Mutex<Option<RunResult>>> = cases.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let write_error = Mutex::new(None);
    thread::scope(|s| {
        for _ in 0..workers.min(cases.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(case) = cases.get(i) else { break };
                let result = runner.run(topology, case);
                let trace = match &result {
                    Ok((_, t)) => t,
                    Err(f) => &f.trace,
                };
                match &result {
                    Ok(_) => log::info!("case {} done", case.id),
                    Err(f) => log::warn!("case {} failed: {}", case.id, f.error),
                }
                let path = traces_dir.join(format!("{}.json", file_stem(&case.id)));
                if let Err(e) = write_json(&path, trace) {
                    write_error.lock().unwrap().get_or_insert(e);
                }
                *slots[i].lock().unwrap() = Some(result);
            });
        }
    });
    if let Some(e) = write_error.into_inner().unwrap() {
        return Err(e);
    }
    Ok(slots
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("every case ran"))
        .collect())
}
