//! `radar eval`: Top-1/Top-5 per run directory plus the aggregate.

use std::fs;
use std::path::{Path, PathBuf};

use radar_core::domain::DiagnosisReport;
use radar_core::eval::{
    aggregate, evaluate_run, parse_truths_jsonl, DictionaryNormalizer, EvalReport, EvalResult, Normalizer,
    ProviderNormalizer,
};

use crate::config::{NormalizerKind, RunConfig};
use crate::engine::{self, write_json};
use crate::run::RunManifest;
use crate::CliError;

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub runs: Vec<PathBuf>,
    pub truth: PathBuf,
    pub out: PathBuf,
    /// Synonym table overriding the one recorded in the first run's manifest.
    pub synonyms: Option<PathBuf>,
}

fn failed(e: impl std::fmt::Display) -> CliError {
    CliError::Failed(e.to_string())
}

fn read_manifest(dir: &Path) -> Option<RunManifest> {
    let text = fs::read_to_string(dir.join("manifest.json")).ok()?;
    serde_json::from_str(&text).ok()
}

pub fn read_reports(dir: &Path) -> Result<Vec<DiagnosisReport>, CliError> {
    let path = dir.join("reports.jsonl");
    let text = fs::read_to_string(&path).map_err(|e| failed(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| failed(format!("{} line {}: {e}", path.display(), i + 1))))
        .collect()
}

pub fn cmd_eval(opts: &EvalOptions) -> Result<EvalReport, CliError> {
    if opts.runs.is_empty() {
        return Err(CliError::Config("at least one --run directory is required".into()));
    }
    let truth_text =
        fs::read_to_string(&opts.truth).map_err(|e| failed(format!("reading truths {}: {e}", opts.truth.display())))?;
    let truths = parse_truths_jsonl(&truth_text).map_err(failed)?;

    let first_manifest = read_manifest(&opts.runs[0]);
    let mut eval_cfg = first_manifest.as_ref().map(|m| m.config.eval.clone()).unwrap_or_default();
    if let Some(s) = &opts.synonyms {
        eval_cfg.synonyms = Some(s.clone());
    }
    let dictionary = match &eval_cfg.synonyms {
        Some(p) => DictionaryNormalizer::from_file(p).map_err(|e| CliError::Config(e.to_string()))?,
        None => DictionaryNormalizer::default(),
    };
    let templates;
    let chat;
    let provider_normalizer;
    let normalizer: &dyn Normalizer = match eval_cfg.normalizer {
        NormalizerKind::Dictionary => &dictionary,
        NormalizerKind::Provider => {
            let config: &RunConfig = &first_manifest
                .as_ref()
                .ok_or_else(|| CliError::Config("provider normalizer needs the run manifest's provider config".into()))?
                .config;
            templates = engine::templates(config)?;
            chat = engine::chat_provider(config)?;
            provider_normalizer = ProviderNormalizer::new(chat.as_ref(), &templates);
            &provider_normalizer
        }
    };

    let mut results: Vec<EvalResult> = Vec::with_capacity(opts.runs.len());
    for dir in &opts.runs {
        let reports = read_reports(dir)?;
        if reports.is_empty() {
            return Err(failed(format!("{}: no reports to evaluate", dir.display())));
        }
        let run_id = read_manifest(dir).map(|m| m.run_id).unwrap_or_else(|| {
            dir.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| dir.display().to_string())
        });
        let result = evaluate_run(&run_id, &reports, &truths, normalizer).map_err(|e| failed(format!("{}: {e}", dir.display())))?;
        results.push(result);
    }
    let report = EvalReport {
        aggregate: aggregate(&results).map_err(failed)?,
        runs: results,
    };
    write_json(&opts.out, &report)?;
    Ok(report)
}

/// Plain-text results table.
pub fn format_table(report: &EvalReport) -> String {
    let width = report.runs.iter().map(|r| r.run_id.len()).max().unwrap_or(3).max(3);
    let mut out = format!("{:<width$}  {:>5}  {:>7}  {:>7}\n", "run", "cases", "top1", "top5");
    for r in &report.runs {
        out.push_str(&format!(
            "{:<width$}  {:>5}  {:>6.2}%  {:>6.2}%\n",
            r.run_id,
            r.n_cases,
            100.0 * r.top1,
            100.0 * r.top5
        ));
    }
    let a = &report.aggregate;
    if a.n_runs > 1 {
        out.push_str(&format!(
            "mean over {} runs: top1 {:.2} ± {:.2}, top5 {:.2} ± {:.2}\n",
            a.n_runs, a.mean_top1, a.std_top1, a.mean_top5, a.std_top5
        ));
    }
    out
}
