use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use radar_cli::eval::{cmd_eval, format_table, EvalOptions};
use radar_cli::kb::{cmd_fetch, cmd_stats, format_stats};
use radar_cli::run::{cmd_run, RunOptions};
use radar_cli::CliError;
use radar_core::trace::Topology;

#[derive(Parser)]
#[command(name = "radar", version, about = "Retrieval-augmented multi-agent diagnosis runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Diagnose every case in a JSONL file with one topology.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        cases: PathBuf,
        /// Run directory; its name becomes the run id.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the topology in the config.
        #[arg(long)]
        topology: Option<Topology>,
        /// Only run cases with this paraphrase id.
        #[arg(long)]
        paraphrase: Option<u32>,
    },
    /// Score one or more run directories against ground truth.
    Eval {
        #[arg(long = "run", required = true, num_args = 1..)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        synonyms: Option<PathBuf>,
    },
    /// Manage the persisted knowledge base.
    Kb {
        #[command(subcommand)]
        command: KbCommand,
    },
}

#[derive(Subcommand)]
enum KbCommand {
    /// Fetch and index documents for keywords ahead of a run.
    Fetch {
        #[arg(long = "keyword", required = true, num_args = 1..)]
        keywords: Vec<String>,
        #[arg(long)]
        config: PathBuf,
    },
    Stats {
        #[arg(long)]
        config: PathBuf,
    },
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            config,
            cases,
            out,
            topology,
            paraphrase,
        } => {
            let summary = cmd_run(&RunOptions {
                config,
                cases,
                out,
                topology,
                paraphrase,
            })?;
            println!(
                "run {}: {}/{} cases diagnosed, output in {}",
                summary.run_id,
                summary.reports,
                summary.case_count,
                summary.out.display()
            );
            for f in &summary.failures {
                eprintln!("failed {} ({}): {}", f.case_id, f.trace_id, f.error);
            }
            if !summary.failures.is_empty() {
                return Err(CliError::Failed(format!("{} case(s) aborted", summary.failures.len())));
            }
            Ok(())
        }
        Command::Eval {
            runs,
            truth,
            out,
            synonyms,
        } => {
            let report = cmd_eval(&EvalOptions {
                runs,
                truth,
                out,
                synonyms,
            })?;
            print!("{}", format_table(&report));
            Ok(())
        }
        Command::Kb { command } => match command {
            KbCommand::Fetch { keywords, config } => {
                let summary = cmd_fetch(&config, &keywords)?;
                for o in &summary.outcomes {
                    println!("{}: {:?}, {} new documents", o.keyword, o.hit, o.new_docs);
                }
                print!("{}", format_stats(&summary.stats));
                if summary.failures.is_empty() {
                    Ok(())
                } else {
                    for (k, e) in &summary.failures {
                        eprintln!("{k}: {e}");
                    }
                    Err(CliError::Failed(format!("{} keyword(s) could not be fetched", summary.failures.len())))
                }
            }
            KbCommand::Stats { config } => {
                print!("{}", format_stats(&cmd_stats(&config)?));
                Ok(())
            }
        },
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
