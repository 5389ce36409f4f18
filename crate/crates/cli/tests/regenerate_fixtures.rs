//! Re-records `fixtures/script.json` and the golden run outputs from the
//! rule-based fixture author. Run after changing templates, agents or the
//! corpus:
//!
//! cargo test -p radar-cli --test regenerate_fixtures -- --ignored

mod common;

use std::fs;
use std::sync::Arc;

use radar_cli::config::RunConfig;
use radar_cli::eval::{cmd_eval, EvalOptions};
use radar_cli::run::{cmd_run, run_with_provider, RunOptions};
use radar_core::provider::RecordingProvider;
use radar_core::trace::Topology;

use common::{fixture, FixtureAuthor};

#[test]
#[ignore = "rewrites checked-in fixtures"]
fn regenerate() {
    let script = fixture("script.json");
    if !script.exists() {
        fs::write(&script, "[]\n").unwrap();
    }
    let recorder = RecordingProvider::new(Arc::new(FixtureAuthor));
    let scratch = tempfile::tempdir().unwrap();
    let record = |config_name: &str, topology: Topology| {
        let mut config = RunConfig::load(fixture(config_name)).unwrap();
        config.topology = topology;
        let opts = RunOptions {
            config: fixture(config_name),
            cases: fixture("cases.jsonl"),
            out: scratch.path().join(format!("{config_name}-{topology}")),
            topology: None,
            paraphrase: None,
        };
        let summary = run_with_provider(&config, &opts, &recorder).unwrap();
        assert!(summary.failures.is_empty(), "{config_name} {topology}: {:?}", summary.failures);
    };
    for t in Topology::ALL {
        record("radar.json", t);
    }
    record("degraded.json", Topology::Radar);
    recorder.write_script(&script).unwrap();

    let golden = fixture("golden");
    fs::create_dir_all(&golden).unwrap();
    let run_dir = scratch.path().join("golden");
    cmd_run(&RunOptions {
        config: fixture("radar.json"),
        cases: fixture("cases.jsonl"),
        out: run_dir.clone(),
        topology: None,
        paraphrase: None,
    })
    .unwrap();
    fs::copy(run_dir.join("reports.jsonl"), golden.join("reports.jsonl")).unwrap();
    cmd_eval(&EvalOptions {
        runs: vec![run_dir],
        truth: fixture("truths.jsonl"),
        out: golden.join("eval.json"),
        synonyms: None,
    })
    .unwrap();
}
