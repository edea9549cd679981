use std::path::Path;
use std::process::{Command, Output};
use std::sync::Arc;

use kgharvest::kg::fixture::FixtureGraph;
use kgharvest::mock::{bundled, start_world, SyntheticWeb};
use kgharvest::pipeline::{self, dry_run};

fn kgharvest(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kgharvest")).args(args).current_dir(cwd).env("RUST_LOG", "warn").output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(kgharvest(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(kgharvest(&["--help"], dir.path()).status.code(), Some(0));
    let o = kgharvest(&["-c", "absent.toml", "stats"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("absent.toml"));
}

#[test]
fn invalid_config_names_each_field() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "[search]\nworkers = 0\nbudget_usd = -1.0\n").unwrap();
    let o = kgharvest(&["-c", "bad.toml", "queries"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("search.workers"), "{err}");
    assert!(err.contains("search.budget_usd"), "{err}");
}

#[test]
fn missing_stage_exits_1_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("k.toml"), "[paths]\nroot = \"run\"\n").unwrap();
    let o = kgharvest(&["-c", "k.toml", "curate"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("run the `harvest` stage first"), "{}", stderr(&o));
}

#[test]
fn dry_run_then_stats_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let o = kgharvest(&["dry-run", "--out", "out"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let stats_path = dir.path().join("out/run/dataset/stats.txt");
    std::fs::remove_file(&stats_path).unwrap();

    let o = kgharvest(&["-c", "out/dry-run.toml", "stats"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let golden =
        std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/dry_run_stats.txt")).unwrap();
    assert_eq!(std::fs::read_to_string(&stats_path).unwrap(), golden);
    let stdout = String::from_utf8(o.stdout).unwrap();
    for line in golden.lines() {
        assert!(stdout.contains(line), "missing from output: {line}");
    }

    let o = kgharvest(&["-c", "out/dry-run.toml", "--json", "sample"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["stage"], "sample");
}

#[test]
fn zero_budget_search_makes_no_calls() {
    let dir = tempfile::tempdir().unwrap();
    let graph = FixtureGraph::from_json(bundled::KG).unwrap();
    let server = start_world(Arc::new(graph.endpoint().unwrap()), Arc::new(SyntheticWeb::default())).unwrap();
    let cfg = dry_run::prepare(dir.path(), &server, 0).unwrap();
    let svc = dry_run::services(&cfg);
    pipeline::extract(&cfg, &svc).unwrap();
    pipeline::classify(&cfg, &svc).unwrap();
    pipeline::attrs(&cfg, &svc).unwrap();
    pipeline::natural_types(&cfg, &svc).unwrap();
    pipeline::queries(&cfg).unwrap();
    server.clear_log();

    let o = kgharvest(&["-c", "dry-run.toml", "search", "--budget-usd", "0"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(server.request_count(), 0);
}
