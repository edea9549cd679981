use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use kgharvest::config::PipelineConfig;
use kgharvest::kg::fixture::FixtureGraph;
use kgharvest::mock::{bundled, start_world, MockServer, SyntheticWeb};
use kgharvest::pipeline::{self, dry_run, Layout, Services};
use kgharvest::search::LedgerSnapshot;
use kgharvest::Error;

struct World {
    _dir: tempfile::TempDir,
    server: MockServer,
    cfg: PipelineConfig,
    svc: Services,
}

fn world() -> World {
    let dir = tempfile::tempdir().unwrap();
    let graph = FixtureGraph::from_json(bundled::KG).unwrap();
    let server = start_world(Arc::new(graph.endpoint().unwrap()), Arc::new(SyntheticWeb::default())).unwrap();
    let cfg = dry_run::prepare(dir.path(), &server, 3).unwrap();
    let svc = dry_run::services(&cfg);
    World { _dir: dir, server, cfg, svc }
}

fn until_queries(w: &World) {
    pipeline::extract(&w.cfg, &w.svc).unwrap();
    pipeline::classify(&w.cfg, &w.svc).unwrap();
    pipeline::attrs(&w.cfg, &w.svc).unwrap();
    pipeline::natural_types(&w.cfg, &w.svc).unwrap();
    pipeline::queries(&w.cfg).unwrap();
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn sorted_lines(p: &Path) -> BTreeSet<String> {
    std::fs::read_to_string(p).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn rerunning_a_stage_reproduces_its_outputs() {
    let w = world();
    dry_run::run_stages(&w.cfg, &w.svc).unwrap();
    let l = Layout::new(&w.cfg.paths.root);
    type Stage = Box<dyn Fn(&World)>;
    let stages: Vec<(&str, Vec<std::path::PathBuf>, Stage)> = vec![
        (
            "extract",
            vec![l.entities(), l.profanity_removed()],
            Box::new(|w| drop(pipeline::extract(&w.cfg, &w.svc).unwrap())),
        ),
        (
            "classify",
            vec![l.entities_final(), l.non_visual(), l.undecided()],
            Box::new(|w| drop(pipeline::classify(&w.cfg, &w.svc).unwrap())),
        ),
        ("attrs", vec![l.attributes()], Box::new(|w| drop(pipeline::attrs(&w.cfg, &w.svc).unwrap()))),
        (
            "natural-types",
            vec![l.natural_types()],
            Box::new(|w| drop(pipeline::natural_types(&w.cfg, &w.svc).unwrap())),
        ),
        (
            "queries",
            vec![l.queries(), l.excluded_queries(), l.query_stats()],
            Box::new(|w| drop(pipeline::queries(&w.cfg).unwrap())),
        ),
        (
            "harvest",
            vec![l.harvest().manifest(), l.harvest().failures(), l.harvest().quarantine(), l.harvest().checkpoint()],
            Box::new(|w| drop(pipeline::harvest_stage(&w.cfg, &w.svc).unwrap())),
        ),
        ("curate", vec![l.filtered(), l.filter_report()], Box::new(|w| drop(pipeline::curate_stage(&w.cfg).unwrap()))),
        (
            "dedup",
            vec![l.manifest(), l.dedup_report(), l.clusters(), l.descriptors()],
            Box::new(|w| drop(pipeline::dedup(&w.cfg, &w.svc).unwrap())),
        ),
        ("stats", vec![l.stats_txt(), l.stats_json()], Box::new(|w| drop(pipeline::stats(&w.cfg).unwrap()))),
        (
            "shard",
            vec![l.shards().join("index.jsonl"), l.shards().join("shard-000000.tar")],
            Box::new(|w| drop(pipeline::shard(&w.cfg).unwrap())),
        ),
        ("sample", vec![l.labels()], Box::new(|w| drop(pipeline::sample(&w.cfg).unwrap()))),
        ("eval", vec![l.eval_report()], Box::new(|w| drop(pipeline::eval_stage(&w.cfg).unwrap()))),
    ];
    for (name, outputs, run) in stages {
        let before: Vec<Vec<u8>> = outputs.iter().map(|p| read(p)).collect();
        for p in &outputs {
            std::fs::remove_file(p).unwrap();
        }
        run(&w);
        for (p, old) in outputs.iter().zip(before) {
            assert!(read(p) == old, "{name}: {} changed on rerun", p.display());
        }
    }

    // search appends in completion order, so only the line sets are stable
    let results = sorted_lines(&l.search_results());
    for p in [l.search_results(), l.search_checkpoint(), l.ledger()] {
        std::fs::remove_file(p).unwrap();
    }
    pipeline::search(&w.cfg, &w.svc).unwrap();
    assert_eq!(sorted_lines(&l.search_results()), results);
}

#[test]
fn missing_predecessor_names_the_stage() {
    let w = world();
    let e = pipeline::queries(&w.cfg).unwrap_err();
    assert!(matches!(e, Error::MissingStage { stage: "classify", .. }), "{e}");
    assert!(e.to_string().contains("run the `classify` stage first"));
    let e = pipeline::stats(&w.cfg).unwrap_err();
    assert!(matches!(e, Error::MissingStage { stage: "dedup", .. }), "{e}");
    assert_eq!(w.server.request_count(), 0);
}

fn search_requests(server: &MockServer) -> usize {
    server.requests().iter().filter(|r| r.path.contains("/google/") || r.path.contains("/bing/")).count()
}

fn ledger(cfg: &PipelineConfig) -> LedgerSnapshot {
    serde_json::from_slice(&read(&Layout::new(&cfg.paths.root).ledger())).unwrap()
}

#[test]
fn zero_budget_makes_no_calls() {
    let mut w = world();
    until_queries(&w);
    w.server.clear_log();
    w.cfg.search.budget_usd = 0.0;
    let r = pipeline::search(&w.cfg, &w.svc).unwrap();
    assert_eq!(search_requests(&w.server), 0);
    assert!(!r.partial);
    assert_eq!(r.counts["completed"], 0);
    assert_eq!(ledger(&w.cfg), LedgerSnapshot::default());
}

#[test]
fn budget_stop_then_resume_completes_without_repeats() {
    let mut w = world();
    until_queries(&w);
    let l = Layout::new(&w.cfg.paths.root);
    w.cfg.search.budget_usd = 0.30;
    w.server.clear_log();
    let first = pipeline::search(&w.cfg, &w.svc).unwrap();
    let spent = ledger(&w.cfg);
    assert!(spent.total_usd <= 0.30 + 1e-9, "{spent:?}");
    assert!(first.counts["not_attempted"] > 0);
    assert_eq!(search_requests(&w.server) as u64, spent.google_calls + spent.bing_calls);
    let partial_results = sorted_lines(&l.search_results()).len();

    w.cfg.search.budget_usd = 100.0;
    let second = pipeline::search(&w.cfg, &w.svc).unwrap();
    assert_eq!(second.counts["already_complete"], first.counts["completed"]);
    assert_eq!(second.counts["already_complete"] + second.counts["completed"], second.counts["queries"]);
    let total = ledger(&w.cfg);
    assert_eq!(search_requests(&w.server) as u64, total.google_calls + total.bing_calls);
    let lines = std::fs::read_to_string(l.search_results()).unwrap();
    assert_eq!(lines.lines().count(), sorted_lines(&l.search_results()).len(), "duplicate result lines");
    assert!(lines.lines().count() > partial_results);

    w.server.clear_log();
    let third = pipeline::search(&w.cfg, &w.svc).unwrap();
    assert_eq!(third.counts["completed"], 0);
    assert_eq!(search_requests(&w.server), 0);
}

#[test]
fn harvest_keeps_one_request_per_host_spaced_by_the_delay() {
    let mut w = world();
    until_queries(&w);
    pipeline::search(&w.cfg, &w.svc).unwrap();
    // keep the run short: a slice of the results, a visible delay
    let l = Layout::new(&w.cfg.paths.root);
    let text = std::fs::read_to_string(l.search_results()).unwrap();
    let slice: String = text.lines().take(15).map(|s| format!("{s}\n")).collect();
    std::fs::write(l.search_results(), slice).unwrap();
    let delay = Duration::from_millis(30);
    w.cfg.harvest.host_delay_ms = delay.as_millis() as u64;
    w.server.clear_log();
    pipeline::harvest_stage(&w.cfg, &w.svc).unwrap();

    let log = w.server.requests();
    let hosts: BTreeSet<&str> = log.iter().map(|r| r.host.as_str()).collect();
    assert!(hosts.len() >= 2, "{hosts:?}");
    let slack = Duration::from_millis(3);
    for host in hosts {
        let mut reqs: Vec<_> = log.iter().filter(|r| r.host == host).collect();
        reqs.sort_by_key(|r| r.at);
        for pair in reqs.windows(2) {
            assert!(pair[1].at >= pair[0].finished, "{host}: overlapping requests");
            assert!(pair[1].at + slack >= pair[0].at + delay, "{host}: starts {:?} apart", pair[1].at - pair[0].at);
        }
    }
}
