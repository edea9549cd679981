//! Send a few queries to the local mock search APIs under a dollar cap, then
//! download the images and collect alt texts from the pages that embed them.

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Duration;

use kgharvest::harvest::{harvest, HarvestConfig, HarvestPaths};
use kgharvest::http::{ClientConfig, HttpClient, UreqClient};
use kgharvest::kg::fixture::FixtureGraph;
use kgharvest::kg::{Entity, EntitySource};
use kgharvest::mock::{bundled, start_world, SyntheticWeb};
use kgharvest::query::{assign_engines, entity_queries};
use kgharvest::search::{
    dispatch, read_results, BingEngine, CostLedger, DispatchConfig, Engine, GoogleEngine, ImageSearchEngine,
    SearchClient,
};

fn entity(id: &str, name: &str, living: bool) -> Entity {
    Entity {
        identifier: id.into(),
        name: name.into(),
        description: None,
        sitelinks: 100,
        aliases: vec![],
        super_entities: BTreeSet::new(),
        natural_type: None,
        natural_type_reason: None,
        is_living: living,
        source: EntitySource::Wikidata,
    }
}

fn main() -> kgharvest::Result<()> {
    let server =
        start_world(Arc::new(FixtureGraph::from_json(bundled::KG)?.endpoint()?), Arc::new(SyntheticWeb::default()))?;
    let dir = tempfile::tempdir()?;

    let entities = vec![entity("Q19939", "tiger", true), entity("Q1420", "car", false), entity("Q870", "train", false)];
    let mut queries: Vec<_> = entities.iter().flat_map(entity_queries).collect();
    assign_engines(&mut queries, Engine::Bing, Some(Engine::Google));

    let http: Arc<dyn HttpClient> = Arc::new(UreqClient::new(ClientConfig::default()));
    let ledger = Arc::new(CostLedger::new().with_cap_usd(0.50));
    let client =
        SearchClient::new(http.clone(), ledger.clone()).with_qps(Engine::Bing, 0.0).with_qps(Engine::Google, 0.0);
    let bing = BingEngine::new(server.bing_url(), "example-key");
    let google = GoogleEngine::new(server.google_url(), "example-key", "example-cx");
    let engines: [&dyn ImageSearchEngine; 2] = [&bing, &google];
    let results_path = dir.path().join("results.jsonl");
    let report = dispatch(
        &queries,
        &entities,
        &engines,
        &client,
        &DispatchConfig { workers: 2, ..DispatchConfig::default() },
        &results_path,
        &dir.path().join("checkpoint.jsonl"),
    )?;
    println!(
        "search: {} queries, {} requests, {} results, spent {} (bing {} calls, google {} calls)",
        report.completed,
        report.requests,
        report.results,
        ledger.total_usd(),
        ledger.calls(Engine::Bing),
        ledger.calls(Engine::Google)
    );

    let results = read_results(&results_path)?;
    let config = HarvestConfig { workers: 8, host_delay: Duration::from_millis(20), ..HarvestConfig::default() };
    let out = harvest(&results, http.as_ref(), &config, &HarvestPaths::new(dir.path().join("harvest")))?;
    println!(
        "harvest: {} images, {} failures, {} quarantined from {} results",
        out.records.len(),
        out.failures.len(),
        out.quarantined.len(),
        out.input_results
    );
    for r in out.records.iter().take(6) {
        println!("  {} {}x{} {:?}", r.image_url, r.width, r.height, r.alt_texts);
    }
    Ok(())
}
