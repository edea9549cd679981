//! Walk a small in-memory knowledge graph and list the entities found below
//! each super-entity.
//!
//! `cargo run --example extract_entities -- [min_sitelinks]`

use kgharvest::kg::fixture::FixtureGraph;
use kgharvest::kg::{build_sparql, extract_entities, ExtractionConfig, SuperEntity};
use kgharvest::mock::bundled;

fn main() -> kgharvest::Result<()> {
    let min_sitelinks = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let endpoint = FixtureGraph::from_json(bundled::KG)?.endpoint()?;
    let supers: Vec<SuperEntity> =
        serde_json::from_str::<Vec<SuperEntity>>(bundled::SUPER_ENTITIES)?.into_iter().filter(|s| s.include).collect();

    let first = &supers[0];
    println!("query for {} ({}):", first.name, first.identifier);
    println!("{}\n", build_sparql(&[&first.identifier], min_sitelinks, &first.relations)?);

    let config = ExtractionConfig { min_sitelinks, super_entities: supers, ..ExtractionConfig::default() };
    let report = extract_entities(&config, &endpoint)?;
    println!(
        "{} entities from {} requests ({} rows skipped)",
        report.entities.len(),
        report.requests,
        report.skipped_rows
    );
    for e in report.entities.iter().take(15) {
        let supers: Vec<&str> = e.super_entities.iter().map(String::as_str).collect();
        println!(
            "  {:<8} {:<24} sitelinks {:>4}  {:?}  below {}",
            e.identifier,
            e.name,
            e.sitelinks,
            e.domain(),
            supers.join(",")
        );
    }
    Ok(())
}
