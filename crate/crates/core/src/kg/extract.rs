use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::endpoint::SparqlEndpoint;
use super::sparql::{parse_entity_rows, SparqlQuery};
use super::{clean_aliases, sort_catalog, Domain, Entity, EntitySource, ExtractionConfig};
use crate::error::Result;

#[derive(Debug, Clone, Default)]
pub struct ExtractionReport {
    pub entities: Vec<Entity>,
    pub skipped_rows: usize,
    pub requests: usize,
}

/// Walk the configured hierarchy below every super-entity and return the
/// merged catalog, sorted by sitelinks descending then id.
///
/// One paged query is issued per super-entity so each entity can record
/// which super-entities it was reached from. Pages are fetched sequentially
/// until a short page comes back.
pub fn extract_entities(config: &ExtractionConfig, endpoint: &dyn SparqlEndpoint) -> Result<ExtractionReport> {
    config.validate()?;
    let domains: HashMap<&str, Domain> =
        config.super_entities.iter().map(|s| (s.identifier.as_str(), s.domain_tag)).collect();

    let mut merged: BTreeMap<String, (Entity, Vec<String>)> = BTreeMap::new();
    let mut report = ExtractionReport::default();

    for sup in &config.super_entities {
        let mut offset = 0;
        loop {
            let query = SparqlQuery::new(&[&sup.identifier], config.min_sitelinks, &sup.relations)?
                .paged(config.page_size, offset);
            let doc = endpoint.select(&query.to_string())?;
            report.requests += 1;
            let (rows, skipped) = parse_entity_rows(&doc)?;
            report.skipped_rows += skipped;
            let page_len = rows.len() + skipped;
            for row in rows {
                if row.sitelinks < config.min_sitelinks {
                    continue;
                }
                let (entity, raw_aliases) = merged.entry(row.id.clone()).or_insert_with(|| {
                    (
                        Entity {
                            identifier: row.id.clone(),
                            name: row.label.clone(),
                            description: None,
                            sitelinks: row.sitelinks,
                            aliases: Vec::new(),
                            super_entities: BTreeSet::new(),
                            natural_type: None,
                            natural_type_reason: None,
                            is_living: false,
                            source: EntitySource::Wikidata,
                        },
                        Vec::new(),
                    )
                });
                if entity.description.is_none() {
                    entity.description = row.description;
                }
                entity.super_entities.insert(sup.identifier.clone());
                raw_aliases.extend(row.aliases);
            }
            if page_len < config.page_size {
                break;
            }
            offset += config.page_size;
        }
    }

    if report.skipped_rows > 0 {
        log::warn!("skipped {} malformed SPARQL rows", report.skipped_rows);
    }

    let mut entities: Vec<Entity> = merged
        .into_values()
        .map(|(mut e, raw)| {
            e.aliases = clean_aliases(&e.name, raw.iter().map(String::as_str));
            e.is_living = !e.super_entities.is_empty()
                && e.super_entities.iter().all(|s| domains.get(s.as_str()) == Some(&Domain::Living));
            e
        })
        .collect();
    sort_catalog(&mut entities);
    report.entities = entities;
    Ok(report)
}
