//! Final dataset manifest, tar shards, and per-query-set statistics.

mod shards;
mod stats;

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::curate::CuratedRecord;
use crate::error::{Error, Result};
use crate::kg::Entity;
use crate::query::{QueryKind, SearchQuery};

pub use shards::{read_shards, write_shards, ShardIndexEntry, ShardOutcome, DEFAULT_SHARD_SIZE};
pub use stats::{compute_stats, format_ratio_alt, format_ratio_images, ManifestStats, StatsRow};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordQuery {
    pub query_id: String,
    pub text: String,
    pub kind: QueryKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity_id: Option<String>,
}

/// Knowledge-graph texts of one linked entity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KgText {
    pub entity_id: String,
    pub name: String,
    pub aliases: Vec<String>,
    /// Entity description, then the natural-type reason, when present.
    pub descriptions: Vec<String>,
}

impl KgText {
    pub fn of(e: &Entity) -> Self {
        let descriptions = e
            .description
            .iter()
            .chain(e.natural_type_reason.iter())
            .map(|s| s.trim())
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        Self { entity_id: e.identifier.clone(), name: e.name.clone(), aliases: e.aliases.clone(), descriptions }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub path: String,
    pub width: u32,
    pub height: u32,
    pub alt_texts: Vec<String>,
    pub entity_ids: Vec<String>,
    pub search_queries: Vec<RecordQuery>,
    pub kg_texts: Vec<KgText>,
    pub excluded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exclusion_reason: Option<String>,
}

/// Join curated images with the query and entity catalogs. Queries that
/// are not in the catalog are a contract violation.
pub fn assemble(records: &[CuratedRecord], queries: &[SearchQuery], entities: &[Entity]) -> Result<Vec<DatasetRecord>> {
    let qmap: HashMap<&str, &SearchQuery> = queries.iter().map(|q| (q.id.as_str(), q)).collect();
    let emap: HashMap<&str, &Entity> = entities.iter().map(|e| (e.identifier.as_str(), e)).collect();
    records
        .iter()
        .map(|r| {
            let mut search_queries = Vec::new();
            let mut entity_ids: Vec<String> = Vec::new();
            for qid in &r.image.query_refs {
                let q = qmap
                    .get(qid.as_str())
                    .ok_or_else(|| Error::Contract(format!("image {} references unknown query {qid}", r.image.id)))?;
                search_queries.push(RecordQuery {
                    query_id: q.id.clone(),
                    text: q.text.clone(),
                    kind: q.kind,
                    entity_id: q.entity_id.clone(),
                });
                for o in &q.origins {
                    if emap.contains_key(o.entity_id.as_str()) && !entity_ids.contains(&o.entity_id) {
                        entity_ids.push(o.entity_id.clone());
                    }
                }
            }
            let kg_texts = entity_ids.iter().map(|id| KgText::of(emap[id.as_str()])).collect();
            Ok(DatasetRecord {
                id: r.image.id.clone(),
                path: r.image.path.clone(),
                width: r.image.width,
                height: r.image.height,
                alt_texts: r.image.alt_texts.clone(),
                entity_ids,
                search_queries,
                kg_texts,
                excluded: r.excluded,
                exclusion_reason: r.exclusion_reason.clone(),
            })
        })
        .collect()
}

/// Dangling references: entity ids missing from the catalog, query texts
/// missing from the query catalog, and excluded records without a reason.
pub fn validate_manifest(records: &[DatasetRecord], entities: &[Entity], queries: &[SearchQuery]) -> Vec<String> {
    let ents: HashSet<&str> = entities.iter().map(|e| e.identifier.as_str()).collect();
    let texts: HashSet<&str> = queries.iter().map(|q| q.text.as_str()).collect();
    let mut problems = Vec::new();
    for r in records {
        for e in &r.entity_ids {
            if !ents.contains(e.as_str()) {
                problems.push(format!("{}: unknown entity {e}", r.id));
            }
        }
        for q in &r.search_queries {
            if !texts.contains(q.text.as_str()) {
                problems.push(format!("{}: unknown query `{}`", r.id, q.text));
            }
        }
        if r.excluded && r.exclusion_reason.as_deref().is_none_or(str::is_empty) {
            problems.push(format!("{}: excluded without a reason", r.id));
        }
    }
    problems
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::harvest::ImageRecord;
    use crate::kg::{Domain, EntitySource};
    use crate::query::{AttributeRef, QueryOrigin};
    use std::collections::BTreeSet;

    pub(crate) fn entity(id: &str, name: &str, aliases: &[&str], living: bool) -> Entity {
        Entity {
            identifier: id.into(),
            name: name.into(),
            description: Some(format!("a {name}")),
            sitelinks: 50,
            aliases: aliases.iter().map(|s| s.to_string()).collect(),
            super_entities: BTreeSet::new(),
            natural_type: None,
            natural_type_reason: None,
            is_living: living,
            source: EntitySource::Wikidata,
        }
    }

    pub(crate) fn query(text: &str, kind: QueryKind, entity: &str, domain: Domain, attr: Option<&str>) -> SearchQuery {
        let attribute =
            attr.map(|v| AttributeRef { category: crate::attrs::AttributeCategory::Other, value: v.into() });
        SearchQuery::new(
            text,
            kind,
            (kind != QueryKind::NaturalTypeAttribute).then(|| entity.to_string()),
            attribute.clone(),
            domain,
            QueryOrigin { entity_id: entity.into(), attribute },
        )
    }

    pub(crate) fn image(id: &str, alts: &[&str], queries: &[&SearchQuery]) -> CuratedRecord {
        CuratedRecord::new(ImageRecord {
            id: id.into(),
            image_url: format!("http://x.test/{id}"),
            page_url: "http://x.test/".into(),
            width: 100,
            height: 100,
            byte_size: 10,
            content_hash: format!("{id:0<64}"),
            path: format!("images/00/{id}.png"),
            alt_texts: alts.iter().map(|s| s.to_string()).collect(),
            query_refs: queries.iter().map(|q| q.id.clone()).collect(),
            result_ids: vec![],
            sources: vec![],
            fetched_at: chrono::DateTime::from_timestamp(0, 0).unwrap(),
        })
    }

    #[test]
    fn assemble_links_back() {
        let mut wolf = entity("Q1", "wolf", &["grey wolf"], true);
        wolf.natural_type_reason = Some("wolves are animals".into());
        let q1 = query("wolf", QueryKind::Entity, "Q1", Domain::Living, None);
        let q2 = query("animal in the snow", QueryKind::NaturalTypeAttribute, "Q1", Domain::Living, Some("snow"));
        let recs = vec![image("a", &["a wolf"], &[&q1, &q2])];
        let out = assemble(&recs, &[q1.clone(), q2.clone()], &[wolf.clone()]).unwrap();
        assert_eq!(out[0].entity_ids, vec!["Q1"]);
        assert_eq!(out[0].kg_texts[0].descriptions, vec!["a wolf", "wolves are animals"]);
        assert_eq!(out[0].search_queries[1].kind, QueryKind::NaturalTypeAttribute);
        assert!(validate_manifest(&out, &[wolf.clone()], &[q1.clone(), q2]).is_empty());
        assert_eq!(validate_manifest(&out, &[], &[q1]).len(), 2);
        assert!(assemble(&recs, &[], &[wolf]).is_err());
    }
}
