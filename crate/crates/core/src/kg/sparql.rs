use std::collections::BTreeSet;
use std::fmt::{self, Write as _};

use serde_json::Value;

use super::{is_node_id, Relation};
use crate::error::{Error, Result};

pub const ENTITY_PREFIX: &str = "http://www.wikidata.org/entity/";

const PREFIXES: &str = "\
PREFIX wdt: <http://www.wikidata.org/prop/direct/>
PREFIX wd: <http://www.wikidata.org/entity/>
PREFIX rdfs: <http://www.w3.org/2000/01/rdf-schema#>
PREFIX schema: <http://schema.org/>
PREFIX wikibase: <http://wikiba.se/ontology#>
PREFIX skos: <http://www.w3.org/2004/02/skos/core#>
";

/// The entity-extraction query. `Display` renders the SPARQL text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparqlQuery {
    pub super_entities: Vec<String>,
    pub min_sitelinks: u64,
    pub relations: BTreeSet<Relation>,
    /// `(limit, offset)`; paged queries also order ties by entity id.
    pub page: Option<(usize, usize)>,
}

impl SparqlQuery {
    pub fn new(super_entities: &[impl AsRef<str>], min_sitelinks: u64, relations: &BTreeSet<Relation>) -> Result<Self> {
        if super_entities.is_empty() {
            return Err(Error::Config("SPARQL query needs at least one super-entity".into()));
        }
        if relations.is_empty() {
            return Err(Error::Config("SPARQL query needs at least one relation".into()));
        }
        let ids: Vec<String> = super_entities.iter().map(|s| s.as_ref().to_string()).collect();
        if let Some(bad) = ids.iter().find(|id| !is_node_id(id)) {
            return Err(Error::Config(format!("invalid node id `{bad}`")));
        }
        Ok(Self { super_entities: ids, min_sitelinks, relations: relations.clone(), page: None })
    }

    pub fn paged(mut self, limit: usize, offset: usize) -> Self {
        self.page = Some((limit, offset));
        self
    }

    fn property_path(&self) -> String {
        let props: Vec<String> = self.relations.iter().map(|r| format!("wdt:{}", r.property())).collect();
        if props.len() == 1 {
            format!("{}*", props[0])
        } else {
            format!("({})*", props.join("|"))
        }
    }
}

impl fmt::Display for SparqlQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let values = self.super_entities.iter().map(|id| format!("wd:{id}")).collect::<Vec<_>>().join(" ");
        let mut q = String::from(PREFIXES);
        q.push_str(
            "SELECT DISTINCT\n  ?ent\n  ?label\n  ?desc\n  ?links\n  \
             (GROUP_CONCAT(DISTINCT ?alias; SEPARATOR=\";;\") AS ?aliases)\nWHERE {\n",
        );
        let _ = writeln!(q, "  VALUES ?typ {{ {values} }}");
        let _ = writeln!(q, "  ?ent {} ?typ .", self.property_path());
        q.push_str("  ?ent rdfs:label ?label .\n  FILTER(LANG(?label) = \"en\")\n");
        q.push_str("  ?ent ^schema:about/wikibase:sitelinks ?links .\n");
        let _ = writeln!(q, "  FILTER(?links >= {})", self.min_sitelinks);
        q.push_str("  OPTIONAL {\n    ?ent schema:description ?desc .\n    FILTER(LANG(?desc) = \"en\")\n  }\n");
        q.push_str("  OPTIONAL {\n    ?ent skos:altLabel ?alias .\n    FILTER(LANG(?alias) = \"en\")\n  }\n}\n");
        q.push_str("GROUP BY ?ent ?label ?desc ?links\n");
        match self.page {
            None => q.push_str("ORDER BY DESC(?links)\n"),
            Some((limit, offset)) => {
                let _ = write!(q, "ORDER BY DESC(?links) ASC(?ent)\nLIMIT {limit}\nOFFSET {offset}\n");
            }
        }
        f.write_str(&q)
    }
}

/// Render the extraction query for the given super-entities.
pub fn build_sparql(
    super_entities: &[impl AsRef<str>],
    min_sitelinks: u64,
    relations: &BTreeSet<Relation>,
) -> Result<String> {
    Ok(SparqlQuery::new(super_entities, min_sitelinks, relations)?.to_string())
}

/// One row of the extraction query's result set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityRow {
    pub id: String,
    pub label: String,
    pub description: Option<String>,
    pub sitelinks: u64,
    pub aliases: Vec<String>,
}

fn binding<'a>(row: &'a Value, var: &str) -> Option<&'a str> {
    row.get(var)?.get("value")?.as_str()
}

/// Parse SPARQL JSON results into rows. Malformed rows are skipped and
/// counted; a document without `results.bindings` is a schema error.
pub fn parse_entity_rows(doc: &Value) -> Result<(Vec<EntityRow>, usize)> {
    let bindings = doc
        .pointer("/results/bindings")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Schema("SPARQL response without results.bindings".into()))?;
    let mut rows = Vec::with_capacity(bindings.len());
    let mut skipped = 0;
    for row in bindings {
        match parse_row(row) {
            Some(r) => rows.push(r),
            None => {
                log::warn!("skipping malformed SPARQL row: {row}");
                skipped += 1;
            }
        }
    }
    Ok((rows, skipped))
}

fn parse_row(row: &Value) -> Option<EntityRow> {
    let id = binding(row, "ent")?.strip_prefix(ENTITY_PREFIX)?.to_string();
    if !is_node_id(&id) {
        return None;
    }
    let label = binding(row, "label")?.to_string();
    let sitelinks = binding(row, "links")?.trim().parse::<u64>().ok()?;
    let description = binding(row, "desc").map(str::to_string).filter(|d| !d.trim().is_empty());
    let aliases = binding(row, "aliases").map(|raw| raw.split(";;").map(str::to_string).collect()).unwrap_or_default();
    Some(EntityRow { id, label, description, sitelinks, aliases })
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG: &str = r#"PREFIX wdt: <http://www.wikidata.org/prop/direct/>
PREFIX wd: <http://www.wikidata.org/entity/>
PREFIX rdfs: <http://www.w3.org/2000/01/rdf-schema#>
PREFIX schema: <http://schema.org/>
PREFIX wikibase: <http://wikiba.se/ontology#>
PREFIX skos: <http://www.w3.org/2004/02/skos/core#>
SELECT DISTINCT
  ?ent
  ?label
  ?desc
  ?links
  (GROUP_CONCAT(DISTINCT ?alias; SEPARATOR=";;") AS ?aliases)
WHERE {
  VALUES ?typ { wd:Q42889 }
  ?ent wdt:P279* ?typ .
  ?ent rdfs:label ?label .
  FILTER(LANG(?label) = "en")
  ?ent ^schema:about/wikibase:sitelinks ?links .
  FILTER(?links >= 5)
  OPTIONAL {
    ?ent schema:description ?desc .
    FILTER(LANG(?desc) = "en")
  }
  OPTIONAL {
    ?ent skos:altLabel ?alias .
    FILTER(LANG(?alias) = "en")
  }
}
GROUP BY ?ent ?label ?desc ?links
ORDER BY DESC(?links)
"#;

    fn subclass() -> BTreeSet<Relation> {
        BTreeSet::from([Relation::SubclassOf])
    }

    #[test]
    fn vehicle_query_matches_reference_text() {
        assert_eq!(build_sparql(&["Q42889"], 5, &subclass()).unwrap(), FIG);
    }

    #[test]
    fn threshold_passes_through() {
        let q = build_sparql(&["Q42889"], 0, &subclass()).unwrap();
        assert_eq!(q, FIG.replace("?links >= 5", "?links >= 0"));
    }

    #[test]
    fn living_relations_alternate() {
        let both = BTreeSet::from([Relation::SubclassOf, Relation::ParentTaxon]);
        let q = build_sparql(&["Q729", "Q756"], 5, &both).unwrap();
        assert!(q.contains("VALUES ?typ { wd:Q729 wd:Q756 }"));
        assert!(q.contains("?ent (wdt:P279|wdt:P171)* ?typ ."));
    }

    #[test]
    fn empty_list_is_config_error() {
        let none: [&str; 0] = [];
        assert!(matches!(build_sparql(&none, 5, &subclass()), Err(Error::Config(_))));
        assert!(build_sparql(&["vehicle"], 5, &subclass()).is_err());
    }

    #[test]
    fn paged_query_orders_ties() {
        let q = SparqlQuery::new(&["Q1"], 1, &subclass()).unwrap().paged(100, 200).to_string();
        assert!(q.ends_with("ORDER BY DESC(?links) ASC(?ent)\nLIMIT 100\nOFFSET 200\n"));
    }

    #[test]
    fn rows_parse_and_malformed_are_counted() {
        let doc = serde_json::json!({"results": {"bindings": [
            {"ent": {"type": "uri", "value": "http://www.wikidata.org/entity/Q1420"},
             "label": {"value": "motor car"}, "links": {"value": "237"},
             "aliases": {"value": "auto;; car ;;"}},
            {"ent": {"type": "uri", "value": "http://example.org/x"},
             "label": {"value": "bad"}, "links": {"value": "3"}},
            {"ent": {"type": "uri", "value": "http://www.wikidata.org/entity/Q2"},
             "label": {"value": "no links"}},
        ]}});
        let (rows, skipped) = parse_entity_rows(&doc).unwrap();
        assert_eq!(skipped, 2);
        assert_eq!(rows[0].id, "Q1420");
        assert_eq!(rows[0].sitelinks, 237);
        assert_eq!(rows[0].aliases, vec!["auto", " car ", ""]);
    }
}
