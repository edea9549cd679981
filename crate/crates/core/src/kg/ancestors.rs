use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::sync::Mutex;

use super::endpoint::SparqlEndpoint;
use super::sparql::ENTITY_PREFIX;
use super::{Relation, WordnetSynset};
use crate::error::Result;
use crate::text::casefold;

/// Direct parents of one node, with their English labels.
pub fn parents_sparql(id: &str, relations: &BTreeSet<Relation>) -> String {
    let props: Vec<String> = relations.iter().map(|r| format!("wdt:{}", r.property())).collect();
    format!(
        "PREFIX wdt: <http://www.wikidata.org/prop/direct/>\n\
         PREFIX wd: <http://www.wikidata.org/entity/>\n\
         PREFIX rdfs: <http://www.w3.org/2000/01/rdf-schema#>\n\
         SELECT DISTINCT ?parent ?label WHERE {{\n  wd:{id} {} ?parent .\n  \
         ?parent rdfs:label ?label .\n  FILTER(LANG(?label) = \"en\")\n}}\nORDER BY ?parent\n",
        props.join("|")
    )
}

/// Breadth-first ancestor walk; nearest ancestors first, names deduplicated
/// case-insensitively and the start node's own name excluded.
pub fn ancestor_names(
    start_id: &str,
    start_name: &str,
    max_depth: usize,
    mut parents: impl FnMut(&str) -> Result<Vec<(String, String)>>,
) -> Result<Vec<String>> {
    let mut seen_ids = HashSet::from([start_id.to_string()]);
    let mut seen_names = HashSet::from([casefold(start_name)]);
    let mut out = Vec::new();
    let mut queue = VecDeque::from([(start_id.to_string(), 0usize)]);
    while let Some((id, depth)) = queue.pop_front() {
        if depth >= max_depth {
            continue;
        }
        for (pid, label) in parents(&id)? {
            if !seen_ids.insert(pid.clone()) {
                continue;
            }
            if seen_names.insert(casefold(&label)) {
                out.push(label);
            }
            queue.push_back((pid, depth + 1));
        }
    }
    Ok(out)
}

/// Looks up super-class chains on a SPARQL endpoint, memoizing parent lists.
pub struct AncestorResolver<'a> {
    endpoint: &'a dyn SparqlEndpoint,
    relations: BTreeSet<Relation>,
    max_depth: usize,
    cache: Mutex<HashMap<String, Vec<(String, String)>>>,
}

impl<'a> AncestorResolver<'a> {
    pub fn new(endpoint: &'a dyn SparqlEndpoint, max_depth: usize) -> Self {
        Self {
            endpoint,
            relations: BTreeSet::from([Relation::SubclassOf, Relation::ParentTaxon]),
            max_depth,
            cache: Mutex::new(HashMap::new()),
        }
    }

    fn parents(&self, id: &str) -> Result<Vec<(String, String)>> {
        if let Some(hit) = self.cache.lock().unwrap().get(id) {
            return Ok(hit.clone());
        }
        let doc = self.endpoint.select(&parents_sparql(id, &self.relations))?;
        let mut out = Vec::new();
        if let Some(rows) = doc.pointer("/results/bindings").and_then(|v| v.as_array()) {
            for row in rows {
                let parent =
                    row.pointer("/parent/value").and_then(|v| v.as_str()).and_then(|v| v.strip_prefix(ENTITY_PREFIX));
                let label = row.pointer("/label/value").and_then(|v| v.as_str());
                if let (Some(p), Some(l)) = (parent, label) {
                    out.push((p.to_string(), l.to_string()));
                }
            }
        }
        self.cache.lock().unwrap().insert(id.to_string(), out.clone());
        Ok(out)
    }

    pub fn ancestors(&self, id: &str, name: &str) -> Result<Vec<String>> {
        ancestor_names(id, name, self.max_depth, |n| self.parents(n))
    }
}

/// Hypernym chain for a WordNet entity id (`wn:<synset>`).
pub fn wordnet_ancestors(synsets: &[WordnetSynset], entity_id: &str, name: &str, max_depth: usize) -> Vec<String> {
    let by_id: HashMap<&str, &WordnetSynset> = synsets.iter().map(|s| (s.id.as_str(), s)).collect();
    let start = entity_id.strip_prefix("wn:").unwrap_or(entity_id);
    ancestor_names(start, name, max_depth, |id| {
        Ok(by_id
            .get(id)
            .map(|s| {
                s.hypernyms
                    .iter()
                    .filter_map(|h| by_id.get(h.as_str()))
                    .filter_map(|p| p.lemmas.first().map(|l| (p.id.clone(), l.replace('_', " "))))
                    .collect()
            })
            .unwrap_or_default())
    })
    .unwrap_or_default()
}
