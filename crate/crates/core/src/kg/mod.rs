//! Knowledge-graph side of the pipeline: super-entity configuration, SPARQL
//! generation, hierarchy traversal and the filtered entity catalog.

mod ancestors;
mod classify;
mod endpoint;
mod extract;
pub mod fixture;
mod profanity;
mod sparql;
mod wordnet;

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::casefold;

pub use ancestors::{ancestor_names, parents_sparql, wordnet_ancestors, AncestorResolver};
pub use classify::{classify_visual, Partition, VerdictCache};
pub use endpoint::{HttpSparqlEndpoint, OxigraphEndpoint, SparqlEndpoint};
pub use extract::{extract_entities, ExtractionReport};
pub use profanity::{apply_profanity_filter, Blocklist, ProfanityRemoval};
pub use sparql::{build_sparql, parse_entity_rows, EntityRow, SparqlQuery, ENTITY_PREFIX};
pub use wordnet::{import_wordnet_living, WordnetExclusions, WordnetSynset};

const BUNDLED_SUPER_ENTITIES: &str = include_str!("../../data/super_entities.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    SubclassOf,
    ParentTaxon,
}

impl Relation {
    pub fn property(self) -> &'static str {
        match self {
            Relation::SubclassOf => "P279",
            Relation::ParentTaxon => "P171",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Living,
    World,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Living => "living",
            Domain::World => "world",
        })
    }
}

/// `Q` followed by a positive decimal number without leading zeros.
pub fn is_node_id(id: &str) -> bool {
    let Some(digits) = id.strip_prefix('Q') else {
        return false;
    };
    !digits.is_empty() && !digits.starts_with('0') && digits.bytes().all(|b| b.is_ascii_digit())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuperEntity {
    pub identifier: String,
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub relations: BTreeSet<Relation>,
    pub domain_tag: Domain,
    /// Bundled lists also carry the excluded (non-visual) super-entities.
    #[serde(default = "default_true")]
    pub include: bool,
}

fn default_true() -> bool {
    true
}

impl SuperEntity {
    pub fn new(identifier: &str, name: &str, domain_tag: Domain) -> Self {
        let relations = match domain_tag {
            Domain::Living => BTreeSet::from([Relation::SubclassOf, Relation::ParentTaxon]),
            Domain::World => BTreeSet::from([Relation::SubclassOf]),
        };
        Self {
            identifier: identifier.to_string(),
            name: name.to_string(),
            description: String::new(),
            relations,
            domain_tag,
            include: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !is_node_id(&self.identifier) {
            return Err(Error::Config(format!(
                "super-entity `{}` has invalid node id `{}`",
                self.name, self.identifier
            )));
        }
        if self.relations.is_empty() {
            return Err(Error::Config(format!("super-entity {} has no relations", self.identifier)));
        }
        if self.relations.contains(&Relation::ParentTaxon) && self.domain_tag != Domain::Living {
            return Err(Error::Config(format!(
                "super-entity {} uses parent_taxon outside the living domain",
                self.identifier
            )));
        }
        Ok(())
    }
}

/// The bundled include/exclude super-entity list.
pub fn bundled_super_entities() -> Vec<SuperEntity> {
    serde_json::from_str(BUNDLED_SUPER_ENTITIES).expect("bundled super-entity list is valid")
}

pub fn load_super_entities(path: &Path) -> Result<Vec<SuperEntity>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    let list: Vec<SuperEntity> =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    for s in &list {
        s.validate()?;
    }
    Ok(list)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntitySource {
    Wikidata,
    Wordnet,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub identifier: String,
    pub name: String,
    pub description: Option<String>,
    pub sitelinks: u64,
    pub aliases: Vec<String>,
    pub super_entities: BTreeSet<String>,
    pub natural_type: Option<String>,
    pub natural_type_reason: Option<String>,
    pub is_living: bool,
    pub source: EntitySource,
}

impl Entity {
    pub fn domain(&self) -> Domain {
        if self.is_living {
            Domain::Living
        } else {
            Domain::World
        }
    }

    /// Name followed by aliases, deduplicated case-insensitively.
    pub fn surface_forms(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        std::iter::once(self.name.as_str())
            .chain(self.aliases.iter().map(String::as_str))
            .filter(|s| seen.insert(casefold(s.trim())))
            .collect()
    }
}

/// Split, trim and deduplicate a raw alias list; drops the name itself.
pub fn clean_aliases<'a>(name: &str, raw: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let mut seen = HashSet::from([casefold(name.trim())]);
    raw.into_iter()
        .map(str::trim)
        .filter(|a| !a.is_empty())
        .filter(|a| seen.insert(casefold(a)))
        .map(str::to_string)
        .collect()
}

/// Catalog order: sitelinks descending, then identifier ascending.
pub fn sort_catalog(entities: &mut [Entity]) {
    entities.sort_by(|a, b| b.sitelinks.cmp(&a.sitelinks).then_with(|| a.identifier.cmp(&b.identifier)));
}

/// Merge WordNet entities into a Wikidata catalog. On a case-folded name
/// collision the Wikidata record wins; WordNet-only names are appended.
pub fn merge_catalogs(wikidata: Vec<Entity>, wordnet: Vec<Entity>) -> Vec<Entity> {
    let mut names: HashSet<String> = wikidata.iter().map(|e| casefold(&e.name)).collect();
    let mut out = wikidata;
    for e in wordnet {
        if names.insert(casefold(&e.name)) {
            out.push(e);
        }
    }
    out
}

pub fn write_catalog(path: &Path, entities: &[Entity]) -> Result<()> {
    let mut sorted = entities.to_vec();
    sort_catalog(&mut sorted);
    crate::jsonl::write(path, &sorted)
}

pub fn read_catalog(path: &Path) -> Result<Vec<Entity>> {
    crate::jsonl::read(path)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractionConfig {
    pub min_sitelinks: u64,
    pub super_entities: Vec<SuperEntity>,
    pub endpoint_url: String,
    pub page_size: usize,
    pub profanity_list_path: Option<PathBuf>,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            min_sitelinks: 5,
            super_entities: bundled_super_entities().into_iter().filter(|s| s.include).collect(),
            endpoint_url: "https://query.wikidata.org/sparql".to_string(),
            page_size: 10_000,
            profanity_list_path: None,
        }
    }
}

impl ExtractionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.super_entities.is_empty() {
            return Err(Error::Config("no super-entities configured".into()));
        }
        if self.page_size == 0 {
            return Err(Error::Config("page_size must be positive".into()));
        }
        for s in &self.super_entities {
            s.validate()?;
        }
        Ok(())
    }
}
