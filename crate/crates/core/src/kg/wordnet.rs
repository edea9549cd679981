use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::{clean_aliases, Entity, EntitySource};
use crate::error::{Error, Result};

/// One noun synset of the hierarchy file (JSON Lines).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordnetSynset {
    pub id: String,
    pub lemmas: Vec<String>,
    #[serde(default)]
    pub gloss: String,
    #[serde(default)]
    pub hypernyms: Vec<String>,
}

/// Root of the living subtree plus subtrees to prune (humans, microorganisms
/// and whatever else a deployment decides is not visible).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct WordnetExclusions {
    pub root: String,
    pub prune: Vec<String>,
}

impl Default for WordnetExclusions {
    fn default() -> Self {
        Self { root: "living_thing.n.01".to_string(), prune: Vec::new() }
    }
}

fn descendants<'a>(start: &'a str, children: &HashMap<&'a str, Vec<&'a str>>, include_start: bool) -> HashSet<&'a str> {
    let mut seen = HashSet::new();
    let mut queue = VecDeque::from([start]);
    if include_start {
        seen.insert(start);
    }
    while let Some(n) = queue.pop_front() {
        for &c in children.get(n).map(Vec::as_slice).unwrap_or_default() {
            if seen.insert(c) {
                queue.push_back(c);
            }
        }
    }
    seen
}

/// All synsets below the living-thing root, minus pruned subtrees. A synset
/// reachable from any pruned node is dropped even if another path avoids it.
pub fn import_wordnet_living(
    synsets: &[WordnetSynset],
    exclusions: &WordnetExclusions,
    sentinel_sitelinks: u64,
) -> Result<Vec<Entity>> {
    let by_id: HashMap<&str, &WordnetSynset> = synsets.iter().map(|s| (s.id.as_str(), s)).collect();
    if !by_id.contains_key(exclusions.root.as_str()) {
        return Err(Error::Config(format!("living-thing root `{}` not found in the WordNet data", exclusions.root)));
    }
    let mut children: HashMap<&str, Vec<&str>> = HashMap::new();
    for s in synsets {
        for h in &s.hypernyms {
            children.entry(h.as_str()).or_default().push(s.id.as_str());
        }
    }
    let mut pruned = HashSet::new();
    for p in &exclusions.prune {
        pruned.extend(descendants(p.as_str(), &children, true));
    }
    if pruned.contains(exclusions.root.as_str()) {
        return Ok(Vec::new());
    }
    let mut keep: Vec<&str> =
        descendants(exclusions.root.as_str(), &children, false).into_iter().filter(|id| !pruned.contains(id)).collect();
    keep.sort_unstable();

    Ok(keep
        .into_iter()
        .filter_map(|id| by_id.get(id))
        .filter(|s| !s.lemmas.is_empty())
        .map(|s| {
            let forms: Vec<String> = s.lemmas.iter().map(|l| l.replace('_', " ")).collect();
            Entity {
                identifier: format!("wn:{}", s.id),
                name: forms[0].clone(),
                description: (!s.gloss.trim().is_empty()).then(|| s.gloss.clone()),
                sitelinks: sentinel_sitelinks,
                aliases: clean_aliases(&forms[0], forms[1..].iter().map(String::as_str)),
                super_entities: BTreeSet::new(),
                natural_type: None,
                natural_type_reason: None,
                is_living: true,
                source: EntitySource::Wordnet,
            }
        })
        .collect())
}
