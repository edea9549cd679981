use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Entity;
use crate::error::{Error, Result};
use crate::text::tokens;

/// Case-folded blocklist. Entries may be multi-word; matching is on whole
/// tokens only, so an entry never matches inside a longer word.
#[derive(Debug, Clone, Default)]
pub struct Blocklist {
    entries: Vec<(String, Vec<String>)>,
}

impl Blocklist {
    pub fn new<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let entries = words
            .into_iter()
            .map(str::trim)
            .filter(|w| !w.is_empty() && !w.starts_with('#'))
            .map(|w| (w.to_lowercase(), tokens(w)))
            .filter(|(_, t)| !t.is_empty())
            .collect();
        Self { entries }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Ok(Self::new(text.lines()))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// First blocklist entry occurring in `text` as a whole-token sequence.
    pub fn find(&self, text: &str) -> Option<&str> {
        let toks = tokens(text);
        self.entries
            .iter()
            .find(|(_, phrase)| toks.windows(phrase.len()).any(|w| w == phrase.as_slice()))
            .map(|(entry, _)| entry.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfanityRemoval {
    pub entity_id: String,
    pub name: String,
    pub matched_text: String,
    pub token: String,
}

pub fn apply_profanity_filter(entities: Vec<Entity>, blocklist: &Blocklist) -> (Vec<Entity>, Vec<ProfanityRemoval>) {
    let mut kept = Vec::with_capacity(entities.len());
    let mut removed = Vec::new();
    for e in entities {
        let hit = std::iter::once(&e.name)
            .chain(e.aliases.iter())
            .find_map(|text| blocklist.find(text).map(|tok| (text.clone(), tok.to_string())));
        match hit {
            Some((matched_text, token)) => removed.push(ProfanityRemoval {
                entity_id: e.identifier.clone(),
                name: e.name.clone(),
                matched_text,
                token,
            }),
            None => kept.push(e),
        }
    }
    (kept, removed)
}
