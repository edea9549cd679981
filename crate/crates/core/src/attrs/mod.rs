//! Visual attribute generation and natural-type selection.

mod generate;
mod natural;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::Entity;
use crate::text::casefold;

pub use generate::{generate_attributes, generate_catalog, merge_attributes, AttributeGenerator};
pub use natural::{select_natural_type, NaturalType};

/// Post-merge cap per (entity, category).
pub const MAX_PER_CATEGORY: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AttributeCategory {
    Color,
    PatternTexture,
    Parts,
    ShapeSize,
    Environment,
    Other,
}

impl AttributeCategory {
    pub const ALL: [AttributeCategory; 6] = [
        AttributeCategory::Color,
        AttributeCategory::PatternTexture,
        AttributeCategory::Parts,
        AttributeCategory::ShapeSize,
        AttributeCategory::Environment,
        AttributeCategory::Other,
    ];

    /// Human-readable name used in prompts.
    pub fn label(self) -> &'static str {
        match self {
            AttributeCategory::Color => "Color",
            AttributeCategory::PatternTexture => "Pattern and texture",
            AttributeCategory::Parts => "Parts",
            AttributeCategory::ShapeSize => "Shape and size",
            AttributeCategory::Environment => "Environment",
            AttributeCategory::Other => "Other",
        }
    }
}

impl fmt::Display for AttributeCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub entity_id: String,
    pub category: AttributeCategory,
    pub value: String,
    pub search_query: String,
    pub backend: String,
}

impl Attribute {
    /// The query must mention the entity: its name, an alias, or its natural
    /// type (case-insensitive substring, so "multicolored boots" counts for
    /// "boot").
    pub fn new(
        entity: &Entity,
        category: AttributeCategory,
        value: &str,
        search_query: &str,
        backend: &str,
    ) -> Result<Self> {
        let value = crate::text::normalize_whitespace(value);
        let query = crate::text::normalize_whitespace(search_query);
        if value.is_empty() || query.is_empty() {
            return Err(Error::Contract("attribute value and query must be non-empty".into()));
        }
        let q = casefold(&query);
        let mentions = std::iter::once(&entity.name)
            .chain(entity.aliases.iter())
            .chain(entity.natural_type.iter())
            .any(|m| !m.trim().is_empty() && q.contains(&casefold(m.trim())));
        if !mentions {
            return Err(Error::Contract(format!("search query `{query}` does not mention entity `{}`", entity.name)));
        }
        Ok(Self {
            entity_id: entity.identifier.clone(),
            category,
            value,
            search_query: query,
            backend: backend.to_string(),
        })
    }
}
