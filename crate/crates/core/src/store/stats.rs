use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::DatasetRecord;
use crate::attrs::AttributeCategory;
use crate::query::{QuerySet, SearchQuery};
use crate::text::fold_key;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub label: String,
    pub images: u64,
    pub queries: u64,
    pub entities: u64,
    pub aliases: u64,
    pub attributes: Option<u64>,
    pub alt_texts: u64,
    pub images_per_query: Option<f64>,
    pub alt_texts_per_image: Option<f64>,
}

fn ratio(a: u64, b: u64) -> Option<f64> {
    (b > 0).then(|| a as f64 / b as f64)
}

impl StatsRow {
    pub fn new(
        label: &str,
        images: u64,
        queries: u64,
        entities: u64,
        aliases: u64,
        attributes: Option<u64>,
        alt_texts: u64,
    ) -> Self {
        Self {
            label: label.to_string(),
            images,
            queries,
            entities,
            aliases,
            attributes,
            alt_texts,
            images_per_query: ratio(images, queries),
            alt_texts_per_image: ratio(alt_texts, images),
        }
    }
}

pub fn format_ratio_images(r: Option<f64>) -> String {
    r.map_or_else(|| "-".to_string(), |v| format!("{v:.1}"))
}

pub fn format_ratio_alt(r: Option<f64>) -> String {
    r.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestStats {
    pub rows: Vec<StatsRow>,
    pub total: StatsRow,
}

impl ManifestStats {
    pub fn to_table(&self) -> String {
        let header = format!(
            "{:<28}{:>10}{:>10}{:>10}{:>10}{:>12}{:>11}{:>11}{:>9}\n",
            "Query set", "Images", "Queries", "Entities", "Aliases", "Attributes", "Alt texts", "Img/query", "Alt/img"
        );
        let line = |r: &StatsRow| {
            format!(
                "{:<28}{:>10}{:>10}{:>10}{:>10}{:>12}{:>11}{:>11}{:>9}\n",
                r.label,
                r.images,
                r.queries,
                r.entities,
                r.aliases,
                r.attributes.map_or("-".to_string(), |a| a.to_string()),
                r.alt_texts,
                format_ratio_images(r.images_per_query),
                format_ratio_alt(r.alt_texts_per_image),
            )
        };
        let mut s = header;
        for r in &self.rows {
            s.push_str(&line(r));
        }
        s.push_str(&line(&self.total));
        s
    }
}

#[derive(Default)]
struct Acc<'a> {
    images: BTreeSet<&'a str>,
    queries: BTreeSet<&'a str>,
    entities: BTreeSet<&'a str>,
    attributes: BTreeSet<(&'a str, AttributeCategory, String)>,
    alt_texts: BTreeSet<&'a str>,
}

impl<'a> Acc<'a> {
    fn row(&self, label: &str, aliases_of: &HashMap<&str, Vec<String>>, with_attrs: bool) -> StatsRow {
        let aliases: BTreeSet<&String> = self.entities.iter().filter_map(|e| aliases_of.get(e)).flatten().collect();
        StatsRow::new(
            label,
            self.images.len() as u64,
            self.queries.len() as u64,
            self.entities.len() as u64,
            aliases.len() as u64,
            with_attrs.then_some(self.attributes.len() as u64),
            self.alt_texts.len() as u64,
        )
    }
}

/// Unique counts per query set and overall. Excluded records are ignored;
/// queries count only if at least one image came from them.
pub fn compute_stats(records: &[DatasetRecord], queries: &[SearchQuery]) -> ManifestStats {
    let qmap: HashMap<&str, &SearchQuery> = queries.iter().map(|q| (q.id.as_str(), q)).collect();
    let mut aliases_of: HashMap<&str, Vec<String>> = HashMap::new();
    for r in records.iter().filter(|r| !r.excluded) {
        for k in &r.kg_texts {
            aliases_of.entry(k.entity_id.as_str()).or_insert_with(|| k.aliases.iter().map(|a| fold_key(a)).collect());
        }
    }
    let mut per: BTreeMap<QuerySet, Acc> = QuerySet::ALL.iter().map(|s| (*s, Acc::default())).collect();
    let mut total = Acc::default();
    for r in records.iter().filter(|r| !r.excluded) {
        for rq in &r.search_queries {
            let Some(q) = qmap.get(rq.query_id.as_str()) else { continue };
            let set = QuerySet::of(q.kind, q.domain_tag);
            for acc in [per.get_mut(&set).unwrap(), &mut total] {
                acc.images.insert(&r.id);
                acc.queries.insert(&q.id);
                acc.alt_texts.extend(r.alt_texts.iter().map(String::as_str));
                for o in &q.origins {
                    acc.entities.insert(&o.entity_id);
                    if let Some(a) = &o.attribute {
                        acc.attributes.insert((&o.entity_id, a.category, fold_key(&a.value)));
                    }
                }
            }
        }
    }
    let rows = QuerySet::ALL
        .iter()
        .map(|s| {
            let with_attrs = matches!(s, QuerySet::WorldEntityAttribute | QuerySet::LivingEntityAttribute);
            per[s].row(s.label(), &aliases_of, with_attrs)
        })
        .collect();
    ManifestStats { rows, total: total.row("All", &aliases_of, true) }
}
