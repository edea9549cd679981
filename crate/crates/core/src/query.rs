//! Turn entity and attribute catalogs into deduplicated search queries.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::attrs::{Attribute, AttributeCategory, NaturalType};
use crate::kg::{Domain, Entity};
use crate::text::{contains_whole_word, find_whole_word, fold_key, normalize_whitespace, short_hash};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    Entity,
    EntityAttribute,
    NaturalTypeAttribute,
}

impl QueryKind {
    pub fn has_attribute(self) -> bool {
        !matches!(self, QueryKind::Entity)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Bing,
    Google,
}

impl Engine {
    pub fn as_str(self) -> &'static str {
        match self {
            Engine::Bing => "bing",
            Engine::Google => "google",
        }
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AttributeRef {
    pub category: AttributeCategory,
    pub value: String,
}

/// Where a query came from. Natural-type queries keep their source entity
/// here even though the query itself is entity-agnostic.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QueryOrigin {
    pub entity_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute: Option<AttributeRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchQuery {
    pub id: String,
    pub text: String,
    pub kind: QueryKind,
    pub entity_id: Option<String>,
    pub attribute_ref: Option<AttributeRef>,
    pub domain_tag: Domain,
    pub engine_hint: Option<Engine>,
    #[serde(default)]
    pub origins: Vec<QueryOrigin>,
}

impl SearchQuery {
    pub fn new(
        text: &str,
        kind: QueryKind,
        entity_id: Option<String>,
        attribute_ref: Option<AttributeRef>,
        domain_tag: Domain,
        origin: QueryOrigin,
    ) -> Self {
        let text = normalize_whitespace(text);
        Self {
            id: query_id(&text),
            text,
            kind,
            entity_id,
            attribute_ref,
            domain_tag,
            engine_hint: None,
            origins: vec![origin],
        }
    }

    pub fn key(&self) -> String {
        fold_key(&self.text)
    }
}

/// Stable id derived from the folded query text.
pub fn query_id(text: &str) -> String {
    format!("q{}", short_hash(&[&fold_key(text)]))
}

/// One query per distinct surface form (name and aliases).
pub fn entity_queries(entity: &Entity) -> Vec<SearchQuery> {
    entity
        .surface_forms()
        .into_iter()
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            SearchQuery::new(
                s,
                QueryKind::Entity,
                Some(entity.identifier.clone()),
                None,
                entity.domain(),
                QueryOrigin { entity_id: entity.identifier.clone(), attribute: None },
            )
        })
        .collect()
}

fn attribute_ref(a: &Attribute) -> AttributeRef {
    AttributeRef { category: a.category, value: a.value.clone() }
}

/// One query per attribute, searched exactly as generated. Attributes whose
/// entity is missing from `entities` are tagged with the world domain.
pub fn attribute_queries(attributes: &[Attribute], entities: &HashMap<&str, &Entity>) -> Vec<SearchQuery> {
    attributes
        .iter()
        .filter(|a| !a.search_query.trim().is_empty())
        .map(|a| {
            let domain = entities.get(a.entity_id.as_str()).map_or(Domain::World, |e| e.domain());
            SearchQuery::new(
                &a.search_query,
                QueryKind::EntityAttribute,
                Some(a.entity_id.clone()),
                Some(attribute_ref(a)),
                domain,
                QueryOrigin { entity_id: a.entity_id.clone(), attribute: Some(attribute_ref(a)) },
            )
        })
        .collect()
}

/// Replace the first whole-word mention of any of `forms` (longest first)
/// with `replacement`. `None` if nothing matched or a mention survives.
pub fn substitute_mention(query: &str, forms: &[&str], replacement: &str) -> Option<String> {
    let mut ordered: Vec<&str> = forms.iter().copied().filter(|f| !f.trim().is_empty()).collect();
    ordered.sort_by_key(|f| std::cmp::Reverse(f.trim().chars().count()));
    let range = ordered.iter().find_map(|f| find_whole_word(query, f))?;
    let out = normalize_whitespace(&format!("{}{}{}", &query[..range.start], replacement, &query[range.end..]));
    if out.is_empty() || ordered.iter().any(|f| contains_whole_word(&out, f)) {
        return None;
    }
    Some(out)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubstitutionSkips {
    pub no_natural_type: usize,
    pub no_mention: usize,
    pub unsafe_result: usize,
}

/// Entity-agnostic variants of the attribute queries, deduplicated across
/// entities.
pub fn natural_type_queries(
    attributes: &[Attribute],
    natural_types: &HashMap<String, NaturalType>,
    entities: &HashMap<&str, &Entity>,
) -> (Vec<SearchQuery>, SubstitutionSkips) {
    let mut skips = SubstitutionSkips::default();
    let mut out = Vec::new();
    for a in attributes {
        let (Some(nt), Some(entity)) = (natural_types.get(&a.entity_id), entities.get(a.entity_id.as_str())) else {
            skips.no_natural_type += 1;
            continue;
        };
        let forms = entity.surface_forms();
        if !forms.iter().any(|f| contains_whole_word(&a.search_query, f)) {
            skips.no_mention += 1;
            continue;
        }
        match substitute_mention(&a.search_query, &forms, &nt.type_name) {
            Some(text) => out.push(SearchQuery::new(
                &text,
                QueryKind::NaturalTypeAttribute,
                None,
                Some(attribute_ref(a)),
                entity.domain(),
                QueryOrigin { entity_id: a.entity_id.clone(), attribute: Some(attribute_ref(a)) },
            )),
            None => skips.unsafe_result += 1,
        }
    }
    (dedupe_queries(out), skips)
}

/// First occurrence of each folded text wins; later duplicates donate their
/// origins to it.
pub fn dedupe_queries(queries: Vec<SearchQuery>) -> Vec<SearchQuery> {
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut out: Vec<SearchQuery> = Vec::new();
    for q in queries {
        match index.get(&q.key()) {
            Some(&i) => {
                for o in q.origins {
                    if !out[i].origins.contains(&o) {
                        out[i].origins.push(o);
                    }
                }
            }
            None => {
                index.insert(q.key(), out.len());
                out.push(q);
            }
        }
    }
    out
}

/// Engine selection: bing everywhere unless `living` overrides it for the
/// living domain.
pub fn assign_engines(queries: &mut [SearchQuery], default: Engine, living: Option<Engine>) {
    for q in queries {
        q.engine_hint = Some(match (q.domain_tag, living) {
            (Domain::Living, Some(e)) => e,
            _ => default,
        });
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryBuildReport {
    pub queries: Vec<SearchQuery>,
    pub skips: SubstitutionSkips,
}

/// Build the full query catalog: entity queries, then attribute queries,
/// then natural-type queries, deduplicated together.
pub fn build_queries(entities: &[Entity], attributes: &[Attribute], natural_types: &[NaturalType]) -> QueryBuildReport {
    let index: HashMap<&str, &Entity> = entities.iter().map(|e| (e.identifier.as_str(), e)).collect();
    let types: HashMap<String, NaturalType> = natural_types.iter().map(|n| (n.entity_id.clone(), n.clone())).collect();
    let mut all: Vec<SearchQuery> = entities.iter().flat_map(entity_queries).collect();
    all.extend(attribute_queries(attributes, &index));
    let (nt, skips) = natural_type_queries(attributes, &types, &index);
    all.extend(nt);
    QueryBuildReport { queries: dedupe_queries(all), skips }
}

/// Four query sets keyed by (domain, has-attribute).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum QuerySet {
    WorldEntity,
    WorldEntityAttribute,
    LivingEntity,
    LivingEntityAttribute,
}

impl QuerySet {
    pub const ALL: [QuerySet; 4] = [
        QuerySet::WorldEntity,
        QuerySet::WorldEntityAttribute,
        QuerySet::LivingEntity,
        QuerySet::LivingEntityAttribute,
    ];

    pub fn of(kind: QueryKind, domain: Domain) -> Self {
        match (domain, kind.has_attribute()) {
            (Domain::World, false) => QuerySet::WorldEntity,
            (Domain::World, true) => QuerySet::WorldEntityAttribute,
            (Domain::Living, false) => QuerySet::LivingEntity,
            (Domain::Living, true) => QuerySet::LivingEntityAttribute,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            QuerySet::WorldEntity => "World entity",
            QuerySet::WorldEntityAttribute => "World entity + attribute",
            QuerySet::LivingEntity => "Living entity",
            QuerySet::LivingEntityAttribute => "Living entity + attribute",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QuerySetCounts {
    pub queries: usize,
    pub entities: usize,
    pub attributes: usize,
}

/// Per-set counts of unique queries, entities and attributes.
pub fn query_stats(queries: &[SearchQuery]) -> BTreeMap<QuerySet, QuerySetCounts> {
    let mut ents: BTreeMap<QuerySet, std::collections::BTreeSet<&str>> = BTreeMap::new();
    let mut attrs: BTreeMap<QuerySet, std::collections::BTreeSet<(&str, AttributeCategory, String)>> = BTreeMap::new();
    let mut out: BTreeMap<QuerySet, QuerySetCounts> =
        QuerySet::ALL.iter().map(|s| (*s, QuerySetCounts::default())).collect();
    for q in queries {
        let set = QuerySet::of(q.kind, q.domain_tag);
        out.get_mut(&set).unwrap().queries += 1;
        for o in &q.origins {
            ents.entry(set).or_default().insert(&o.entity_id);
            if let Some(a) = &o.attribute {
                attrs.entry(set).or_default().insert((&o.entity_id, a.category, fold_key(&a.value)));
            }
        }
    }
    for (set, c) in out.iter_mut() {
        c.entities = ents.get(set).map_or(0, |s| s.len());
        c.attributes = attrs.get(set).map_or(0, |s| s.len());
    }
    out
}

pub fn format_query_stats(stats: &BTreeMap<QuerySet, QuerySetCounts>) -> String {
    let mut s = format!("{:<28}{:>10}{:>10}{:>12}\n", "Query set", "Queries", "Entities", "Attributes");
    for set in QuerySet::ALL {
        let c = &stats[&set];
        let attrs = if set == QuerySet::WorldEntity || set == QuerySet::LivingEntity {
            "-".to_string()
        } else {
            c.attributes.to_string()
        };
        s.push_str(&format!("{:<28}{:>10}{:>10}{:>12}\n", set.label(), c.queries, c.entities, attrs));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::EntitySource;
    use proptest::prelude::*;
    use std::collections::{BTreeSet, HashSet};

    fn entity(id: &str, name: &str, aliases: &[&str], living: bool) -> Entity {
        Entity {
            identifier: id.into(),
            name: name.into(),
            description: None,
            sitelinks: 50,
            aliases: aliases.iter().map(|s| s.to_string()).collect(),
            super_entities: BTreeSet::new(),
            natural_type: None,
            natural_type_reason: None,
            is_living: living,
            source: EntitySource::Wikidata,
        }
    }

    fn attribute(entity: &str, value: &str, query: &str) -> Attribute {
        Attribute {
            entity_id: entity.into(),
            category: AttributeCategory::Other,
            value: value.into(),
            search_query: query.into(),
            backend: "stub".into(),
        }
    }

    fn nt(entity: &str, t: &str) -> NaturalType {
        NaturalType { entity_id: entity.into(), type_name: t.into(), reason: String::new() }
    }

    fn texts(q: &[SearchQuery]) -> Vec<&str> {
        q.iter().map(|q| q.text.as_str()).collect()
    }

    #[test]
    fn tiger_has_four_queries() {
        let tiger = entity("Q19939", "tiger", &["tigress", "tigers", "Panthera tigris"], true);
        let q = entity_queries(&tiger);
        assert_eq!(texts(&q), vec!["tiger", "tigress", "tigers", "Panthera tigris"]);
        assert!(q.iter().all(|q| q.kind == QueryKind::Entity && q.domain_tag == Domain::Living));
        assert_eq!(entity_queries(&entity("Q1", "ship", &[], false)).len(), 1);
        assert_eq!(entity_queries(&entity("Q1", "Ship", &["ship ", "SHIP"], false)).len(), 1);
    }

    #[test]
    fn attribute_queries_link_back() {
        let garlic = entity("Q23400", "garlic", &[], true);
        let idx = HashMap::from([("Q23400", &garlic)]);
        let mut a = attribute("Q23400", "big", "big garlic bulb");
        a.category = AttributeCategory::ShapeSize;
        let q = attribute_queries(&[a], &idx);
        assert_eq!(q[0].text, "big garlic bulb");
        assert_eq!(q[0].entity_id.as_deref(), Some("Q23400"));
        assert_eq!(
            q[0].attribute_ref,
            Some(AttributeRef { category: AttributeCategory::ShapeSize, value: "big".into() })
        );
        assert!(attribute_queries(&[], &idx).is_empty());
    }

    #[test]
    fn twenty_attributes_match_hand_table() {
        let ents: Vec<Entity> =
            (0..4).map(|i| entity(&format!("Q{i}"), &format!("thing{i}"), &[], i % 2 == 0)).collect();
        let idx: HashMap<&str, &Entity> = ents.iter().map(|e| (e.identifier.as_str(), e)).collect();
        let table: Vec<(String, String, String)> =
            (0..20).map(|i| (format!("Q{}", i % 4), format!("v{i}"), format!("v{i} thing{}", i % 4))).collect();
        let attrs: Vec<Attribute> = table.iter().map(|(e, v, q)| attribute(e, v, q)).collect();
        let q = attribute_queries(&attrs, &idx);
        assert_eq!(q.len(), 20);
        for (i, (e, v, text)) in table.iter().enumerate() {
            assert_eq!(&q[i].text, text);
            assert_eq!(q[i].entity_id.as_ref(), Some(e));
            assert_eq!(&q[i].attribute_ref.as_ref().unwrap().value, v);
            let living = (i % 4) % 2 == 0;
            assert_eq!(q[i].domain_tag, if living { Domain::Living } else { Domain::World });
        }
    }

    #[test]
    fn substitution_examples() {
        let eagle = entity("Q1", "eagle", &[], true);
        let bmw = entity("Q2", "BMW M4", &["M4"], false);
        let rock = entity("Q3", "rock", &[], false);
        let idx = HashMap::from([("Q1", &eagle), ("Q2", &bmw), ("Q3", &rock)]);
        let types = HashMap::from([
            ("Q1".to_string(), nt("Q1", "bird")),
            ("Q2".to_string(), nt("Q2", "car")),
            ("Q3".to_string(), nt("Q3", "stone")),
        ]);
        let attrs = vec![
            attribute("Q1", "nest", "eagle in its nest"),
            attribute("Q2", "black", "black BMW M4"),
            attribute("Q3", "porous", "porous texture closeup"),
        ];
        let (q, skips) = natural_type_queries(&attrs, &types, &idx);
        assert_eq!(texts(&q), vec!["bird in its nest", "black car"]);
        assert!(q.iter().all(|q| q.entity_id.is_none() && q.kind == QueryKind::NaturalTypeAttribute));
        assert_eq!(skips.no_mention, 1);
    }

    #[test]
    fn substitution_is_whole_word() {
        assert_eq!(substitute_mention("cartoon cat", &["cat"], "animal").as_deref(), Some("cartoon animal"));
        assert_eq!(substitute_mention("category", &["cat"], "animal"), None);
        assert_eq!(substitute_mention("eagle and eagle", &["eagle"], "bird"), None);
    }

    #[test]
    fn cross_entity_merge() {
        let a = entity("Q1", "wolf", &[], true);
        let b = entity("Q2", "fox", &[], true);
        let idx = HashMap::from([("Q1", &a), ("Q2", &b)]);
        let types = HashMap::from([("Q1".to_string(), nt("Q1", "animal")), ("Q2".to_string(), nt("Q2", "animal"))]);
        let attrs = vec![attribute("Q1", "snow", "wolf in the snow"), attribute("Q2", "snow", "Fox in the snow")];
        let (q, _) = natural_type_queries(&attrs, &types, &idx);
        assert_eq!(q.len(), 1);
        assert_eq!(q[0].origins.len(), 2);
    }

    #[test]
    fn dedupe_examples() {
        let mk = |t: &str, e: &str| {
            SearchQuery::new(
                t,
                QueryKind::Entity,
                Some(e.into()),
                None,
                Domain::World,
                QueryOrigin { entity_id: e.into(), attribute: None },
            )
        };
        let d = dedupe_queries(vec![mk("Ship", "Q1"), mk("ship", "Q2")]);
        assert_eq!(texts(&d), vec!["Ship"]);
        assert_eq!(d[0].origins.len(), 2);
        let d = dedupe_queries(vec![mk("a", "Q1"), mk("b", "Q2")]);
        assert_eq!(texts(&d), vec!["a", "b"]);
    }

    #[test]
    fn stats_layout() {
        let ents = vec![entity("Q1", "ship", &["boat"], false), entity("Q2", "kohlrabi", &[], true)];
        let attrs = vec![attribute("Q1", "small", "small ship")];
        let types = vec![nt("Q1", "vehicle")];
        let r = build_queries(&ents, &attrs, &types);
        assert_eq!(texts(&r.queries), vec!["ship", "boat", "kohlrabi", "small ship", "small vehicle"]);
        let s = query_stats(&r.queries);
        assert_eq!(s[&QuerySet::WorldEntity], QuerySetCounts { queries: 2, entities: 1, attributes: 0 });
        assert_eq!(s[&QuerySet::WorldEntityAttribute], QuerySetCounts { queries: 2, entities: 1, attributes: 1 });
        assert_eq!(s[&QuerySet::LivingEntity].queries, 1);
        let table = format_query_stats(&s);
        assert!(table.lines().nth(2).unwrap().starts_with("World entity + attribute"));
    }

    fn brute_dedup(texts: &[String]) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for t in texts {
            let k = t.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
            if !out.iter().any(|o| o.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase() == k) {
                out.push(t.split_whitespace().collect::<Vec<_>>().join(" "));
            }
        }
        out
    }

    #[test]
    fn thousand_query_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let words = ["red", "Red", "ship", "SHIP", "big", "tree", "nest", "bird", "  ", "car"];
        let raw: Vec<String> = (0..1000)
            .map(|_| {
                let n = rng.gen_range(1..=3);
                (0..n).map(|_| words[rng.gen_range(0..words.len())]).collect::<Vec<_>>().join(" ")
            })
            .filter(|s| !s.trim().is_empty())
            .collect();
        let qs: Vec<SearchQuery> = raw
            .iter()
            .map(|t| {
                SearchQuery::new(
                    t,
                    QueryKind::Entity,
                    None,
                    None,
                    Domain::World,
                    QueryOrigin { entity_id: "Q1".into(), attribute: None },
                )
            })
            .collect();
        let got: Vec<String> = dedupe_queries(qs).into_iter().map(|q| q.text).collect();
        assert_eq!(got, brute_dedup(&raw));
    }

    fn arb_entity() -> impl Strategy<Value = Entity> {
        let word = prop::sample::select(vec!["Owl", "owl", "OWL ", "barn owl", "hoot", "strix", "Strix", "bird"]);
        (word.clone(), proptest::collection::vec(word, 0..5), any::<bool>())
            .prop_map(|(n, a, l)| entity("Q1", n, &a, l))
    }

    proptest! {
        #[test]
        fn entity_query_count(e in arb_entity()) {
            let distinct: HashSet<String> = std::iter::once(&e.name).chain(e.aliases.iter())
                .map(|s| s.trim().to_lowercase()).collect();
            prop_assert_eq!(entity_queries(&e).len(), distinct.len());
        }

        #[test]
        fn dedupe_idempotent(ws in proptest::collection::vec(prop::sample::select(vec!["a", "A", "b ", "c", "a b", "A  b"]), 0..30)) {
            let qs: Vec<SearchQuery> = ws.iter().map(|t| SearchQuery::new(t, QueryKind::Entity, None, None, Domain::World,
                QueryOrigin { entity_id: format!("Q{}", t.len()), attribute: None })).collect();
            let once = dedupe_queries(qs);
            prop_assert_eq!(dedupe_queries(once.clone()), once);
        }

        #[test]
        fn substitution_never_leaves_mentions(e in arb_entity(), pre in "[a-z ]{0,8}", post in "[a-z ]{0,8}") {
            let forms = e.surface_forms();
            let query = format!("{pre} {} {post}", e.name);
            if let Some(out) = substitute_mention(&query, &forms, "animal") {
                for f in &forms {
                    prop_assert!(!contains_whole_word(&out, f));
                }
            }
        }
    }
}
