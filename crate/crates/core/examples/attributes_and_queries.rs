//! Ask two canned LLM backends for visual attributes and a natural type,
//! then expand everything into search queries.

use std::collections::BTreeSet;
use std::sync::Arc;

use kgharvest::attrs::{generate_attributes, select_natural_type, AttributeCategory};
use kgharvest::kg::{Entity, EntitySource};
use kgharvest::llm::{LlmBackend, PromptTemplates};
use kgharvest::mock::{FixtureLlm, LlmFixture};
use kgharvest::query::{build_queries, format_query_stats, query_stats};

fn entity(id: &str, name: &str, aliases: &[&str], sitelinks: u64, living: bool) -> Entity {
    Entity {
        identifier: id.into(),
        name: name.into(),
        description: None,
        sitelinks,
        aliases: aliases.iter().map(|s| s.to_string()).collect(),
        super_entities: BTreeSet::new(),
        natural_type: None,
        natural_type_reason: None,
        is_living: living,
        source: EntitySource::Wikidata,
    }
}

fn main() -> kgharvest::Result<()> {
    let fixture = Arc::new(LlmFixture::bundled());
    let alpha = FixtureLlm::new("alpha", fixture.clone());
    let beta = FixtureLlm::new("beta", fixture);
    let backends: [&dyn LlmBackend; 2] = [&alpha, &beta];

    let mut entities = vec![
        entity("Q19939", "tiger", &["Panthera tigris"], 200, true),
        entity("Q1420", "car", &["automobile"], 240, false),
    ];
    let ancestors = [
        vec!["big cat".to_string(), "mammal".into(), "animal".into()],
        vec!["motor vehicle".to_string(), "vehicle".into()],
    ];

    let mut attributes = Vec::new();
    let mut natural = Vec::new();
    for (e, anc) in entities.iter_mut().zip(&ancestors) {
        let t = select_natural_type(e, anc, &alpha, &PromptTemplates::default())?;
        println!("{}: natural type `{}` ({})", e.name, t.type_name, t.reason);
        e.natural_type = Some(t.type_name.clone());
        natural.push(t);
        let attrs = generate_attributes(e, &AttributeCategory::ALL, &backends, 100);
        for a in &attrs {
            println!("  {:<20} {:<14} -> {:<28} [{}]", a.category.to_string(), a.value, a.search_query, a.backend);
        }
        attributes.extend(attrs);
    }

    let built = build_queries(&entities, &attributes, &natural);
    println!("\n{} queries:", built.queries.len());
    for q in &built.queries {
        println!("  {:<12} {:?} {}", q.id, q.kind, q.text);
    }
    println!("\n{}", format_query_stats(&query_stats(&built.queries)));
    Ok(())
}
