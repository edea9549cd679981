use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::{Attribute, AttributeCategory, MAX_PER_CATEGORY};
use crate::kg::Entity;
use crate::llm::{ask, AttributeResponse, LlmBackend, LlmRequest, LlmTask, PromptTemplates};
use crate::text::fold_key;

pub struct AttributeGenerator<'a> {
    pub backends: Vec<&'a dyn LlmBackend>,
    pub templates: PromptTemplates,
    pub categories: Vec<AttributeCategory>,
    pub popularity_cutoff: u64,
    pub attempts: u32,
}

impl<'a> AttributeGenerator<'a> {
    pub fn new(backends: Vec<&'a dyn LlmBackend>, popularity_cutoff: u64) -> Self {
        Self {
            backends,
            templates: PromptTemplates::default(),
            categories: AttributeCategory::ALL.to_vec(),
            popularity_cutoff,
            attempts: 2,
        }
    }

    fn ask_backend(
        &self,
        backend: &dyn LlmBackend,
        entity: &Entity,
        category: AttributeCategory,
    ) -> Option<Vec<Attribute>> {
        let mut req = LlmRequest {
            task: Some(LlmTask::Attributes),
            entity_id: entity.identifier.clone(),
            entity_name: entity.name.clone(),
            description: entity.description.clone().unwrap_or_default(),
            aliases: entity.aliases.clone(),
            category: Some(category.label().to_string()),
            ..Default::default()
        };
        req.prompt = self.templates.render(backend.id(), &req);
        match ask::<AttributeResponse>(backend, &req, self.attempts) {
            Ok(resp) => Some(
                resp.attributes
                    .into_iter()
                    .filter_map(|item| {
                        Attribute::new(entity, category, &item.value, &item.search_query, backend.id())
                            .map_err(|e| log::warn!("dropping attribute from {}: {e}", backend.id()))
                            .ok()
                    })
                    .collect(),
            ),
            Err(e) => {
                log::warn!("backend {} failed on {} / {}: {e}", backend.id(), entity.name, category);
                None
            }
        }
    }

    /// Attributes for one entity, merged across backends per category.
    /// Entities below the popularity cutoff produce no backend traffic.
    pub fn generate(&self, entity: &Entity) -> Vec<Attribute> {
        if entity.sitelinks < self.popularity_cutoff {
            return Vec::new();
        }
        let mut out = Vec::new();
        let mut answered = 0usize;
        for &category in &self.categories {
            let per_backend: Vec<Vec<Attribute>> = self
                .backends
                .iter()
                .map(|b| match self.ask_backend(*b, entity, category) {
                    Some(v) => {
                        answered += 1;
                        v
                    }
                    None => Vec::new(),
                })
                .collect();
            out.extend(merge_attributes(&per_backend));
        }
        if answered == 0 && !self.backends.is_empty() && !self.categories.is_empty() {
            log::error!("all attribute backends failed for {} ({})", entity.identifier, entity.name);
        }
        out
    }
}

/// Convenience wrapper with the bundled prompt templates.
pub fn generate_attributes(
    entity: &Entity,
    categories: &[AttributeCategory],
    backends: &[&dyn LlmBackend],
    popularity_cutoff: u64,
) -> Vec<Attribute> {
    let mut g = AttributeGenerator::new(backends.to_vec(), popularity_cutoff);
    g.categories = categories.to_vec();
    g.generate(entity)
}

/// Merge one (entity, category) pair's attributes across backends.
///
/// Values are deduplicated on their case- and whitespace-folded form; the
/// first occurrence in backend order survives. When more than
/// [`MAX_PER_CATEGORY`] remain, values proposed by more backends win, ties
/// going to the earlier one. Output keeps first-seen order.
pub fn merge_attributes(per_backend: &[Vec<Attribute>]) -> Vec<Attribute> {
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut slots: Vec<(&Attribute, HashSet<usize>)> = Vec::new();
    for (b, list) in per_backend.iter().enumerate() {
        for a in list {
            let key = fold_key(&a.value);
            match index.get(&key) {
                Some(&i) => {
                    slots[i].1.insert(b);
                }
                None => {
                    index.insert(key, slots.len());
                    slots.push((a, HashSet::from([b])));
                }
            }
        }
    }
    let mut priority: Vec<usize> = (0..slots.len()).collect();
    priority.sort_by(|&x, &y| slots[y].1.len().cmp(&slots[x].1.len()).then(x.cmp(&y)));
    let chosen: HashSet<usize> = priority.into_iter().take(MAX_PER_CATEGORY).collect();
    slots.into_iter().enumerate().filter(|(i, _)| chosen.contains(i)).map(|(_, (a, _))| a.clone()).collect()
}

/// Run the generator over a catalog with at most `workers` entities in
/// flight. Output follows catalog order.
pub fn generate_catalog(entities: &[Entity], generator: &AttributeGenerator<'_>, workers: usize) -> Vec<Attribute> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, Vec<Attribute>)>> = Mutex::new(Vec::new());
    std::thread::scope(|s| {
        for _ in 0..workers.max(1).min(entities.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(e) = entities.get(i) else { break };
                let attrs = generator.generate(e);
                results.lock().unwrap().push((i, attrs));
            });
        }
    });
    let mut results = results.into_inner().unwrap();
    results.sort_by_key(|(i, _)| *i);
    results.into_iter().flat_map(|(_, a)| a).collect()
}
