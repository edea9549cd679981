use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::Entity;
use crate::error::Result;
use crate::jsonl;
use crate::llm::{ask, LlmBackend, LlmRequest, LlmTask, PromptTemplates, VisualVerdict};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Partition {
    pub visual: Vec<Entity>,
    pub non_visual: Vec<Entity>,
    /// Entities whose classifier calls kept failing; kept for a later rerun.
    pub undecided: Vec<Entity>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VerdictLine {
    entity_id: String,
    visual: bool,
}

/// Verdicts memoized by entity id, optionally persisted as JSON Lines.
#[derive(Debug, Default)]
pub struct VerdictCache {
    path: Option<PathBuf>,
    verdicts: Mutex<HashMap<String, bool>>,
}

impl VerdictCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(path: &Path) -> Result<Self> {
        let lines: Vec<VerdictLine> = jsonl::read_or_empty(path)?;
        Ok(Self {
            path: Some(path.to_path_buf()),
            verdicts: Mutex::new(lines.into_iter().map(|l| (l.entity_id, l.visual)).collect()),
        })
    }

    pub fn get(&self, id: &str) -> Option<bool> {
        self.verdicts.lock().unwrap().get(id).copied()
    }

    fn put(&self, id: &str, visual: bool) -> Result<()> {
        self.verdicts.lock().unwrap().insert(id.to_string(), visual);
        if let Some(path) = &self.path {
            jsonl::Appender::open(path)?.append(&VerdictLine { entity_id: id.to_string(), visual })?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.verdicts.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Split entities into visual / non-visual using an LLM verdict per entity.
pub fn classify_visual(
    entities: &[Entity],
    classifier: &dyn LlmBackend,
    templates: &PromptTemplates,
    cache: &VerdictCache,
    attempts: u32,
) -> Result<Partition> {
    let mut out = Partition::default();
    for e in entities {
        let verdict = match cache.get(&e.identifier) {
            Some(v) => Some(v),
            None => {
                let mut req = LlmRequest {
                    task: Some(LlmTask::ClassifyVisual),
                    entity_id: e.identifier.clone(),
                    entity_name: e.name.clone(),
                    description: e.description.clone().unwrap_or_default(),
                    aliases: e.aliases.clone(),
                    ..Default::default()
                };
                req.prompt = templates.render(classifier.id(), &req);
                match ask::<VisualVerdict>(classifier, &req, attempts) {
                    Ok(v) => {
                        cache.put(&e.identifier, v.visual)?;
                        Some(v.visual)
                    }
                    Err(err) => {
                        log::warn!("no visual verdict for {} ({}): {err}", e.identifier, e.name);
                        None
                    }
                }
            }
        };
        match verdict {
            Some(true) => out.visual.push(e.clone()),
            Some(false) => out.non_visual.push(e.clone()),
            None => out.undecided.push(e.clone()),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::EntitySource;
    use crate::llm::LookupBackend;
    use std::collections::BTreeSet;

    fn entity(id: &str, name: &str, desc: &str) -> Entity {
        Entity {
            identifier: id.into(),
            name: name.into(),
            description: Some(desc.into()),
            sitelinks: 10,
            aliases: vec![],
            super_entities: BTreeSet::new(),
            natural_type: None,
            natural_type_reason: None,
            is_living: false,
            source: EntitySource::Wikidata,
        }
    }

    #[test]
    fn stub_verdicts_route_entities() {
        let stub = LookupBackend::new("stub").with(LlmTask::ClassifyVisual, "tiger", None, r#"{"visual": true}"#).with(
            LlmTask::ClassifyVisual,
            "history",
            None,
            r#"{"visual": false}"#,
        );
        let ents = vec![
            entity("Q19939", "tiger", "species of big cat"),
            entity("Q309", "history", "past events and their tracks"),
            entity("Q1", "mystery", "stub has no answer"),
        ];
        let cache = VerdictCache::in_memory();
        let p = classify_visual(&ents, &stub, &PromptTemplates::default(), &cache, 2).unwrap();
        assert_eq!(p.visual[0].name, "tiger");
        assert_eq!(p.non_visual[0].name, "history");
        assert_eq!(p.undecided[0].name, "mystery");

        let before = stub.calls();
        classify_visual(&ents[..2], &stub, &PromptTemplates::default(), &cache, 2).unwrap();
        assert_eq!(stub.calls(), before, "cached verdicts must not re-query");
    }

    #[test]
    fn lookup_table_partition_is_exact() {
        let mut stub = LookupBackend::new("table");
        let mut ents = Vec::new();
        let mut expected_visual = Vec::new();
        for i in 0..100 {
            let name = format!("thing {i}");
            let visual = (i * 7) % 3 != 0;
            stub = stub.with(LlmTask::ClassifyVisual, &name, None, format!(r#"{{"visual": {visual}}}"#));
            ents.push(entity(&format!("Q{}", i + 1), &name, "d"));
            if visual {
                expected_visual.push(format!("Q{}", i + 1));
            }
        }
        let p = classify_visual(&ents, &stub, &PromptTemplates::default(), &VerdictCache::in_memory(), 1).unwrap();
        let got: Vec<_> = p.visual.iter().map(|e| e.identifier.clone()).collect();
        assert_eq!(got, expected_visual);
        assert_eq!(p.visual.len() + p.non_visual.len(), 100);
        assert!(p.undecided.is_empty());
    }

    #[test]
    fn verdicts_persist_across_instances() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("verdicts.jsonl");
        let stub = LookupBackend::new("stub").with(LlmTask::ClassifyVisual, "tiger", None, r#"{"visual": true}"#);
        let ents = vec![entity("Q19939", "tiger", "species of big cat")];
        classify_visual(&ents, &stub, &PromptTemplates::default(), &VerdictCache::open(&path).unwrap(), 1).unwrap();
        let silent = LookupBackend::new("stub");
        let p = classify_visual(&ents, &silent, &PromptTemplates::default(), &VerdictCache::open(&path).unwrap(), 1)
            .unwrap();
        assert_eq!(p.visual.len(), 1);
        assert_eq!(silent.calls(), 0);
    }
}
