use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{LlmRequest, LlmTask};
use crate::error::{Error, Result};

const CLASSIFY_VISUAL: &str = include_str!("../../data/prompts/classify_visual.txt");
const ATTRIBUTES: &str = include_str!("../../data/prompts/attributes.txt");
const NATURAL_TYPE: &str = include_str!("../../data/prompts/natural_type.txt");

/// Prompt templates per task, optionally overridden per backend.
///
/// Placeholders: `{name}`, `{description}`, `{aliases}`, `{category}`,
/// `{ancestors}`.
#[derive(Debug, Clone)]
pub struct PromptTemplates {
    defaults: HashMap<LlmTask, String>,
    per_backend: HashMap<(LlmTask, String), String>,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        let defaults = HashMap::from([
            (LlmTask::ClassifyVisual, CLASSIFY_VISUAL.to_string()),
            (LlmTask::Attributes, ATTRIBUTES.to_string()),
            (LlmTask::NaturalType, NATURAL_TYPE.to_string()),
        ]);
        Self { defaults, per_backend: HashMap::new() }
    }
}

impl PromptTemplates {
    /// Load overrides from a directory of `<task>.txt` and
    /// `<task>.<backend>.txt` files on top of the bundled defaults.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut t = Self::default();
        let entries = fs::read_dir(dir).map_err(|e| Error::file(dir, e))?;
        for entry in entries {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            let (task_name, backend) = match stem.split_once('.') {
                Some((t, b)) => (t, Some(b.to_string())),
                None => (stem, None),
            };
            let task = match task_name {
                "classify_visual" => LlmTask::ClassifyVisual,
                "attributes" => LlmTask::Attributes,
                "natural_type" => LlmTask::NaturalType,
                other => {
                    return Err(Error::Config(format!("unknown prompt template task `{other}` in {}", path.display())))
                }
            };
            let text = fs::read_to_string(&path).map_err(|e| Error::file(&path, e))?;
            match backend {
                Some(b) => {
                    t.per_backend.insert((task, b), text);
                }
                None => {
                    t.defaults.insert(task, text);
                }
            }
        }
        Ok(t)
    }

    pub fn template(&self, task: LlmTask, backend: &str) -> &str {
        self.per_backend
            .get(&(task, backend.to_string()))
            .or_else(|| self.defaults.get(&task))
            .map(String::as_str)
            .unwrap_or_default()
    }

    pub fn render(&self, backend: &str, request: &LlmRequest) -> String {
        let aliases = if request.aliases.is_empty() { "(none)".to_string() } else { request.aliases.join(", ") };
        let description = if request.description.is_empty() { "(none)" } else { request.description.as_str() };
        self.template(request.task(), backend)
            .replace("{name}", &request.entity_name)
            .replace("{description}", description)
            .replace("{aliases}", &aliases)
            .replace("{category}", request.category.as_deref().unwrap_or(""))
            .replace("{ancestors}", &request.ancestors.join(", "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backend_override_wins() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("classify_visual.gpt.txt"), "custom {name}").unwrap();
        let t = PromptTemplates::load_dir(dir.path()).unwrap();
        let req = LlmRequest { task: Some(LlmTask::ClassifyVisual), entity_name: "tiger".into(), ..Default::default() };
        assert_eq!(t.render("gpt", &req), "custom tiger");
        assert!(t.render("other", &req).contains("tiger"));
        assert!(!t.render("other", &req).contains("{name}"));
    }
}
