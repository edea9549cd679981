use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::Entity;
use crate::llm::{ask, LlmBackend, LlmRequest, LlmTask, NaturalTypeResponse, PromptTemplates};
use crate::text::casefold;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NaturalType {
    pub entity_id: String,
    pub type_name: String,
    pub reason: String,
}

fn fallback_reason(entity: &Entity, type_name: &str) -> String {
    format!("{} is a kind of {}", entity.name, type_name)
}

/// Ask `backend` which ancestor a person would most readily name for
/// `entity`. Answers are matched case-insensitively and returned with the
/// ancestor's own spelling. An answer outside the list gets one corrective
/// retry; after that the nearest ancestor is used.
pub fn select_natural_type(
    entity: &Entity,
    ancestors: &[String],
    backend: &dyn LlmBackend,
    templates: &PromptTemplates,
) -> Result<NaturalType> {
    if ancestors.is_empty() {
        return Err(Error::Contract(format!("no ancestors to choose a natural type from for {}", entity.identifier)));
    }
    let mut req = LlmRequest {
        task: Some(LlmTask::NaturalType),
        entity_id: entity.identifier.clone(),
        entity_name: entity.name.clone(),
        description: entity.description.clone().unwrap_or_default(),
        aliases: entity.aliases.clone(),
        ancestors: ancestors.to_vec(),
        ..Default::default()
    };
    req.prompt = templates.render(backend.id(), &req);

    let resolve = |answer: &str| {
        let a = casefold(answer.trim());
        ancestors.iter().find(|c| casefold(c.trim()) == a).cloned()
    };
    let make = |type_name: String, reason: String| {
        let reason = reason.trim().to_string();
        NaturalType {
            entity_id: entity.identifier.clone(),
            reason: if reason.is_empty() { fallback_reason(entity, &type_name) } else { reason },
            type_name,
        }
    };

    let first = ask::<NaturalTypeResponse>(backend, &req, 2);
    if ancestors.len() == 1 {
        let reason = first.map(|r| r.reason).unwrap_or_default();
        return Ok(make(ancestors[0].clone(), reason));
    }
    let bad = match first {
        Ok(r) => match resolve(&r.natural_type) {
            Some(name) => return Ok(make(name, r.reason)),
            None => r.natural_type,
        },
        Err(e) => {
            log::warn!("natural type for {} failed: {e}", entity.name);
            return Ok(make(ancestors[0].clone(), String::new()));
        }
    };

    log::warn!("natural type `{bad}` for {} is not an ancestor, retrying", entity.name);
    let mut retry = req.clone();
    retry.prompt = format!(
        "{}\n\nYour previous answer \"{bad}\" is not one of the candidates. \
         Answer again using exactly one of: {}.",
        req.prompt,
        ancestors.join(", ")
    );
    if let Ok(r) = ask::<NaturalTypeResponse>(backend, &retry, 1) {
        if let Some(name) = resolve(&r.natural_type) {
            return Ok(make(name, r.reason));
        }
    }
    Ok(make(ancestors[0].clone(), String::new()))
}
