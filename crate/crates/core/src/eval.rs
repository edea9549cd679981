//! Zero-shot classification and image-text retrieval over pluggable
//! encoders.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Image and text towers sharing one embedding space.
pub trait Encoder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed_image(&self, image: &str) -> Result<Vec<f32>>;
    fn embed_text(&self, text: &str) -> Result<Vec<f32>>;
}

/// The 80 context prompts commonly used for ImageNet zero-shot evaluation;
/// `{}` marks the class name.
pub fn imagenet_templates() -> Vec<String> {
    include_str!("../data/imagenet_templates.txt")
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::to_string)
        .collect()
}

pub fn instantiate(template: &str, class_name: &str) -> String {
    template.replace("{}", class_name)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalItem {
    pub image: String,
    pub label: usize,
}

/// How prompt embeddings combine into a class embedding.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMean {
    /// Unit-normalize each prompt embedding, average, re-normalize.
    #[default]
    NormalizeFirst,
    /// Average the raw embeddings, then normalize.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSpec {
    pub class_names: Vec<String>,
    #[serde(default)]
    pub prompt_templates: Option<Vec<String>>,
    #[serde(default)]
    pub prompt_mean: PromptMean,
    pub items: Vec<EvalItem>,
}

impl EvalSpec {
    pub fn validate(&self) -> Result<()> {
        if self.class_names.is_empty() {
            return Err(Error::Argument("evaluation needs at least one class".into()));
        }
        if let Some(bad) = self.items.iter().find(|i| i.label >= self.class_names.len()) {
            return Err(Error::Argument(format!("label {} of {} is out of range", bad.label, bad.image)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalSpec {
    pub pairs: Vec<(String, Vec<String>)>,
}

fn normalized(v: Vec<f32>, what: &str) -> Result<Vec<f64>> {
    unit(v.into_iter().map(f64::from).collect(), what)
}

fn unit(v: Vec<f64>, what: &str) -> Result<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n.is_finite() && n > 0.0) {
        return Err(Error::Contract(format!("zero-norm embedding for {what}")));
    }
    Ok(v.into_iter().map(|x| x / n).collect())
}

fn check_dim(v: &[f32], dim: usize, what: &str) -> Result<()> {
    if v.len() != dim {
        return Err(Error::Argument(format!("embedding for {what} has dimension {}, expected {dim}", v.len())));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Index of the largest value; the first wins ties.
fn argmax(scores: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, s) in scores.enumerate() {
        if s > best.1 {
            best = (i, s);
        }
    }
    best.0
}

/// One unit vector per class: the normalized class-name embedding, or the
/// normalized mean of the prompt embeddings (see [`PromptMean`]).
pub fn class_embeddings(spec: &EvalSpec, encoder: &dyn Encoder, use_prompts: bool) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    let templates: Vec<String> = if use_prompts {
        match &spec.prompt_templates {
            Some(t) if !t.is_empty() => t.clone(),
            _ => return Err(Error::Argument("prompt ensembling requested without templates".into())),
        }
    } else {
        vec!["{}".to_string()]
    };
    spec.class_names
        .iter()
        .map(|class| {
            let mut sum = vec![0.0f64; encoder.dim()];
            for t in &templates {
                let text = instantiate(t, class);
                let e = encoder.embed_text(&text)?;
                check_dim(&e, encoder.dim(), &text)?;
                let e = match spec.prompt_mean {
                    PromptMean::NormalizeFirst => normalized(e, &format!("class `{class}`"))?,
                    PromptMean::Raw => e.into_iter().map(f64::from).collect(),
                };
                for (s, x) in sum.iter_mut().zip(e) {
                    *s += x;
                }
            }
            let mean: Vec<f64> = sum.iter().map(|x| x / templates.len() as f64).collect();
            unit(mean, &format!("class `{class}`"))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub predictions: Vec<usize>,
    pub accuracy: f64,
}

/// Nearest class by cosine similarity for every item.
pub fn classify(items: &[EvalItem], class_matrix: &[Vec<f64>], encoder: &dyn Encoder) -> Result<Classification> {
    let mut predictions = Vec::with_capacity(items.len());
    let mut correct = 0usize;
    for item in items {
        let raw = encoder.embed_image(&item.image)?;
        if class_matrix.first().is_some_and(|c| c.len() != raw.len()) {
            return Err(Error::Argument(format!(
                "image {} embeds to dimension {}, classes have {}",
                item.image,
                raw.len(),
                class_matrix[0].len()
            )));
        }
        let v = normalized(raw, &format!("image {}", item.image))?;
        let p = argmax(class_matrix.iter().map(|w| dot(&v, w)));
        correct += usize::from(p == item.label);
        predictions.push(p);
    }
    let accuracy = if items.is_empty() { 0.0 } else { correct as f64 / items.len() as f64 };
    Ok(Classification { predictions, accuracy })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    ClassName,
    PromptEnsemble,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub class_name_accuracy: f64,
    pub prompt_accuracy: Option<f64>,
    pub best: f64,
    pub winner: Protocol,
}

/// Accuracy with bare class names and with prompt ensembling; the better
/// one wins, the bare names on a tie.
pub fn best_of_protocols(spec: &EvalSpec, encoder: &dyn Encoder) -> Result<ProtocolReport> {
    let plain = classify(&spec.items, &class_embeddings(spec, encoder, false)?, encoder)?.accuracy;
    let prompted = match &spec.prompt_templates {
        Some(t) if !t.is_empty() => {
            Some(classify(&spec.items, &class_embeddings(spec, encoder, true)?, encoder)?.accuracy)
        }
        _ => None,
    };
    let (best, winner) = match prompted {
        Some(p) if p > plain => (p, Protocol::PromptEnsemble),
        _ => (plain, Protocol::ClassName),
    };
    Ok(ProtocolReport { class_name_accuracy: plain, prompt_accuracy: prompted, best, winner })
}

/// Best accuracy over class-name variants of one benchmark (for example
/// common and scientific names).
pub fn multi_name_best(variants: &[EvalSpec], encoder: &dyn Encoder) -> Result<(f64, Vec<ProtocolReport>)> {
    let first = variants.first().ok_or_else(|| Error::Argument("no variants given".into()))?;
    if let Some(v) = variants.iter().find(|v| v.items != first.items || v.class_names.len() != first.class_names.len())
    {
        return Err(Error::Argument(format!(
            "variant with classes starting `{}` does not share items with the first",
            v.class_names.first().map(String::as_str).unwrap_or("")
        )));
    }
    let reports = variants.iter().map(|v| best_of_protocols(v, encoder)).collect::<Result<Vec<_>>>()?;
    let best = reports.iter().map(|r| r.best).fold(f64::NEG_INFINITY, f64::max);
    Ok((best, reports))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub image_to_text: f64,
    pub text_to_image: f64,
    pub average: f64,
}

/// Recall@1 in both directions. Ties go to the lowest index.
pub fn retrieval_recall1(spec: &RetrievalSpec, encoder: &dyn Encoder) -> Result<RetrievalReport> {
    let images = spec
        .pairs
        .iter()
        .map(|(img, _)| normalized(encoder.embed_image(img)?, &format!("image {img}")))
        .collect::<Result<Vec<_>>>()?;
    let mut texts = Vec::new();
    let mut owner = Vec::new();
    for (i, (img, ts)) in spec.pairs.iter().enumerate() {
        if ts.is_empty() {
            return Err(Error::Argument(format!("image {img} has no texts")));
        }
        for t in ts {
            texts.push(normalized(encoder.embed_text(t)?, &format!("text `{t}`"))?);
            owner.push(i);
        }
    }
    let rate = |hits: usize, n: usize| if n == 0 { 0.0 } else { hits as f64 / n as f64 };
    let i2t = images.iter().enumerate().filter(|(i, v)| owner[argmax(texts.iter().map(|t| dot(v, t)))] == *i).count();
    let t2i = texts.iter().enumerate().filter(|(k, t)| argmax(images.iter().map(|v| dot(v, t))) == owner[*k]).count();
    let (a, b) = (rate(i2t, images.len()), rate(t2i, texts.len()));
    Ok(RetrievalReport { image_to_text: a, text_to_image: b, average: (a + b) / 2.0 })
}

/// Encoder backed by precomputed embeddings, e.g. exported from a model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LookupEncoder {
    pub dim: usize,
    pub images: HashMap<String, Vec<f32>>,
    pub texts: HashMap<String, Vec<f32>>,
}

impl LookupEncoder {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read(path).map_err(|e| Error::file(path, e))?;
        let enc: Self = serde_json::from_slice(&raw)?;
        if let Some((k, v)) = enc.images.iter().chain(enc.texts.iter()).find(|(_, v)| v.len() != enc.dim) {
            return Err(Error::Schema(format!("embedding for `{k}` has dimension {}, expected {}", v.len(), enc.dim)));
        }
        Ok(enc)
    }
}

impl Encoder for LookupEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_image(&self, image: &str) -> Result<Vec<f32>> {
        self.images.get(image).cloned().ok_or_else(|| Error::Argument(format!("no embedding for image {image}")))
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f32>> {
        self.texts.get(text).cloned().ok_or_else(|| Error::Argument(format!("no embedding for text `{text}`")))
    }
}
