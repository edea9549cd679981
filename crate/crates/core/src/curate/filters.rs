use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    TooLong,
    Json,
    Aspect,
    Area,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::TooLong => "too_long",
            DropReason::Json => "json",
            DropReason::Aspect => "aspect",
            DropReason::Area => "area",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextFilter {
    /// Texts longer than this many characters are dropped.
    pub max_chars: usize,
    pub drop_json: bool,
}

impl Default for TextFilter {
    fn default() -> Self {
        Self { max_chars: 500, drop_json: true }
    }
}

impl TextFilter {
    pub fn check(&self, text: &str) -> Option<DropReason> {
        if text.chars().count() > self.max_chars {
            return Some(DropReason::TooLong);
        }
        if self.drop_json && looks_like_json(text) {
            return Some(DropReason::Json);
        }
        None
    }
}

/// Whole-string parse as a JSON object or array.
pub fn looks_like_json(text: &str) -> bool {
    matches!(
        serde_json::from_str::<serde_json::Value>(text.trim()),
        Ok(serde_json::Value::Object(_) | serde_json::Value::Array(_))
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImageFilter {
    /// Long side over short side above this ratio is dropped.
    pub max_aspect: u64,
    /// Images with fewer pixels are dropped.
    pub min_area: u64,
}

impl Default for ImageFilter {
    fn default() -> Self {
        Self { max_aspect: 4, min_area: 4096 }
    }
}

impl ImageFilter {
    /// Integer arithmetic only, so the boundaries are exact.
    pub fn check(&self, width: u32, height: u32) -> Option<DropReason> {
        let (w, h) = (u64::from(width), u64::from(height));
        let (long, short) = (w.max(h), w.min(h));
        if short == 0 || long > self.max_aspect * short {
            return Some(DropReason::Aspect);
        }
        if w * h < self.min_area {
            return Some(DropReason::Area);
        }
        None
    }
}

pub fn filter_text(alt_text: &str) -> Option<DropReason> {
    TextFilter::default().check(alt_text)
}

pub fn filter_image(width: u32, height: u32) -> Option<DropReason> {
    ImageFilter::default().check(width, height)
}
