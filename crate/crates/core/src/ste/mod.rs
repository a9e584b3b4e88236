//! Structured text extraction: turns image captions into
//! (title, local entities, event) documents.
//!
//! * title: the caption's object phrases joined with `" and "`;
//! * local entities: the `k` database entities closest to the image under a
//!   frozen image encoder;
//! * event: the caption's sentences.

pub mod encoder;
pub mod extract;
pub mod index;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::data::Image;
use crate::error::{invalid, Error, Result};
pub use cookalign_autograd::cosine;
pub use encoder::{HashTextEncoder, ImageEncoder, RandomProjectionImageEncoder, RidgeImageEncoder, TextEmbedder, ToyClip};
pub use extract::{HeuristicExtractor, ObjectExtractor};
pub use index::EntityIndex;

/// A raw caption attached to an image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Caption {
    pub image_id: String,
    pub text: String,
}

impl Caption {
    pub fn new(image_id: impl Into<String>, text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(invalid("caption text is empty"));
        }
        Ok(Self { image_id: image_id.into(), text })
    }
}

/// The three entity classes of a structured document.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityClass {
    Title,
    Ingredients,
    Instructions,
}

impl EntityClass {
    pub const ALL: [EntityClass; 3] = [EntityClass::Title, EntityClass::Ingredients, EntityClass::Instructions];

    pub fn name(self) -> &'static str {
        match self {
            EntityClass::Title => "title",
            EntityClass::Ingredients => "ingredients",
            EntityClass::Instructions => "instructions",
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            EntityClass::Title => "Ttl",
            EntityClass::Ingredients => "Ing",
            EntityClass::Instructions => "Ins",
        }
    }
}

/// Title (global), local entities and event sentences.
///
/// Documents built by [`StructuredDocument::new`] satisfy [`validate`]:
/// non-empty title, no duplicate entities, no empty event sentence.
/// [`without`](Self::without) produces deliberately incomplete documents for
/// the missing-entity evaluation.
///
/// [`validate`]: StructuredDocument::validate
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredDocument {
    pub title: String,
    pub local_entities: Vec<String>,
    pub event: Vec<String>,
}

impl StructuredDocument {
    pub fn new(title: impl Into<String>, local_entities: Vec<String>, event: Vec<String>) -> Result<Self> {
        let doc = Self { title: title.into(), local_entities, event };
        doc.validate()?;
        Ok(doc)
    }

    pub fn validate(&self) -> Result<()> {
        if self.title.trim().is_empty() {
            return Err(invalid("document title is empty"));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = self.local_entities.iter().find(|e| !seen.insert(e.as_str())) {
            return Err(invalid(format!("duplicate local entity `{dup}`")));
        }
        if self.event.iter().any(|s| s.trim().is_empty()) {
            return Err(invalid("empty event sentence"));
        }
        Ok(())
    }

    /// Texts of one entity class; the title is a one-element list unless empty.
    pub fn texts(&self, class: EntityClass) -> Vec<&str> {
        match class {
            EntityClass::Title if self.title.trim().is_empty() => Vec::new(),
            EntityClass::Title => vec![self.title.as_str()],
            EntityClass::Ingredients => self.local_entities.iter().map(String::as_str).collect(),
            EntityClass::Instructions => self.event.iter().map(String::as_str).collect(),
        }
    }

    /// Copy with the given entity classes emptied.
    pub fn without(&self, drop: &[EntityClass]) -> Self {
        let mut d = self.clone();
        for c in drop {
            match c {
                EntityClass::Title => d.title.clear(),
                EntityClass::Ingredients => d.local_entities.clear(),
                EntityClass::Instructions => d.event.clear(),
            }
        }
        d
    }

    pub fn is_empty(&self) -> bool {
        EntityClass::ALL.iter().all(|&c| self.texts(c).is_empty())
    }
}

/// Result of title extraction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Title {
    pub text: String,
    /// No object could be extracted and the whole caption was used.
    pub fallback: bool,
}

pub fn extract_title(caption: &Caption) -> Title {
    extract_title_with(&HeuristicExtractor, &caption.text)
}

pub fn extract_title_with(extractor: &dyn ObjectExtractor, text: &str) -> Title {
    let objects = extractor.objects(text);
    if objects.is_empty() {
        Title { text: text.trim().to_string(), fallback: true }
    } else {
        Title { text: objects.join(" and "), fallback: false }
    }
}

/// Collects the objects of every caption, in first-appearance order, and
/// embeds them with `text_encoder`.
pub fn build_entity_index(captions: &[Caption], text_encoder: &dyn TextEmbedder) -> Result<EntityIndex> {
    build_entity_index_with(&HeuristicExtractor, captions, text_encoder)
}

pub fn build_entity_index_with(
    extractor: &dyn ObjectExtractor,
    captions: &[Caption],
    text_encoder: &dyn TextEmbedder,
) -> Result<EntityIndex> {
    if captions.is_empty() {
        return Err(invalid("no captions"));
    }
    let mut seen = HashSet::new();
    let mut entities = Vec::new();
    for c in captions {
        for o in extract::object_keys(extractor, &c.text) {
            if seen.insert(o.clone()) {
                entities.push(o);
            }
        }
    }
    if entities.is_empty() {
        return Err(Error::EmptyIndex);
    }
    EntityIndex::from_entities(entities, text_encoder)
}

/// The `k` entities closest (cosine) to the encoded image.
pub fn retrieve_local_entities(
    image: &Image,
    index: &EntityIndex,
    encoder: &dyn ImageEncoder,
    k: usize,
) -> Result<Vec<String>> {
    if encoder.embed_dim() != index.embed_dim() {
        return Err(Error::DimensionMismatch { expected: index.embed_dim(), actual: encoder.embed_dim() });
    }
    if k > index.len() {
        return Err(Error::TopKTooLarge { k, size: index.len() });
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let query = encoder.encode_image(image);
    Ok(index.top_k(&query, k)?.into_iter().map(|(i, _)| index.entities()[i].clone()).collect())
}

pub fn build_structured_pair(
    caption: &Caption,
    image: &Image,
    index: &EntityIndex,
    encoder: &dyn ImageEncoder,
    k: usize,
) -> Result<StructuredDocument> {
    let title = extract_title(caption).text;
    let local = retrieve_local_entities(image, index, encoder, k)?;
    StructuredDocument::new(title, local, extract::split_sentences(&caption.text))
}

/// Batch form of [`build_structured_pair`]; output order follows input order.
pub fn build_structured_pairs(
    pairs: &[(&Caption, &Image)],
    index: &EntityIndex,
    encoder: &dyn ImageEncoder,
    k: usize,
) -> Result<Vec<StructuredDocument>> {
    pairs.iter().map(|(c, i)| build_structured_pair(c, i, index, encoder, k)).collect()
}

/// A record from a corpus that already has some structure (keywords,
/// semantic types, a caption).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredRecord {
    #[serde(default)]
    pub title: Option<String>,
    #[serde(default)]
    pub local_entities: Option<Vec<String>>,
    #[serde(default)]
    pub event: Option<String>,
}

/// Keywords become local entities, the caption becomes the event, and a
/// missing title is extracted from the caption.
pub fn adapt_structured_record(record: &StructuredRecord) -> Result<StructuredDocument> {
    let event = record
        .event
        .as_deref()
        .filter(|e| !e.trim().is_empty())
        .ok_or_else(|| invalid("record has no event text"))?;
    let title = match record.title.as_deref().filter(|t| !t.trim().is_empty()) {
        Some(t) => t.to_string(),
        None => extract_title_with(&HeuristicExtractor, event).text,
    };
    let mut seen = HashSet::new();
    let local = record
        .local_entities
        .iter()
        .flatten()
        .filter(|e| seen.insert(e.as_str()))
        .cloned()
        .collect();
    StructuredDocument::new(title, local, extract::split_sentences(event))
}
