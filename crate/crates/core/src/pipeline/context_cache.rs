//! Per-image context bundles, extracted once with the frozen retrieval model
//! and stored next to the checkpoint.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::RecipePair;
use crate::error::{invalid, Error, Result};
use crate::ste::{EntityIndex, ToyClip};
use crate::vision::{extract_context_bundle, ContextBundle, DEFAULT_INGREDIENTS, DEFAULT_TITLES};

#[derive(Clone, Debug, PartialEq)]
pub struct ContextCache {
    pub clip: ToyClip,
    pub titles: EntityIndex,
    pub ingredients: EntityIndex,
    pub n_titles: usize,
    pub n_ingredients: usize,
    bundles: BTreeMap<String, ContextBundle>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    titles_hash: String,
    ingredients_hash: String,
    n_titles: usize,
    n_ingredients: usize,
}

#[derive(Serialize, Deserialize)]
struct BundleLine {
    image_id: String,
    #[serde(flatten)]
    bundle: ContextBundle,
}

fn unique<'a>(items: impl Iterator<Item = &'a String>) -> Vec<String> {
    let mut seen = HashSet::new();
    items.filter(|s| seen.insert(s.as_str())).cloned().collect()
}

impl ContextCache {
    /// Title and ingredient databases are the distinct titles and local
    /// entities of `pairs`; every pair's image gets a bundle.
    pub fn build(pairs: &[RecipePair], clip: ToyClip, n_titles: usize, n_ingredients: usize) -> Result<Self> {
        let titles = EntityIndex::from_entities(unique(pairs.iter().map(|p| &p.document.title)), &clip)?;
        let ingredients =
            EntityIndex::from_entities(unique(pairs.iter().flat_map(|p| &p.document.local_entities)), &clip)?;
        let mut cache = Self { clip, titles, ingredients, n_titles, n_ingredients, bundles: BTreeMap::new() };
        cache.extend(pairs)?;
        Ok(cache)
    }

    pub fn with_defaults(pairs: &[RecipePair], clip: ToyClip) -> Result<Self> {
        Self::build(pairs, clip, DEFAULT_TITLES, DEFAULT_INGREDIENTS)
    }

    /// Adds bundles for images not yet cached.
    pub fn extend(&mut self, pairs: &[RecipePair]) -> Result<()> {
        for p in pairs {
            if self.bundles.contains_key(&p.image_id) {
                continue;
            }
            let b = extract_context_bundle(p.image()?, &self.titles, &self.ingredients, &self.clip, self.n_titles, self.n_ingredients)?;
            self.bundles.insert(p.image_id.clone(), b);
        }
        Ok(())
    }

    pub fn get(&self, image_id: &str) -> Result<&ContextBundle> {
        self.bundles.get(image_id).ok_or_else(|| invalid(format!("context cache has no bundle for image `{image_id}`")))
    }

    pub(crate) fn require(cache: Option<&Self>) -> Result<&Self> {
        cache.ok_or_else(|| invalid("context injection is enabled but no context cache was provided"))
    }

    pub fn len(&self) -> usize {
        self.bundles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bundles.is_empty()
    }

    /// Every string that can reach a context embedder.
    pub fn strings(&self) -> impl Iterator<Item = &str> {
        self.titles.entities().iter().chain(self.ingredients.entities()).map(String::as_str)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.clip.save(&dir.join("clip.json"))?;
        self.titles.save(&dir.join("titles.index.jsonl"))?;
        self.ingredients.save(&dir.join("ingredients.index.jsonl"))?;
        let meta = Meta {
            titles_hash: self.titles.content_hash(),
            ingredients_hash: self.ingredients.content_hash(),
            n_titles: self.n_titles,
            n_ingredients: self.n_ingredients,
        };
        std::fs::write(dir.join("meta.json"), serde_json::to_vec_pretty(&meta)?)?;
        let mut w = BufWriter::new(File::create(dir.join("bundles.jsonl"))?);
        for (id, b) in &self.bundles {
            serde_json::to_writer(&mut w, &BundleLine { image_id: id.clone(), bundle: b.clone() })?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Loads a saved cache; bundles are only trusted when both indexes still
    /// hash to the values they were extracted with.
    pub fn load(dir: &Path) -> Result<Self> {
        let meta: Meta = serde_json::from_slice(&std::fs::read(dir.join("meta.json"))?)?;
        let titles = EntityIndex::load(&dir.join("titles.index.jsonl"))?;
        let ingredients = EntityIndex::load(&dir.join("ingredients.index.jsonl"))?;
        if titles.content_hash() != meta.titles_hash || ingredients.content_hash() != meta.ingredients_hash {
            return Err(Error::Checkpoint(format!("{}: context indexes do not match their cached bundles", dir.display())));
        }
        let path = dir.join("bundles.jsonl");
        let mut bundles = BTreeMap::new();
        for (i, line) in BufReader::new(File::open(&path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let l: BundleLine = serde_json::from_str(&line)
                .map_err(|e| Error::Parse { path: path.clone(), line: i + 1, message: e.to_string() })?;
            bundles.insert(l.image_id, l.bundle);
        }
        Ok(Self {
            clip: ToyClip::load(&dir.join("clip.json"))?,
            titles,
            ingredients,
            n_titles: meta.n_titles,
            n_ingredients: meta.n_ingredients,
            bundles,
        })
    }
}
