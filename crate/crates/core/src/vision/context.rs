//! Textual context for the vision encoder: extraction from an image via a
//! frozen retrieval model, per-batch sampling, and the light-weight
//! embedder that turns context strings into visual-space tokens.

use cookalign_autograd::nn::Linear;
use cookalign_autograd::{Graph, ParamStore, Var};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Image;
use crate::error::{invalid, Error, Result};
use crate::ste::{EntityIndex, ImageEncoder};
use crate::text::{tokenize, Stack, TokenEmbedding, Vocabulary};

pub const DEFAULT_TITLES: usize = 5;
pub const DEFAULT_INGREDIENTS: usize = 15;
pub const TRAIN_TITLES: usize = 2;
pub const TRAIN_INGREDIENTS: usize = 4;

/// Candidate titles and ingredients retrieved for one image.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextBundle {
    pub titles: Vec<String>,
    pub ingredients: Vec<String>,
}

impl ContextBundle {
    /// Deduplicates both lists (first occurrence wins) and checks the caps.
    pub fn new(titles: Vec<String>, ingredients: Vec<String>, max_titles: usize, max_ingredients: usize) -> Result<Self> {
        let dedup = |v: Vec<String>| {
            let mut seen = std::collections::HashSet::new();
            v.into_iter().filter(|s| seen.insert(s.clone())).collect::<Vec<_>>()
        };
        let (titles, ingredients) = (dedup(titles), dedup(ingredients));
        if titles.len() > max_titles || ingredients.len() > max_ingredients {
            return Err(invalid(format!(
                "context bundle has {}/{} titles/ingredients, caps are {max_titles}/{max_ingredients}",
                titles.len(),
                ingredients.len()
            )));
        }
        Ok(Self { titles, ingredients })
    }
}

/// Top-`n` titles and ingredients for `image` by cosine similarity under
/// `encoder`. Indexes smaller than `n` are returned whole.
pub fn extract_context_bundle(
    image: &Image,
    title_index: &EntityIndex,
    ingredient_index: &EntityIndex,
    encoder: &dyn ImageEncoder,
    n_titles: usize,
    n_ingredients: usize,
) -> Result<ContextBundle> {
    for idx in [title_index, ingredient_index] {
        if idx.embed_dim() != encoder.embed_dim() {
            return Err(Error::DimensionMismatch { expected: idx.embed_dim(), actual: encoder.embed_dim() });
        }
    }
    let query = encoder.encode_image(image);
    let pick = |idx: &EntityIndex, n: usize| -> Result<Vec<String>> {
        Ok(idx.top_k_clamped(&query, n)?.into_iter().map(|(i, _)| idx.entities()[i].clone()).collect())
    };
    Ok(ContextBundle { titles: pick(title_index, n_titles)?, ingredients: pick(ingredient_index, n_ingredients)? })
}

/// Training draws `n_titles` / `n_ingredients` uniformly without
/// replacement (kept in bundle order); without an rng, the whole bundle is
/// returned. Requests larger than a list return the whole list.
pub fn sample_context<R: Rng + ?Sized>(
    bundle: &ContextBundle,
    n_titles: usize,
    n_ingredients: usize,
    rng: Option<&mut R>,
) -> (Vec<String>, Vec<String>) {
    let Some(rng) = rng else {
        return (bundle.titles.clone(), bundle.ingredients.clone());
    };
    let mut draw = |v: &[String], n: usize| -> Vec<String> {
        if n >= v.len() {
            return v.to_vec();
        }
        let mut idx = sample(rng, v.len(), n).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| v[i].clone()).collect()
    };
    let titles = draw(&bundle.titles, n_titles);
    let ingredients = draw(&bundle.ingredients, n_ingredients);
    (titles, ingredients)
}

/// Where a context type enters the vision encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Injection {
    /// All tokens appended to the patch tokens.
    Input,
    /// Class token concatenated before the output projection.
    Output,
    Off,
}

/// Injection position of each context type.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContextConfig {
    #[serde(rename = "ing_position")]
    pub ingredients: Injection,
    #[serde(rename = "ttl_position")]
    pub titles: Injection,
}

impl ContextConfig {
    pub const OFF: Self = Self { ingredients: Injection::Off, titles: Injection::Off };
    /// Ingredients at the input, titles at the output.
    pub const DEFAULT: Self = Self { ingredients: Injection::Input, titles: Injection::Output };

    pub fn is_off(&self) -> bool {
        self.ingredients == Injection::Off && self.titles == Injection::Off
    }
}

impl Default for ContextConfig {
    fn default() -> Self {
        Self::DEFAULT
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContextEmbedderConfig {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub d_ff: usize,
    pub max_len: usize,
}

impl Default for ContextEmbedderConfig {
    fn default() -> Self {
        Self { d_model: 64, heads: 2, layers: 1, d_ff: 128, max_len: 48 }
    }
}

/// Light text encoder + linear projection into the visual token space.
#[derive(Clone, Debug)]
pub struct ContextEmbedder {
    pub config: ContextEmbedderConfig,
    pub embedding: TokenEmbedding,
    pub stack: Stack,
    pub projection: Linear,
}

impl ContextEmbedder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        config: ContextEmbedderConfig,
        vocab_size: usize,
        visual_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let c = &config;
        if c.d_model % c.heads != 0 || c.max_len < 2 {
            return Err(invalid(format!("bad context embedder config {c:?}")));
        }
        Ok(Self {
            embedding: TokenEmbedding::new(store, &format!("{prefix}.tokens"), vocab_size, c.max_len, c.d_model, rng)?,
            stack: Stack::new(store, &format!("{prefix}.encoder"), c.d_model, c.heads, c.d_ff, c.layers, rng)?,
            projection: Linear::new(store, &format!("{prefix}.proj"), c.d_model, visual_dim, true, rng)?,
            config,
        })
    }

    /// All projected token embeddings of the strings joined into one
    /// sentence (`None` for an empty list).
    pub fn tokens(&self, g: &mut Graph, ps: &ParamStore, vocab: &Vocabulary, strings: &[String]) -> Option<Var> {
        if strings.is_empty() {
            return None;
        }
        let ids = tokenize(&strings.join(" "), vocab, self.config.max_len).active();
        let x = self.embedding.forward(g, ps, &ids);
        let h = self.stack.forward(g, ps, x);
        Some(self.projection.forward(g, ps, h))
    }

    /// The projected CLS embedding only (`None` for an empty list).
    pub fn pooled(&self, g: &mut Graph, ps: &ParamStore, vocab: &Vocabulary, strings: &[String]) -> Option<Var> {
        let t = self.tokens(g, ps, vocab, strings)?;
        Some(g.row(t, 0))
    }

    pub fn embed(&self, g: &mut Graph, ps: &ParamStore, vocab: &Vocabulary, strings: &[String], injection: Injection) -> Option<Var> {
        match injection {
            Injection::Input => self.tokens(g, ps, vocab, strings),
            Injection::Output => self.pooled(g, ps, vocab, strings),
            Injection::Off => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bundle() -> ContextBundle {
        ContextBundle {
            titles: (0..5).map(|i| format!("t{i}")).collect(),
            ingredients: (0..15).map(|i| format!("i{i}")).collect(),
        }
    }

    #[test]
    fn sampling_rules() {
        let b = bundle();
        let (t, i) = sample_context::<ChaCha8Rng>(&b, 2, 4, None);
        assert_eq!((t.len(), i.len()), (5, 15));

        let mut r1 = ChaCha8Rng::seed_from_u64(3);
        let mut r2 = ChaCha8Rng::seed_from_u64(3);
        let a = sample_context(&b, 2, 4, Some(&mut r1));
        assert_eq!(a, sample_context(&b, 2, 4, Some(&mut r2)));
        assert_eq!((a.0.len(), a.1.len()), (2, 4));

        let one = ContextBundle { titles: vec!["x".into()], ingredients: vec![] };
        let (t, i) = sample_context(&one, 2, 4, Some(&mut r1));
        assert_eq!((t, i.len()), (vec!["x".to_string()], 0));
    }

    #[test]
    fn bundle_caps_and_dedup() {
        let b = ContextBundle::new(vec!["a".into(), "a".into()], vec![], 5, 15).unwrap();
        assert_eq!(b.titles, ["a"]);
        assert!(ContextBundle::new(vec!["a".into(), "b".into()], vec![], 1, 15).is_err());
    }
}
