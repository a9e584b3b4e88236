use cookalign_autograd::{Graph, Matrix, ParamStore, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use super::context_cache::ContextCache;
use crate::data::{Image, RecipePair};
use crate::error::Result;
use crate::losses::ItmHead;
use crate::ste::StructuredDocument;
use crate::text::{HierarchicalTextEncoder, TextForward, Vocabulary};
use crate::vision::{is_vision_param, sample_context, ContextConfig, ContextEmbedder, Injection, VisionEncoder, VisionForward};

pub const TEXT_PREFIX: &str = "text";
pub const CTX_ING_PREFIX: &str = "ctx_ing";
pub const CTX_TTL_PREFIX: &str = "ctx_ttl";
pub const ITM_PREFIX: &str = "itm";

/// Independent init stream per component, so e.g. the vision encoder's
/// initialization depends only on the seed and its own config.
pub(crate) fn component_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const STREAM_TEXT: u64 = 1;
const STREAM_VISION: u64 = 2;
const STREAM_CTX_ING: u64 = 3;
const STREAM_CTX_TTL: u64 = 4;
const STREAM_ITM: u64 = 5;
const STREAM_VOCAB: u64 = 6;

/// Every trainable component plus the vocabulary they share.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub store: ParamStore,
    pub text: HierarchicalTextEncoder,
    pub vision: VisionEncoder,
    pub ctx_ing: ContextEmbedder,
    pub ctx_ttl: ContextEmbedder,
    pub itm: ItmHead,
}

impl Model {
    pub fn new(config: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let v = vocab.len();
        let d = config.vision.d_model;
        let text = HierarchicalTextEncoder::new(&mut store, TEXT_PREFIX, config.text.clone(), v, &mut component_rng(seed, STREAM_TEXT))?;
        let vision = VisionEncoder::new(&mut store, config.vision.clone(), &mut component_rng(seed, STREAM_VISION))?;
        let ctx_ing =
            ContextEmbedder::new(&mut store, CTX_ING_PREFIX, config.context.clone(), v, d, &mut component_rng(seed, STREAM_CTX_ING))?;
        let ctx_ttl =
            ContextEmbedder::new(&mut store, CTX_TTL_PREFIX, config.context.clone(), v, d, &mut component_rng(seed, STREAM_CTX_TTL))?;
        let itm = ItmHead::new(
            &mut store,
            ITM_PREFIX,
            config.text.d_model,
            config.itm_heads,
            config.itm_d_ff,
            &mut component_rng(seed, STREAM_ITM),
        )?;
        Ok(Self { config, vocab, store, text, vision, ctx_ing, ctx_ttl, itm })
    }

    /// Rebuilds every token table for `vocab`, carrying over rows of tokens
    /// the two vocabularies share. All other weights are kept.
    pub fn swap_vocabulary(&mut self, vocab: Vocabulary, seed: u64) {
        let mut rng = component_rng(seed, STREAM_VOCAB);
        for emb in [&self.text.embedding, &self.ctx_ing.embedding, &self.ctx_ttl.embedding] {
            emb.swap_vocabulary(&mut self.store, &self.vocab, &vocab, &mut rng);
        }
        self.vocab = vocab;
    }

    pub fn text_forward(&self, g: &mut Graph, doc: &StructuredDocument) -> Result<TextForward> {
        self.text.forward(g, &self.store, &self.vocab, doc)
    }

    /// Vision forward with context. Input-position contexts are appended as
    /// tokens (ingredients first); output-position contexts are pooled and
    /// summed into the global vector.
    pub fn image_forward(
        &self,
        g: &mut Graph,
        image: &Image,
        context: &ContextConfig,
        titles: &[String],
        ingredients: &[String],
    ) -> Result<VisionForward> {
        let mut local = Vec::new();
        let mut global: Vec<Var> = Vec::new();
        for (emb, strings, inj) in
            [(&self.ctx_ing, ingredients, context.ingredients), (&self.ctx_ttl, titles, context.titles)]
        {
            let Some(v) = emb.embed(g, &self.store, &self.vocab, strings, inj) else { continue };
            match inj {
                Injection::Input => local.push(v),
                Injection::Output => global.push(v),
                Injection::Off => {}
            }
        }
        let local = match local.len() {
            0 => None,
            _ => Some(g.concat_rows(&local)),
        };
        let global = global.into_iter().reduce(|a, b| g.add(a, b));
        self.vision.forward(g, &self.store, image, local, global)
    }

    pub fn embed_text(&self, doc: &StructuredDocument) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let f = self.text_forward(&mut g, doc)?;
        Ok(g.value(f.embedding).data().to_vec())
    }

    /// Test-time image embedding: every cached context string is used.
    pub fn embed_image(&self, pair: &RecipePair, context: &ContextConfig, cache: Option<&ContextCache>) -> Result<Vec<f64>> {
        let (titles, ingredients) = match (context.is_off(), cache) {
            (true, _) => (Vec::new(), Vec::new()),
            (false, cache) => {
                let bundle = ContextCache::require(cache)?.get(&pair.image_id)?;
                sample_context::<ChaCha8Rng>(bundle, 0, 0, None)
            }
        };
        let mut g = Graph::new();
        let f = self.image_forward(&mut g, pair.image()?, context, &titles, &ingredients)?;
        Ok(g.value(f.embedding).data().to_vec())
    }

    /// Row-aligned text and image embeddings of `pairs`.
    pub fn embed_pairs(
        &self,
        pairs: &[RecipePair],
        context: &ContextConfig,
        cache: Option<&ContextCache>,
    ) -> Result<(Matrix, Matrix)> {
        let d = self.config.text.d_emb;
        let (mut t, mut v) = (Vec::with_capacity(pairs.len() * d), Vec::with_capacity(pairs.len() * d));
        for p in pairs {
            t.extend(self.embed_text(&p.document)?);
            v.extend(self.embed_image(p, context, cache)?);
        }
        Ok((Matrix::from_vec(pairs.len(), d, t), Matrix::from_vec(pairs.len(), d, v)))
    }

    /// SHA-256 over the names, shapes and values of matching parameters.
    pub fn params_hash_where(&self, keep: impl Fn(&str) -> bool) -> String {
        let mut h = Sha256::new();
        for (_, name, m) in self.store.iter().filter(|(_, n, _)| keep(n)) {
            h.update(name.as_bytes());
            h.update([0u8]);
            h.update((m.rows() as u64).to_le_bytes());
            h.update((m.cols() as u64).to_le_bytes());
            for v in m.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Hash of the vision encoder (backbone and output projection).
    pub fn vision_hash(&self) -> String {
        self.params_hash_where(is_vision_param)
    }
}
