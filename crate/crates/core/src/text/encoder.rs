//! Hierarchical structured-text encoder.
//!
//! Three stages per entity class (title, ingredients, instructions):
//!
//! 1. a sentence transformer encodes every sentence on its own and keeps its
//!    CLS output;
//! 2. a list transformer runs over `[list CLS; sentence embeddings]`;
//! 3. a cross-attention decoder lets each class's list tokens query the
//!    tokens of the other two classes; its output is added to the list
//!    tokens.
//!
//! The list-CLS outputs of the three classes are averaged, projected to the
//! shared space and L2-normalized. An empty class is replaced by a learned
//! null token so the decoders always have queries and keys.

use cookalign_autograd::nn::{CrossAttentionLayer, EncoderLayer, LayerNorm, Linear};
use cookalign_autograd::{Graph, Matrix, ParamId, ParamStore, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{tokenize, TokenSequence, Vocabulary};
use crate::error::{invalid, Result};
use crate::ste::{EntityClass, StructuredDocument};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextEncoderConfig {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub d_ff: usize,
    pub d_emb: usize,
    pub max_seq_len: usize,
    pub max_list_len: usize,
    /// Positional embeddings in the list transformer.
    pub list_positions: bool,
}

impl Default for TextEncoderConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            heads: 2,
            layers: 1,
            d_ff: 128,
            d_emb: 128,
            max_seq_len: 16,
            max_list_len: 8,
            list_positions: true,
        }
    }
}

/// Token embedding table plus learned positions, shared by all sentence
/// encoders of one model.
#[derive(Clone, Debug)]
pub struct TokenEmbedding {
    pub table: ParamId,
    pub positions: ParamId,
}

impl TokenEmbedding {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        vocab_size: usize,
        max_len: usize,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            table: store.insert(format!("{name}.table"), cookalign_autograd::nn::embedding_init(vocab_size, dim, rng))?,
            positions: store.insert_normal(format!("{name}.positions"), max_len, dim, 0.02, rng)?,
        })
    }

    /// Embeddings of `ids` plus positions `0..ids.len()`.
    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, ids: &[usize]) -> Var {
        let table = g.param(ps, self.table);
        let tok = g.gather(table, ids);
        let pos = g.param(ps, self.positions);
        let pos = g.slice_rows(pos, 0, ids.len());
        g.add(tok, pos)
    }

    /// Re-keys the table to `new_vocab`: rows of tokens present in both
    /// vocabularies are carried over, new tokens get fresh rows.
    pub fn swap_vocabulary<R: Rng + ?Sized>(
        &self,
        store: &mut ParamStore,
        old: &Vocabulary,
        new: &Vocabulary,
        rng: &mut R,
    ) {
        let old_table = store.get(self.table).clone();
        let dim = old_table.cols();
        let mut table = cookalign_autograd::nn::embedding_init(new.len(), dim, rng);
        for (id, tok) in new.tokens().iter().enumerate() {
            if let Some(old_id) = old.get(tok) {
                table.row_mut(id).copy_from_slice(old_table.row(old_id));
            }
        }
        store.replace(self.table, table);
    }
}

/// Transformer layers + final norm, pooled at position 0.
#[derive(Clone, Debug)]
pub struct Stack {
    pub layers: Vec<EncoderLayer>,
    pub norm: LayerNorm,
}

impl Stack {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        d_ff: usize,
        layers: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let layers = (0..layers)
            .map(|i| EncoderLayer::new(store, &format!("{name}.layer{i}"), dim, heads, d_ff, rng))
            .collect::<Result<_, _>>()?;
        Ok(Self { layers, norm: LayerNorm::new(store, &format!("{name}.norm"), dim)? })
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, mut x: Var) -> Var {
        for l in &self.layers {
            x = l.forward(g, ps, x);
        }
        self.norm.forward(g, ps, x)
    }
}

#[derive(Clone, Debug)]
struct ClassEncoder {
    sentence: Stack,
    list_cls: ParamId,
    list_positions: ParamId,
    list: Stack,
    null: ParamId,
    cross: CrossAttentionLayer,
}

/// Output of one document forward pass.
#[derive(Clone, Copy, Debug)]
pub struct TextForward {
    /// `1 × d_emb`, unit norm.
    pub embedding: Var,
    /// All decoder-output tokens of the three classes, `n × d_model`; the
    /// matching head attends over these.
    pub tokens: Var,
}

#[derive(Clone, Debug)]
pub struct HierarchicalTextEncoder {
    pub config: TextEncoderConfig,
    pub embedding: TokenEmbedding,
    classes: Vec<ClassEncoder>,
    pub projection: Linear,
}

impl HierarchicalTextEncoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        config: TextEncoderConfig,
        vocab_size: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let c = &config;
        if c.d_model % c.heads != 0 || c.max_seq_len < 2 || c.max_list_len == 0 {
            return Err(invalid(format!("bad text encoder config {c:?}")));
        }
        let embedding = TokenEmbedding::new(store, &format!("{prefix}.tokens"), vocab_size, c.max_seq_len, c.d_model, rng)?;
        let mut classes = Vec::new();
        for class in EntityClass::ALL {
            let p = format!("{prefix}.{}", class.name());
            classes.push(ClassEncoder {
                sentence: Stack::new(store, &format!("{p}.sentence"), c.d_model, c.heads, c.d_ff, c.layers, rng)?,
                list_cls: store.insert_normal(format!("{p}.list_cls"), 1, c.d_model, 0.1, rng)?,
                list_positions: store.insert_normal(format!("{p}.list_positions"), c.max_list_len + 1, c.d_model, 0.02, rng)?,
                list: Stack::new(store, &format!("{p}.list"), c.d_model, c.heads, c.d_ff, c.layers, rng)?,
                null: store.insert_normal(format!("{p}.null"), 1, c.d_model, 0.1, rng)?,
                cross: CrossAttentionLayer::new(store, &format!("{p}.cross"), c.d_model, c.heads, c.d_ff, rng)?,
            });
        }
        let projection = Linear::new(store, &format!("{prefix}.proj"), c.d_model, c.d_emb, true, rng)?;
        Ok(Self { config, embedding, classes, projection })
    }

    /// Tokenizes every sentence of every class (lists truncated to
    /// `max_list_len`).
    pub fn tokenize_document(&self, vocab: &Vocabulary, doc: &StructuredDocument) -> [Vec<TokenSequence>; 3] {
        EntityClass::ALL.map(|class| {
            doc.texts(class)
                .into_iter()
                .take(self.config.max_list_len)
                .map(|t| tokenize(t, vocab, self.config.max_seq_len))
                .collect()
        })
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, vocab: &Vocabulary, doc: &StructuredDocument) -> Result<TextForward> {
        if doc.is_empty() {
            return Err(invalid("document has no title, entities or events"));
        }
        self.forward_tokens(g, ps, &self.tokenize_document(vocab, doc))
    }

    /// Forward pass over pre-tokenized classes (title, ingredients,
    /// instructions). At least one class must be non-empty.
    pub fn forward_tokens(&self, g: &mut Graph, ps: &ParamStore, classes: &[Vec<TokenSequence>; 3]) -> Result<TextForward> {
        if classes.iter().all(Vec::is_empty) {
            return Err(invalid("document has no title, entities or events"));
        }
        let mut list_tokens = Vec::with_capacity(3);
        for (enc, sentences) in self.classes.iter().zip(classes) {
            list_tokens.push(self.encode_class(g, ps, enc, sentences)?);
        }
        let mut decoded = Vec::with_capacity(3);
        let mut pooled = Vec::with_capacity(3);
        for (i, enc) in self.classes.iter().enumerate() {
            let others: Vec<Var> = (0..3).filter(|&j| j != i).map(|j| list_tokens[j]).collect();
            let context = g.concat_rows(&others);
            let delta = enc.cross.delta(g, ps, list_tokens[i], context);
            let out = g.add(list_tokens[i], delta);
            pooled.push(g.row(out, 0));
            decoded.push(out);
        }
        let pooled = g.concat_rows(&pooled);
        let mean = g.mean_rows(pooled);
        let projected = self.projection.forward(g, ps, mean);
        let embedding = g.l2_normalize_rows(projected);
        let tokens = g.concat_rows(&decoded);
        Ok(TextForward { embedding, tokens })
    }

    fn encode_class(&self, g: &mut Graph, ps: &ParamStore, enc: &ClassEncoder, sentences: &[TokenSequence]) -> Result<Var> {
        if sentences.is_empty() {
            return Ok(g.param(ps, enc.null));
        }
        if sentences.len() > self.config.max_list_len {
            return Err(invalid(format!("{} sentences exceed max_list_len {}", sentences.len(), self.config.max_list_len)));
        }
        let mut rows = Vec::with_capacity(sentences.len() + 1);
        rows.push(g.param(ps, enc.list_cls));
        for s in sentences {
            let ids = s.active();
            if ids.len() > self.config.max_seq_len {
                return Err(invalid(format!("sequence of {} tokens exceeds max_seq_len {}", ids.len(), self.config.max_seq_len)));
            }
            let x = self.embedding.forward(g, ps, &ids);
            let h = enc.sentence.forward(g, ps, x);
            rows.push(g.row(h, 0));
        }
        let mut list = g.concat_rows(&rows);
        if self.config.list_positions {
            let pos = g.param(ps, enc.list_positions);
            let pos = g.slice_rows(pos, 0, sentences.len() + 1);
            list = g.add(list, pos);
        }
        Ok(enc.list.forward(g, ps, list))
    }

    pub fn encode_document(&self, ps: &ParamStore, vocab: &Vocabulary, doc: &StructuredDocument) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, ps, vocab, doc)?;
        Ok(g.value(out.embedding).data().to_vec())
    }

    /// Row `i` is the embedding of `docs[i]`. Each document gets its own
    /// sequences, so nothing leaks across examples.
    pub fn encode_document_batch(&self, ps: &ParamStore, vocab: &Vocabulary, docs: &[StructuredDocument]) -> Result<Matrix> {
        if docs.is_empty() {
            return Err(invalid("empty document batch"));
        }
        let mut data = Vec::with_capacity(docs.len() * self.config.d_emb);
        for d in docs {
            data.extend(self.encode_document(ps, vocab, d)?);
        }
        Ok(Matrix::from_vec(docs.len(), self.config.d_emb, data))
    }
}
