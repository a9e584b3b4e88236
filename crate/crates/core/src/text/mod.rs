//! Structured-document text encoder and its vocabulary.

mod encoder;
mod vocab;

pub use encoder::{HierarchicalTextEncoder, Stack, TextEncoderConfig, TextForward, TokenEmbedding};
pub use vocab::{tokenize, words, TokenSequence, Vocabulary, CLS, PAD, UNK};
