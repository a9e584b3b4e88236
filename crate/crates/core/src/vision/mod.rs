//! Contextualized vision encoder.

pub mod context;
mod vit;

pub use context::{
    extract_context_bundle, sample_context, ContextBundle, ContextConfig, ContextEmbedder, ContextEmbedderConfig,
    Injection, DEFAULT_INGREDIENTS, DEFAULT_TITLES, TRAIN_INGREDIENTS, TRAIN_TITLES,
};
pub use vit::{is_vision_param, patchify, set_frozen, VisionConfig, VisionEncoder, VisionForward, BACKBONE_PREFIX, PROJECTION_PREFIX};
