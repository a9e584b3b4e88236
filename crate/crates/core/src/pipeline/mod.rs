//! Two-stage training: pretraining against a frozen vision encoder, then
//! finetuning with context injection; checkpoints, evaluation and ablations.

mod checkpoint;
mod config;
mod context_cache;
pub mod e2e;
mod eval;
mod model;
mod train;

pub use checkpoint::Checkpoint;
pub use config::{ModelConfig, Stage, StageConfig};
pub use context_cache::ContextCache;
pub use eval::{
    context_arms, embed_with_drop, evaluate, evaluate_missing_entities, run_ablation, AblationArm, AblationRow, EvalOptions,
};
pub use model::{Model, CTX_ING_PREFIX, CTX_TTL_PREFIX, ITM_PREFIX, TEXT_PREFIX};
pub use train::{
    adam_config, build_vocabulary, read_log, stage2_start, train_stage1, train_stage2, EpochLog, StepLoss,
};
