//! Synthetic corpus → structured text extraction → pretraining →
//! finetuning with context → retrieval on the training gallery.

use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::{ModelConfig, Stage, StageConfig};
use super::context_cache::ContextCache;
use super::eval::{evaluate, EvalOptions};
use super::train::{train_stage1, train_stage2, EpochLog};
use crate::data::{caption_for, generate_synthetic_corpus, RecipePair, SyntheticSpec};
use crate::error::Result;
use crate::retrieval::RetrievalReport;
use crate::ste::{build_entity_index, build_structured_pair, Caption, ToyClip};
use crate::vision::ContextConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndToEndConfig {
    pub corpus: SyntheticSpec,
    pub clip_dim: usize,
    /// Local entities retrieved per image during extraction.
    pub ste_topk: usize,
    pub stage1: StageConfig,
    pub stage2: StageConfig,
    pub eval_seed: u64,
}

impl Default for EndToEndConfig {
    fn default() -> Self {
        let model = ModelConfig::toy();
        Self {
            corpus: SyntheticSpec::default(),
            clip_dim: ToyClip::DEFAULT_DIM,
            ste_topk: 6,
            stage1: StageConfig {
                stage: Stage::Vslp,
                epochs: 60,
                batch_size: 16,
                learning_rate: 1e-3,
                model: model.clone(),
                ..StageConfig::default()
            }
            .normalized(),
            stage2: StageConfig {
                stage: Stage::Finetune,
                epochs: 240,
                batch_size: 16,
                learning_rate: 1e-3,
                freeze_vision_epochs: 20,
                context: ContextConfig::DEFAULT,
                model,
                ..StageConfig::default()
            },
            eval_seed: 0,
        }
    }
}

/// Both corpora over the same images: recipe documents for finetuning and
/// caption-derived structured documents for pretraining.
#[derive(Clone, Debug)]
pub struct Corpora {
    pub recipes: Vec<RecipePair>,
    pub structured: Vec<RecipePair>,
    pub captions: Vec<Caption>,
    pub clip: ToyClip,
}

pub fn prepare_corpora(cfg: &EndToEndConfig) -> Result<Corpora> {
    let recipes = generate_synthetic_corpus(&cfg.corpus)?;
    let captions: Vec<Caption> =
        recipes.iter().map(|p| Caption::new(p.image_id.clone(), caption_for(&p.document))).collect::<Result<_>>()?;
    let fit: Vec<_> = recipes.iter().zip(&captions).map(|(p, c)| Ok((p.image()?, c.text.as_str()))).collect::<Result<_>>()?;
    let clip = ToyClip::fit(&fit, cfg.clip_dim, ToyClip::DEFAULT_SEED)?;
    let index = build_entity_index(&captions, &clip)?;
    let k = cfg.ste_topk.min(index.len());
    let structured = recipes
        .iter()
        .zip(&captions)
        .map(|(p, c)| {
            Ok(RecipePair { document: build_structured_pair(c, p.image()?, &index, &clip, k)?, ..p.clone() })
        })
        .collect::<Result<_>>()?;
    Ok(Corpora { recipes, structured, captions, clip })
}

#[derive(Clone, Debug)]
pub struct EndToEndRun {
    pub stage1: Option<Checkpoint>,
    pub stage2: Checkpoint,
    pub logs: Vec<EpochLog>,
    pub reports: [RetrievalReport; 2],
}

/// Runs both stages (or only finetuning from scratch when `with_vslp` is
/// false) and evaluates on the full training gallery.
pub fn run_end_to_end(cfg: &EndToEndConfig, corpora: &Corpora, with_vslp: bool) -> Result<EndToEndRun> {
    let mut logs = Vec::new();
    let stage1 = if with_vslp {
        let (c, l) = train_stage1(&corpora.structured, &cfg.stage1, None)?;
        logs.extend(l);
        Some(c)
    } else {
        None
    };
    let cache = if cfg.stage2.context.is_off() {
        None
    } else {
        Some(ContextCache::with_defaults(&corpora.recipes, corpora.clip.clone())?)
    };
    let (stage2, l) = train_stage2(&corpora.recipes, stage1.as_ref(), &cfg.stage2, cache, None)?;
    logs.extend(l);
    let opts = EvalOptions { gallery_size: corpora.recipes.len(), num_runs: 1, seed: cfg.eval_seed };
    let reports = evaluate(&stage2, &corpora.recipes, &opts)?;
    Ok(EndToEndRun { stage1, stage2, logs, reports })
}
