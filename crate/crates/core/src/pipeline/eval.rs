use std::borrow::Cow;

use cookalign_autograd::Matrix;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::StageConfig;
use super::context_cache::ContextCache;
use super::train::train_stage2;
use crate::data::RecipePair;
use crate::error::{invalid, Result};
use crate::retrieval::{evaluate_protocol, pair_rsum, RetrievalReport};
use crate::ste::EntityClass;
use crate::vision::{ContextConfig, Injection};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub gallery_size: usize,
    pub num_runs: usize,
    pub seed: u64,
}

/// Cache covering every pair, extended from the checkpoint's cache when new
/// images appear.
fn cache_for<'a>(ckpt: &'a Checkpoint, pairs: &[RecipePair]) -> Result<Option<Cow<'a, ContextCache>>> {
    if ckpt.context_config.is_off() {
        return Ok(None);
    }
    let cache = ContextCache::require(ckpt.context.as_ref())?;
    if pairs.iter().all(|p| cache.get(&p.image_id).is_ok()) {
        return Ok(Some(Cow::Borrowed(cache)));
    }
    let mut c = cache.clone();
    c.extend(pairs)?;
    Ok(Some(Cow::Owned(c)))
}

/// Text and image embeddings with every entity class in `drop` emptied.
pub fn embed_with_drop(ckpt: &Checkpoint, pairs: &[RecipePair], drop: &[EntityClass]) -> Result<(Matrix, Matrix)> {
    if EntityClass::ALL.iter().all(|c| drop.contains(c)) {
        return Err(invalid("cannot drop every entity class"));
    }
    let cache = cache_for(ckpt, pairs)?;
    let reduced: Vec<RecipePair> = pairs
        .iter()
        .map(|p| RecipePair { document: p.document.without(drop), ..p.clone() })
        .collect();
    ckpt.model.embed_pairs(&reduced, &ckpt.context_config, cache.as_deref())
}

/// Both retrieval directions with unimodal encoders (context injected on
/// the image side when the model was trained with it).
pub fn evaluate(ckpt: &Checkpoint, pairs: &[RecipePair], opts: &EvalOptions) -> Result<[RetrievalReport; 2]> {
    evaluate_missing_entities(ckpt, pairs, &[], opts)
}

/// [`evaluate`] on documents with the classes in `drop` removed; the
/// reports record the drop set.
pub fn evaluate_missing_entities(
    ckpt: &Checkpoint,
    pairs: &[RecipePair],
    drop: &[EntityClass],
    opts: &EvalOptions,
) -> Result<[RetrievalReport; 2]> {
    let (t, v) = embed_with_drop(ckpt, pairs, drop)?;
    let mut reports = evaluate_protocol(&t, &v, opts.gallery_size, opts.num_runs, opts.seed)?;
    let mut dropped = drop.to_vec();
    dropped.sort();
    dropped.dedup();
    for r in &mut reports {
        r.dropped_entities = dropped.clone();
    }
    Ok(reports)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationArm {
    pub label: String,
    pub config: StageConfig,
}

/// The six context placements, in table order; row 5 is the default
/// (ingredients at the input, titles at the output).
pub fn context_arms(base: &StageConfig) -> Vec<AblationArm> {
    use Injection::*;
    let rows = [
        ("1", Off, Off),
        ("2", Input, Off),
        ("3", Off, Output),
        ("4", Input, Input),
        ("5 (default)", Input, Output),
        ("6", Output, Input),
    ];
    rows.into_iter()
        .map(|(label, ingredients, titles)| AblationArm {
            label: label.to_string(),
            config: StageConfig { context: ContextConfig { ingredients, titles }, ..base.clone() },
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub context: ContextConfig,
    pub reports: [RetrievalReport; 2],
    pub rsum: f64,
}

/// Finetunes every arm from the same starting point and evaluates it on
/// `eval_pairs`.
pub fn run_ablation(
    arms: &[AblationArm],
    pairs: &[RecipePair],
    eval_pairs: &[RecipePair],
    init: Option<&Checkpoint>,
    context: Option<&ContextCache>,
    opts: &EvalOptions,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(arms.len());
    for arm in arms {
        let cache = if arm.config.context.is_off() { None } else { context.cloned() };
        let (ckpt, _) = train_stage2(pairs, init, &arm.config, cache, None)?;
        let reports = evaluate(&ckpt, eval_pairs, opts)?;
        rows.push(AblationRow { label: arm.label.clone(), context: arm.config.context, rsum: pair_rsum(&reports), reports });
    }
    Ok(rows)
}
