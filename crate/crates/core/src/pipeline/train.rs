use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use cookalign_autograd::optim::{Adam, AdamConfig};
use cookalign_autograd::{Graph, Var};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::{Stage, StageConfig};
use super::context_cache::ContextCache;
use super::model::{component_rng, Model};
use crate::data::RecipePair;
use crate::error::{invalid, Error, Result};
use crate::losses::{itc_on_graph, itm_negatives, itm_on_graph};
use crate::text::Vocabulary;
use crate::vision::{sample_context, set_frozen};

const STREAM_TRAIN: u64 = 100;

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub itc: f64,
    pub itm: f64,
    pub total: f64,
    pub margin: f64,
    pub frozen: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLoss {
    pub itc: f64,
    pub itm: f64,
    pub total: f64,
}

pub fn adam_config(cfg: &StageConfig) -> AdamConfig {
    AdamConfig { learning_rate: cfg.learning_rate, clip_norm: cfg.clip_norm, ..AdamConfig::default() }
}

/// Vocabulary over every document string plus optional extra strings
/// (context entities).
pub fn build_vocabulary<'a>(pairs: &'a [RecipePair], extra: impl IntoIterator<Item = &'a str>) -> Vocabulary {
    let docs = pairs.iter().flat_map(|p| {
        std::iter::once(p.document.title.as_str())
            .chain(p.document.local_entities.iter().map(String::as_str))
            .chain(p.document.event.iter().map(String::as_str))
    });
    Vocabulary::build(docs.chain(extra), 1)
}

fn semantic_labels(pairs: &[RecipePair], batch: &[usize]) -> Result<Vec<usize>> {
    batch
        .iter()
        .map(|&i| pairs[i].class_id.ok_or_else(|| invalid(format!("pair `{}` has no class_id", pairs[i].image_id))))
        .collect()
}

/// Shuffled batches of `size`; a trailing batch of one joins the previous
/// batch because the triplet loss needs two examples.
fn batches(n: usize, size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut out: Vec<Vec<usize>> = idx.chunks(size).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() < 2) {
        let last = out.pop().expect("non-empty");
        out.last_mut().expect("more than one batch").extend(last);
    }
    out
}

impl Checkpoint {
    /// Fresh state for `stage`: model from `seed`, empty optimizer.
    pub fn fresh(model: Model, cfg: &StageConfig) -> Self {
        Self {
            model,
            stage: cfg.stage,
            epoch: 0,
            rng: component_rng(cfg.seed, STREAM_TRAIN),
            adam: Adam::new(adam_config(cfg)),
            context_config: cfg.context,
            context: None,
        }
    }

    /// One optimizer step on `batch` (indices into `pairs`).
    pub fn step(&mut self, cfg: &StageConfig, pairs: &[RecipePair], batch: &[usize], margin: f64) -> Result<StepLoss> {
        if batch.len() < 2 {
            return Err(Error::BatchTooSmall { min: 2, got: batch.len() });
        }
        let cache = if cfg.context.is_off() { None } else { Some(ContextCache::require(self.context.as_ref())?) };
        let model = &self.model;
        let mut g = Graph::new();
        let (mut texts, mut images) = (Vec::with_capacity(batch.len()), Vec::with_capacity(batch.len()));
        for &i in batch {
            let p = &pairs[i];
            texts.push(model.text_forward(&mut g, &p.document)?);
            let (titles, ingredients) = match cache {
                Some(c) => sample_context(c.get(&p.image_id)?, cfg.train_titles, cfg.train_ingredients, Some(&mut self.rng)),
                None => (Vec::new(), Vec::new()),
            };
            images.push(model.image_forward(&mut g, p.image()?, &cfg.context, &titles, &ingredients)?);
        }
        let t_emb: Vec<Var> = texts.iter().map(|t| t.embedding).collect();
        let v_emb: Vec<Var> = images.iter().map(|v| v.embedding).collect();
        let t = g.concat_rows(&t_emb);
        let v = g.concat_rows(&v_emb);
        let labels = if cfg.use_semantic { Some(semantic_labels(pairs, batch)?) } else { None };
        let (itc_var, itc) = itc_on_graph(&mut g, t, v, margin, labels.as_deref())?;

        let mut total = itc_var;
        let mut itm = 0.0;
        if cfg.lambda_itm > 0.0 {
            let examples = itm_negatives(batch.len(), &mut self.rng)?;
            let logits: Vec<Var> = examples
                .iter()
                .map(|e| model.itm.logit(&mut g, &model.store, texts[e.text].tokens, images[e.image].tokens))
                .collect();
            let z = g.concat_rows(&logits);
            let y: Vec<u8> = examples.iter().map(|e| e.label).collect();
            let itm_var = itm_on_graph(&mut g, z, &y)?;
            itm = g.value(itm_var).item();
            let weighted = g.scale(itm_var, cfg.lambda_itm);
            total = g.add(total, weighted);
        }
        let total_value = g.value(total).item();
        let grads = g.backward(total);
        self.adam.step(&mut self.model.store, &grads.param_grads());
        Ok(StepLoss { itc: itc.value, itm, total: total_value })
    }

    /// One pass over `pairs`; applies the freeze schedule and margin for the
    /// current epoch, then advances the epoch counter.
    pub fn run_epoch(&mut self, cfg: &StageConfig, pairs: &[RecipePair]) -> Result<EpochLog> {
        if pairs.len() < 2 {
            return Err(Error::BatchTooSmall { min: 2, got: pairs.len() });
        }
        let frozen = self.stage == Stage::Vslp || self.epoch < cfg.freeze_vision_epochs;
        set_frozen(&mut self.model.store, frozen);
        let margin = cfg.margin_schedule.at(self.epoch);
        let (mut itc, mut itm, mut total) = (0.0, 0.0, 0.0);
        let batches = batches(pairs.len(), cfg.batch_size, &mut self.rng);
        for b in &batches {
            let l = self.step(cfg, pairs, b, margin)?;
            itc += l.itc;
            itm += l.itm;
            total += l.total;
        }
        let n = batches.len() as f64;
        let log = EpochLog { epoch: self.epoch, itc: itc / n, itm: itm / n, total: total / n, margin, frozen };
        self.epoch += 1;
        Ok(log)
    }

    /// Runs epochs until `cfg.epochs` are complete, appending to `log_path`.
    pub fn train(&mut self, cfg: &StageConfig, pairs: &[RecipePair], log_path: Option<&Path>) -> Result<Vec<EpochLog>> {
        if self.stage != cfg.stage {
            return Err(invalid(format!("checkpoint is at stage {}, config is {}", self.stage.as_str(), cfg.stage.as_str())));
        }
        let mut writer = match log_path {
            Some(p) => Some(BufWriter::new(OpenOptions::new().create(true).append(true).open(p)?)),
            None => None,
        };
        let mut logs = Vec::new();
        while self.epoch < cfg.epochs {
            let l = self.run_epoch(cfg, pairs)?;
            log::info!("{} epoch {}: itc {:.4} itm {:.4} total {:.4}", cfg.stage.as_str(), l.epoch, l.itc, l.itm, l.total);
            if let Some(w) = writer.as_mut() {
                serde_json::to_writer(&mut *w, &l)?;
                w.write_all(b"\n")?;
                w.flush()?;
            }
            logs.push(l);
        }
        Ok(logs)
    }
}

fn check_corpus(pairs: &[RecipePair]) -> Result<()> {
    if pairs.is_empty() {
        return Err(invalid("training corpus is empty"));
    }
    Ok(())
}

/// Pretraining on structured pairs with a frozen vision encoder and no
/// context.
pub fn train_stage1(pairs: &[RecipePair], cfg: &StageConfig, log_path: Option<&Path>) -> Result<(Checkpoint, Vec<EpochLog>)> {
    check_corpus(pairs)?;
    let cfg = cfg.clone().normalized();
    if cfg.stage != Stage::Vslp {
        return Err(Error::Config("train_stage1 needs stage = vslp".into()));
    }
    cfg.validate()?;
    let model = Model::new(cfg.model.clone(), build_vocabulary(pairs, []), cfg.seed)?;
    let mut ckpt = Checkpoint::fresh(model, &cfg);
    let logs = ckpt.train(&cfg, pairs, log_path)?;
    Ok((ckpt, logs))
}

/// Prepares the finetuning state: from `init` (vocabulary swapped to the new
/// corpus, all other weights kept) or from scratch.
pub fn stage2_start(pairs: &[RecipePair], init: Option<&Checkpoint>, cfg: &StageConfig, context: Option<ContextCache>) -> Result<Checkpoint> {
    check_corpus(pairs)?;
    cfg.validate()?;
    if cfg.stage != Stage::Finetune {
        return Err(Error::Config("stage 2 needs stage = finetune".into()));
    }
    if !cfg.context.is_off() {
        let cache = ContextCache::require(context.as_ref())?;
        for p in pairs {
            cache.get(&p.image_id)?;
        }
    }
    let extra: Vec<&str> = context.iter().flat_map(ContextCache::strings).collect();
    let vocab = build_vocabulary(pairs, extra);
    let model = match init {
        Some(c) => {
            if c.model.config != cfg.model {
                return Err(Error::Config("stage-2 model dimensions differ from the initial checkpoint".into()));
            }
            let mut m = c.model.clone();
            m.swap_vocabulary(vocab, cfg.seed);
            m
        }
        None => Model::new(cfg.model.clone(), vocab, cfg.seed)?,
    };
    let mut ckpt = Checkpoint::fresh(model, cfg);
    ckpt.context = context;
    Ok(ckpt)
}

/// Finetuning with context injection and the vision freeze schedule.
pub fn train_stage2(
    pairs: &[RecipePair],
    init: Option<&Checkpoint>,
    cfg: &StageConfig,
    context: Option<ContextCache>,
    log_path: Option<&Path>,
) -> Result<(Checkpoint, Vec<EpochLog>)> {
    let mut ckpt = stage2_start(pairs, init, cfg, context)?;
    let logs = ckpt.train(cfg, pairs, log_path)?;
    Ok((ckpt, logs))
}

/// Reads a JSON-lines training log, skipping malformed lines with a warning.
pub fn read_log(path: &Path) -> Result<Vec<EpochLog>> {
    use std::io::BufRead;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(l) => out.push(l),
            Err(e) => log::warn!("{}:{}: skipping malformed log line: {e}", path.display(), i + 1),
        }
    }
    Ok(out)
}
