use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use cookalign_cli::load_pairs;
use cookalign_core::data::{caption_for, generate_synthetic_corpus, save_captions, save_corpus_dir, CaptionRecord, SyntheticSpec};
use cookalign_core::pipeline::{
    adam_config, context_arms, embed_with_drop, evaluate_missing_entities, run_ablation, train_stage1, train_stage2,
    AblationArm, Checkpoint, ContextCache, EvalOptions, Stage, StageConfig,
};
use cookalign_core::reports::{render_ablation, render_curves, render_table};
use cookalign_core::retrieval::{default_runs, linear_probe, ProbeConfig, RetrievalReport};
use cookalign_core::ste::{EntityClass, ToyClip};
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "cookalign", version, about = "Two-stage cross-modal recipe retrieval")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// JSON stage config; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `KEY=VALUE` override, dotted for nested keys (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic corpus (images, recipes, captions).
    Generate {
        #[arg(long)]
        out: PathBuf,
        /// JSON synthetic spec; omitted keys take their defaults.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Stage 1: pretrain on structured pairs with the vision encoder frozen.
    Pretrain {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch JSON-lines log.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Stage 2: finetune on recipe pairs with context injection.
    Finetune {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Stage-1 checkpoint; omit to train from scratch.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Frozen encoder for context extraction (required with context).
        #[arg(long)]
        clip: Option<PathBuf>,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Retrieval metrics over sampled galleries.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        gallery: usize,
        /// Defaults to 10 (5 for galleries of 10k or more).
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Entity classes to empty: any of title, ingredients, instructions.
        #[arg(long, value_delimiter = ',')]
        drop: Vec<String>,
        /// Report JSON output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finetune and evaluate every arm of an ablation matrix.
    Ablate {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Linear-probe accuracy on frozen image embeddings.
    Probe {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// JSON object mapping image_id to label; defaults to class_id.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        train_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Render report JSON files as a table.
    Report {
        #[arg(long = "in", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plot loss and margin curves from a training log.
    Plot {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn stage_config(args: &ConfigArgs, stage: Stage) -> Result<StageConfig> {
    let mut cfg = match &args.config {
        Some(p) => StageConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => StageConfig { stage, ..StageConfig::default() },
    };
    cfg.set("stage", stage.as_str())?;
    for o in &args.overrides {
        let (k, v) = o.split_once('=').with_context(|| format!("override `{o}` is not KEY=VALUE"))?;
        cfg.set(k, v)?;
    }
    Ok(cfg)
}

fn parse_class(s: &str) -> Result<EntityClass> {
    EntityClass::ALL
        .into_iter()
        .find(|c| c.name() == s || c.short().eq_ignore_ascii_case(s))
        .with_context(|| format!("unknown entity class `{s}`"))
}

fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    Checkpoint::load(dir, adam_config(&StageConfig::default())).with_context(|| format!("loading checkpoint {}", dir.display()))
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

/// Ablation input: corpus paths, the shared starting point and the arms.
#[derive(Deserialize)]
struct Matrix {
    corpus: PathBuf,
    /// Evaluation corpus; defaults to the training corpus.
    #[serde(default)]
    eval_corpus: Option<PathBuf>,
    #[serde(default)]
    init: Option<PathBuf>,
    #[serde(default)]
    clip: Option<PathBuf>,
    #[serde(default)]
    base: StageConfig,
    /// Defaults to the six context placements over `base`.
    #[serde(default)]
    arms: Option<Vec<AblationArm>>,
    eval: EvalOptions,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { out, spec } => {
            let spec: SyntheticSpec = match spec {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(&p)?)?,
                None => SyntheticSpec::default(),
            };
            let pairs = generate_synthetic_corpus(&spec)?;
            save_corpus_dir(&out, &pairs)?;
            let captions: Vec<CaptionRecord> = pairs
                .iter()
                .map(|p| CaptionRecord { image_id: p.image_id.clone(), image_path: p.image_path.clone(), caption: caption_for(&p.document) })
                .collect();
            save_captions(&out.join("captions.jsonl"), &captions)?;
            log::info!("wrote {} pairs to {}", pairs.len(), out.display());
        }
        Command::Pretrain { cfg, corpus, out, log } => {
            let cfg = stage_config(&cfg, Stage::Vslp)?;
            let pairs = load_pairs(&corpus)?;
            let (ckpt, _) = train_stage1(&pairs, &cfg, log.as_deref())?;
            ckpt.save(&out)?;
            println!("{}", ckpt.hash());
        }
        Command::Finetune { cfg, init, corpus, out, clip, log } => {
            let cfg = stage_config(&cfg, Stage::Finetune)?;
            let pairs = load_pairs(&corpus)?;
            let init = init.as_deref().map(load_checkpoint).transpose()?;
            let cache = match (&clip, cfg.context.is_off()) {
                (_, true) => None,
                (Some(p), false) => Some(ContextCache::with_defaults(&pairs, ToyClip::load(p)?)?),
                (None, false) => bail!("context injection is enabled; pass --clip or set context to off"),
            };
            let (ckpt, _) = train_stage2(&pairs, init.as_ref(), &cfg, cache, log.as_deref())?;
            ckpt.save(&out)?;
            println!("{}", ckpt.hash());
        }
        Command::Evaluate { ckpt, corpus, gallery, runs, seed, drop, out } => {
            let ckpt = load_checkpoint(&ckpt)?;
            let pairs = load_pairs(&corpus)?;
            let drop: Vec<EntityClass> = drop.iter().map(|s| parse_class(s)).collect::<Result<_>>()?;
            let opts = EvalOptions { gallery_size: gallery, num_runs: runs.unwrap_or_else(|| default_runs(gallery)), seed };
            let reports = evaluate_missing_entities(&ckpt, &pairs, &drop, &opts)?;
            if let Some(p) = out {
                std::fs::write(p, serde_json::to_vec_pretty(&reports)?)?;
            }
            print!("{}", render_table(&reports));
        }
        Command::Ablate { matrix, out } => {
            let base_dir = matrix.parent().map(Path::to_path_buf).unwrap_or_default();
            let m: Matrix = serde_json::from_str(&std::fs::read_to_string(&matrix)?)?;
            let pairs = load_pairs(&resolve(&base_dir, &m.corpus))?;
            let eval_pairs = match &m.eval_corpus {
                Some(p) => load_pairs(&resolve(&base_dir, p))?,
                None => pairs.clone(),
            };
            let init = m.init.as_ref().map(|p| load_checkpoint(&resolve(&base_dir, p))).transpose()?;
            let arms = m.arms.unwrap_or_else(|| context_arms(&m.base));
            let cache = match (&m.clip, arms.iter().all(|a| a.config.context.is_off())) {
                (_, true) => None,
                (Some(p), false) => {
                    let mut c = ContextCache::with_defaults(&pairs, ToyClip::load(&resolve(&base_dir, p))?)?;
                    c.extend(&eval_pairs)?;
                    Some(c)
                }
                (None, false) => bail!("some arms inject context; the matrix needs a `clip` path"),
            };
            let rows = run_ablation(&arms, &pairs, &eval_pairs, init.as_ref(), cache.as_ref(), &m.eval)?;
            if let Some(p) = out {
                std::fs::write(p, serde_json::to_vec_pretty(&rows)?)?;
            }
            print!("{}", render_ablation(&rows));
        }
        Command::Probe { ckpt, corpus, labels, train_fraction, seed } => {
            let ckpt = load_checkpoint(&ckpt)?;
            let pairs = load_pairs(&corpus)?;
            let label_map: Option<BTreeMap<String, usize>> =
                labels.map(|p| -> Result<_> { Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?) }).transpose()?;
            let y: Vec<usize> = pairs
                .iter()
                .map(|p| match &label_map {
                    Some(m) => m.get(&p.image_id).copied().with_context(|| format!("no label for `{}`", p.image_id)),
                    None => p.class_id.with_context(|| format!("`{}` has no class_id; pass --labels", p.image_id)),
                })
                .collect::<Result<_>>()?;
            let (_, features) = embed_with_drop(&ckpt, &pairs, &[])?;
            let acc = linear_probe(&features, &y, &ProbeConfig { train_fraction, seed, ..ProbeConfig::default() })?;
            println!("{acc:.4}");
        }
        Command::Report { inputs, out } => {
            let mut reports: Vec<RetrievalReport> = Vec::new();
            for p in &inputs {
                let text = std::fs::read_to_string(p)?;
                match serde_json::from_str::<Vec<RetrievalReport>>(&text) {
                    Ok(v) => reports.extend(v),
                    Err(_) => reports.push(serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?),
                }
            }
            write_or_print(out.as_deref(), &render_table(&reports))?;
        }
        Command::Plot { log, out_dir } => {
            for p in render_curves(&log, &out_dir)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    run(Cli::parse())
}
