use std::path::PathBuf;

use anyhow::Result;
use clap::Parser;
use cookalign_cli::{ste_build, write_structured, EncoderSpec};

/// Turns a caption corpus into structured (title, entities, event) documents.
#[derive(Parser)]
#[command(name = "ste-build", version)]
struct Args {
    /// JSON-lines captions: {"image_id", "image_path", "caption"}.
    #[arg(long)]
    captions: PathBuf,
    /// Structured JSON-lines output.
    #[arg(long)]
    out: PathBuf,
    /// Entity index output.
    #[arg(long)]
    index: PathBuf,
    /// Local entities retrieved per image.
    #[arg(long, default_value_t = 5)]
    topk: usize,
    /// `toy` (fitted on the captions) or `file:PATH` (a saved encoder).
    #[arg(long, default_value = "toy")]
    encoder: EncoderSpec,
    /// Also save the encoder, e.g. for context extraction during finetuning.
    #[arg(long)]
    save_encoder: Option<PathBuf>,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let out = ste_build(&args.captions, args.topk, &args.encoder)?;
    write_structured(&args.out, &args.captions, &out.pairs)?;
    out.index.save(&args.index)?;
    if let Some(p) = &args.save_encoder {
        out.clip.save(p)?;
    }
    log::info!("{} documents, {} entities", out.pairs.len(), out.index.len());
    Ok(())
}
