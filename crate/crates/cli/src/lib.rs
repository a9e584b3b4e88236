//! Shared plumbing for the `cookalign` and `ste-build` binaries.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cookalign_core::data::{
    load_corpus, load_images, save_structured, CaptionRecord, CorpusFormat, Dataset, Image, RecipePair,
};
use cookalign_core::ste::{build_entity_index, build_structured_pair, Caption, EntityIndex, ToyClip};

/// Directory that relative image paths of a corpus file resolve against.
pub fn corpus_root(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// A structured JSON-lines corpus with its images loaded.
pub fn load_pairs(path: &Path) -> Result<Vec<RecipePair>> {
    let Dataset::Pairs(mut pairs) = load_corpus(path, CorpusFormat::StructuredJsonl)? else {
        unreachable!("structured format yields pairs")
    };
    load_images(&corpus_root(path), &mut pairs).with_context(|| format!("loading images of {}", path.display()))?;
    Ok(pairs)
}

pub fn load_captions(path: &Path) -> Result<Vec<CaptionRecord>> {
    let Dataset::Captions(c) = load_corpus(path, CorpusFormat::CaptionJsonl)? else {
        unreachable!("caption format yields captions")
    };
    Ok(c)
}

/// `toy` or `file:PATH`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EncoderSpec {
    Toy,
    File(PathBuf),
}

impl std::str::FromStr for EncoderSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "toy" => Ok(Self::Toy),
            _ => match s.strip_prefix("file:") {
                Some(p) if !p.is_empty() => Ok(Self::File(PathBuf::from(p))),
                _ => Err(format!("encoder must be `toy` or `file:PATH`, got `{s}`")),
            },
        }
    }
}

pub struct SteOutput {
    pub pairs: Vec<RecipePair>,
    pub index: EntityIndex,
    pub clip: ToyClip,
}

/// Caption corpus → structured corpus. The `toy` encoder is fitted on the
/// captioned images themselves.
pub fn ste_build(captions_path: &Path, topk: usize, encoder: &EncoderSpec) -> Result<SteOutput> {
    let records = load_captions(captions_path)?;
    if records.is_empty() {
        bail!("{}: no captions", captions_path.display());
    }
    let root = corpus_root(captions_path);
    let images: Vec<Image> = records
        .iter()
        .map(|r| Image::load_png(&root.join(&r.image_path)))
        .collect::<cookalign_core::Result<_>>()?;
    let captions: Vec<Caption> =
        records.iter().map(|r| Caption::new(r.image_id.clone(), r.caption.clone())).collect::<cookalign_core::Result<_>>()?;
    let clip = match encoder {
        EncoderSpec::Toy => {
            let fit: Vec<(&Image, &str)> = images.iter().zip(&captions).map(|(i, c)| (i, c.text.as_str())).collect();
            ToyClip::fit(&fit, ToyClip::DEFAULT_DIM, ToyClip::DEFAULT_SEED)?
        }
        EncoderSpec::File(p) => ToyClip::load(p).with_context(|| format!("loading encoder {}", p.display()))?,
    };
    let index = build_entity_index(&captions, &clip)?;
    let mut pairs = Vec::with_capacity(records.len());
    for ((r, c), img) in records.iter().zip(&captions).zip(images) {
        let document = build_structured_pair(c, &img, &index, &clip, topk)?;
        pairs.push(RecipePair { image_id: r.image_id.clone(), image_path: r.image_path.clone(), image: Some(img), document, class_id: None });
    }
    Ok(SteOutput { pairs, index, clip })
}

/// Writes the structured corpus. Image paths stay relative when the output
/// sits next to the captions file and become absolute otherwise.
pub fn write_structured(out: &Path, captions_path: &Path, pairs: &[RecipePair]) -> Result<()> {
    let src = std::fs::canonicalize(corpus_root(captions_path).join("."))?;
    let dst_dir = corpus_root(out).join(".");
    std::fs::create_dir_all(&dst_dir)?;
    let same_dir = std::fs::canonicalize(&dst_dir)? == src;
    let pairs: Vec<RecipePair> = pairs
        .iter()
        .map(|p| {
            let image_path =
                if same_dir { p.image_path.clone() } else { src.join(&p.image_path).to_string_lossy().into_owned() };
            RecipePair { image_path, ..p.clone() }
        })
        .collect();
    save_structured(out, &pairs)?;
    Ok(())
}
