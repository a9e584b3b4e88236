//! Corpus records, JSON-lines loaders and the synthetic recipe generator.

mod image;
pub mod synthetic;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{invalid, Error, Result};
use crate::ste::StructuredDocument;
pub use image::Image;
pub use synthetic::{caption_for, generate_synthetic_corpus, SyntheticSpec, INGREDIENT_NAMES};

/// A structured document paired with its image.
#[derive(Clone, Debug, PartialEq)]
pub struct RecipePair {
    pub image_id: String,
    /// Relative to the corpus directory.
    pub image_path: String,
    /// Filled by the generator and by [`load_corpus_dir`].
    pub image: Option<Image>,
    pub document: StructuredDocument,
    pub class_id: Option<usize>,
}

impl RecipePair {
    pub fn image(&self) -> Result<&Image> {
        self.image.as_ref().ok_or_else(|| invalid(format!("image of `{}` is not loaded", self.image_id)))
    }
}

/// One line of a caption corpus.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub image_id: String,
    pub image_path: String,
    pub caption: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusFormat {
    CaptionJsonl,
    StructuredJsonl,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Dataset {
    Captions(Vec<CaptionRecord>),
    Pairs(Vec<RecipePair>),
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::Captions(v) => v.len(),
            Dataset::Pairs(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, message: message.into() }
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str) -> std::result::Result<&'a Value, String> {
    obj.get(key).ok_or_else(|| format!("missing field `{key}`"))
}

fn string_field(obj: &Map<String, Value>, key: &str) -> std::result::Result<String, String> {
    field(obj, key)?.as_str().map(str::to_string).ok_or_else(|| format!("field `{key}` must be a string"))
}

fn string_list(obj: &Map<String, Value>, key: &str) -> std::result::Result<Vec<String>, String> {
    let bad = || format!("field `{key}` must be an array of strings");
    field(obj, key)?
        .as_array()
        .ok_or_else(bad)?
        .iter()
        .map(|v| v.as_str().map(str::to_string).ok_or_else(bad))
        .collect()
}

fn parse_structured(obj: &Map<String, Value>) -> std::result::Result<RecipePair, String> {
    let class_id = match obj.get("class_id") {
        None | Some(Value::Null) => None,
        Some(v) => Some(v.as_u64().ok_or("field `class_id` must be a non-negative integer")? as usize),
    };
    let document = StructuredDocument::new(
        string_field(obj, "title")?,
        string_list(obj, "ingredients")?,
        string_list(obj, "instructions")?,
    )
    .map_err(|e| e.to_string())?;
    Ok(RecipePair {
        image_id: string_field(obj, "image_id")?,
        image_path: string_field(obj, "image_path")?,
        image: None,
        document,
        class_id,
    })
}

fn parse_caption(obj: &Map<String, Value>) -> std::result::Result<CaptionRecord, String> {
    let caption = string_field(obj, "caption")?;
    if caption.trim().is_empty() {
        return Err("field `caption` is empty".into());
    }
    Ok(CaptionRecord { image_id: string_field(obj, "image_id")?, image_path: string_field(obj, "image_path")?, caption })
}

/// Reads a JSON-lines corpus. Blank lines are skipped; the first malformed
/// line aborts with its 1-based line number. Images are not loaded.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Dataset> {
    let reader = BufReader::new(File::open(path)?);
    let mut captions = Vec::new();
    let mut pairs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| parse_err(path, i + 1, e.to_string()))?;
        let obj = value.as_object().ok_or_else(|| parse_err(path, i + 1, "expected a JSON object"))?;
        match format {
            CorpusFormat::CaptionJsonl => captions.push(parse_caption(obj).map_err(|m| parse_err(path, i + 1, m))?),
            CorpusFormat::StructuredJsonl => pairs.push(parse_structured(obj).map_err(|m| parse_err(path, i + 1, m))?),
        }
    }
    let data = match format {
        CorpusFormat::CaptionJsonl => Dataset::Captions(captions),
        CorpusFormat::StructuredJsonl => Dataset::Pairs(pairs),
    };
    if data.is_empty() {
        log::warn!("{}: corpus is empty", path.display());
    }
    Ok(data)
}

pub fn save_captions(path: &Path, records: &[CaptionRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the structured JSON-lines file (images are not written).
pub fn save_structured(path: &Path, pairs: &[RecipePair]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for p in pairs {
        let mut obj = serde_json::json!({
            "image_id": p.image_id,
            "image_path": p.image_path,
            "title": p.document.title,
            "ingredients": p.document.local_entities,
            "instructions": p.document.event,
        });
        if let Some(c) = p.class_id {
            obj["class_id"] = c.into();
        }
        serde_json::to_writer(&mut w, &obj)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub const CORPUS_FILE: &str = "corpus.jsonl";

/// Writes `corpus.jsonl` plus one PNG per pair under `dir`.
pub fn save_corpus_dir(dir: &Path, pairs: &[RecipePair]) -> Result<()> {
    for p in pairs {
        let path = dir.join(&p.image_path);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        p.image()?.save_png(&path)?;
    }
    save_structured(&dir.join(CORPUS_FILE), pairs)
}

/// Loads `corpus.jsonl` and every referenced image from `dir`.
pub fn load_corpus_dir(dir: &Path) -> Result<Vec<RecipePair>> {
    let Dataset::Pairs(mut pairs) = load_corpus(&dir.join(CORPUS_FILE), CorpusFormat::StructuredJsonl)? else {
        unreachable!("structured format yields pairs")
    };
    load_images(dir, &mut pairs)?;
    Ok(pairs)
}

pub fn load_images(root: &Path, pairs: &mut [RecipePair]) -> Result<()> {
    for p in pairs {
        let path: PathBuf = root.join(&p.image_path);
        p.image = Some(Image::load_png(&path)?);
    }
    Ok(())
}

/// Disjoint seeded train/val/test split, stratified by `class_id` (pairs
/// without one form their own stratum). Within a stratum of `n`, the train
/// and val sizes are `round(f·n)`, test takes the rest.
pub fn split_corpus(
    pairs: &[RecipePair],
    fractions: [f64; 3],
    seed: u64,
) -> Result<(Vec<RecipePair>, Vec<RecipePair>, Vec<RecipePair>)> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(invalid(format!("split fractions {fractions:?} must lie in [0, 1]")));
    }
    if (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("split fractions {fractions:?} must sum to 1")));
    }
    let mut strata: BTreeMap<Option<usize>, Vec<usize>> = BTreeMap::new();
    for (i, p) in pairs.iter().enumerate() {
        strata.entry(p.class_id).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for idx in strata.values_mut() {
        idx.shuffle(&mut rng);
        let n = idx.len();
        let n_train = ((fractions[0] * n as f64).round() as usize).min(n);
        let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
        for (k, &i) in idx.iter().enumerate() {
            let dest = if k < n_train {
                &mut train
            } else if k < n_train + n_val {
                &mut val
            } else {
                &mut test
            };
            dest.push(i);
        }
    }
    let collect = |mut v: Vec<usize>| {
        v.sort_unstable();
        v.into_iter().map(|i| pairs[i].clone()).collect::<Vec<_>>()
    };
    Ok((collect(train), collect(val), collect(test)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SyntheticSpec {
        SyntheticSpec { num_classes: 2, pairs_per_class: 5, ..SyntheticSpec::default() }
    }

    #[test]
    fn structured_round_trip() {
        let pairs = generate_synthetic_corpus(&spec()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_corpus_dir(dir.path(), &pairs).unwrap();
        assert_eq!(load_corpus_dir(dir.path()).unwrap(), pairs);
    }

    #[test]
    fn caption_round_trip() {
        let recs = vec![CaptionRecord { image_id: "a".into(), image_path: "a.png".into(), caption: "a dog".into() }];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        save_captions(&p, &recs).unwrap();
        assert_eq!(load_corpus(&p, CorpusFormat::CaptionJsonl).unwrap(), Dataset::Captions(recs));
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.jsonl");
        std::fs::write(&p, "").unwrap();
        assert!(load_corpus(&p, CorpusFormat::StructuredJsonl).unwrap().is_empty());
    }

    #[test]
    fn missing_ingredients_names_line_and_field() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.jsonl");
        let good = r#"{"image_id":"a","image_path":"a.png","title":"T","ingredients":[],"instructions":[]}"#;
        let bad = r#"{"image_id":"b","image_path":"b.png","title":"T","instructions":[]}"#;
        std::fs::write(&p, format!("{good}\n{bad}\n")).unwrap();
        match load_corpus(&p, CorpusFormat::StructuredJsonl) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("ingredients"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn split_rules() {
        let pairs = generate_synthetic_corpus(&spec()).unwrap();
        let (tr, va, te) = split_corpus(&pairs, [1.0, 0.0, 0.0], 3).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (10, 0, 0));
        let a = split_corpus(&pairs, [0.6, 0.2, 0.2], 3).unwrap();
        assert_eq!(a, split_corpus(&pairs, [0.6, 0.2, 0.2], 3).unwrap());
        for c in 0..2 {
            let n = a.0.iter().filter(|p| p.class_id == Some(c)).count();
            assert!(n.abs_diff(3) <= 1);
        }
        assert!(split_corpus(&pairs, [1.5, -0.5, 0.0], 3).is_err());
    }
}
