//! Checkpoint directory layout:
//!
//! ```text
//! manifest.json   dims, vocab hash, stage, epoch, rng, optimizer step, tensor table
//! tensors.bin     every tensor as little-endian f64, in table order
//! vocab.txt
//! context/        context cache (only when one is attached)
//! ```

use std::io::Write;
use std::path::Path;

use cookalign_autograd::optim::{Adam, AdamConfig, Moments};
use cookalign_autograd::Matrix;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ModelConfig, Stage};
use super::context_cache::ContextCache;
use super::model::Model;
use crate::error::{Error, Result};
use crate::text::Vocabulary;
use crate::vision::ContextConfig;

const FORMAT: u32 = 1;

/// Full training state: resuming from it continues the exact trajectory.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub stage: Stage,
    /// Completed epochs of `stage`.
    pub epoch: usize,
    pub rng: ChaCha8Rng,
    pub adam: Adam,
    /// Context configuration the model was trained with; reused at test time.
    pub context_config: ContextConfig,
    pub context: Option<ContextCache>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    trainable: Option<bool>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: u32,
    stage: Stage,
    epoch: usize,
    model: ModelConfig,
    vocab_hash: String,
    context_config: ContextConfig,
    rng: ChaCha8Rng,
    adam_step: u64,
    tensors: Vec<TensorEntry>,
}

const M_PREFIX: &str = "adam.m/";
const V_PREFIX: &str = "adam.v/";

fn bad(dir: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Checkpoint(format!("{}: {msg}", dir.display()))
}

impl Checkpoint {
    /// Parameters, moments and trainable flags in one deterministic list.
    fn tensors(&self) -> Vec<(TensorEntry, &Matrix)> {
        let mut out = Vec::new();
        for (id, name, m) in self.model.store.iter() {
            let trainable = Some(self.model.store.is_trainable(id));
            out.push((TensorEntry { name: name.to_string(), rows: m.rows(), cols: m.cols(), trainable }, m));
        }
        for (id, name, _) in self.model.store.iter() {
            if let Some(mo) = self.adam.moments(id) {
                for (prefix, t) in [(M_PREFIX, &mo.m), (V_PREFIX, &mo.v)] {
                    let entry = TensorEntry { name: format!("{prefix}{name}"), rows: t.rows(), cols: t.cols(), trainable: None };
                    out.push((entry, t));
                }
            }
        }
        out
    }

    fn manifest(&self) -> Manifest {
        Manifest {
            format: FORMAT,
            stage: self.stage,
            epoch: self.epoch,
            model: self.model.config.clone(),
            vocab_hash: self.model.vocab.hash(),
            context_config: self.context_config,
            rng: self.rng.clone(),
            adam_step: self.adam.steps_taken(),
            tensors: self.tensors().into_iter().map(|(e, _)| e).collect(),
        }
    }

    /// SHA-256 over the manifest, every tensor and the vocabulary.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.manifest()).expect("manifest serializes"));
        for (_, t) in self.tensors() {
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        for tok in self.model.vocab.tokens() {
            h.update(tok.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }

    pub fn vision_hash(&self) -> String {
        self.model.vision_hash()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut bin = Vec::new();
        for (_, t) in self.tensors() {
            for v in t.data() {
                bin.write_all(&v.to_le_bytes())?;
            }
        }
        std::fs::write(dir.join("tensors.bin"), bin)?;
        std::fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&self.manifest())?)?;
        self.model.vocab.save(&dir.join("vocab.txt"))?;
        let ctx = dir.join("context");
        if let Some(c) = &self.context {
            c.save(&ctx)?;
        } else if ctx.exists() {
            std::fs::remove_dir_all(&ctx)?;
        }
        Ok(())
    }

    /// Loads a checkpoint. `adam` supplies the optimizer hyperparameters
    /// (they belong to the stage config, not to the checkpoint).
    pub fn load(dir: &Path, adam: AdamConfig) -> Result<Self> {
        let manifest: Manifest = serde_json::from_slice(&std::fs::read(dir.join("manifest.json"))?)?;
        if manifest.format != FORMAT {
            return Err(bad(dir, format!("unsupported format {}", manifest.format)));
        }
        let vocab = Vocabulary::load(&dir.join("vocab.txt"))?;
        if vocab.hash() != manifest.vocab_hash {
            return Err(bad(dir, "vocabulary does not match the manifest hash"));
        }
        let bin = std::fs::read(dir.join("tensors.bin"))?;
        let total: usize = manifest.tensors.iter().map(|t| t.rows * t.cols).sum();
        if bin.len() != total * 8 {
            return Err(bad(dir, format!("tensors.bin has {} bytes, manifest needs {}", bin.len(), total * 8)));
        }
        let mut values = bin.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));

        // Shapes come from the manifest; the seed only fills tensors that are
        // overwritten right below.
        let mut model = Model::new(manifest.model.clone(), vocab, 0)?;
        let mut moments: Vec<(String, Option<Matrix>, Option<Matrix>)> = Vec::new();
        for t in &manifest.tensors {
            let m = Matrix::from_vec(t.rows, t.cols, values.by_ref().take(t.rows * t.cols).collect());
            if let Some(name) = t.name.strip_prefix(M_PREFIX) {
                moments.push((name.to_string(), Some(m), None));
            } else if let Some(name) = t.name.strip_prefix(V_PREFIX) {
                match moments.last_mut() {
                    Some((n, _, v)) if n == name => *v = Some(m),
                    _ => return Err(bad(dir, format!("second moment of `{name}` without a first moment"))),
                }
            } else {
                let id = model.store.id(&t.name).ok_or_else(|| bad(dir, format!("unknown tensor `{}`", t.name)))?;
                if model.store.get(id).shape() != m.shape() {
                    return Err(bad(dir, format!("tensor `{}` has shape {:?}, model expects {:?}", t.name, m.shape(), model.store.get(id).shape())));
                }
                model.store.replace(id, m);
                model.store.set_trainable(id, t.trainable.unwrap_or(true));
            }
        }
        let params_in_file = manifest.tensors.iter().filter(|t| !t.name.starts_with("adam.")).count();
        if params_in_file != model.store.len() {
            return Err(bad(dir, format!("{params_in_file} parameter tensors, model has {}", model.store.len())));
        }
        let mut restored = Vec::new();
        for (name, m, v) in moments {
            let id = model.store.id(&name).ok_or_else(|| bad(dir, format!("moments for unknown tensor `{name}`")))?;
            let (Some(m), Some(v)) = (m, v) else { return Err(bad(dir, format!("incomplete moments for `{name}`"))) };
            restored.push((id, Moments { m, v }));
        }
        let mut opt = Adam::new(adam);
        opt.restore(manifest.adam_step, restored);

        let ctx = dir.join("context");
        let context = if ctx.exists() { Some(ContextCache::load(&ctx)?) } else { None };
        Ok(Self {
            model,
            stage: manifest.stage,
            epoch: manifest.epoch,
            rng: manifest.rng,
            adam: opt,
            context_config: manifest.context_config,
            context,
        })
    }
}
