//! Entity database with cosine top-k retrieval.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use cookalign_autograd::{dot, Matrix};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::encoder::{normalize, TextEmbedder};
use crate::error::{invalid, Error, Result};

/// Entity strings with one unit-norm embedding row each.
#[derive(Clone, Debug, PartialEq)]
pub struct EntityIndex {
    entities: Vec<String>,
    embeddings: Matrix,
}

#[derive(Serialize, Deserialize)]
struct Header {
    embed_dim: usize,
    count: usize,
}

#[derive(Serialize, Deserialize)]
struct Line {
    entity: String,
    vec: Vec<f32>,
}

impl EntityIndex {
    /// Embeds each entity with `encoder`. Entities must be unique; rows are
    /// L2-normalized.
    pub fn from_entities(entities: Vec<String>, encoder: &dyn TextEmbedder) -> Result<Self> {
        if entities.is_empty() {
            return Err(Error::EmptyIndex);
        }
        let dim = encoder.embed_dim();
        let mut data = Vec::with_capacity(entities.len() * dim);
        for e in &entities {
            let v = encoder.embed_text(e);
            if v.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, actual: v.len() });
            }
            data.extend(v);
        }
        let rows = entities.len();
        Self::new(entities, Matrix::from_vec(rows, dim, data))
    }

    /// Builds an index from precomputed vectors (normalized here).
    pub fn new(entities: Vec<String>, embeddings: Matrix) -> Result<Self> {
        if entities.is_empty() {
            return Err(Error::EmptyIndex);
        }
        if embeddings.rows() != entities.len() {
            return Err(invalid(format!("{} entities but {} embedding rows", entities.len(), embeddings.rows())));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = entities.iter().find(|e| !seen.insert(e.as_str())) {
            return Err(invalid(format!("duplicate entity `{dup}`")));
        }
        let mut embeddings = embeddings;
        for r in 0..embeddings.rows() {
            let row = embeddings.row_mut(r);
            normalize(row);
            if dot(row, row) == 0.0 {
                return Err(invalid(format!("entity `{}` has a zero embedding", entities[r])));
            }
        }
        Ok(Self { entities, embeddings })
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn embed_dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn entities(&self) -> &[String] {
        &self.entities
    }

    pub fn embeddings(&self) -> &Matrix {
        &self.embeddings
    }

    /// Top-`k` `(entity index, cosine)` pairs, most similar first; equal
    /// scores keep index order.
    pub fn top_k(&self, query: &[f64], k: usize) -> Result<Vec<(usize, f64)>> {
        if query.len() != self.embed_dim() {
            return Err(Error::DimensionMismatch { expected: self.embed_dim(), actual: query.len() });
        }
        if k > self.len() {
            return Err(Error::TopKTooLarge { k, size: self.len() });
        }
        if k == 0 {
            return Ok(Vec::new());
        }
        let qn = dot(query, query).sqrt();
        let mut scored: Vec<(usize, f64)> = (0..self.len())
            .map(|i| {
                let s = if qn > 0.0 { dot(self.embeddings.row(i), query) / qn } else { 0.0 };
                (i, s)
            })
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(k);
        Ok(scored)
    }

    /// Like [`top_k`](Self::top_k) but clamps `k` to the index size.
    pub fn top_k_clamped(&self, query: &[f64], k: usize) -> Result<Vec<(usize, f64)>> {
        self.top_k(query, k.min(self.len()))
    }

    /// SHA-256 over entities and vectors at file precision (`f32`), so a
    /// saved and reloaded index keeps its hash. Keys context caches.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for (i, e) in self.entities.iter().enumerate() {
            h.update(e.as_bytes());
            h.update([0u8]);
            for &v in self.embeddings.row(i) {
                h.update((v as f32).to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Header line `{"embed_dim", "count"}` then one `{"entity", "vec"}`
    /// line per entity, vectors as `f32`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, &Header { embed_dim: self.embed_dim(), count: self.len() })?;
        w.write_all(b"\n")?;
        for (i, e) in self.entities.iter().enumerate() {
            let vec = self.embeddings.row(i).iter().map(|&v| v as f32).collect();
            serde_json::to_writer(&mut w, &Line { entity: e.clone(), vec })?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse { path: path.to_path_buf(), line, message };
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines().enumerate().filter(|(_, l)| l.as_ref().map_or(true, |s| !s.trim().is_empty()));
        let (_, first) = lines.next().ok_or_else(|| parse_err(1, "missing header line".into()))?;
        let header: Header = serde_json::from_str(&first?).map_err(|e| parse_err(1, e.to_string()))?;
        let mut entities = Vec::with_capacity(header.count);
        let mut data = Vec::with_capacity(header.count * header.embed_dim);
        for (i, line) in lines {
            let line: Line = serde_json::from_str(&line?).map_err(|e| parse_err(i + 1, e.to_string()))?;
            if line.vec.len() != header.embed_dim {
                return Err(parse_err(i + 1, format!("vector has {} values, header says {}", line.vec.len(), header.embed_dim)));
            }
            entities.push(line.entity);
            data.extend(line.vec.iter().map(|&v| v as f64));
        }
        if entities.len() != header.count {
            return Err(parse_err(1, format!("header count {} but {} entity lines", header.count, entities.len())));
        }
        Self::new(entities, Matrix::from_vec(header.count, header.embed_dim, data))
    }
}
