//! Pluggable frozen encoders used for entity retrieval.
//!
//! Retrieval needs a text side (to embed the entity database) and an image
//! side living in the same space. [`ToyClip`] provides both: a hash-seeded
//! bag-of-words text encoder and a ridge-regression image encoder fitted so
//! that image features land near their paired caption embeddings.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Image;
use crate::error::{invalid, Error, Result};

/// Maps text to a fixed-dimension vector.
pub trait TextEmbedder: Send + Sync {
    fn embed_dim(&self) -> usize;
    fn embed_text(&self, text: &str) -> Vec<f64>;
}

/// Maps an image to a fixed-dimension vector. Must be deterministic.
pub trait ImageEncoder: Send + Sync {
    fn embed_dim(&self) -> usize;
    fn encode_image(&self, image: &Image) -> Vec<f64>;
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub(crate) fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Bag of words where every lower-cased word gets a Gaussian vector seeded
/// from its hash. Sentences are the normalized sum of their word vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HashTextEncoder {
    pub dim: usize,
    pub seed: u64,
}

impl HashTextEncoder {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self { dim, seed }
    }

    pub fn word_vector(&self, word: &str) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(word.as_bytes()) ^ self.seed);
        (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect()
    }
}

impl TextEmbedder for HashTextEncoder {
    fn embed_dim(&self) -> usize {
        self.dim
    }

    fn embed_text(&self, text: &str) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for word in crate::text::words(text) {
            for (o, w) in out.iter_mut().zip(self.word_vector(&word)) {
                *o += w;
            }
        }
        normalize(&mut out);
        out
    }
}

/// Hand-crafted, position-invariant image descriptor: a soft histogram over a
/// 3×3×3 RGB palette plus the mean colour of each image quadrant.
pub fn image_features(image: &Image) -> Vec<f64> {
    const LEVELS: [f64; 3] = [0.0, 0.5, 1.0];
    const SIGMA2: f64 = 2.0 * 0.12 * 0.12;
    let mut hist = vec![0.0; 27];
    let mut quad = vec![0.0; 12];
    let (h, w) = (image.height(), image.width());
    for y in 0..h {
        for x in 0..w {
            let p = image.pixel(y, x);
            let mut k = 0;
            for r in LEVELS {
                for g in LEVELS {
                    for b in LEVELS {
                        let d = (p[0] - r).powi(2) + (p[1] - g).powi(2) + (p[2] - b).powi(2);
                        hist[k] += (-d / SIGMA2).exp();
                        k += 1;
                    }
                }
            }
            let q = (usize::from(y * 2 >= h) * 2 + usize::from(x * 2 >= w)) * 3;
            for c in 0..3 {
                quad[q + c] += p[c];
            }
        }
    }
    let n = (h * w) as f64;
    hist.iter_mut().for_each(|v| *v /= n);
    quad.iter_mut().for_each(|v| *v /= n / 4.0);
    hist.extend(quad);
    hist
}

pub const IMAGE_FEATURE_DIM: usize = 27 + 12;

/// Fixed random projection of [`image_features`]; useful when no paired
/// text is available to fit anything.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomProjectionImageEncoder {
    pub dim: usize,
    pub seed: u64,
}

impl ImageEncoder for RandomProjectionImageEncoder {
    fn embed_dim(&self) -> usize {
        self.dim
    }

    fn encode_image(&self, image: &Image) -> Vec<f64> {
        let f = image_features(image);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut out = vec![0.0; self.dim];
        for &fi in &f {
            for o in out.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *o += fi * z;
            }
        }
        normalize(&mut out);
        out
    }
}

/// Linear map from [`image_features`] (plus a bias) to the text space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RidgeImageEncoder {
    pub dim: usize,
    /// `(IMAGE_FEATURE_DIM + 1) × dim`, row-major.
    pub weights: Vec<f64>,
}

impl RidgeImageEncoder {
    /// Least squares with an L2 penalty `ridge` from image features to the
    /// given targets.
    pub fn fit(images: &[&Image], targets: &[Vec<f64>], ridge: f64) -> Result<Self> {
        if images.is_empty() || images.len() != targets.len() {
            return Err(invalid("ridge fit needs equally many images and targets (at least one)"));
        }
        let dim = targets[0].len();
        let f = IMAGE_FEATURE_DIM + 1;
        let n = images.len();
        let mut x = DMatrix::<f64>::zeros(n, f);
        let mut y = DMatrix::<f64>::zeros(n, dim);
        for (i, (img, t)) in images.iter().zip(targets).enumerate() {
            if t.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, actual: t.len() });
            }
            for (j, v) in image_features(img).into_iter().chain(std::iter::once(1.0)).enumerate() {
                x[(i, j)] = v;
            }
            for (j, &v) in t.iter().enumerate() {
                y[(i, j)] = v;
            }
        }
        let gram = x.transpose() * &x + DMatrix::<f64>::identity(f, f) * ridge;
        let rhs = x.transpose() * y;
        let chol = gram.cholesky().ok_or_else(|| invalid("ridge system is not positive definite"))?;
        let w = chol.solve(&rhs);
        let mut weights = Vec::with_capacity(f * dim);
        for r in 0..f {
            for c in 0..dim {
                weights.push(w[(r, c)]);
            }
        }
        Ok(Self { dim, weights })
    }
}

impl ImageEncoder for RidgeImageEncoder {
    fn embed_dim(&self) -> usize {
        self.dim
    }

    fn encode_image(&self, image: &Image) -> Vec<f64> {
        let feats: Vec<f64> = image_features(image).into_iter().chain(std::iter::once(1.0)).collect();
        let w = DMatrix::from_row_slice(feats.len(), self.dim, &self.weights);
        let out = w.transpose() * DVector::from_vec(feats);
        let mut out: Vec<f64> = out.iter().copied().collect();
        normalize(&mut out);
        out
    }
}

/// Toy stand-in for a frozen image-text foundation model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyClip {
    pub text: HashTextEncoder,
    pub image: RidgeImageEncoder,
}

impl ToyClip {
    pub const DEFAULT_DIM: usize = 64;
    pub const DEFAULT_SEED: u64 = 0x5eed;
    pub const DEFAULT_RIDGE: f64 = 1e-3;

    /// Fits the image side so each image maps near the embedding of its
    /// paired text.
    pub fn fit(pairs: &[(&Image, &str)], dim: usize, seed: u64) -> Result<Self> {
        let text = HashTextEncoder::new(dim, seed);
        let images: Vec<&Image> = pairs.iter().map(|(i, _)| *i).collect();
        let targets: Vec<Vec<f64>> = pairs.iter().map(|(_, t)| text.embed_text(t)).collect();
        let image = RidgeImageEncoder::fit(&images, &targets, Self::DEFAULT_RIDGE)?;
        Ok(Self { text, image })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

impl TextEmbedder for ToyClip {
    fn embed_dim(&self) -> usize {
        self.text.dim
    }

    fn embed_text(&self, text: &str) -> Vec<f64> {
        self.text.embed_text(text)
    }
}

impl ImageEncoder for ToyClip {
    fn embed_dim(&self) -> usize {
        self.image.dim
    }

    fn encode_image(&self, image: &Image) -> Vec<f64> {
        self.image.encode_image(image)
    }
}
