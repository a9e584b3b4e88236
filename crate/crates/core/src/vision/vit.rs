//! Patch-based vision transformer with context injection.
//!
//! ```text
//! h = ViT([cls; patch tokens + positions; local context tokens])
//! x = F([h_cls, global context])     (then L2-normalized)
//! ```
//!
//! Local context tokens join self-attention; the global context vector only
//! reaches the output projection `F`.

use cookalign_autograd::nn::Linear;
use cookalign_autograd::{Graph, Matrix, ParamId, ParamStore, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Image;
use crate::error::{invalid, Error, Result};
use crate::text::Stack;

/// Parameter-name prefix of the transformer backbone.
pub const BACKBONE_PREFIX: &str = "vit.";
/// Parameter-name prefix of the output projection `F`.
pub const PROJECTION_PREFIX: &str = "vis_proj.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VisionConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub d_ff: usize,
    pub d_emb: usize,
}

impl Default for VisionConfig {
    fn default() -> Self {
        Self { image_size: 32, patch_size: 8, d_model: 64, heads: 2, layers: 1, d_ff: 128, d_emb: 128 }
    }
}

impl VisionConfig {
    pub fn num_patches(&self) -> usize {
        (self.image_size / self.patch_size).pow(2)
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * 3
    }
}

/// Splits an image into non-overlapping `P × P` patches, one flattened
/// (row-major, RGB-interleaved) patch per row, patches in raster order.
pub fn patchify(image: &Image, patch: usize) -> Result<Matrix> {
    let (h, w) = (image.height(), image.width());
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(invalid(format!("{h}x{w} image is not divisible into {patch}x{patch} patches")));
    }
    let (ph, pw) = (h / patch, w / patch);
    let mut out = Matrix::zeros(ph * pw, patch * patch * 3);
    for py in 0..ph {
        for px in 0..pw {
            let row = out.row_mut(py * pw + px);
            let mut o = 0;
            for y in 0..patch {
                for x in 0..patch {
                    let p = image.pixel(py * patch + y, px * patch + x);
                    row[o..o + 3].copy_from_slice(&p);
                    o += 3;
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug)]
pub struct VisionForward {
    /// `1 × d_emb`, unit norm.
    pub embedding: Var,
    /// Backbone output for every position, `(1 + k + p) × d_model`.
    pub tokens: Var,
    /// Backbone output at the class token.
    pub cls: Var,
    pub seq_len: usize,
}

#[derive(Clone, Debug)]
pub struct VisionEncoder {
    pub config: VisionConfig,
    pub patch: Linear,
    pub cls: ParamId,
    pub positions: ParamId,
    pub backbone: Stack,
    /// `F`: `2·d_model → d_emb`. Input rows `0..d_model` read the class
    /// token, rows `d_model..` read the global context.
    pub projection: Linear,
}

impl VisionEncoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, config: VisionConfig, rng: &mut R) -> Result<Self> {
        let c = &config;
        if c.patch_size == 0 || c.image_size % c.patch_size != 0 || c.d_model % c.heads != 0 {
            return Err(invalid(format!("bad vision config {c:?}")));
        }
        let patch = Linear::new(store, "vit.patch", c.patch_dim(), c.d_model, true, rng)?;
        let cls = store.insert_normal("vit.cls", 1, c.d_model, 0.1, rng)?;
        let positions = store.insert_normal("vit.positions", 1 + c.num_patches(), c.d_model, 0.02, rng)?;
        let backbone = Stack::new(store, "vit.backbone", c.d_model, c.heads, c.d_ff, c.layers, rng)?;
        let projection = Linear::new(store, "vis_proj", 2 * c.d_model, c.d_emb, true, rng)?;
        Ok(Self { config, patch, cls, positions, backbone, projection })
    }

    /// `local`: `p × d_model` tokens appended after the patches (or none).
    /// `global`: `1 × d_model` vector concatenated to the class output before
    /// `F`; `None` feeds zeros.
    pub fn forward(
        &self,
        g: &mut Graph,
        ps: &ParamStore,
        image: &Image,
        local: Option<Var>,
        global: Option<Var>,
    ) -> Result<VisionForward> {
        let d = self.config.d_model;
        if image.height() != self.config.image_size || image.width() != self.config.image_size {
            return Err(invalid(format!(
                "expected a {0}x{0} image, got {1}x{2}",
                self.config.image_size,
                image.height(),
                image.width()
            )));
        }
        for v in [local, global].into_iter().flatten() {
            let cols = g.shape(v).1;
            if cols != d {
                return Err(Error::DimensionMismatch { expected: d, actual: cols });
            }
        }
        if let Some(gv) = global {
            if g.shape(gv).0 != 1 {
                return Err(invalid("global context must be a single vector"));
            }
        }
        let patches = g.constant(patchify(image, self.config.patch_size)?);
        let tokens = self.patch.forward(g, ps, patches);
        let cls = g.param(ps, self.cls);
        let x = g.concat_rows(&[cls, tokens]);
        let pos = g.param(ps, self.positions);
        let mut x = g.add(x, pos);
        if let Some(l) = local {
            if g.shape(l).0 > 0 {
                x = g.concat_rows(&[x, l]);
            }
        }
        let seq_len = g.shape(x).0;
        let out = self.backbone.forward(g, ps, x);
        let x_cls = g.row(out, 0);
        let global = match global {
            Some(v) => v,
            None => g.constant(Matrix::zeros(1, d)),
        };
        let joint = g.concat_cols(&[x_cls, global]);
        let projected = self.projection.forward(g, ps, joint);
        let embedding = g.l2_normalize_rows(projected);
        Ok(VisionForward { embedding, tokens: out, cls: x_cls, seq_len })
    }

    pub fn encode(&self, ps: &ParamStore, image: &Image) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, ps, image, None, None)?;
        Ok(g.value(out.embedding).data().to_vec())
    }
}

/// Freezes or unfreezes the whole vision encoder (backbone and `F`).
pub fn set_frozen(store: &mut ParamStore, frozen: bool) {
    store.set_trainable_prefix(BACKBONE_PREFIX, !frozen);
    store.set_trainable_prefix(PROJECTION_PREFIX, !frozen);
}

pub fn is_vision_param(name: &str) -> bool {
    name.starts_with(BACKBONE_PREFIX) || name.starts_with(PROJECTION_PREFIX)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patch_layout() {
        let mut img = Image::filled(4, 4, [0.0; 3]);
        img.set_pixel(0, 2, [1.0, 0.5, 0.25]);
        let p = patchify(&img, 2).unwrap();
        assert_eq!(p.shape(), (4, 12));
        assert_eq!(&p.row(1)[..3], &[1.0, 0.5, 0.25]);
        assert!(patchify(&img, 3).is_err());
    }
}
