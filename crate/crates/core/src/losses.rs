//! Training objectives: bidirectional hinge triplet loss over in-batch
//! negatives with active-triplet averaging, binary image-text matching, and
//! their weighted sum. The triplet margin grows linearly per epoch up to a
//! cap.

use cookalign_autograd::nn::{EncoderLayer, LayerNorm, Linear};
use cookalign_autograd::{cosine, Graph, Matrix, ParamId, ParamStore, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// `1 − cos(a, b)`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    1.0 - cosine(a, b)
}

/// `max(0, d(a, p) + margin − d(a, n))` with cosine distance.
pub fn triplet_loss(anchor: &[f64], positive: &[f64], negative: &[f64], margin: f64) -> Result<f64> {
    for v in [positive, negative] {
        if v.len() != anchor.len() {
            return Err(Error::DimensionMismatch { expected: anchor.len(), actual: v.len() });
        }
    }
    Ok((cosine_distance(anchor, positive) + margin - cosine_distance(anchor, negative)).max(0.0))
}

/// Value, bookkeeping and `∂loss/∂S` of the batch triplet loss, where
/// `S[i][j] = cos(text_i, image_j)`.
#[derive(Clone, Debug)]
pub struct ItcLoss {
    pub value: f64,
    pub instance: f64,
    pub semantic: f64,
    pub active_instance: usize,
    pub active_semantic: usize,
    pub grad: Matrix,
}

/// Accumulates hinge terms `S[neg] − S[pos] + margin` and their gradient.
struct HingeSum {
    sum: f64,
    active: usize,
    grad: Matrix,
}

impl HingeSum {
    fn new(b: usize) -> Self {
        Self { sum: 0.0, active: 0, grad: Matrix::zeros(b, b) }
    }

    fn add(&mut self, sim: &Matrix, pos: (usize, usize), neg: (usize, usize), margin: f64) {
        let l = sim.get(neg.0, neg.1) - sim.get(pos.0, pos.1) + margin;
        if l > 0.0 {
            self.sum += l;
            self.active += 1;
            self.grad.set(neg.0, neg.1, self.grad.get(neg.0, neg.1) + 1.0);
            self.grad.set(pos.0, pos.1, self.grad.get(pos.0, pos.1) - 1.0);
        }
    }

    /// Sum over active triplets divided by their count; 0 when none is active.
    fn finish(self) -> (f64, usize, Matrix) {
        if self.active == 0 {
            let b = self.grad.rows();
            return (0.0, 0, Matrix::zeros(b, b));
        }
        let n = self.active as f64;
        (self.sum / n, self.active, self.grad.scale(1.0 / n))
    }
}

/// Triplet loss from a square similarity matrix (row = text, column =
/// image, diagonal = matching pairs).
///
/// Both directions are enumerated: text anchors against every non-matching
/// image, image anchors against every non-matching text. With `labels`,
/// negatives sharing the anchor's label are skipped and a semantic term is
/// added: same-label (non-matching) positives against different-label
/// negatives, averaged over its own active triplets.
pub fn itc_from_similarities(sim: &Matrix, margin: f64, labels: Option<&[usize]>) -> Result<ItcLoss> {
    let b = sim.rows();
    if sim.cols() != b {
        return Err(invalid(format!("similarity matrix must be square, got {}x{}", sim.rows(), sim.cols())));
    }
    if b < 2 {
        return Err(Error::BatchTooSmall { min: 2, got: b });
    }
    if let Some(l) = labels {
        if l.len() != b {
            return Err(Error::DimensionMismatch { expected: b, actual: l.len() });
        }
    }
    let same = |i: usize, j: usize| labels.is_some_and(|l| l[i] == l[j]);

    let mut inst = HingeSum::new(b);
    for a in 0..b {
        for n in (0..b).filter(|&n| n != a && !same(a, n)) {
            inst.add(sim, (a, a), (a, n), margin); // text anchor, image negative
            inst.add(sim, (a, a), (n, a), margin); // image anchor, text negative
        }
    }
    let (instance, active_instance, mut grad) = inst.finish();

    let (semantic, active_semantic) = if labels.is_some() {
        let mut sem = HingeSum::new(b);
        for a in 0..b {
            for p in (0..b).filter(|&p| p != a && same(a, p)) {
                for n in (0..b).filter(|&n| !same(a, n)) {
                    sem.add(sim, (a, p), (a, n), margin);
                    sem.add(sim, (p, a), (n, a), margin);
                }
            }
        }
        let (v, active, g) = sem.finish();
        grad.add_assign(&g);
        (v, active)
    } else {
        (0.0, 0)
    };

    Ok(ItcLoss { value: instance + semantic, instance, semantic, active_instance, active_semantic, grad })
}

/// Batch triplet loss for row-aligned text and image embeddings. Rows are
/// L2-normalized first, so the similarities are cosines.
pub fn itc_batch_loss(text: &Matrix, image: &Matrix, margin: f64, labels: Option<&[usize]>) -> Result<f64> {
    if text.shape() != image.shape() {
        return Err(invalid(format!("text {:?} and image {:?} batches differ in shape", text.shape(), image.shape())));
    }
    let sim = text.l2_normalize_rows().matmul_bt(&image.l2_normalize_rows());
    Ok(itc_from_similarities(&sim, margin, labels)?.value)
}

/// Records the triplet loss on a graph. `text` and `image` must already be
/// unit-norm rows.
pub fn itc_on_graph(g: &mut Graph, text: Var, image: Var, margin: f64, labels: Option<&[usize]>) -> Result<(Var, ItcLoss)> {
    let sim = g.matmul_bt(text, image);
    let loss = itc_from_similarities(g.value(sim), margin, labels)?;
    let var = g.scalar_fn(&[sim], loss.value, vec![loss.grad.clone()]);
    Ok((var, loss))
}

/// Mean binary cross-entropy of matching scores in `(0, 1)`.
pub fn itm_loss(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.is_empty() || scores.len() != labels.len() {
        return Err(invalid("itm_loss needs equally many scores and labels (at least one)"));
    }
    let mut total = 0.0;
    for (&s, &y) in scores.iter().zip(labels) {
        if !(s > 0.0 && s < 1.0) {
            return Err(invalid(format!("matching score {s} outside (0, 1)")));
        }
        if y > 1 {
            return Err(invalid(format!("matching label {y} is not 0 or 1")));
        }
        let y = y as f64;
        total -= y * s.ln() + (1.0 - y) * (1.0 - s).ln();
    }
    Ok(total / scores.len() as f64)
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// [`itm_loss`] of `sigmoid(logits)`, computed stably and recorded on the
/// graph. `logits` is `n × 1`.
pub fn itm_on_graph(g: &mut Graph, logits: Var, labels: &[u8]) -> Result<Var> {
    let z = g.value(logits);
    if z.cols() != 1 || z.rows() != labels.len() || labels.is_empty() {
        return Err(invalid("itm logits must be n×1 with one label per row"));
    }
    let n = labels.len() as f64;
    let mut value = 0.0;
    let mut grad = Matrix::zeros(z.rows(), 1);
    for (i, &y) in labels.iter().enumerate() {
        let zi = z.get(i, 0);
        let y = y as f64;
        value += softplus(zi) - y * zi;
        grad.set(i, 0, (sigmoid(zi) - y) / n);
    }
    Ok(g.scalar_fn(&[logits], value / n, vec![grad]))
}

/// One matching-head example: indices into the batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ItmPair {
    pub text: usize,
    pub image: usize,
    pub label: u8,
}

/// For each example, its matched pair and one pair with a uniformly drawn
/// non-matching image.
pub fn itm_negatives<R: Rng + ?Sized>(batch: usize, rng: &mut R) -> Result<Vec<ItmPair>> {
    if batch < 2 {
        return Err(Error::BatchTooSmall { min: 2, got: batch });
    }
    let mut out = Vec::with_capacity(2 * batch);
    for i in 0..batch {
        out.push(ItmPair { text: i, image: i, label: 1 });
        let mut j = rng.gen_range(0..batch - 1);
        if j >= i {
            j += 1;
        }
        out.push(ItmPair { text: i, image: j, label: 0 });
    }
    Ok(out)
}

pub fn total_loss(itc: f64, itm: f64, lambda: f64) -> f64 {
    itc + lambda * itm
}

/// Linear per-epoch margin growth with a cap.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginSchedule {
    pub start: f64,
    pub increment: f64,
    pub cap: f64,
}

impl Default for MarginSchedule {
    fn default() -> Self {
        Self { start: 0.05, increment: 0.005, cap: 0.3 }
    }
}

impl MarginSchedule {
    pub fn at(&self, epoch: usize) -> f64 {
        (self.start + self.increment * epoch as f64).min(self.cap)
    }
}

pub fn margin_at(epoch: usize, schedule: &MarginSchedule) -> f64 {
    schedule.at(epoch)
}

/// Fusion block over `[cls; text tokens; image tokens]` followed by a linear
/// scorer on the class output.
#[derive(Clone, Debug)]
pub struct ItmHead {
    pub cls: ParamId,
    /// Row 0 is added to text tokens, row 1 to image tokens.
    pub modality: ParamId,
    pub layer: EncoderLayer,
    pub norm: LayerNorm,
    pub scorer: Linear,
}

impl ItmHead {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, dim: usize, heads: usize, d_ff: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            cls: store.insert_normal(format!("{prefix}.cls"), 1, dim, 0.1, rng)?,
            modality: store.insert_normal(format!("{prefix}.modality"), 2, dim, 0.1, rng)?,
            layer: EncoderLayer::new(store, &format!("{prefix}.fusion"), dim, heads, d_ff, rng)?,
            norm: LayerNorm::new(store, &format!("{prefix}.norm"), dim)?,
            scorer: Linear::new(store, &format!("{prefix}.scorer"), dim, 1, true, rng)?,
        })
    }

    /// Matching logit (`1 × 1`); the score is its sigmoid.
    pub fn logit(&self, g: &mut Graph, ps: &ParamStore, text_tokens: Var, image_tokens: Var) -> Var {
        let modality = g.param(ps, self.modality);
        let t_type = g.row(modality, 0);
        let i_type = g.row(modality, 1);
        let text = g.add_row(text_tokens, t_type);
        let image = g.add_row(image_tokens, i_type);
        let cls = g.param(ps, self.cls);
        let x = g.concat_rows(&[cls, text, image]);
        let h = self.layer.forward(g, ps, x);
        let h = self.norm.forward(g, ps, h);
        let pooled = g.row(h, 0);
        self.scorer.forward(g, ps, pooled)
    }

    /// Matching score, clamped into the open interval `(0, 1)`.
    pub fn score(&self, g: &mut Graph, ps: &ParamStore, text_tokens: Var, image_tokens: Var) -> f64 {
        let z = self.logit(g, ps, text_tokens, image_tokens);
        sigmoid(g.value(z).item()).clamp(1e-12, 1.0 - 1e-12)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn margin_schedule_values() {
        let s = MarginSchedule::default();
        assert_eq!(s.at(0), 0.05);
        assert!((s.at(10) - 0.10).abs() < 1e-12);
        assert_eq!(s.at(100), 0.3);
    }

    #[test]
    fn total_loss_weights() {
        assert!((total_loss(0.3, 0.7, 1.0) - 1.0).abs() < 1e-12);
        assert_eq!(total_loss(0.3, 0.7, 0.0), 0.3);
    }

    #[test]
    fn itm_examples() {
        assert!((itm_loss(&[0.5], &[1]).unwrap() - std::f64::consts::LN_2).abs() < 1e-5);
        assert!(itm_loss(&[1e-12], &[0]).unwrap() < 1e-11);
        assert!(itm_loss(&[1.0], &[1]).is_err());
        assert!(itm_loss(&[], &[]).is_err());
    }

    #[test]
    fn negatives_for_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = itm_negatives(2, &mut rng).unwrap();
        assert_eq!(
            p,
            [
                ItmPair { text: 0, image: 0, label: 1 },
                ItmPair { text: 0, image: 1, label: 0 },
                ItmPair { text: 1, image: 1, label: 1 },
                ItmPair { text: 1, image: 0, label: 0 },
            ]
        );
        assert!(itm_negatives(1, &mut rng).is_err());
    }

    #[test]
    fn batch_of_one_is_rejected() {
        let m = Matrix::from_vec(1, 2, vec![1.0, 0.0]);
        assert!(matches!(itc_batch_loss(&m, &m, 0.1, None), Err(Error::BatchTooSmall { .. })));
    }
}
