//! Reference implementations used as oracles by the integration tests.
//! They are written from the definitions, sharing no code with the crate.
#![allow(dead_code)]

use cookalign_autograd::Matrix;
use cookalign_core::pipeline::ModelConfig;
use cookalign_core::text::TextEncoderConfig;
use cookalign_core::vision::{ContextEmbedderConfig, VisionConfig};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn hinge(anchor: &[f64], pos: &[f64], neg: &[f64], margin: f64) -> f64 {
    let d = |x: &[f64], y: &[f64]| 1.0 - cos(x, y);
    (d(anchor, pos) + margin - d(anchor, neg)).max(0.0)
}

/// Mean of the non-zero entries; zero when there are none.
fn active_mean(losses: &[f64]) -> f64 {
    let active: Vec<f64> = losses.iter().copied().filter(|&l| l > 0.0).collect();
    if active.is_empty() {
        0.0
    } else {
        active.iter().sum::<f64>() / active.len() as f64
    }
}

/// Enumerates every triplet explicitly: row `i` of `text` matches row `i`
/// of `image`; other rows are negatives (unless they share a label). With
/// labels, a second term uses same-label rows as positives.
pub fn triplet_oracle(text: &[Vec<f64>], image: &[Vec<f64>], margin: f64, labels: Option<&[usize]>) -> f64 {
    let b = text.len();
    let same = |i: usize, j: usize| labels.map_or(false, |l| l[i] == l[j]);
    let mut instance = Vec::new();
    for i in 0..b {
        for j in 0..b {
            if j == i || same(i, j) {
                continue;
            }
            instance.push(hinge(&text[i], &image[i], &image[j], margin));
            instance.push(hinge(&image[i], &text[i], &text[j], margin));
        }
    }
    let mut semantic = Vec::new();
    if labels.is_some() {
        for a in 0..b {
            for p in 0..b {
                if p == a || !same(a, p) {
                    continue;
                }
                for n in 0..b {
                    if same(a, n) {
                        continue;
                    }
                    semantic.push(hinge(&text[a], &image[p], &image[n], margin));
                    semantic.push(hinge(&image[a], &text[p], &text[n], margin));
                }
            }
        }
    }
    active_mean(&instance) + active_mean(&semantic)
}

pub fn bce_oracle(scores: &[f64], labels: &[u8]) -> f64 {
    let mut total = 0.0;
    for (&s, &y) in scores.iter().zip(labels) {
        total += if y == 1 { -s.ln() } else { -(1.0 - s).ln() };
    }
    total / scores.len() as f64
}

/// Rank of the truth by sorting the row: higher scores first, and among
/// equal scores the truth goes last.
pub fn rank_oracle(scores: &[Vec<f64>]) -> Vec<usize> {
    (0..scores.len())
        .map(|i| {
            let mut order: Vec<usize> = (0..scores[i].len()).collect();
            order.sort_by(|&a, &b| {
                scores[i][b].partial_cmp(&scores[i][a]).unwrap().then_with(|| (a == i).cmp(&(b == i)))
            });
            order.iter().position(|&j| j == i).unwrap() + 1
        })
        .collect()
}

/// `(medR, R@1, R@5, R@10)` by direct counting.
pub fn metrics_oracle(ranks: &[usize]) -> (f64, f64, f64, f64) {
    let mut s = ranks.to_vec();
    s.sort();
    let n = s.len();
    let med = if n % 2 == 0 { (s[n / 2 - 1] as f64 + s[n / 2] as f64) / 2.0 } else { s[n / 2] as f64 };
    let r = |k: usize| s.iter().filter(|&&x| x <= k).count() as f64 / n as f64;
    (med, r(1), r(5), r(10))
}

pub fn random_rows<R: Rng>(rng: &mut R, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).collect()
}

pub fn unit_rows<R: Rng>(rng: &mut R, n: usize, d: usize) -> Matrix {
    Matrix::from_rows(&random_rows(rng, n, d)).l2_normalize_rows()
}

/// Tiny dimensions for gradient checks and structural tests.
pub fn micro_model() -> ModelConfig {
    ModelConfig {
        text: TextEncoderConfig { d_model: 8, heads: 2, layers: 1, d_ff: 16, d_emb: 8, max_seq_len: 8, max_list_len: 4, list_positions: true },
        vision: VisionConfig { image_size: 24, patch_size: 8, d_model: 8, heads: 2, layers: 1, d_ff: 16, d_emb: 8 },
        context: ContextEmbedderConfig { d_model: 8, heads: 2, layers: 1, d_ff: 16, max_len: 12 },
        itm_heads: 2,
        itm_d_ff: 16,
    }
}

/// Small synthetic corpus sized for [`micro_model`].
pub fn micro_corpus() -> Vec<cookalign_core::data::RecipePair> {
    let spec = cookalign_core::data::SyntheticSpec { num_classes: 2, pairs_per_class: 4, image_size: 24, ..Default::default() };
    cookalign_core::data::generate_synthetic_corpus(&spec).unwrap()
}

/// End-to-end configuration over the micro corpus and model.
pub fn micro_e2e(stage1_epochs: usize, stage2_epochs: usize) -> cookalign_core::pipeline::e2e::EndToEndConfig {
    use cookalign_core::pipeline::e2e::EndToEndConfig;
    let mut cfg = EndToEndConfig {
        corpus: cookalign_core::data::SyntheticSpec { num_classes: 2, pairs_per_class: 4, image_size: 24, ..Default::default() },
        clip_dim: 16,
        ste_topk: 3,
        ..EndToEndConfig::default()
    };
    cfg.stage1.model = micro_model();
    cfg.stage1.epochs = stage1_epochs;
    cfg.stage1 = cfg.stage1.normalized();
    cfg.stage1.batch_size = 4;
    cfg.stage2.model = micro_model();
    cfg.stage2.epochs = stage2_epochs;
    cfg.stage2.batch_size = 4;
    cfg
}
