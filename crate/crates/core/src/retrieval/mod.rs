//! Cross-modal retrieval metrics and the sampled-gallery protocol.

mod probe;

use cookalign_autograd::Matrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::ste::EntityClass;
pub use probe::{linear_probe, ProbeConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "image-to-recipe")]
    ImageToRecipe,
    #[serde(rename = "recipe-to-image")]
    RecipeToImage,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::ImageToRecipe => "image-to-recipe",
            Direction::RecipeToImage => "recipe-to-image",
        }
    }
}

/// Median rank and recall at 1, 5 and 10.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub med_r: f64,
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
}

impl Metrics {
    pub fn rsum(&self) -> f64 {
        100.0 * (self.r1 + self.r5 + self.r10)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub direction: Direction,
    pub gallery_size: usize,
    pub num_runs: usize,
    pub seed: u64,
    #[serde(rename = "medR")]
    pub med_r: f64,
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    /// `100·(r1 + r5 + r10)` for this direction; see [`pair_rsum`].
    pub rsum: f64,
    pub dropped_entities: Vec<EntityClass>,
}

impl RetrievalReport {
    pub fn metrics(&self) -> Metrics {
        Metrics { med_r: self.med_r, r1: self.r1, r5: self.r5, r10: self.r10 }
    }
}

/// RSUM over both directions: 100 times the sum of all six recalls.
pub fn pair_rsum(reports: &[RetrievalReport; 2]) -> f64 {
    reports.iter().map(|r| r.rsum).sum()
}

/// 1-based rank of the diagonal entry in each row, counting every other
/// entry with an equal or higher score as ahead of it.
pub fn rank_of_truth(scores: &Matrix) -> Result<Vec<usize>> {
    let n = scores.rows();
    if scores.cols() != n {
        return Err(invalid(format!("score matrix must be square, got {}x{}", n, scores.cols())));
    }
    if !scores.all_finite() {
        return Err(invalid("score matrix has non-finite entries"));
    }
    Ok((0..n)
        .map(|i| {
            let row = scores.row(i);
            let truth = row[i];
            1 + row.iter().enumerate().filter(|&(j, &s)| j != i && s >= truth).count()
        })
        .collect())
}

pub fn compute_metrics(ranks: &[usize]) -> Result<Metrics> {
    if ranks.is_empty() {
        return Err(invalid("no ranks"));
    }
    let mut sorted = ranks.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    let med_r = if n % 2 == 1 { sorted[n / 2] as f64 } else { (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0 };
    let recall = |k: usize| sorted.iter().filter(|&&r| r <= k).count() as f64 / n as f64;
    Ok(Metrics { med_r, r1: recall(1), r5: recall(5), r10: recall(10) })
}

/// Default number of sampled galleries for a gallery size.
pub fn default_runs(gallery_size: usize) -> usize {
    if gallery_size >= 10_000 {
        5
    } else {
        10
    }
}

/// Averages metrics over `num_runs` galleries of `gallery_size` pairs drawn
/// uniformly without replacement (run `r` uses seed `seed + r`). Both
/// directions use the same gallery within a run. Row `i` of `text` and of
/// `image` are a matching pair; rows should be unit-norm.
pub fn evaluate_protocol(
    text: &Matrix,
    image: &Matrix,
    gallery_size: usize,
    num_runs: usize,
    seed: u64,
) -> Result<[RetrievalReport; 2]> {
    if text.shape() != image.shape() {
        return Err(invalid(format!("text {:?} and image {:?} embeddings differ in shape", text.shape(), image.shape())));
    }
    let n = text.rows();
    if gallery_size == 0 || gallery_size > n {
        return Err(Error::Invalid(format!("gallery of {gallery_size} needs at least that many pairs, have {n}")));
    }
    if num_runs == 0 {
        return Err(invalid("num_runs must be positive"));
    }
    let mut sums = [Metrics::default(); 2];
    for run in 0..num_runs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(run as u64));
        let mut idx = sample(&mut rng, n, gallery_size).into_vec();
        idx.sort_unstable();
        let (t, v) = (text.select_rows(&idx), image.select_rows(&idx));
        let i2r = v.matmul_bt(&t);
        let r2i = i2r.transpose();
        for (sum, scores) in sums.iter_mut().zip([&i2r, &r2i]) {
            let m = compute_metrics(&rank_of_truth(scores)?)?;
            sum.med_r += m.med_r;
            sum.r1 += m.r1;
            sum.r5 += m.r5;
            sum.r10 += m.r10;
        }
    }
    let k = num_runs as f64;
    let report = |direction, s: Metrics| {
        let m = Metrics { med_r: s.med_r / k, r1: s.r1 / k, r5: s.r5 / k, r10: s.r10 / k };
        RetrievalReport {
            direction,
            gallery_size,
            num_runs,
            seed,
            med_r: m.med_r,
            r1: m.r1,
            r5: m.r5,
            r10: m.r10,
            rsum: m.rsum(),
            dropped_entities: Vec::new(),
        }
    };
    Ok([report(Direction::ImageToRecipe, sums[0]), report(Direction::RecipeToImage, sums[1])])
}
