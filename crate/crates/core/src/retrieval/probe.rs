//! Linear probe: multinomial logistic regression on frozen features.

use cookalign_autograd::Matrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeConfig {
    /// Share of each class used for training; the rest is the test set.
    pub train_fraction: f64,
    pub seed: u64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { train_fraction: 0.5, seed: 0, iterations: 500, learning_rate: 0.5, l2: 1e-4 }
    }
}

/// Standardizes features with train statistics, fits softmax regression by
/// full-batch gradient descent (a convex problem) and returns test accuracy.
pub fn linear_probe(features: &Matrix, labels: &[usize], config: &ProbeConfig) -> Result<f64> {
    let (n, d) = features.shape();
    if labels.len() != n {
        return Err(Error::DimensionMismatch { expected: n, actual: labels.len() });
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let distinct = labels.iter().collect::<std::collections::BTreeSet<_>>().len();
    if distinct < 2 {
        return Err(invalid("linear probe needs at least two classes"));
    }
    if !(0.0..1.0).contains(&config.train_fraction) || config.train_fraction == 0.0 {
        return Err(invalid("train_fraction must lie in (0, 1)"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for c in 0..classes {
        let mut idx: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut rng);
        let k = ((config.train_fraction * idx.len() as f64).round() as usize).clamp(usize::from(!idx.is_empty()), idx.len());
        train.extend_from_slice(&idx[..k]);
        test.extend_from_slice(&idx[k..]);
    }
    if test.is_empty() {
        return Err(invalid("linear probe split left no test examples"));
    }

    let x_train = features.select_rows(&train);
    let mut mean = vec![0.0; d];
    let mut std = vec![0.0; d];
    for r in 0..x_train.rows() {
        for (m, v) in mean.iter_mut().zip(x_train.row(r)) {
            *m += v / train.len() as f64;
        }
    }
    for r in 0..x_train.rows() {
        for ((s, v), m) in std.iter_mut().zip(x_train.row(r)).zip(&mean) {
            *s += (v - m).powi(2) / train.len() as f64;
        }
    }
    let std: Vec<f64> = std.into_iter().map(|s| s.sqrt().max(1e-8)).collect();
    // Standardized features with a trailing bias column.
    let design = |rows: &[usize]| {
        let mut out = Matrix::zeros(rows.len(), d + 1);
        for (o, &i) in rows.iter().enumerate() {
            let dst = out.row_mut(o);
            for j in 0..d {
                dst[j] = (features.get(i, j) - mean[j]) / std[j];
            }
            dst[d] = 1.0;
        }
        out
    };
    let (xtr, xte) = (design(&train), design(&test));

    let mut w = Matrix::zeros(d + 1, classes);
    let m = train.len() as f64;
    for _ in 0..config.iterations {
        let mut p = xtr.matmul(&w);
        for r in 0..p.rows() {
            let row = p.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            row.iter_mut().for_each(|v| *v /= z);
            let y = labels[train[r]];
            row[y] -= 1.0;
        }
        let mut grad = xtr.matmul_at(&p).scale(1.0 / m);
        grad.add_scaled(&w, config.l2);
        w.add_scaled(&grad, -config.learning_rate);
    }

    let logits = xte.matmul(&w);
    let correct = test
        .iter()
        .enumerate()
        .filter(|&(r, &i)| {
            let row = logits.row(r);
            let pred = (0..classes).fold(0, |best, c| if row[c] > row[best] { c } else { best });
            pred == labels[i]
        })
        .count();
    Ok(correct as f64 / test.len() as f64)
}
