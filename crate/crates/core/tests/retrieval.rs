mod common;

use common::*;
use cookalign_autograd::Matrix;
use cookalign_core::retrieval::{compute_metrics, evaluate_protocol, linear_probe, rank_of_truth, ProbeConfig};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn square(max: usize, tied: bool) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1..=max).prop_flat_map(move |n| {
        let cell = if tied { (0u8..4).prop_map(f64::from).boxed() } else { (-1.0f64..1.0).boxed() };
        prop::collection::vec(prop::collection::vec(cell, n), n)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn ranks_match_sorting_oracle(rows in square(50, false)) {
        prop_assert_eq!(rank_of_truth(&Matrix::from_rows(&rows)).unwrap(), rank_oracle(&rows));
    }

    #[test]
    fn tied_ranks_are_pessimistic(rows in square(30, true)) {
        let ranks = rank_of_truth(&Matrix::from_rows(&rows)).unwrap();
        prop_assert_eq!(&ranks, &rank_oracle(&rows));
        let m = compute_metrics(&ranks).unwrap();
        let (med, r1, r5, r10) = metrics_oracle(&ranks);
        prop_assert_eq!((m.med_r, m.r1, m.r5, m.r10), (med, r1, r5, r10));
    }

    #[test]
    fn raising_the_truth_never_hurts(rows in square(20, false), i in any::<prop::sample::Index>(), bump in 0.0f64..2.0) {
        let n = rows.len();
        let i = i.index(n);
        let before = rank_of_truth(&Matrix::from_rows(&rows)).unwrap()[i];
        let mut better = rows.clone();
        better[i][i] += bump;
        let after = rank_of_truth(&Matrix::from_rows(&better)).unwrap()[i];
        prop_assert!(after <= before);
    }

    #[test]
    fn recalls_are_ordered(ranks in prop::collection::vec(1usize..100, 1..60)) {
        let m = compute_metrics(&ranks).unwrap();
        prop_assert!(m.r1 <= m.r5 && m.r5 <= m.r10 && m.r10 <= 1.0);
        prop_assert!(m.med_r >= 1.0);
    }
}

#[test]
fn protocol_is_seed_reproducible() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let t = unit_rows(&mut rng, 40, 8);
    let v = unit_rows(&mut rng, 40, 8);
    let a = evaluate_protocol(&t, &v, 20, 5, 7).unwrap();
    let b = evaluate_protocol(&t, &v, 20, 5, 7).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    let c = evaluate_protocol(&t, &v, 20, 5, 8).unwrap();
    assert_ne!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&c).unwrap());
}

#[test]
fn identical_embeddings_retrieve_perfectly() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let t = unit_rows(&mut rng, 30, 16);
    for r in evaluate_protocol(&t, &t, 30, 1, 0).unwrap() {
        assert_eq!((r.med_r, r.r1, r.r5, r.r10), (1.0, 1.0, 1.0, 1.0));
        assert!((r.rsum - 300.0).abs() < 1e-9);
    }
}

#[test]
fn null_model_is_calibrated() {
    let (n, trials) = (50, 50);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut sum = [0.0; 3];
    for trial in 0..trials {
        let t = unit_rows(&mut rng, n, 8);
        let v = unit_rows(&mut rng, n, 8);
        let [r, _] = evaluate_protocol(&t, &v, n, 1, trial).unwrap();
        sum[0] += r.r1;
        sum[1] += r.r5;
        sum[2] += r.r10;
    }
    for (s, k) in sum.iter().zip([1.0, 5.0, 10.0]) {
        let p = k / n as f64;
        let sigma = (p * (1.0 - p) / (n as f64 * trials as f64)).sqrt();
        assert!((s / trials as f64 - p).abs() <= 3.0 * sigma, "R@{k}: {} vs {p}", s / trials as f64);
    }
}

#[test]
fn probe_on_shuffled_labels_is_near_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let classes = 4;
    let mut labels: Vec<usize> = (0..400).map(|i| i % classes).collect();
    let centers = random_rows(&mut rng, classes, 6);
    let features: Vec<Vec<f64>> = labels
        .iter()
        .zip(random_rows(&mut rng, 400, 6))
        .map(|(&l, noise)| centers[l].iter().zip(noise).map(|(c, e)| 3.0 * c + 0.3 * e).collect())
        .collect();
    let x = Matrix::from_rows(&features);
    let informed = linear_probe(&x, &labels, &ProbeConfig::default()).unwrap();
    assert!(informed > 0.95, "{informed}");
    labels.shuffle(&mut rng);
    let shuffled = linear_probe(&x, &labels, &ProbeConfig::default()).unwrap();
    assert!((shuffled - 1.0 / classes as f64).abs() < 0.1, "{shuffled}");
}

#[test]
fn malformed_scores_are_rejected() {
    assert!(rank_of_truth(&Matrix::zeros(2, 3)).is_err());
    assert!(rank_of_truth(&Matrix::from_rows(&[vec![f64::NAN]])).is_err());
    assert!(compute_metrics(&[]).is_err());
}
