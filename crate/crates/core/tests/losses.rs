mod common;

use common::*;
use cookalign_autograd::Matrix;
use cookalign_core::losses::{itc_batch_loss, itm_loss, itm_negatives, margin_at, triplet_loss, MarginSchedule};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn batch() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<f64>>, f64, Option<Vec<usize>>)> {
    (2usize..=8, 1usize..=16).prop_flat_map(|(b, d)| {
        let rows = prop::collection::vec(prop::collection::vec(-1.0f64..1.0, d), b);
        let labels = prop::option::of(prop::collection::vec(0usize..3, b));
        (rows.clone(), rows, 0.0f64..0.5, labels)
    })
}

fn nonzero(rows: &[Vec<f64>]) -> bool {
    rows.iter().all(|r| r.iter().map(|x| x * x).sum::<f64>() > 1e-6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn itc_matches_triplet_enumeration((text, image, margin, labels) in batch()) {
        prop_assume!(nonzero(&text) && nonzero(&image));
        let got = itc_batch_loss(&Matrix::from_rows(&text), &Matrix::from_rows(&image), margin, labels.as_deref()).unwrap();
        let want = triplet_oracle(&text, &image, margin, labels.as_deref());
        prop_assert!((got - want).abs() <= 1e-6, "{got} vs {want}");
        prop_assert!(got >= 0.0);
    }

    #[test]
    fn itm_matches_cross_entropy(pairs in prop::collection::vec((1e-9f64..1.0 - 1e-9, 0u8..=1), 1..40)) {
        let (s, y): (Vec<f64>, Vec<u8>) = pairs.into_iter().unzip();
        let got = itm_loss(&s, &y).unwrap();
        prop_assert!((got - bce_oracle(&s, &y)).abs() <= 1e-7);
    }

    #[test]
    fn triplet_is_a_hinge(a in prop::collection::vec(-1.0f64..1.0, 4), p in prop::collection::vec(-1.0f64..1.0, 4),
                          n in prop::collection::vec(-1.0f64..1.0, 4), m in 0.0f64..1.0) {
        prop_assume!(nonzero(&[a.clone(), p.clone(), n.clone()]));
        let l = triplet_loss(&a, &p, &n, m).unwrap();
        let want = (cos(&a, &n) - cos(&a, &p) + m).max(0.0);
        prop_assert!((l - want).abs() < 1e-12);
    }

    #[test]
    fn margin_is_monotone_and_capped(e in 0usize..10_000) {
        let s = MarginSchedule::default();
        prop_assert!(margin_at(e + 1, &s) >= margin_at(e, &s));
        prop_assert!(margin_at(e, &s) <= 0.3);
    }

    #[test]
    fn itm_negatives_are_balanced(b in 2usize..16, seed in any::<u64>()) {
        let ex = itm_negatives(b, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        for e in &ex {
            prop_assert_eq!(e.label == 1, e.text == e.image);
        }
        let pos = ex.iter().filter(|e| e.label == 1).count();
        prop_assert_eq!(pos, b);
        prop_assert_eq!(ex.len(), 2 * b);
    }
}

#[test]
fn perfectly_separated_batch_has_zero_loss() {
    let eye = Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
    assert_eq!(itc_batch_loss(&eye, &eye, 0.5, None).unwrap(), 0.0);
    assert!(itc_batch_loss(&eye, &eye, 1.5, None).unwrap() > 0.0);
}

#[test]
fn invalid_inputs_are_rejected() {
    let one = Matrix::from_rows(&[vec![1.0, 0.0]]);
    assert!(itc_batch_loss(&one, &one, 0.1, None).is_err());
    assert!(itm_loss(&[0.0], &[1]).is_err());
    assert!(itm_loss(&[0.5], &[2]).is_err());
}
