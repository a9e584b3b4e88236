use std::collections::{BTreeMap, HashSet};

use cookalign_autograd::Matrix;
use cookalign_core::data::{
    generate_synthetic_corpus, load_corpus_dir, save_corpus_dir, split_corpus, RecipePair, SyntheticSpec,
};
use cookalign_core::retrieval::{linear_probe, ProbeConfig};
use cookalign_core::ste::EntityClass;
use proptest::prelude::*;

fn ingredients(p: &RecipePair) -> HashSet<&str> {
    p.document.texts(EntityClass::Ingredients).into_iter().collect()
}

#[test]
fn classes_share_most_ingredients() {
    let pairs = generate_synthetic_corpus(&SyntheticSpec::default()).unwrap();
    let mut by_class: BTreeMap<usize, Vec<&RecipePair>> = BTreeMap::new();
    for p in &pairs {
        by_class.entry(p.class_id.unwrap()).or_default().push(p);
    }
    assert_eq!(by_class.len(), 4);
    for members in by_class.values() {
        for a in members {
            for b in members {
                let (ia, ib) = (ingredients(a), ingredients(b));
                let shared = ia.intersection(&ib).count();
                assert!(2 * shared >= ia.len(), "{} and {} share {shared}", a.image_id, b.image_id);
            }
        }
    }
}

#[test]
fn generation_is_byte_deterministic() {
    let spec = SyntheticSpec { pairs_per_class: 3, ..SyntheticSpec::default() };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    save_corpus_dir(a.path(), &generate_synthetic_corpus(&spec).unwrap()).unwrap();
    save_corpus_dir(b.path(), &generate_synthetic_corpus(&spec).unwrap()).unwrap();
    let read = |dir: &std::path::Path| {
        let mut files: Vec<_> = walk(dir).into_iter().map(|p| (p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap())).collect();
        files.sort();
        files
    };
    assert_eq!(read(a.path()), read(b.path()));
    let loaded = load_corpus_dir(a.path()).unwrap();
    assert_eq!(loaded.len(), 12);
    assert!(loaded.iter().all(|p| p.image.is_some()));
}

fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn pixel_means_separate_classes() {
    let pairs = generate_synthetic_corpus(&SyntheticSpec::default()).unwrap();
    let features: Vec<Vec<f64>> = pairs
        .iter()
        .map(|p| {
            let img = p.image().unwrap();
            let n = (img.height() * img.width()) as f64;
            (0..3).map(|c| img.data().iter().skip(c).step_by(3).sum::<f64>() / n).collect()
        })
        .collect();
    let labels: Vec<usize> = pairs.iter().map(|p| p.class_id.unwrap()).collect();
    let acc = linear_probe(&Matrix::from_rows(&features), &labels, &ProbeConfig { iterations: 2000, ..ProbeConfig::default() }).unwrap();
    assert!(acc > 0.25 + 0.2, "probe accuracy {acc}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn split_is_a_stratified_partition(train in 0.2f64..0.8, seed in any::<u64>()) {
        let pairs = generate_synthetic_corpus(&SyntheticSpec::default()).unwrap();
        let val = (1.0 - train) / 2.0;
        let (a, b, c) = split_corpus(&pairs, [train, val, 1.0 - train - val], seed).unwrap();
        prop_assert_eq!(a.len() + b.len() + c.len(), pairs.len());
        let mut ids: Vec<&str> = a.iter().chain(&b).chain(&c).map(|p| p.image_id.as_str()).collect();
        ids.sort();
        ids.dedup();
        prop_assert_eq!(ids.len(), pairs.len());
        for class in 0..4 {
            let n = a.iter().filter(|p| p.class_id == Some(class)).count();
            prop_assert!((n as f64 - 16.0 * train).abs() <= 1.0);
        }
        let again = split_corpus(&pairs, [train, val, 1.0 - train - val], seed).unwrap();
        prop_assert_eq!(again.0, a);
    }

    #[test]
    fn bad_fractions_are_rejected(f in 1.01f64..2.0) {
        let pairs = generate_synthetic_corpus(&SyntheticSpec { pairs_per_class: 2, ..SyntheticSpec::default() }).unwrap();
        prop_assert!(split_corpus(&pairs, [f, 0.0, 0.0], 0).is_err());
        prop_assert!(split_corpus(&pairs, [0.5, 0.2, 0.2], 0).is_err());
    }
}
