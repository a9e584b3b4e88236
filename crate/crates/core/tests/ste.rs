mod common;

use common::*;
use cookalign_autograd::Matrix;
use cookalign_core::data::{caption_for, generate_synthetic_corpus, SyntheticSpec};
use cookalign_core::ste::{build_entity_index, build_structured_pair, extract_title, Caption, EntityIndex, ToyClip};
use proptest::prelude::*;

fn index_case() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>, usize)> {
    (1usize..=30, 2usize..=12).prop_flat_map(|(n, d)| {
        let v = prop::collection::vec(-1.0f64..1.0, d);
        (prop::collection::vec(v.clone(), n), v, 0..=n)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn top_k_matches_exhaustive_cosine((vectors, query, k) in index_case()) {
        prop_assume!(vectors.iter().chain([&query]).all(|v| v.iter().any(|x| x.abs() > 1e-3)));
        let names: Vec<String> = (0..vectors.len()).map(|i| format!("e{i}")).collect();
        let index = EntityIndex::new(names, Matrix::from_rows(&vectors)).unwrap();
        let got = index.top_k(&query, k).unwrap();
        let mut all: Vec<(usize, f64)> = vectors.iter().enumerate().map(|(i, v)| (i, cos(v, &query))).collect();
        all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        prop_assert_eq!(got.len(), k);
        for ((gi, gs), (wi, ws)) in got.iter().zip(&all) {
            prop_assert!((gs - ws).abs() < 1e-9);
            // Near-equal scores may legitimately swap.
            prop_assert!(gi == wi || (gs - ws).abs() < 1e-12);
        }
    }

    #[test]
    fn title_extraction_is_idempotent(words in prop::collection::vec(prop::sample::select(vec![
        "woman", "piano", "stage", "dog", "ball", "park", "man", "bicycle", "street", "bowl", "soup", "table",
    ]), 1..4), verb in prop::sample::select(vec!["playing", "holding", "riding", "eating"])) {
        let text = match words.as_slice() {
            [a] => format!("A {a} on a table"),
            [a, b] => format!("A {a} {verb} a {b}"),
            [a, b, c, ..] => format!("A {a} {verb} {b} on {c}"),
            [] => unreachable!(),
        };
        let first = extract_title(&Caption::new("x", text.clone()).unwrap());
        let again = extract_title(&Caption::new("x", first.text.clone()).unwrap());
        prop_assert_eq!(&first, &extract_title(&Caption::new("x", text).unwrap()));
        prop_assert_eq!(again.text.to_lowercase(), first.text.to_lowercase());
    }
}

#[test]
fn worked_example() {
    let cap = Caption::new("img", "A woman playing piano on stage").unwrap();
    assert_eq!(extract_title(&cap).text, "Woman and Piano and stage");
}

#[test]
fn index_round_trip_keeps_hash_and_order() {
    let pairs = generate_synthetic_corpus(&SyntheticSpec::default()).unwrap();
    let captions: Vec<Caption> = pairs.iter().map(|p| Caption::new(p.image_id.clone(), caption_for(&p.document)).unwrap()).collect();
    let fit: Vec<_> = pairs.iter().zip(&captions).map(|(p, c)| (p.image().unwrap(), c.text.as_str())).collect();
    let clip = ToyClip::fit(&fit, 32, 7).unwrap();
    let index = build_entity_index(&captions, &clip).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("index.jsonl");
    index.save(&path).unwrap();
    let loaded = EntityIndex::load(&path).unwrap();
    assert_eq!(loaded.entities(), index.entities());
    assert_eq!(loaded.content_hash(), index.content_hash());

    // Extraction is a pure function of its inputs.
    let a = build_structured_pair(&captions[3], pairs[3].image().unwrap(), &index, &clip, 4).unwrap();
    let b = build_structured_pair(&captions[3], pairs[3].image().unwrap(), &loaded, &clip, 4).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.local_entities.len(), 4);
}

#[test]
fn oversized_k_is_an_error() {
    let index = EntityIndex::new(vec!["a".into()], Matrix::from_rows(&[vec![1.0, 0.0]])).unwrap();
    assert!(index.top_k(&[1.0, 0.0], 2).is_err());
    assert!(index.top_k(&[1.0, 0.0, 0.0], 1).is_err());
}
