mod common;

use common::*;
use cookalign_autograd::{Graph, Matrix};
use cookalign_core::pipeline::{build_vocabulary, Model};
use cookalign_core::ste::{EntityClass, StructuredDocument};
use cookalign_core::vision::{patchify, ContextConfig, Injection};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn model() -> (Model, Vec<cookalign_core::data::RecipePair>) {
    let pairs = micro_corpus();
    (Model::new(micro_model(), build_vocabulary(&pairs, []), 0).unwrap(), pairs)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sequence_length_counts_context_tokens(k in 0usize..6, seed in any::<u64>()) {
        let (m, pairs) = model();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Graph::new();
        let local = (k > 0).then(|| g.constant(Matrix::from_rows(&random_rows(&mut rng, k, 8))));
        let f = m.vision.forward(&mut g, &m.store, pairs[0].image().unwrap(), local, None).unwrap();
        prop_assert_eq!(f.seq_len, 1 + m.config.vision.num_patches() + k);
        prop_assert_eq!(g.shape(f.tokens).0, f.seq_len);
    }

    #[test]
    fn embeddings_are_unit_norm(i in 0usize..8) {
        let (m, pairs) = model();
        let t = m.embed_text(&pairs[i].document).unwrap();
        let v = m.embed_image(&pairs[i], &ContextConfig::OFF, None).unwrap();
        for e in [t, v] {
            let n: f64 = e.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn global_context_skips_the_backbone() {
    let (m, pairs) = model();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let run = |global: Matrix| {
        let mut g = Graph::new();
        let gv = g.constant(global);
        let f = m.vision.forward(&mut g, &m.store, pairs[0].image().unwrap(), None, Some(gv)).unwrap();
        (g.value(f.cls).clone(), g.value(f.embedding).clone())
    };
    let (cls_a, emb_a) = run(Matrix::from_rows(&random_rows(&mut rng, 1, 8)));
    let (cls_b, emb_b) = run(Matrix::from_rows(&random_rows(&mut rng, 1, 8)));
    assert_eq!(cls_a, cls_b);
    assert_ne!(emb_a, emb_b);
}

#[test]
fn context_placements_change_the_embedding() {
    let (m, pairs) = model();
    let titles = vec!["Soup".to_string()];
    let ings: Vec<String> = pairs[0].document.texts(EntityClass::Ingredients).iter().map(|s| s.to_string()).collect();
    let emb = |cfg: ContextConfig| {
        let mut g = Graph::new();
        let f = m.image_forward(&mut g, pairs[0].image().unwrap(), &cfg, &titles, &ings).unwrap();
        (f.seq_len, g.value(f.embedding).clone())
    };
    let (off_len, off) = emb(ContextConfig::OFF);
    let (def_len, def) = emb(ContextConfig::DEFAULT);
    let (out_len, _) = emb(ContextConfig { ingredients: Injection::Output, titles: Injection::Output });
    assert_eq!(off_len, out_len);
    assert!(def_len > off_len);
    assert_ne!(off, def);
}

#[test]
fn patchify_tiles_row_major() {
    let mut img = cookalign_core::data::Image::filled(16, 16, [0.0; 3]);
    img.set_pixel(9, 2, [1.0, 0.5, 0.25]);
    let p = patchify(&img, 8).unwrap();
    assert_eq!(p.shape(), (4, 8 * 8 * 3));
    let row = p.row(2);
    assert_eq!(row.iter().filter(|&&x| x != 0.0).count(), 3);
    assert!(patchify(&img, 5).is_err());
}

#[test]
fn empty_documents_still_encode() {
    let (m, _) = model();
    let doc = StructuredDocument::new("Soup", vec![], vec![]).unwrap();
    assert_eq!(m.embed_text(&doc).unwrap().len(), 8);
}
