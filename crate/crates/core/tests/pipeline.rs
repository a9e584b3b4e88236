mod common;

use common::*;
use cookalign_core::pipeline::e2e::{prepare_corpora, Corpora};
use cookalign_core::pipeline::{
    adam_config, context_arms, evaluate_missing_entities, read_log, run_ablation, stage2_start,
    train_stage1, train_stage2, AblationArm, Checkpoint, ContextCache, EvalOptions, Model, StageConfig,
};
use cookalign_core::losses::MarginSchedule;
use cookalign_core::ste::EntityClass;
use cookalign_core::vision::ContextConfig;

fn corpora() -> (cookalign_core::pipeline::e2e::EndToEndConfig, Corpora) {
    let cfg = micro_e2e(3, 4);
    let c = prepare_corpora(&cfg).unwrap();
    (cfg, c)
}

fn cache(c: &Corpora) -> ContextCache {
    ContextCache::with_defaults(&c.recipes, c.clip.clone()).unwrap()
}

#[test]
fn stage_one_loss_decreases() {
    let (mut cfg, c) = corpora();
    cfg.stage1.epochs = 30;
    // A constant margin keeps the loss comparable across epochs.
    cfg.stage1.margin_schedule = MarginSchedule { start: 0.2, increment: 0.0, cap: 0.2 };
    cfg.stage1 = cfg.stage1.normalized();
    let (_, logs) = train_stage1(&c.structured, &cfg.stage1, None).unwrap();
    let head: f64 = logs[..5].iter().map(|l| l.total).sum();
    let tail: f64 = logs[25..].iter().map(|l| l.total).sum();
    assert!(tail < head, "{head} -> {tail}");
    assert!(logs.iter().all(|l| l.frozen));
}

#[test]
fn zero_itm_weight_leaves_the_head_untouched() {
    let (mut cfg, c) = corpora();
    cfg.stage1.lambda_itm = 0.0;
    let (ckpt, logs) = train_stage1(&c.structured, &cfg.stage1, None).unwrap();
    let init = Model::new(cfg.stage1.model.clone(), ckpt.model.vocab.clone(), cfg.stage1.seed).unwrap();
    assert_eq!(ckpt.model.params_hash_where(|n| n.starts_with("itm")), init.params_hash_where(|n| n.starts_with("itm")));
    assert!(logs.iter().all(|l| l.itm == 0.0));
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let (cfg, c) = corpora();
    let mut s2 = cfg.stage2.clone();
    s2.freeze_vision_epochs = 2;
    let (full, _) = train_stage2(&c.recipes, None, &s2, Some(cache(&c)), None).unwrap();

    let mut half = s2.clone();
    half.epochs = 2;
    let (part, _) = train_stage2(&c.recipes, None, &half, Some(cache(&c)), None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    part.save(dir.path()).unwrap();
    let mut resumed = Checkpoint::load(dir.path(), adam_config(&s2)).unwrap();
    assert_eq!(resumed.hash(), part.hash());
    resumed.train(&s2, &c.recipes, None).unwrap();
    assert_eq!(resumed.hash(), full.hash());
}

#[test]
fn identical_runs_hash_identically() {
    let (cfg, c) = corpora();
    let a = train_stage1(&c.structured, &cfg.stage1, None).unwrap().0;
    let b = train_stage1(&c.structured, &cfg.stage1, None).unwrap().0;
    assert_eq!(a.hash(), b.hash());
    let mut other = cfg.stage1.clone();
    other.seed = 1;
    assert_ne!(train_stage1(&c.structured, &other, None).unwrap().0.hash(), a.hash());
}

#[test]
fn context_requires_a_cache() {
    let (cfg, c) = corpora();
    assert!(stage2_start(&c.recipes, None, &cfg.stage2, None).is_err());
    let partial = ContextCache::with_defaults(&c.recipes[..4], c.clip.clone()).unwrap();
    assert!(stage2_start(&c.recipes, None, &cfg.stage2, Some(partial)).is_err());
    let mut off = cfg.stage2.clone();
    off.context = ContextConfig::OFF;
    assert!(stage2_start(&c.recipes, None, &off, None).is_ok());
}

#[test]
fn vocabulary_swap_keeps_shared_rows() {
    let (cfg, c) = corpora();
    let (s1, _) = train_stage1(&c.structured, &cfg.stage1, None).unwrap();
    let s2 = stage2_start(&c.recipes, Some(&s1), &cfg.stage2, Some(cache(&c))).unwrap();
    let table = |ck: &Checkpoint| ck.model.store.get(ck.model.text.embedding.table).clone();
    let (old, new) = (table(&s1), table(&s2));
    let shared: Vec<&String> = s2.model.vocab.tokens().iter().filter(|t| s1.model.vocab.get(t).is_some()).collect();
    assert!(!shared.is_empty());
    for t in shared {
        assert_eq!(new.row(s2.model.vocab.id(t)), old.row(s1.model.vocab.id(t)), "row of `{t}`");
    }
    assert_eq!(new.rows(), s2.model.vocab.len());
    assert_eq!(s2.vision_hash(), s1.vision_hash());
}

#[test]
fn checkpoint_round_trip_preserves_context() {
    let (cfg, c) = corpora();
    let (ckpt, _) = train_stage2(&c.recipes, None, &cfg.stage2, Some(cache(&c)), None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    ckpt.save(dir.path()).unwrap();
    let back = Checkpoint::load(dir.path(), adam_config(&cfg.stage2)).unwrap();
    assert_eq!(back.hash(), ckpt.hash());
    assert_eq!(back.context.as_ref().unwrap().len(), c.recipes.len());
    let e = |k: &Checkpoint| k.model.embed_image(&c.recipes[0], &k.context_config, k.context.as_ref()).unwrap();
    assert_eq!(e(&back), e(&ckpt));
}

#[test]
fn ablation_rows_follow_the_arms() {
    let (cfg, c) = corpora();
    let mut base = cfg.stage2.clone();
    base.epochs = 1;
    let arms = context_arms(&base);
    assert_eq!(arms.len(), 6);
    let opts = EvalOptions { gallery_size: c.recipes.len(), num_runs: 1, seed: 0 };
    let ctx = cache(&c);
    let rows = run_ablation(&arms, &c.recipes, &c.recipes, None, Some(&ctx), &opts).unwrap();
    assert_eq!(rows.len(), 6);
    for (r, a) in rows.iter().zip(&arms) {
        assert_eq!(r.label, a.label);
        assert_eq!(r.context, a.config.context);
    }

    let twins = vec![AblationArm { label: "a".into(), config: base.clone() }, AblationArm { label: "b".into(), config: base }];
    let rows = run_ablation(&twins, &c.recipes, &c.recipes, None, Some(&ctx), &opts).unwrap();
    assert_eq!(serde_json::to_string(&rows[0].reports).unwrap(), serde_json::to_string(&rows[1].reports).unwrap());
}

#[test]
fn missing_entity_reports_record_the_drop_set() {
    let (cfg, c) = corpora();
    let (ckpt, _) = train_stage2(&c.recipes, None, &cfg.stage2, Some(cache(&c)), None).unwrap();
    let opts = EvalOptions { gallery_size: 6, num_runs: 2, seed: 3 };
    let drop = [EntityClass::Title, EntityClass::Instructions];
    let reports = evaluate_missing_entities(&ckpt, &c.recipes, &drop, &opts).unwrap();
    for r in &reports {
        assert_eq!(r.dropped_entities, drop);
        assert_eq!((r.gallery_size, r.num_runs, r.seed), (6, 2, 3));
    }
    assert!(evaluate_missing_entities(&ckpt, &c.recipes, &EntityClass::ALL, &opts).is_err());
}

#[test]
fn logs_are_written_and_read_back() {
    let (cfg, c) = corpora();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.jsonl");
    let (_, logs) = train_stage1(&c.structured, &cfg.stage1, Some(&path)).unwrap();
    std::fs::write(&path, std::fs::read_to_string(&path).unwrap() + "not json\n").unwrap();
    assert_eq!(read_log(&path).unwrap(), logs);
}

#[test]
fn mismatched_dimensions_are_rejected() {
    let (cfg, c) = corpora();
    let (s1, _) = train_stage1(&c.structured, &cfg.stage1, None).unwrap();
    let mut other = cfg.stage2.clone();
    other.model = cookalign_core::pipeline::ModelConfig::toy();
    assert!(stage2_start(&c.recipes, Some(&s1), &other, Some(cache(&c))).is_err());
    assert!(train_stage1(&[], &StageConfig::vslp(), None).is_err());
}
