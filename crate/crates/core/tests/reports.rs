use cookalign_core::pipeline::{read_log, EpochLog};
use cookalign_core::reports::{render_curves, render_curves_from, render_table, LOSS_PLOT, MARGIN_PLOT};
use cookalign_core::retrieval::{Direction, RetrievalReport};

fn logs(n: usize) -> Vec<EpochLog> {
    (0..n)
        .map(|e| EpochLog { epoch: e, itc: 1.0 / (e + 1) as f64, itm: 0.7, total: 1.7, margin: 0.05 + 0.005 * e as f64, frozen: e < 1 })
        .collect()
}

#[test]
fn curves_from_a_short_log() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.jsonl");
    let text: String = logs(3).iter().map(|l| serde_json::to_string(l).unwrap() + "\n").collect();
    std::fs::write(&log, text).unwrap();
    assert_eq!(read_log(&log).unwrap(), logs(3));
    let out = render_curves(&log, &dir.path().join("plots")).unwrap();
    assert_eq!(out.len(), 2);
    for (p, name) in out.iter().zip([LOSS_PLOT, MARGIN_PLOT]) {
        assert!(p.ends_with(name));
        let svg = std::fs::read_to_string(p).unwrap();
        assert!(svg.starts_with("<svg") || svg.contains("<svg"));
    }
}

#[test]
fn margin_curve_rises_in_steps() {
    let l = logs(60);
    let margins: Vec<f64> = l.iter().map(|x| x.margin).collect();
    assert!(margins.windows(2).all(|w| (w[1] - w[0] - 0.005).abs() < 1e-12));
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(render_curves_from(&l, dir.path()).unwrap().len(), 2);
}

#[test]
fn missing_log_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(render_curves(&dir.path().join("absent.jsonl"), dir.path()).is_err());
}

#[test]
fn table_lists_each_gallery() {
    let r = |direction, gallery_size| RetrievalReport {
        direction,
        gallery_size,
        num_runs: 10,
        seed: 0,
        med_r: 2.0,
        r1: 0.4,
        r5: 0.8,
        r10: 0.9,
        rsum: 210.0,
        dropped_entities: vec![],
    };
    let t = render_table(&[r(Direction::ImageToRecipe, 1000), r(Direction::RecipeToImage, 1000), r(Direction::ImageToRecipe, 10000)]);
    assert!(t.contains("-- gallery 1000 --") && t.contains("-- gallery 10000 --"));
    assert!(t.contains("40.0"));
}
