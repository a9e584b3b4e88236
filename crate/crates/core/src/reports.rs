//! Text tables and static loss/margin plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::pipeline::{read_log, AblationRow, EpochLog};
use crate::retrieval::{Direction, RetrievalReport};
use crate::ste::EntityClass;
use crate::vision::Injection;

const HEADER: &str = "runs  seed  dropped  |  i2r medR    R@1    R@5   R@10  |  r2i medR    R@1    R@5   R@10  |   RSUM";

fn dropped_label(d: &[EntityClass]) -> String {
    if d.is_empty() {
        "-".into()
    } else {
        d.iter().map(|c| c.short()).collect::<Vec<_>>().join("+")
    }
}

fn cells(r: Option<&RetrievalReport>) -> String {
    match r {
        Some(r) => format!("{:>9.1} {:>6.1} {:>6.1} {:>6.1}", r.med_r, 100.0 * r.r1, 100.0 * r.r5, 100.0 * r.r10),
        None => format!("{:>9} {:>6} {:>6} {:>6}", "-", "-", "-", "-"),
    }
}

/// Fixed-width table, one section per gallery size. Reports that share
/// runs, seed and drop set form one row with both directions; recalls are
/// shown in percent.
pub fn render_table(reports: &[RetrievalReport]) -> String {
    let mut out = String::new();
    out.push_str(HEADER);
    out.push('\n');
    type Key = (usize, u64, Vec<EntityClass>);
    let mut sections: BTreeMap<usize, Vec<(Key, [Option<&RetrievalReport>; 2])>> = BTreeMap::new();
    for r in reports {
        let rows = sections.entry(r.gallery_size).or_default();
        let key = (r.num_runs, r.seed, r.dropped_entities.clone());
        let slot = usize::from(r.direction == Direction::RecipeToImage);
        match rows.iter_mut().find(|(k, pair)| *k == key && pair[slot].is_none()) {
            Some((_, pair)) => pair[slot] = Some(r),
            None => {
                let mut pair = [None, None];
                pair[slot] = Some(r);
                rows.push((key, pair));
            }
        }
    }
    for (size, rows) in sections {
        let _ = writeln!(out, "-- gallery {size} --");
        for ((runs, seed, dropped), [a, b]) in rows {
            let rsum: f64 = [a, b].iter().flatten().map(|r| r.rsum).sum();
            let _ = writeln!(
                out,
                "{runs:>4} {seed:>5}  {:<7}  |  {}  |  {}  | {rsum:>6.1}",
                dropped_label(&dropped),
                cells(a),
                cells(b)
            );
        }
    }
    out
}

fn injection_label(i: Injection) -> &'static str {
    match i {
        Injection::Input => "input",
        Injection::Output => "output",
        Injection::Off => "-",
    }
}

pub fn render_ablation(rows: &[AblationRow]) -> String {
    let mut out = String::from("row           Ing     Ttl     |  i2r R@1  r2i R@1  |   RSUM\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{:<13} {:<7} {:<7} |  {:>7.1}  {:>7.1}  | {:>6.1}",
            r.label,
            injection_label(r.context.ingredients),
            injection_label(r.context.titles),
            100.0 * r.reports[0].r1,
            100.0 * r.reports[1].r1,
            r.rsum
        );
    }
    out
}

pub const LOSS_PLOT: &str = "loss.svg";
pub const MARGIN_PLOT: &str = "margin.svg";

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::Invalid(format!("plot: {e}"))
}

fn line_chart(path: &Path, title: &str, series: &[(&str, Vec<(f64, f64)>, RGBColor)]) -> Result<()> {
    let points = series.iter().flat_map(|(_, p, _)| p.iter());
    let (mut x1, mut y0, mut y1) = (1.0_f64, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points {
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !y0.is_finite() {
        (y0, y1) = (0.0, 1.0);
    }
    let pad = ((y1 - y0) * 0.05).max(1e-3);
    let root = SVGBackend::new(path, (640, 400)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(50)
        .build_cartesian_2d(0.0..x1, (y0 - pad)..(y1 + pad))
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("epoch").draw().map_err(plot_err)?;
    for (name, pts, color) in series {
        let color = *color;
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), &color))
            .map_err(plot_err)?
            .label(*name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
    }
    if series.len() > 1 {
        chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw().map_err(plot_err)?;
    }
    root.present().map_err(plot_err)?;
    Ok(())
}

/// Writes `loss.svg` (itc, itm, total) and `margin.svg` from a training
/// log. Malformed lines are skipped with a warning.
pub fn render_curves(log_path: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let logs = read_log(log_path)?;
    render_curves_from(&logs, out_dir)
}

pub fn render_curves_from(logs: &[EpochLog], out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    // Epochs restart at 0 in each stage; plot against the running index.
    let pts = |f: fn(&EpochLog) -> f64| logs.iter().enumerate().map(|(i, l)| (i as f64, f(l))).collect::<Vec<_>>();
    let loss = out_dir.join(LOSS_PLOT);
    line_chart(
        &loss,
        "loss",
        &[("itc", pts(|l| l.itc), BLUE), ("itm", pts(|l| l.itm), RED), ("total", pts(|l| l.total), BLACK)],
    )?;
    let margin = out_dir.join(MARGIN_PLOT);
    line_chart(&margin, "margin", &[("margin", pts(|l| l.margin), BLUE)])?;
    Ok(vec![loss, margin])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(direction: Direction, gallery_size: usize) -> RetrievalReport {
        RetrievalReport {
            direction,
            gallery_size,
            num_runs: 1,
            seed: 0,
            med_r: 1.0,
            r1: 0.5,
            r5: 1.0,
            r10: 1.0,
            rsum: 250.0,
            dropped_entities: vec![],
        }
    }

    #[test]
    fn table_shapes() {
        assert_eq!(render_table(&[]).lines().count(), 1);
        let one = render_table(&[report(Direction::ImageToRecipe, 10)]);
        assert_eq!(one.lines().count(), 3);
        let both = render_table(&[report(Direction::ImageToRecipe, 10), report(Direction::RecipeToImage, 10)]);
        assert_eq!(both.lines().count(), 3);
        assert!(both.contains("500.0"));
        let mixed = render_table(&[report(Direction::ImageToRecipe, 10), report(Direction::ImageToRecipe, 20)]);
        assert_eq!(mixed.matches("-- gallery").count(), 2);
        assert_eq!(mixed, render_table(&[report(Direction::ImageToRecipe, 10), report(Direction::ImageToRecipe, 20)]));
    }
}
