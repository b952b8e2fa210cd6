//! SVG charts of accuracy and mean exemplar cost per phase.

use std::path::{Path, PathBuf};

use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::io::write_atomic;

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    /// `(phase, accuracy, mean_cost)` rows.
    pub rows: Vec<(usize, f64, f64)>,
}

fn read_results(path: &Path, label: String) -> Result<Series> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let bad = || Error::Config(format!("{}: malformed row {:?}", path.display(), rec));
        rows.push((
            field(0).parse().map_err(|_| bad())?,
            field(2).parse().map_err(|_| bad())?,
            field(4).parse().map_err(|_| bad())?,
        ));
    }
    Ok(Series { label, rows })
}

/// `dir/results.csv` plus every `dir/*/results.csv`, labelled by directory.
pub fn collect_series(dir: &Path) -> Result<Vec<Series>> {
    let mut found: Vec<(String, PathBuf)> = Vec::new();
    let own = dir.join("results.csv");
    if own.is_file() {
        let name = dir.file_name().map_or("run".into(), |n| n.to_string_lossy().into_owned());
        found.push((name, own));
    }
    if let Ok(rd) = std::fs::read_dir(dir) {
        let mut subs: Vec<PathBuf> = rd.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
        subs.sort();
        for s in subs {
            let f = s.join("results.csv");
            if f.is_file() {
                found.push((s.file_name().unwrap().to_string_lossy().into_owned(), f));
            }
        }
    }
    if found.is_empty() {
        return Err(Error::Config(format!("no results.csv under {}", dir.display())));
    }
    found.into_iter().map(|(l, p)| read_results(&p, l)).collect()
}

fn chart(series: &[Series], title: &str, y_label: &str, pick: fn(&(usize, f64, f64)) -> f64) -> Result<String> {
    let max_phase = series.iter().flat_map(|s| s.rows.iter().map(|r| r.0)).max().unwrap_or(1).max(2);
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (720, 480)).into_drawing_area();
        root.fill(&WHITE).map_err(|e| Error::Config(format!("plot: {e}")))?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 22))
            .margin(16)
            .x_label_area_size(40)
            .y_label_area_size(56)
            .build_cartesian_2d(1usize..max_phase, 0.0f64..1.0)
            .map_err(|e| Error::Config(format!("plot: {e}")))?;
        chart
            .configure_mesh()
            .x_desc("phase")
            .y_desc(y_label)
            .draw()
            .map_err(|e| Error::Config(format!("plot: {e}")))?;
        for (i, s) in series.iter().enumerate() {
            let colour = Palette99::pick(i).to_rgba();
            chart
                .draw_series(LineSeries::new(s.rows.iter().map(|r| (r.0, pick(r))), colour.stroke_width(2)))
                .map_err(|e| Error::Config(format!("plot: {e}")))?
                .label(s.label.clone())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], colour));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(|e| Error::Config(format!("plot: {e}")))?;
        root.present().map_err(|e| Error::Config(format!("plot: {e}")))?;
    }
    Ok(svg)
}

/// Writes `accuracy.svg` and `cost.svg` into `dir`; returns their paths.
pub fn plot_results(dir: &Path) -> Result<Vec<PathBuf>> {
    let series = collect_series(dir)?;
    let acc = chart(&series, "Accuracy on seen classes", "top-1 accuracy", |r| r.1)?;
    let cost = chart(&series, "Mean exemplar cost", "cost (image units)", |r| r.2)?;
    let paths = vec![dir.join("accuracy.svg"), dir.join("cost.svg")];
    write_atomic(&paths[0], acc.as_bytes())?;
    write_atomic(&paths[1], cost.as_bytes())?;
    Ok(paths)
}
