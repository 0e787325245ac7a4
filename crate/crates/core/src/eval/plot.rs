//! Static SVG figures: box plots per metric and simple line charts.

use std::path::{Path, PathBuf};

use plotters::prelude::*;

use super::{CohortReport, EvalError};
use crate::stats::BoxSummary;
use crate::volume::VoxelVolume;

const SIZE: (u32, u32) = (720, 480);

fn plot_err<E: std::fmt::Display>(e: E) -> EvalError {
    EvalError::Plot(e.to_string())
}

fn padded_range(lo: f64, hi: f64) -> (f64, f64) {
    let span = (hi - lo).abs();
    let pad = if span > 0.0 { 0.08 * span } else { lo.abs().max(1.0) * 0.05 };
    (lo - pad, hi + pad)
}

/// Box-and-whisker chart, one box per named group.
pub fn box_plot(path: &Path, title: &str, y_label: &str, groups: &[(String, BoxSummary)]) -> Result<(), EvalError> {
    if groups.is_empty() {
        return Err(EvalError::Empty("plot groups"));
    }
    let lo = groups.iter().map(|(_, b)| b.min).fold(f64::INFINITY, f64::min);
    let hi = groups.iter().map(|(_, b)| b.max).fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = padded_range(lo, hi);
    let n = groups.len();

    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(64)
        .build_cartesian_2d(-0.5f64..(n as f64 - 0.5), lo..hi)
        .map_err(plot_err)?;
    let names: Vec<String> = groups.iter().map(|(n, _)| n.clone()).collect();
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(n)
        .x_label_formatter(&|x| {
            let i = x.round();
            if (x - i).abs() < 1e-6 && i >= 0.0 {
                names.get(i as usize).cloned().unwrap_or_default()
            } else {
                String::new()
            }
        })
        .y_desc(y_label)
        .draw()
        .map_err(plot_err)?;

    for (i, (_, b)) in groups.iter().enumerate() {
        let x = i as f64;
        let half = 0.25;
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(std::iter::once(Rectangle::new([(x - half, b.q1), (x + half, b.q3)], color.mix(0.3).filled())))
            .map_err(plot_err)?;
        chart
            .draw_series(std::iter::once(Rectangle::new([(x - half, b.q1), (x + half, b.q3)], color.stroke_width(1))))
            .map_err(plot_err)?;
        let lines = [
            vec![(x - half, b.median), (x + half, b.median)],
            vec![(x, b.q3), (x, b.max)],
            vec![(x, b.q1), (x, b.min)],
            vec![(x - half / 2.0, b.max), (x + half / 2.0, b.max)],
            vec![(x - half / 2.0, b.min), (x + half / 2.0, b.min)],
        ];
        chart
            .draw_series(lines.into_iter().map(|l| PathElement::new(l, BLACK.stroke_width(1))))
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)?;
    Ok(())
}

/// Line chart with one polyline per named series.
pub fn line_plot(
    path: &Path,
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[(String, Vec<(f64, f64)>)],
) -> Result<(), EvalError> {
    let points = series.iter().flat_map(|(_, s)| s.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        return Err(EvalError::Empty("plot series"));
    }
    let (x0, x1) = padded_range(x0, x1);
    let (y0, y1) = padded_range(y0, y1);
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(64)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc(x_label).y_desc(y_label).draw().map_err(plot_err)?;
    for (i, (name, s)) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(s.iter().copied(), color.stroke_width(2)))
            .map_err(plot_err)?
            .label(name.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
        chart
            .draw_series(s.iter().map(|&p| Circle::new(p, 3, color.filled())))
            .map_err(plot_err)?;
    }
    if series.len() > 1 {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)?;
    Ok(())
}

/// Row of x-y sections at height `z`, one panel per volume; pore is drawn dark.
pub fn section_plot(path: &Path, titles: &[String], volumes: &[VoxelVolume], z: usize) -> Result<(), EvalError> {
    if volumes.is_empty() {
        return Err(EvalError::Empty("section volumes"));
    }
    let [nx, ny, nz] = volumes[0].dims();
    if z >= nz {
        return Err(EvalError::Plot(format!("section {z} outside depth {nz}")));
    }
    let panel = 240u32;
    let root = SVGBackend::new(path, (panel * volumes.len() as u32, panel + 28)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    for (i, (area, v)) in root.split_evenly((1, volumes.len())).iter().zip(volumes).enumerate() {
        if v.dims() != [nx, ny, nz] {
            return Err(EvalError::Plot("section volumes differ in size".into()));
        }
        let title = titles.get(i).map(String::as_str).unwrap_or("");
        let mut chart = ChartBuilder::on(area)
            .caption(title, ("sans-serif", 14))
            .margin(4)
            .build_cartesian_2d(0..nx, 0..ny)
            .map_err(plot_err)?;
        chart
            .draw_series((0..ny).flat_map(|y| (0..nx).map(move |x| (x, y))).filter(|&(x, y)| v.get(x, y, z) > 0.5).map(
                |(x, y)| Rectangle::new([(x, y), (x + 1, y + 1)], BLACK.filled()),
            ))
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)?;
    Ok(())
}

/// One box plot per metric across cohorts, plus per-level SWD bars as lines.
pub fn write_report_plots(report: &CohortReport, dir: &Path) -> Result<Vec<PathBuf>, EvalError> {
    std::fs::create_dir_all(dir).map_err(|e| EvalError::io(dir, e))?;
    let mut names: Vec<&str> = Vec::new();
    for c in &report.cohorts {
        for m in &c.metrics {
            if !names.contains(&m.name.as_str()) {
                names.push(&m.name);
            }
        }
    }
    let mut written = Vec::new();
    for metric in names {
        let groups: Vec<(String, BoxSummary)> = report
            .cohorts
            .iter()
            .filter_map(|c| c.metric(metric).and_then(|m| m.summary).map(|s| (c.name.clone(), s)))
            .collect();
        if groups.is_empty() {
            continue;
        }
        let path = dir.join(format!("{metric}.svg"));
        box_plot(&path, metric, metric, &groups)?;
        written.push(path);
    }
    if !report.swd.is_empty() {
        let series: Vec<(String, Vec<(f64, f64)>)> = report
            .swd
            .iter()
            .map(|s| (s.cohort.clone(), s.report.levels.iter().map(|l| (l.edge as f64, l.swd)).collect()))
            .collect();
        let path = dir.join("swd_levels.svg");
        line_plot(&path, "multi-scale SWD", "level edge (voxels)", "SWD (x1e3)", &series)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_svg_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("box.svg");
        let groups = vec![
            ("a".to_string(), BoxSummary::of(&[0.1, 0.2, 0.3])),
            ("b".to_string(), BoxSummary::of(&[0.2, 0.2, 0.2])),
        ];
        box_plot(&p, "phi", "porosity", &groups).unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().contains("<svg"));
        let p = dir.path().join("line.svg");
        line_plot(&p, "t", "x", "y", &[("s".into(), vec![(0.0, 1.0), (1.0, 0.5)])]).unwrap();
        assert!(p.exists());
        assert!(line_plot(&p, "t", "x", "y", &[]).is_err());
        let v = VoxelVolume::from_pore_fn([6; 3], 1.0, |x, y, _| x == y).unwrap();
        let p = dir.path().join("sections.svg");
        section_plot(&p, &["a".into(), "b".into()], &[v.clone(), v], 2).unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().contains("<rect"));
    }
}
