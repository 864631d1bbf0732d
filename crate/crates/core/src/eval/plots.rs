//! Loss-curve CSVs and raster line charts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::dataset::Frame;
use crate::losses::LossReport;
use crate::scene::write_ppm;
use crate::trainer::LossHistory;
use crate::{Error, Result};

pub const CHART_WIDTH: usize = 640;
pub const CHART_HEIGHT: usize = 480;
const MARGIN: usize = 40;
const PALETTE: [[f32; 3]; 4] = [[0.85, 0.1, 0.1], [0.1, 0.3, 0.85], [0.1, 0.6, 0.2], [0.8, 0.5, 0.0]];

/// Series plotted per history.
pub const CHART_SERIES: [&str; 2] = ["total_generator", "total_discriminator"];

fn series(r: &LossReport, name: &str) -> f64 {
    let i = LossReport::COLUMNS.iter().position(|c| *c == name).expect("known column");
    r.values()[i - 1]
}

struct Canvas {
    data: Vec<f32>,
}

impl Canvas {
    fn new() -> Self {
        Canvas { data: vec![1.0; CHART_WIDTH * CHART_HEIGHT * 3] }
    }

    fn set(&mut self, x: i64, y: i64, rgb: [f32; 3]) {
        if (0..CHART_WIDTH as i64).contains(&x) && (0..CHART_HEIGHT as i64).contains(&y) {
            let o = (y as usize * CHART_WIDTH + x as usize) * 3;
            self.data[o..o + 3].copy_from_slice(&rgb);
        }
    }

    fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), rgb: [f32; 3]) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.set(x, y, rgb);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    fn into_frame(self) -> Frame {
        Frame::new(CHART_HEIGHT, CHART_WIDTH, self.data).expect("chart pixels in range")
    }
}

/// Draws each `(step, value)` series as a polyline on shared axes.
/// Non-finite values break the line.
pub fn line_chart(lines: &[Vec<(u64, f64)>]) -> Frame {
    let mut c = Canvas::new();
    let (left, right, top, bottom) = (MARGIN as i64, (CHART_WIDTH - MARGIN / 2) as i64, (MARGIN / 2) as i64, (CHART_HEIGHT - MARGIN) as i64);
    let axis = [0.0; 3];
    c.line((left, bottom), (right, bottom), axis);
    c.line((left, bottom), (left, top), axis);
    let finite = || lines.iter().flatten().filter(|(_, v)| v.is_finite());
    let (Some(x_min), Some(x_max)) = (finite().map(|p| p.0).min(), finite().map(|p| p.0).max()) else {
        return c.into_frame();
    };
    let y_min = finite().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let y_max = finite().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let y_span = if y_max > y_min { y_max - y_min } else { 1.0 };
    let x_span = (x_max - x_min).max(1) as f64;
    for k in 0..=10 {
        let x = left + (right - left) * k / 10;
        c.line((x, bottom), (x, bottom + 5), axis);
        let y = bottom - (bottom - top) * k / 10;
        c.line((left - 5, y), (left, y), axis);
    }
    for (i, pts) in lines.iter().enumerate() {
        let rgb = PALETTE[i % PALETTE.len()];
        let mut prev = None;
        for &(s, v) in pts {
            if !v.is_finite() {
                prev = None;
                continue;
            }
            let x = left + ((s - x_min) as f64 / x_span * (right - left) as f64).round() as i64;
            let y = bottom - ((v - y_min) / y_span * (bottom - top) as f64).round() as i64;
            c.line(prev.unwrap_or((x, y)), (x, y), rgb);
            prev = Some((x, y));
        }
    }
    c.into_frame()
}

/// Writes `history.csv` and one chart per [`CHART_SERIES`] entry into
/// `out_dir`, returning the written paths.
pub fn emit_loss_plots(history: &LossHistory, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if history.is_empty() {
        return Err(Error::Invalid("empty loss history".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(Error::io(out_dir))?;
    let csv = out_dir.join("history.csv");
    history.write_csv(&csv)?;
    let mut files = vec![csv];
    for name in CHART_SERIES {
        let pts = history.reports().iter().map(|r| (r.step, series(r, name))).collect();
        let path = out_dir.join(format!("{name}.ppm"));
        write_ppm(&line_chart(&[pts]), &path)?;
        files.push(path);
    }
    Ok(files)
}

/// Joins histories on step: one row per step present in any history, one
/// column per (label, chart series); missing entries are left empty.
pub fn comparison_csv(histories: &[(&str, &LossHistory)]) -> String {
    let mut rows: BTreeMap<u64, Vec<Option<f64>>> = BTreeMap::new();
    let width = histories.len() * CHART_SERIES.len();
    for (h, (_, history)) in histories.iter().enumerate() {
        for r in history.reports() {
            let row = rows.entry(r.step).or_insert_with(|| vec![None; width]);
            for (k, name) in CHART_SERIES.iter().enumerate() {
                row[h * CHART_SERIES.len() + k] = Some(series(r, name));
            }
        }
    }
    let mut out = String::from("step");
    for (label, _) in histories {
        for name in CHART_SERIES {
            write!(out, ",{label}_{name}").unwrap();
        }
    }
    out.push('\n');
    for (step, row) in rows {
        write!(out, "{step}").unwrap();
        for v in row {
            match v {
                Some(v) => write!(out, ",{v}").unwrap(),
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

/// Writes `comparison.csv` and overlaid charts (`comparison_<series>.ppm`,
/// one colour per history in argument order).
pub fn emit_comparison(histories: &[(&str, &LossHistory)], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if histories.iter().any(|(_, h)| h.is_empty()) || histories.is_empty() {
        return Err(Error::Invalid("empty loss history".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(Error::io(out_dir))?;
    let csv = out_dir.join("comparison.csv");
    std::fs::write(&csv, comparison_csv(histories)).map_err(Error::io(&csv))?;
    let mut files = vec![csv];
    for name in CHART_SERIES {
        let lines: Vec<_> = histories.iter().map(|(_, h)| h.reports().iter().map(|r| (r.step, series(r, name))).collect()).collect();
        let path = out_dir.join(format!("comparison_{name}.ppm"));
        write_ppm(&line_chart(&lines), &path)?;
        files.push(path);
    }
    Ok(files)
}
