//! Rendering of solved puzzles, training curves, and report tables.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::align::Levels;
use crate::error::{Error, Result};
use crate::puzzle::{EvalReport, OffBy, OffByHistogram, Permutation, PuzzleInstance};
use crate::training::LogRecord;

pub const CORRECT: Rgb<u8> = Rgb([0, 200, 0]);
pub const WRONG: Rgb<u8> = Rgb([220, 0, 0]);

/// Stitches the pieces at their predicted cells. Each tile is framed by a
/// `border`-pixel box: green when the piece sits in its true cell, red
/// otherwise. Side lengths are `rows·(piece_px + 2·border)` by
/// `cols·(piece_px + 2·border)`.
pub fn render_solution(instance: &PuzzleInstance, pred: &Permutation, border: usize) -> Result<RgbImage> {
    let geo = instance.geometry;
    if pred.len() != geo.n() {
        return Err(Error::arg(format!(
            "assignment of length {} for {} pieces",
            pred.len(),
            geo.n()
        )));
    }
    let p = geo.piece_px;
    let tile = p + 2 * border;
    let mut img = RgbImage::new((geo.cols * tile) as u32, (geo.rows * tile) as u32);
    for piece in 0..geo.n() {
        let (r, c) = geo.cell(pred.get(piece));
        let (x0, y0) = (c * tile, r * tile);
        let frame = if pred.get(piece) == instance.shuffle.get(piece) {
            CORRECT
        } else {
            WRONG
        };
        for y in 0..tile {
            for x in 0..tile {
                let inside = (border..border + p).contains(&x) && (border..border + p).contains(&y);
                let px = if inside {
                    let v = |ch| (instance.pieces[[piece, y - border, x - border, ch]].clamp(0.0, 1.0) * 255.0).round() as u8;
                    Rgb([v(0), v(1), v(2)])
                } else {
                    frame
                };
                img.put_pixel((x0 + x) as u32, (y0 + y) as u32, px);
            }
        }
    }
    Ok(img)
}

/// Counts the tiles framed in `color` (by their top-left pixel).
pub fn count_frames(img: &RgbImage, rows: usize, cols: usize, tile: usize, color: Rgb<u8>) -> usize {
    (0..rows * cols)
        .filter(|&k| *img.get_pixel(((k % cols) * tile) as u32, ((k / cols) * tile) as u32) == color)
        .count()
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image(other),
    })
}

/// Series drawn in order with these colours.
const PALETTE: [Rgb<u8>; 6] = [
    Rgb([31, 119, 180]),
    Rgb([255, 127, 14]),
    Rgb([44, 160, 44]),
    Rgb([214, 39, 40]),
    Rgb([148, 103, 189]),
    Rgb([140, 86, 75]),
];

/// Minimal line chart: axes, one polyline per series, a marker at every
/// point. `y_range` fixes the vertical scale; otherwise it is fitted.
pub fn line_chart(series: &[Vec<(f64, f64)>], y_range: Option<(f64, f64)>, width: u32, height: u32) -> RgbImage {
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    let margin = 24i64;
    let (w, h) = (width as i64 - 2 * margin, height as i64 - 2 * margin);
    let axis = Rgb([60, 60, 60]);
    draw_line(&mut img, (margin, margin), (margin, margin + h), axis);
    draw_line(&mut img, (margin, margin + h), (margin + w, margin + h), axis);

    let points: Vec<_> = series.iter().flatten().filter(|(x, y)| x.is_finite() && y.is_finite()).collect();
    if points.is_empty() {
        return img;
    }
    let fold = |f: fn(f64, f64) -> f64, init: f64, sel: fn(&&(f64, f64)) -> f64| points.iter().map(sel).fold(init, f);
    let (x_lo, x_hi) = (fold(f64::min, f64::INFINITY, |p| p.0), fold(f64::max, f64::NEG_INFINITY, |p| p.0));
    let (y_lo, y_hi) = y_range.unwrap_or((fold(f64::min, f64::INFINITY, |p| p.1), fold(f64::max, f64::NEG_INFINITY, |p| p.1)));
    let span = |lo: f64, hi: f64| if hi > lo { hi - lo } else { 1.0 };
    let to_px = |(x, y): (f64, f64)| {
        let fx = if x_hi > x_lo { (x - x_lo) / span(x_lo, x_hi) } else { 0.5 };
        let fy = if y_hi > y_lo { (y - y_lo) / span(y_lo, y_hi) } else { 0.5 };
        (margin + (fx * w as f64).round() as i64, margin + h - (fy * h as f64).round() as i64)
    };
    for (s, color) in series.iter().zip(PALETTE.iter().cycle()) {
        let pts: Vec<_> = s.iter().filter(|(x, y)| x.is_finite() && y.is_finite()).map(|&p| to_px(p)).collect();
        for pair in pts.windows(2) {
            draw_line(&mut img, pair[0], pair[1], *color);
        }
        for &(x, y) in &pts {
            for dy in -2..=2 {
                for dx in -2..=2 {
                    put(&mut img, x + dx, y + dy, *color);
                }
            }
        }
    }
    img
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn draw_line(img: &mut RgbImage, (mut x0, mut y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let mut err = dx + dy;
    loop {
        put(img, x0, y0, c);
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

/// Total loss per step.
pub fn loss_curve(log: &[LogRecord]) -> RgbImage {
    let pts = log
        .iter()
        .filter_map(|r| match r {
            LogRecord::Step(s) => Some((s.step as f64, s.total)),
            _ => None,
        })
        .collect();
    line_chart(&[pts], None, 640, 400)
}

/// Validation perfect / piece / horizontal / vertical accuracy per epoch.
pub fn accuracy_curve(log: &[LogRecord]) -> RgbImage {
    let mut series = vec![Vec::new(); 4];
    for r in log {
        if let LogRecord::Epoch(e) = r {
            let x = e.epoch as f64;
            for (s, y) in series.iter_mut().zip([e.val.perfect, e.val.piece, e.val.horizontal, e.val.vertical]) {
                s.push((x, y));
            }
        }
    }
    line_chart(&series, Some((0.0, 1.0)), 640, 400)
}

/// Report of the retained (best) epoch, or the last one if none is marked.
pub fn final_report(log: &[LogRecord]) -> Option<EvalReport> {
    let epochs: Vec<_> = log
        .iter()
        .filter_map(|r| match r {
            LogRecord::Epoch(e) => Some(e),
            _ => None,
        })
        .collect();
    epochs.iter().rev().find(|e| e.best).or(epochs.last()).map(|e| e.val)
}

/// Percentages with two decimals that sum to exactly 100.00 (largest
/// remainder rounding). All-zero input yields all zeros.
pub fn percentages(fractions: &[f64]) -> Vec<f64> {
    let total: f64 = fractions.iter().sum();
    if !(total > 0.0) {
        return vec![0.0; fractions.len()];
    }
    let exact: Vec<f64> = fractions.iter().map(|f| f / total * 10_000.0).collect();
    let mut units: Vec<i64> = exact.iter().map(|e| e.floor() as i64).collect();
    let missing = 10_000 - units.iter().sum::<i64>();
    let mut order: Vec<usize> = (0..exact.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    for &i in order.iter().take(missing.max(0) as usize) {
        units[i] += 1;
    }
    units.into_iter().map(|u| u as f64 / 100.0).collect()
}

/// Two-line CSV of the off-by-k distribution in percent.
pub fn off_by_csv(hist: &OffByHistogram) -> String {
    let header: Vec<_> = OffBy::ALL.iter().map(|c| c.label()).collect();
    let row: Vec<_> = percentages(&hist.as_array()).iter().map(|p| format!("{p:.2}")).collect();
    format!("{}\n{}\n", header.join(","), row.join(","))
}

pub const ABLATION_HEADER: &str = "Token,Region,Global,Perf.,Piece,Hori.,Vert.";

/// Alignment-module ablation table; accuracies in percent.
pub fn ablation_table(rows: &[(Levels, EvalReport)]) -> String {
    let mark = |b: bool| if b { "✓" } else { "✗" };
    let mut out = format!("{ABLATION_HEADER}\n");
    for (lv, r) in rows {
        out.push_str(&format!(
            "{},{},{},{:.2},{:.2},{:.2},{:.2}\n",
            mark(lv.token),
            mark(lv.region),
            mark(lv.global),
            100.0 * r.perfect,
            100.0 * r.piece,
            100.0 * r.horizontal,
            100.0 * r.vertical
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_record, DatasetConfig, Split, SplitSizes};
    use crate::puzzle::GridGeometry;

    fn instance() -> PuzzleInstance {
        let geo = GridGeometry::new(3, 3, 8, 2, 1).unwrap();
        let cfg = DatasetConfig::new(geo, SplitSizes { train: 1, val: 0, test: 0 }, 4);
        generate_record(&cfg, Split::Train, 0).unwrap().instance
    }

    #[test]
    fn perfect_solve_is_all_green() {
        let inst = instance();
        let img = render_solution(&inst, &inst.shuffle, 2).unwrap();
        assert_eq!(img.dimensions(), (36, 36));
        assert_eq!(count_frames(&img, 3, 3, 12, CORRECT), 9);
    }

    #[test]
    fn red_frames_match_misplaced_pieces() {
        let inst = instance();
        let swap = Permutation::new(vec![1, 0, 2, 3, 4, 5, 6, 8, 7]).unwrap();
        let pred = swap.compose(&inst.shuffle).unwrap();
        let img = render_solution(&inst, &pred, 1).unwrap();
        let misplaced = pred.misplaced_against(&inst.shuffle).unwrap();
        assert_eq!(count_frames(&img, 3, 3, 10, WRONG), misplaced);
        assert_eq!(count_frames(&img, 3, 3, 10, CORRECT), 9 - misplaced);
    }

    #[test]
    fn percentages_sum_to_one_hundred() {
        let p = percentages(&[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.0, 0.0, 0.0]);
        assert!((p.iter().sum::<f64>() - 100.0).abs() < 1e-9);
        assert_eq!(p[0], 33.34);
        assert_eq!(percentages(&[0.0; 6]), vec![0.0; 6]);
    }

    #[test]
    fn csv_header_is_exact() {
        let h = OffByHistogram {
            perfect: 0.5,
            two: 0.25,
            three: 0.25,
            ..Default::default()
        };
        assert_eq!(off_by_csv(&h), "Perfect,2-off,3-off,4-off,5-off,≥6-off\n50.00,25.00,25.00,0.00,0.00,0.00\n");
    }

    #[test]
    fn single_point_chart_draws_a_marker() {
        let img = line_chart(&[vec![(0.0, 1.0)]], None, 100, 80);
        assert!(img.pixels().any(|p| *p == PALETTE[0]));
    }
}
