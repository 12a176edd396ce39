//! Raster renderings of heatmaps and evaluation curves.

use wsi_core::heatmap::Heatmap;
use wsi_core::raster::RgbImage;

/// One byte per cell, `round(255 p)`; unscored cells are 0.
pub fn heatmap_gray(hm: &Heatmap) -> Vec<u8> {
    hm.values().iter().map(|&p| if p < 0.0 { 0 } else { (p * 255.0).round() as u8 }).collect()
}

/// Blue-to-red ramp for a probability.
pub fn ramp(p: f64) -> [u8; 3] {
    let p = p.clamp(0.0, 1.0);
    let r = (255.0 * p).round() as u8;
    let g = (255.0 * (1.0 - (2.0 * p - 1.0).abs())).round() as u8;
    let b = (255.0 * (1.0 - p)).round() as u8;
    [r, g, b]
}

/// Blends the heatmap over a slide thumbnail whose pixels span `factor`
/// level-0 pixels each. Unscored cells leave the thumbnail untouched.
pub fn heatmap_overlay(hm: &Heatmap, thumb: &RgbImage, factor: u64, alpha: f64) -> RgbImage {
    let mut out = thumb.clone();
    let a = alpha.clamp(0.0, 1.0);
    for y in 0..thumb.height() {
        let y0 = (y as u64 * factor + factor / 2).checked_sub(hm.origin.1);
        for x in 0..thumb.width() {
            let x0 = (x as u64 * factor + factor / 2).checked_sub(hm.origin.0);
            let (Some(x0), Some(y0)) = (x0, y0) else { continue };
            let (cx, cy) = ((x0 / hm.cell_size) as usize, (y0 / hm.cell_size) as usize);
            let Some(p) = hm.get(cx, cy) else { continue };
            let base = thumb.get(x, y);
            let tint = ramp(p);
            let mut px = [0u8; 3];
            for c in 0..3 {
                px[c] = ((1.0 - a) * base[c] as f64 + a * tint[c] as f64).round() as u8;
            }
            out.put(x, y, px);
        }
    }
    out
}

const PLOT_SIZE: usize = 400;
const MARGIN: usize = 40;
const AXIS: [u8; 3] = [0, 0, 0];
const GRID: [u8; 3] = [220, 220, 220];
const CURVE: [u8; 3] = [200, 30, 30];

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), color: [u8; 3]) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if x >= 0 && y >= 0 && (x as usize) < img.width() && (y as usize) < img.height() {
            img.put(x as usize, y as usize, color);
        }
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

/// Line plot of `points` on `[0, x_max] × [0, 1]` with a 10 × 10 grid.
///
/// `steps` draws a right-continuous step function instead of straight segments.
pub fn plot_curve(points: &[(f64, f64)], x_max: f64, steps: bool) -> RgbImage {
    let side = PLOT_SIZE + 2 * MARGIN;
    let mut img = RgbImage::filled(side, side, [255, 255, 255]);
    let span = PLOT_SIZE as f64;
    let to_px = |(x, y): (f64, f64)| -> (i64, i64) {
        let fx = if x_max > 0.0 { (x / x_max).clamp(0.0, 1.0) } else { 0.0 };
        let px = MARGIN as f64 + fx * span;
        let py = MARGIN as f64 + (1.0 - y.clamp(0.0, 1.0)) * span;
        (px.round() as i64, py.round() as i64)
    };
    for k in 1..10 {
        let f = k as f64 / 10.0;
        line(&mut img, to_px((f * x_max, 0.0)), to_px((f * x_max, 1.0)), GRID);
        line(&mut img, to_px((0.0, f)), to_px((x_max, f)), GRID);
    }
    line(&mut img, to_px((0.0, 0.0)), to_px((x_max, 0.0)), AXIS);
    line(&mut img, to_px((0.0, 0.0)), to_px((0.0, 1.0)), AXIS);
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        if steps {
            line(&mut img, to_px(a), to_px((b.0, a.1)), CURVE);
            line(&mut img, to_px((b.0, a.1)), to_px(b), CURVE);
        } else {
            line(&mut img, to_px(a), to_px(b), CURVE);
        }
    }
    if steps {
        if let Some(&last) = points.last() {
            line(&mut img, to_px(last), to_px((x_max, last.1)), CURVE);
        }
    }
    img
}
