use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use crate::camera::PixelPoint;
use crate::flow::GrayImage;
use crate::regression::{Label, LabeledVector};

pub const OVERLAY_SUFFIX: &str = ".overlay.png";

pub const RED: Rgb<u8> = Rgb([255, 0, 0]);
pub const GREEN: Rgb<u8> = Rgb([0, 255, 0]);
pub const BLUE: Rgb<u8> = Rgb([0, 0, 255]);
pub const YELLOW: Rgb<u8> = Rgb([255, 255, 0]);

const ARROW_LEN: f64 = 2.0;
const CROSS_ARM: i64 = 6;

pub fn label_color(label: Label) -> Rgb<u8> {
    match label {
        Label::Outlier => RED,
        Label::StaticInlier => GREEN,
        Label::Moving => BLUE,
    }
}

/// `<dir>/<frame stem>.overlay.png`.
pub fn overlay_path(dir: &Path, frame: &Path) -> PathBuf {
    let stem = frame
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "frame".to_string());
    dir.join(format!("{stem}{OVERLAY_SUFFIX}"))
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u64) < img.width() as u64 && (y as u64) < img.height() as u64 {
        img.put_pixel(x as u32, y as u32, c);
    }
}

/// Liang-Barsky clip of `a → b` against `[xmin, xmax] × [ymin, ymax]`.
fn clip(a: (f64, f64), b: (f64, f64), xmin: f64, xmax: f64, ymin: f64, ymax: f64) -> Option<((f64, f64), (f64, f64))> {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let mut t0 = 0.0f64;
    let mut t1 = 1.0f64;
    for (p, q) in [
        (-dx, a.0 - xmin),
        (dx, xmax - a.0),
        (-dy, a.1 - ymin),
        (dy, ymax - a.1),
    ] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let t = q / p;
            if p < 0.0 {
                t0 = t0.max(t);
            } else {
                t1 = t1.min(t);
            }
        }
    }
    (t0 <= t1).then(|| ((a.0 + t0 * dx, a.1 + t0 * dy), (a.0 + t1 * dx, a.1 + t1 * dy)))
}

fn draw_line(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), c: Rgb<u8>) {
    if !(a.0.is_finite() && a.1.is_finite() && b.0.is_finite() && b.1.is_finite()) {
        return;
    }
    let (w, h) = (img.width() as f64, img.height() as f64);
    let Some((a, b)) = clip(a, b, -1.0, w, -1.0, h) else {
        return;
    };
    let (mut x0, mut y0) = (a.0.round() as i64, a.1.round() as i64);
    let (x1, y1) = (b.0.round() as i64, b.1.round() as i64);
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
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

fn draw_arrow(img: &mut RgbImage, v: &LabeledVector) {
    let c = label_color(v.label);
    let base = (v.vector.base.u, v.vector.base.v);
    let [du, dv] = v.vector.displacement;
    let tip = (base.0 + du, base.1 + dv);
    draw_line(img, base, tip, c);
    let len = du.hypot(dv);
    if !(len > 0.0) || !len.is_finite() {
        return;
    }
    let (ux, uy) = (du / len, dv / len);
    let (s, co) = (std::f64::consts::FRAC_PI_4.sin(), std::f64::consts::FRAC_PI_4.cos());
    for sign in [-1.0, 1.0] {
        // Barbs point backwards from the tip, 45° either side of the shaft.
        let bx = -(ux * co - sign * uy * s);
        let by = -(sign * ux * s + uy * co);
        draw_line(img, tip, (tip.0 + ARROW_LEN * bx, tip.1 + ARROW_LEN * by), c);
    }
}

/// Promotes `frame` to RGB and draws every vector in its label color, moving
/// vectors last so they stay visible, then the FOE as a yellow cross.
pub fn render_overlay(frame: &GrayImage, labeled: &[LabeledVector], foe: Option<PixelPoint>) -> RgbImage {
    let (w, h) = frame.dimensions();
    let mut img = RgbImage::from_fn(w, h, |x, y| {
        let g = frame.get(x, y);
        Rgb([g, g, g])
    });
    for label in [Label::StaticInlier, Label::Outlier, Label::Moving] {
        for v in labeled.iter().filter(|v| v.label == label) {
            draw_arrow(&mut img, v);
        }
    }
    if let Some(f) = foe.filter(|f| f.u.is_finite() && f.v.is_finite()) {
        let (cx, cy) = (f.u.round(), f.v.round());
        let arm = CROSS_ARM as f64;
        draw_line(&mut img, (cx - arm, cy), (cx + arm, cy), YELLOW);
        draw_line(&mut img, (cx, cy - arm), (cx, cy + arm), YELLOW);
    }
    img
}
