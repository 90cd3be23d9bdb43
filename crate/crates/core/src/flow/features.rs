use serde::{Deserialize, Serialize};

use super::GrayImage;
use crate::camera::PixelPoint;

/// Corner detector settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureParams {
    pub max_count: usize,
    /// Minimum accepted score as a fraction of the best score in the image.
    pub quality_ratio: f64,
    /// Minimum Euclidean spacing between returned corners, in pixels.
    pub min_distance: f64,
    /// Corners closer than this to the image border are discarded.
    pub border: u32,
}

impl Default for FeatureParams {
    fn default() -> Self {
        Self {
            max_count: 800,
            quality_ratio: 0.01,
            min_distance: 10.0,
            border: 0,
        }
    }
}

/// Shi-Tomasi score per pixel: the smaller eigenvalue of the 3×3-summed
/// structure tensor built from Sobel gradients (scaled by 1/8).
///
/// Pixels whose 3×3 block would need gradients outside the image score 0.
pub fn min_eigen_scores(img: &GrayImage) -> Vec<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut scores = vec![0.0f32; w * h];
    if w < 5 || h < 5 {
        return scores;
    }
    let px = img.pixels();
    let at = |x: usize, y: usize| px[y * w + x] as f32;

    // Products of gradients on the interior; the one-pixel frame stays zero.
    let mut ixx = vec![0.0f32; w * h];
    let mut ixy = vec![0.0f32; w * h];
    let mut iyy = vec![0.0f32; w * h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1)
                - at(x - 1, y - 1)
                - 2.0 * at(x - 1, y)
                - at(x - 1, y + 1))
                * 0.125;
            let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1)
                - at(x - 1, y - 1)
                - 2.0 * at(x, y - 1)
                - at(x + 1, y - 1))
                * 0.125;
            let i = y * w + x;
            ixx[i] = gx * gx;
            ixy[i] = gx * gy;
            iyy[i] = gy * gy;
        }
    }

    // Separable 3-tap box sums: horizontal then vertical.
    let box3 = |src: &[f32]| -> Vec<f32> {
        let mut tmp = vec![0.0f32; w * h];
        for y in 0..h {
            for x in 1..w - 1 {
                let i = y * w + x;
                tmp[i] = src[i - 1] + src[i] + src[i + 1];
            }
        }
        let mut out = vec![0.0f32; w * h];
        for y in 1..h - 1 {
            for x in 0..w {
                let i = y * w + x;
                out[i] = tmp[i - w] + tmp[i] + tmp[i + w];
            }
        }
        out
    };
    let (sxx, sxy, syy) = (box3(&ixx), box3(&ixy), box3(&iyy));

    for y in 2..h - 2 {
        for x in 2..w - 2 {
            let i = y * w + x;
            let (a, b, c) = (sxx[i], sxy[i], syy[i]);
            let half_tr = 0.5 * (a + c);
            let disc = (0.25 * (a - c) * (a - c) + b * b).sqrt();
            scores[i] = (half_tr - disc).max(0.0);
        }
    }
    scores
}

/// Returns up to `max_count` corners sorted by descending score, pairwise at
/// least `min_distance` apart, each scoring at least `quality_ratio` times the
/// best score. Featureless images yield an empty list.
pub fn detect_features(img: &GrayImage, params: &FeatureParams) -> Vec<PixelPoint> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if params.max_count == 0 || w == 0 || h == 0 {
        return Vec::new();
    }
    let scores = min_eigen_scores(img);
    let best = scores.iter().copied().fold(0.0f32, f32::max);
    if best <= 0.0 {
        return Vec::new();
    }
    let floor = (params.quality_ratio * best as f64) as f32;
    let border = params.border as usize;

    let mut candidates: Vec<(f32, usize)> = Vec::new();
    for y in border.max(1)..h.saturating_sub(border.max(1)) {
        for x in border.max(1)..w.saturating_sub(border.max(1)) {
            let i = y * w + x;
            let s = scores[i];
            if s <= 0.0 || s < floor {
                continue;
            }
            let is_peak = (y - 1..=y + 1)
                .flat_map(|yy| (x - 1..=x + 1).map(move |xx| yy * w + xx))
                .all(|j| scores[j] <= s);
            if is_peak {
                candidates.push((s, i));
            }
        }
    }
    // Stable sort keeps raster order among equal scores.
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0));

    let min_d2 = params.min_distance * params.min_distance;
    let cell = params.min_distance.max(1.0);
    let gw = (w as f64 / cell).ceil() as usize + 1;
    let gh = (h as f64 / cell).ceil() as usize + 1;
    let mut grid: Vec<Vec<(f64, f64)>> = vec![Vec::new(); gw * gh];
    let mut out = Vec::new();
    for (_, i) in candidates {
        let (x, y) = ((i % w) as f64, (i / w) as f64);
        let (cx, cy) = ((x / cell) as usize, (y / cell) as usize);
        let crowded = (cy.saturating_sub(1)..=(cy + 1).min(gh - 1)).any(|gy| {
            (cx.saturating_sub(1)..=(cx + 1).min(gw - 1)).any(|gx| {
                grid[gy * gw + gx]
                    .iter()
                    .any(|&(px, py)| (px - x).powi(2) + (py - y).powi(2) < min_d2)
            })
        });
        if crowded {
            continue;
        }
        grid[cy * gw + cx].push((x, y));
        out.push(PixelPoint::new(x, y));
        if out.len() == params.max_count {
            break;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct per-pixel evaluation: explicit Sobel at every block pixel and an
    /// explicit 3×3 sum, no shared buffers.
    fn brute_force_score(img: &GrayImage, x: i64, y: i64) -> f64 {
        let p = |x: i64, y: i64| img.get(x as u32, y as u32) as f64;
        let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (u, v) = (x + dx, y + dy);
                let mut gx = 0.0;
                let mut gy = 0.0;
                let kx = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
                for j in -1..=1i64 {
                    for i in -1..=1i64 {
                        let val = p(u + i, v + j);
                        gx += kx[(j + 1) as usize][(i + 1) as usize] * val;
                        gy += kx[(i + 1) as usize][(j + 1) as usize] * val;
                    }
                }
                gx /= 8.0;
                gy /= 8.0;
                a += gx * gx;
                b += gx * gy;
                c += gy * gy;
            }
        }
        0.5 * (a + c) - (0.25 * (a - c).powi(2) + b * b).sqrt()
    }

    fn square(size: u32, lo: u32, hi: u32) -> GrayImage {
        GrayImage::from_fn(size, size, |x, y| {
            if (lo..hi).contains(&x) && (lo..hi).contains(&y) {
                255
            } else {
                0
            }
        })
    }

    #[test]
    fn flat_image_has_no_features() {
        let img = GrayImage::filled(64, 48, 77);
        assert!(detect_features(&img, &FeatureParams::default()).is_empty());
    }

    #[test]
    fn scores_match_brute_force() {
        let img = square(40, 12, 27);
        let fast = min_eigen_scores(&img);
        for y in 2..38 {
            for x in 2..38 {
                let slow = brute_force_score(&img, x, y).max(0.0);
                let f = fast[(y * 40 + x) as usize] as f64;
                assert!((f - slow).abs() <= 1e-3 * slow.max(1.0), "({x},{y}): {f} vs {slow}");
            }
        }
    }

    #[test]
    fn finds_the_four_corners_of_a_square() {
        let img = square(64, 20, 44);
        // Oracle: the four brute-force maxima, one per quadrant around the square center.
        let mut oracle = Vec::new();
        for (qx, qy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
            let mut best = (f64::MIN, 0, 0);
            for y in 2 + 30 * qy..32 + 30 * qy {
                for x in 2 + 30 * qx..32 + 30 * qx {
                    let s = brute_force_score(&img, x, y);
                    if s > best.0 {
                        best = (s, x, y);
                    }
                }
            }
            oracle.push((best.1 as f64, best.2 as f64));
        }
        let params = FeatureParams {
            quality_ratio: 0.5,
            ..FeatureParams::default()
        };
        let found = detect_features(&img, &params);
        assert_eq!(found.len(), 4, "{found:?}");
        for (ox, oy) in oracle {
            assert!(
                found.iter().any(|p| (p.u - ox).abs() <= 1.0 && (p.v - oy).abs() <= 1.0),
                "no corner near ({ox},{oy}) in {found:?}"
            );
        }
        // And the geometric corners of the square.
        for (gx, gy) in [(19.5, 19.5), (43.5, 19.5), (19.5, 43.5), (43.5, 43.5)] {
            assert!(found.iter().any(|p| (p.u - gx).abs() <= 1.0 && (p.v - gy).abs() <= 1.0));
        }
    }

    #[test]
    fn suppresses_weaker_neighbour() {
        // Two corners 3 px apart: a bright and a dim dot.
        let mut img = GrayImage::filled(40, 40, 0);
        img.set(20, 20, 255);
        img.set(23, 20, 120);
        let params = FeatureParams {
            min_distance: 10.0,
            quality_ratio: 0.01,
            ..FeatureParams::default()
        };
        let found = detect_features(&img, &params);
        assert_eq!(found.len(), 1);
        assert!((found[0].u - 20.0).abs() <= 1.0 && (found[0].v - 20.0).abs() <= 1.0);
    }

    #[test]
    fn honours_count_spacing_and_quality() {
        let img = GrayImage::from_fn(120, 90, |x, y| {
            let v = ((x as f64 * 0.37).sin() * (y as f64 * 0.29).cos() * 120.0 + 128.0) as i32;
            v.clamp(0, 255) as u8
        });
        let params = FeatureParams {
            max_count: 25,
            quality_ratio: 0.05,
            min_distance: 7.0,
            border: 4,
        };
        let found = detect_features(&img, &params);
        assert!(!found.is_empty() && found.len() <= 25);
        let scores = min_eigen_scores(&img);
        let best = scores.iter().copied().fold(0.0, f32::max);
        let score_of = |p: &PixelPoint| scores[p.v as usize * 120 + p.u as usize];
        for (i, a) in found.iter().enumerate() {
            assert!(score_of(a) >= 0.05 * best);
            assert!(a.u >= 4.0 && a.v >= 4.0 && a.u < 116.0 && a.v < 86.0);
            for b in &found[i + 1..] {
                assert!(a.distance(b) >= 7.0);
                assert!(score_of(a) >= score_of(b));
            }
        }
    }
}
