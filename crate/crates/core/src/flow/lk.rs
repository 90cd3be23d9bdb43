use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pyramid::Level;
use super::{FlowError, FlowVector, Pyramid};
use crate::camera::PixelPoint;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LkParams {
    /// Half-width of the square integration window (radius 10 → 21×21).
    pub window_radius: u32,
    pub levels: usize,
    pub max_iters: usize,
    /// Per-level convergence threshold on the update step, in pixels.
    pub eps: f64,
    /// Minimum eigenvalue of the window-averaged gradient matrix, with
    /// intensities scaled to [0, 1].
    pub min_eigen: f64,
}

impl Default for LkParams {
    fn default() -> Self {
        Self {
            window_radius: 10,
            levels: 3,
            max_iters: 30,
            eps: 0.01,
            min_eigen: 1e-4,
        }
    }
}

impl LkParams {
    pub fn window_size(&self) -> u32 {
        2 * self.window_radius + 1
    }
}

/// Bilinear sampler for a square window whose taps all share one
/// sub-pixel offset, so the four weights are computed once.
struct WindowSampler {
    origin: usize,
    stride: usize,
    right: usize,
    down: usize,
    w: [f64; 4],
}

impl WindowSampler {
    /// Window of radius `r` centred on `(x, y)`; the caller guarantees the
    /// window lies inside the `width`-wide image.
    fn new(width: usize, x: f64, y: f64, r: i64) -> Self {
        let (x0, y0) = (x.floor(), y.floor());
        let (ax, ay) = (x - x0, y - y0);
        let left = (x0 as i64 - r) as usize;
        let top = (y0 as i64 - r) as usize;
        // A zero-weight tap may sit one past the image edge; point it back
        // onto the last pixel instead.
        Self {
            origin: top * width + left,
            stride: width,
            right: usize::from(ax > 0.0),
            down: if ay > 0.0 { width } else { 0 },
            w: [(1.0 - ax) * (1.0 - ay), ax * (1.0 - ay), (1.0 - ax) * ay, ax * ay],
        }
    }

    #[inline]
    fn at(&self, data: &[f32], row: usize, col: usize) -> f64 {
        let i = self.origin + row * self.stride + col;
        self.w[0] * data[i] as f64
            + self.w[1] * data[i + self.right] as f64
            + self.w[2] * data[i + self.down] as f64
            + self.w[3] * data[i + self.down + self.right] as f64
    }
}

#[inline]
fn window_inside(l: &Level, x: f64, y: f64, r: f64) -> bool {
    x - r >= 0.0 && y - r >= 0.0 && x + r <= (l.width - 1) as f64 && y + r <= (l.height - 1) as f64
}

fn track_one(prev: &Pyramid, next: &Pyramid, base: PixelPoint, params: &LkParams) -> FlowVector {
    let r = params.window_radius as i64;
    let rf = r as f64;
    let side = (2 * r + 1) as usize;
    let n = side * side;
    let mut tmpl = vec![0.0f64; n];
    let mut gx = vec![0.0f64; n];
    let mut gy = vec![0.0f64; n];
    let mut guess = (0.0f64, 0.0f64);

    for level in (0..prev.len()).rev() {
        let lp = prev.level(level);
        let ln = next.level(level);
        let scale = (1u64 << level) as f64;
        // Pixel centers of a 2×2-mean level sit at (2x + 0.5) in the finer level.
        let px = (base.u + 0.5) / scale - 0.5;
        let py = (base.v + 0.5) / scale - 0.5;
        if !window_inside(lp, px, py, rf) {
            return FlowVector::failed(base);
        }
        let w = lp.width as usize;
        let sp = WindowSampler::new(w, px, py, r);
        let (mut gxx, mut gxy, mut gyy) = (0.0, 0.0, 0.0);
        let mut k = 0;
        for row in 0..side {
            for col in 0..side {
                tmpl[k] = sp.at(&lp.data, row, col);
                gx[k] = sp.at(&lp.grad_x, row, col);
                gy[k] = sp.at(&lp.grad_y, row, col);
                gxx += gx[k] * gx[k];
                gxy += gx[k] * gy[k];
                gyy += gy[k] * gy[k];
                k += 1;
            }
        }
        let det = gxx * gyy - gxy * gxy;
        let min_eig = 0.5 * (gxx + gyy) - (0.25 * (gxx - gyy).powi(2) + gxy * gxy).sqrt();
        if min_eig / (n as f64 * 255.0 * 255.0) < params.min_eigen || det <= 0.0 {
            return FlowVector::failed(base);
        }

        let mut step = (0.0f64, 0.0f64);
        for _ in 0..params.max_iters {
            let qx = px + guess.0 + step.0;
            let qy = py + guess.1 + step.1;
            if !window_inside(ln, qx, qy, rf) {
                return FlowVector::failed(base);
            }
            let sn = WindowSampler::new(w, qx, qy, r);
            let (mut bx, mut by) = (0.0, 0.0);
            let mut k = 0;
            for row in 0..side {
                for col in 0..side {
                    let diff = tmpl[k] - sn.at(&ln.data, row, col);
                    bx += diff * gx[k];
                    by += diff * gy[k];
                    k += 1;
                }
            }
            let ex = (gyy * bx - gxy * by) / det;
            let ey = (gxx * by - gxy * bx) / det;
            step.0 += ex;
            step.1 += ey;
            if ex.hypot(ey) < params.eps {
                break;
            }
        }
        guess = (guess.0 + step.0, guess.1 + step.1);
        if level > 0 {
            guess = (2.0 * guess.0, 2.0 * guess.1);
        }
    }
    if !(guess.0.is_finite() && guess.1.is_finite()) {
        return FlowVector::failed(base);
    }
    FlowVector::new(base, guess.0, guess.1)
}

/// Tracks each feature from `prev` into `next` with iterative pyramidal
/// Lucas-Kanade. Features whose window leaves the image at any level, or
/// whose gradient matrix is near singular, come back with `track_ok = false`.
pub fn lucas_kanade(
    prev: &Pyramid,
    next: &Pyramid,
    features: &[PixelPoint],
    params: &LkParams,
) -> Result<Vec<FlowVector>, FlowError> {
    if prev.geometry() != next.geometry() {
        return Err(FlowError::GeometryMismatch(prev.geometry(), next.geometry()));
    }
    Ok(features
        .par_iter()
        .map(|&f| track_one(prev, next, f, params))
        .collect())
}
