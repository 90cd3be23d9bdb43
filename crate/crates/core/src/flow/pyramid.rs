use super::{FlowError, GrayImage};

/// One pyramid level as floating-point intensities with precomputed central
/// difference gradients.
#[derive(Debug, Clone)]
pub struct Level {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
    pub grad_x: Vec<f32>,
    pub grad_y: Vec<f32>,
}

impl Level {
    fn new(width: u32, height: u32, data: Vec<f32>) -> Self {
        let (grad_x, grad_y) = gradients(width as usize, height as usize, &data);
        Self {
            width,
            height,
            data,
            grad_x,
            grad_y,
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width as usize + x]
    }

    fn downsample(&self) -> Level {
        let (w, h) = (self.width / 2, self.height / 2);
        let src_w = self.width as usize;
        let mut out = Vec::with_capacity(w as usize * h as usize);
        for y in 0..h as usize {
            let r0 = 2 * y * src_w;
            let r1 = r0 + src_w;
            for x in 0..w as usize {
                let c = 2 * x;
                let s = self.data[r0 + c]
                    + self.data[r0 + c + 1]
                    + self.data[r1 + c]
                    + self.data[r1 + c + 1];
                out.push(s * 0.25);
            }
        }
        Level::new(w, h, out)
    }
}

fn gradients(w: usize, h: usize, data: &[f32]) -> (Vec<f32>, Vec<f32>) {
    let mut gx = vec![0.0f32; w * h];
    let mut gy = vec![0.0f32; w * h];
    for y in 0..h {
        let ym = y.saturating_sub(1);
        let yp = (y + 1).min(h - 1);
        for x in 0..w {
            let xm = x.saturating_sub(1);
            let xp = (x + 1).min(w - 1);
            let i = y * w + x;
            gx[i] = (data[y * w + xp] - data[y * w + xm]) / (xp - xm).max(1) as f32;
            gy[i] = (data[yp * w + x] - data[ym * w + x]) / (yp - ym).max(1) as f32;
        }
    }
    (gx, gy)
}

/// Image pyramid; level 0 is full resolution and each further level halves
/// both dimensions (rounded down).
#[derive(Debug, Clone)]
pub struct Pyramid {
    levels: Vec<Level>,
}

impl Pyramid {
    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn level(&self, k: usize) -> &Level {
        &self.levels[k]
    }

    pub fn geometry(&self) -> Vec<(u32, u32)> {
        self.levels.iter().map(|l| (l.width, l.height)).collect()
    }
}

/// Builds `levels` levels by 2×2 mean downsampling. Every level must be at
/// least `window` pixels on each side.
pub fn build_pyramid(img: &GrayImage, levels: usize, window: u32) -> Result<Pyramid, FlowError> {
    if levels == 0 {
        return Err(FlowError::NoLevels);
    }
    let (mut w, mut h) = img.dimensions();
    for level in 0..levels {
        if w < window || h < window {
            return Err(FlowError::TooManyLevels {
                level,
                width: w,
                height: h,
                window,
            });
        }
        w /= 2;
        h /= 2;
    }
    let mut out = Vec::with_capacity(levels);
    out.push(Level::new(img.width(), img.height(), img.to_f32()));
    for _ in 1..levels {
        let next = out.last().expect("non-empty").downsample();
        out.push(next);
    }
    Ok(Pyramid { levels: out })
}
