use std::f64::consts::PI;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{PipelineConfig, PipelineError};
use crate::camera::{
    foe_from_translation, ground_plane_backproject, kmh_to_mps, project, CameraIntrinsics, PixelPoint, Point3,
};
use crate::flow::{save_gray, GrayImage};

/// Pixel-space rectangle `[x, x + width) × [y, y + height)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

impl Rect {
    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= self.x && u < self.x + self.width && v >= self.y && v < self.y + self.height
    }

    pub fn center(&self) -> PixelPoint {
        PixelPoint::new(self.x + 0.5 * self.width, self.y + 0.5 * self.height)
    }

    fn corners(&self) -> [PixelPoint; 4] {
        let (x1, y1) = (self.x + self.width, self.y + self.height);
        [
            PixelPoint::new(self.x, self.y),
            PixelPoint::new(x1, self.y),
            PixelPoint::new(x1, y1),
            PixelPoint::new(self.x, y1),
        ]
    }

    fn bounding(points: &[PixelPoint]) -> Rect {
        let (mut x0, mut y0) = (f64::INFINITY, f64::INFINITY);
        let (mut x1, mut y1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            x0 = x0.min(p.u);
            y0 = y0.min(p.v);
            x1 = x1.max(p.u);
            y1 = y1.max(p.v);
        }
        Rect {
            x: x0,
            y: y0,
            width: x1 - x0,
            height: y1 - y0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchMotion {
    /// Flat image-space patch translating by a constant number of pixels per
    /// frame.
    Velocity([f64; 2]),
    /// Object lying on the road that closes in on the camera faster than the
    /// road does. Its flow is radial, and at the patch center exactly this
    /// multiple of the road flow there.
    FlowScale(f64),
}

/// A textured patch moving independently of the road.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchSpec {
    /// Placement in the first frame.
    pub rect: Rect,
    pub motion: PatchMotion,
    #[serde(default)]
    pub texture_seed: u64,
}

/// Camera motion, texture and moving patches of a synthetic sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub frames: usize,
    pub speed_start_kmh: f64,
    /// Linear ramp target; `None` keeps the start speed.
    pub speed_end_kmh: Option<f64>,
    /// Explicit per-frame speeds; overrides the ramp when present.
    pub speeds_kmh: Option<Vec<f64>>,
    /// Image column of the heading on the horizon; defaults to `cx`.
    pub heading_u: Option<f64>,
    pub texture_seed: u64,
    pub sky_level: u8,
    #[serde(rename = "patch")]
    pub patches: Vec<PatchSpec>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            frames: 10,
            speed_start_kmh: 50.0,
            speed_end_kmh: None,
            speeds_kmh: None,
            heading_u: None,
            texture_seed: 1,
            sky_level: 160,
            patches: Vec::new(),
        }
    }
}

impl Scenario {
    /// Speed during the motion from frame `i` to `i + 1`, for every frame.
    pub fn speed_profile(&self) -> Vec<f64> {
        if let Some(s) = &self.speeds_kmh {
            return s.clone();
        }
        let end = self.speed_end_kmh.unwrap_or(self.speed_start_kmh);
        let n = self.frames;
        (0..n)
            .map(|i| {
                if n < 2 {
                    self.speed_start_kmh
                } else {
                    self.speed_start_kmh + (end - self.speed_start_kmh) * i as f64 / (n - 1) as f64
                }
            })
            .collect()
    }

    pub fn validate(&self, k: &CameraIntrinsics) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::InvalidScenario(m));
        if self.frames < 2 {
            return bad(format!("need at least 2 frames, got {}", self.frames));
        }
        let speeds = self.speed_profile();
        if speeds.len() != self.frames {
            return bad(format!("speeds_kmh has {} entries for {} frames", speeds.len(), self.frames));
        }
        if let Some(s) = speeds.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
            return bad(format!("speed {s} km/h is not a finite non-negative value"));
        }
        let hu = self.heading_u.unwrap_or(k.cx);
        if !(hu >= 0.0 && hu < k.width as f64) {
            return bad(format!("heading_u {hu} lies outside the image"));
        }
        for (i, p) in self.patches.iter().enumerate() {
            let r = p.rect;
            if !(r.width >= 1.0 && r.height >= 1.0) {
                return bad(format!("patch {i} is smaller than one pixel"));
            }
            if !(r.x >= 0.0 && r.y >= 0.0 && r.x + r.width <= k.width as f64 && r.y + r.height <= k.height as f64) {
                return bad(format!("patch {i} does not start inside the image"));
            }
            match p.motion {
                PatchMotion::Velocity(d) if !(d[0].is_finite() && d[1].is_finite()) => {
                    return bad(format!("patch {i} velocity is not finite"));
                }
                PatchMotion::FlowScale(s) if !s.is_finite() => {
                    return bad(format!("patch {i} flow scale is not finite"));
                }
                PatchMotion::FlowScale(_) if !(r.y > k.cy + 0.5) => {
                    return bad(format!("patch {i} rides on the road and must start below the horizon"));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// A scenario file: `[scenario]` and `[[scenario.patch]]` tables, plus any
/// pipeline sections that override the defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioFile {
    pub config: PipelineConfig,
    pub scenario: Scenario,
}

impl ScenarioFile {
    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| PipelineError::InvalidScenario(e.to_string()))?;
        let scenario = match table.remove("scenario") {
            Some(v) => v.try_into().map_err(|e: toml::de::Error| PipelineError::InvalidScenario(e.to_string()))?,
            None => Scenario::default(),
        };
        let rest = toml::to_string(&table).map_err(|e| PipelineError::InvalidScenario(e.to_string()))?;
        let config = PipelineConfig::from_toml_str(&rest)?;
        Ok(Self { config, scenario })
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        Self::from_toml_str(&text)
    }
}

/// One line of `ground_truth.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthFrame {
    pub frame: usize,
    pub file: String,
    pub foe: [f64; 2],
    pub speed_kmh: f64,
    /// Bounding box of each patch in this frame; the mask image is exact.
    pub moving: Vec<Rect>,
    /// Displacement of each patch center from this frame to the next.
    pub moving_displacement: Vec<[f64; 2]>,
    pub mask: String,
}

struct Wave {
    freq: [f64; 2],
    phase: f64,
    amplitude: f64,
}

fn waves(seed: u64, count: usize, fmin: f64, fmax: f64, amplitude: f64) -> Vec<Wave> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let f = fmin * (fmax / fmin).powf(rng.random::<f64>());
            let theta = rng.random_range(0.0..PI);
            Wave {
                freq: [f * theta.cos(), f * theta.sin()],
                phase: rng.random_range(0.0..2.0 * PI),
                amplitude,
            }
        })
        .collect()
}

// Gaussian pre-filter width in pixels applied to the road texture.
const BLUR_PX: f64 = 0.6;

/// Road texture sampled at pixel `(u, v)`, band-limited by damping each
/// world-space wave according to its frequency in the image.
fn road_value(road: &[Wave], k: &CameraIntrinsics, height: f64, origin: &Point3, u: f64, v: f64) -> f64 {
    let dv = v - k.cy;
    let z = k.fy * height / dv;
    let x = (u - k.cx) * z / k.fx;
    let dz_dv = -z / dv;
    let dx_du = z / k.fx;
    let dx_dv = (u - k.cx) / k.fx * dz_dv;
    let (wx, wz) = (x + origin.x, z + origin.z);
    let mut acc = 128.0;
    for w in road {
        let gu = w.freq[0] * dx_du;
        let gv = w.freq[0] * dx_dv + w.freq[1] * dz_dv;
        let att = (-2.0 * PI * PI * BLUR_PX * BLUR_PX * (gu * gu + gv * gv)).exp();
        if att > 1e-4 {
            acc += w.amplitude * att * (2.0 * PI * (w.freq[0] * wx + w.freq[1] * wz) + w.phase).cos();
        }
    }
    acc
}

fn patch_value(tex: &[Wave], x: f64, y: f64) -> f64 {
    let mut acc = 96.0;
    for w in tex {
        acc += w.amplitude * (2.0 * PI * (w.freq[0] * x + w.freq[1] * y) + w.phase).cos();
    }
    acc
}

fn to_u8(x: f64) -> u8 {
    x.round().clamp(0.0, 255.0) as u8
}

/// Where a patch is in the current frame.
#[derive(Debug, Clone, Copy)]
enum PatchState {
    Flat { rect: Rect },
    /// Road-lying patch: the frame-0 footprint of `rect0`, which has since
    /// closed in on the camera by `approach` meters along the heading.
    OnRoad { rect0: Rect, approach: f64 },
}

struct Geometry {
    k: CameraIntrinsics,
    height: f64,
    dir: Point3,
}

impl Geometry {
    /// Frame-0 pixel of the road-patch point seen at `(u, v)`.
    fn to_first_frame(&self, u: f64, v: f64, approach: f64) -> Option<PixelPoint> {
        let p = ground_plane_backproject(&PixelPoint::new(u, v), &self.k, self.height).ok()?;
        project(&p.add(&self.dir.scale(approach)), &self.k).ok()
    }

    fn from_first_frame(&self, p0: &PixelPoint, approach: f64) -> Result<PixelPoint, PipelineError> {
        let g = ground_plane_backproject(p0, &self.k, self.height)
            .map_err(|_| PipelineError::InvalidScenario("road patch above the horizon".into()))?;
        project(&g.sub(&self.dir.scale(approach)), &self.k)
            .map_err(|_| PipelineError::InvalidScenario("road patch passed behind the camera".into()))
    }
}

impl PatchState {
    fn new(spec: &PatchSpec) -> Self {
        match spec.motion {
            PatchMotion::Velocity(_) => PatchState::Flat { rect: spec.rect },
            PatchMotion::FlowScale(_) => PatchState::OnRoad {
                rect0: spec.rect,
                approach: 0.0,
            },
        }
    }

    /// Texture coordinates of pixel `(u, v)` when it shows this patch.
    fn texel(&self, geo: &Geometry, u: f64, v: f64) -> Option<(f64, f64)> {
        match *self {
            PatchState::Flat { rect } => rect.contains(u, v).then(|| (u - rect.x, v - rect.y)),
            PatchState::OnRoad { rect0, approach } => {
                if v - geo.k.cy <= 0.5 {
                    return None;
                }
                let p0 = geo.to_first_frame(u, v, approach)?;
                rect0.contains(p0.u, p0.v).then(|| (p0.u - rect0.x, p0.v - rect0.y))
            }
        }
    }

    fn bounds(&self, geo: &Geometry) -> Result<Rect, PipelineError> {
        match *self {
            PatchState::Flat { rect } => Ok(rect),
            PatchState::OnRoad { rect0, approach } => {
                let pts = rect0
                    .corners()
                    .iter()
                    .map(|c| geo.from_first_frame(c, approach))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(Rect::bounding(&pts))
            }
        }
    }

    fn center(&self, geo: &Geometry) -> Result<PixelPoint, PipelineError> {
        match *self {
            PatchState::Flat { rect } => Ok(rect.center()),
            PatchState::OnRoad { rect0, approach } => geo.from_first_frame(&rect0.center(), approach),
        }
    }

    /// Advances one frame during which the camera travels `travel` meters.
    fn advance(&mut self, spec: &PatchSpec, geo: &Geometry, travel: f64) -> Result<(), PipelineError> {
        match (self, spec.motion) {
            (PatchState::Flat { rect }, PatchMotion::Velocity(d)) => {
                rect.x += d[0];
                rect.y += d[1];
            }
            (PatchState::OnRoad { rect0, approach }, PatchMotion::FlowScale(scale)) => {
                // A road point at depth z that closes in by s meters along the
                // heading moves by |p - foe|·s·dz / (z - s·dz) in the image.
                // Solve for the relative approach giving `scale` times the
                // road's own motion at the patch center.
                let c = ground_plane_backproject(&rect0.center(), &geo.k, geo.height)
                    .expect("validated below the horizon")
                    .sub(&geo.dir.scale(*approach));
                let a = travel * geo.dir.z;
                let denom = c.z + (scale - 1.0) * a;
                if !(c.z > a && denom > 0.0) {
                    return Err(PipelineError::InvalidScenario(
                        "road patch reaches the camera within the sequence".into(),
                    ));
                }
                let step = scale * a * c.z / denom / geo.dir.z;
                *approach += step;
            }
            _ => unreachable!("patch state follows its motion kind"),
        }
        Ok(())
    }
}

/// Renders `scenario` into `out_dir`:
///
/// - `frames/frame_NNNN.pgm` grayscale frames,
/// - `masks/mask_NNNN.pgm` with 255 on moving-patch pixels,
/// - `ground_truth.jsonl`, one [`GroundTruthFrame`] per frame,
/// - `config.toml`, the pipeline configuration used.
pub fn generate_synthetic_sequence(
    cfg: &PipelineConfig,
    scenario: &Scenario,
    out_dir: &Path,
) -> Result<Vec<GroundTruthFrame>, PipelineError> {
    cfg.validate()?;
    let k = cfg.intrinsics();
    scenario.validate(&k)?;
    let height = cfg.camera.camera_height_m;
    let dt = k.frame_interval();
    let hu = scenario.heading_u.unwrap_or(k.cx);
    let dir = {
        let t = Point3::new((hu - k.cx) / k.fx, 0.0, 1.0);
        t.scale(1.0 / t.norm())
    };
    let foe = foe_from_translation(&dir, &k).expect("heading is forward");
    let geo = Geometry { k, height, dir };
    let speeds = scenario.speed_profile();

    let road = waves(scenario.texture_seed, 16, 0.25, 8.0, 18.0);
    let patch_tex: Vec<Vec<Wave>> = scenario
        .patches
        .iter()
        .map(|p| waves(p.texture_seed ^ 0x9e37_79b9_7f4a_7c15, 8, 0.04, 0.15, 22.0))
        .collect();

    let frames_dir = out_dir.join("frames");
    let masks_dir = out_dir.join("masks");
    for d in [&frames_dir, &masks_dir] {
        fs::create_dir_all(d).map_err(|e| PipelineError::io(d, e))?;
    }

    let mut origin = Point3::default();
    let mut states: Vec<PatchState> = scenario.patches.iter().map(PatchState::new).collect();
    let mut truth = Vec::with_capacity(scenario.frames);
    let (w, h) = (k.width as usize, k.height as usize);
    for (i, &speed) in speeds.iter().enumerate() {
        let mut pixels = vec![0u8; w * h];
        let mut mask = vec![0u8; w * h];
        pixels
            .par_chunks_mut(w)
            .zip(mask.par_chunks_mut(w))
            .enumerate()
            .for_each(|(y, (row, mrow))| {
                let v = y as f64;
                for x in 0..w {
                    let u = x as f64;
                    let hit = states
                        .iter()
                        .enumerate()
                        .rev()
                        .find_map(|(j, s)| s.texel(&geo, u, v).map(|t| (j, t)));
                    let value = match hit {
                        Some((j, (tx, ty))) => {
                            mrow[x] = 255;
                            patch_value(&patch_tex[j], tx, ty)
                        }
                        None if v - k.cy > 0.5 => road_value(&road, &k, height, &origin, u, v),
                        None => scenario.sky_level as f64,
                    };
                    row[x] = to_u8(value);
                }
            });
        let frame = GrayImage::new(k.width, k.height, pixels)?;
        let mask = GrayImage::new(k.width, k.height, mask)?;
        let file = format!("frame_{i:04}.pgm");
        let mask_file = format!("mask_{i:04}.pgm");
        save_gray(&frame, &frames_dir.join(&file))?;
        save_gray(&mask, &masks_dir.join(&mask_file))?;

        let travel = kmh_to_mps(speed) * dt;
        let bounds = states.iter().map(|s| s.bounds(&geo)).collect::<Result<Vec<_>, _>>()?;
        let before = states.iter().map(|s| s.center(&geo)).collect::<Result<Vec<_>, _>>()?;
        for (s, spec) in states.iter_mut().zip(&scenario.patches) {
            s.advance(spec, &geo, travel)?;
        }
        let after = states.iter().map(|s| s.center(&geo)).collect::<Result<Vec<_>, _>>()?;
        truth.push(GroundTruthFrame {
            frame: i,
            file,
            foe: [foe.u, foe.v],
            speed_kmh: speed,
            moving: bounds,
            moving_displacement: before.iter().zip(&after).map(|(a, b)| [b.u - a.u, b.v - a.v]).collect(),
            mask: format!("masks/{mask_file}"),
        });
        origin = origin.add(&dir.scale(travel));
    }

    let gt_path = out_dir.join("ground_truth.jsonl");
    let mut out = BufWriter::new(File::create(&gt_path).map_err(|e| PipelineError::io(&gt_path, e))?);
    for t in &truth {
        let line = serde_json::to_string(t).expect("ground truth serializes");
        writeln!(out, "{line}").map_err(|e| PipelineError::io(&gt_path, e))?;
    }
    out.flush().map_err(|e| PipelineError::io(&gt_path, e))?;
    let cfg_path = out_dir.join("config.toml");
    fs::write(&cfg_path, cfg.to_toml_string()).map_err(|e| PipelineError::io(&cfg_path, e))?;
    Ok(truth)
}
