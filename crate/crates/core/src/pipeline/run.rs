use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{PipelineConfig, PipelineError};
use crate::camera::{CameraIntrinsics, PixelPoint, Point3};
use crate::flow::{build_pyramid, detect_features, load_gray, lucas_kanade, FlowVector, GrayImage, Pyramid};
use crate::foe::estimate_foe_with;
use crate::regression::{calibrate_uniform, classify, estimate_speed, fit, uniform_sample, Label, LabeledVector, RegressionModel, SpeedEstimate};
use crate::synth::{render_flow_field, simulate_ground_points};

/// Optional file in the frame directory listing frame names in processing
/// order, one per line; blank lines and `#` comments are ignored.
pub const MANIFEST_NAME: &str = "frames.txt";

/// Frames in `dir`: the manifest order when present, otherwise every `.pgm`
/// and `.png` file (overlays excluded) in lexicographic name order.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let manifest = dir.join(MANIFEST_NAME);
    if manifest.is_file() {
        let text = fs::read_to_string(&manifest).map_err(|e| PipelineError::io(&manifest, e))?;
        return Ok(text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| dir.join(l))
            .collect());
    }
    let entries = fs::read_dir(dir).map_err(|e| PipelineError::io(dir, e))?;
    let mut frames = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| PipelineError::io(dir, e))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let lower = name.to_ascii_lowercase();
        if lower.ends_with(super::OVERLAY_SUFFIX) || !path.is_file() {
            continue;
        }
        if lower.ends_with(".pgm") || lower.ends_with(".png") {
            frames.push(path);
        }
    }
    frames.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(frames)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub load: f64,
    pub detect: f64,
    pub track: f64,
    pub foe: f64,
    pub synth: f64,
    pub fit: f64,
    pub speed: f64,
    pub classify: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub outlier: usize,
    #[serde(rename = "static")]
    pub static_inlier: usize,
    pub moving: usize,
}

impl LabelCounts {
    pub fn of(labeled: &[LabeledVector]) -> Self {
        let mut c = Self::default();
        for l in labeled {
            match l.label {
                Label::Outlier => c.outlier += 1,
                Label::StaticInlier => c.static_inlier += 1,
                Label::Moving => c.moving += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.outlier + self.static_inlier + self.moving
    }
}

/// Outcome for one pair of adjacent frames. On failure `error` is set and
/// the fields after the failing stage keep their empty values.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameResult {
    pub frame_index: usize,
    pub frame: PathBuf,
    pub next_frame: PathBuf,
    pub foe: Option<PixelPoint>,
    pub foe_threshold: Option<f64>,
    pub speed: Option<SpeedEstimate>,
    pub model: Option<RegressionModel>,
    /// Every successfully tracked vector with its label.
    pub labeled: Vec<LabeledVector>,
    pub untracked: usize,
    pub dropped_synthetic: usize,
    pub timing_ms: StageTimings,
    pub error: Option<String>,
}

#[derive(Serialize)]
struct Record<'a> {
    frame_index: usize,
    frame: String,
    next_frame: String,
    foe: Option<[f64; 2]>,
    foe_threshold: Option<f64>,
    speed: Option<&'a SpeedEstimate>,
    residual_sigma: Option<f64>,
    counts: LabelCounts,
    untracked: usize,
    dropped_synthetic: usize,
    vectors: Vec<(f64, f64, f64, f64, &'static str, f64)>,
    error: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    timing_ms: Option<&'a StageTimings>,
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

impl FrameResult {
    fn empty(frame_index: usize, frame: PathBuf, next_frame: PathBuf) -> Self {
        Self {
            frame_index,
            frame,
            next_frame,
            foe: None,
            foe_threshold: None,
            speed: None,
            model: None,
            labeled: Vec::new(),
            untracked: 0,
            dropped_synthetic: 0,
            timing_ms: StageTimings::default(),
            error: None,
        }
    }

    pub fn counts(&self) -> LabelCounts {
        LabelCounts::of(&self.labeled)
    }

    /// One JSON object without a trailing newline. Vectors are written as
    /// `[u, v, du, dv, label, residual]`. Timings are wall-clock and so are
    /// left out unless asked for, keeping records reproducible.
    pub fn to_json_line(&self, include_timing: bool) -> String {
        let rec = Record {
            frame_index: self.frame_index,
            frame: file_name(&self.frame),
            next_frame: file_name(&self.next_frame),
            foe: self.foe.map(|p| [p.u, p.v]),
            foe_threshold: self.foe_threshold,
            speed: self.speed.as_ref(),
            residual_sigma: self.model.map(|m| m.residual_sigma),
            counts: self.counts(),
            untracked: self.untracked,
            dropped_synthetic: self.dropped_synthetic,
            vectors: self
                .labeled
                .iter()
                .map(|l| {
                    let v = &l.vector;
                    (v.base.u, v.base.v, v.displacement[0], v.displacement[1], l.label.as_str(), l.residual)
                })
                .collect(),
            error: self.error.as_deref(),
            timing_ms: include_timing.then_some(&self.timing_ms),
        };
        serde_json::to_string(&rec).expect("frame records serialize")
    }
}

type Loaded = Result<(GrayImage, Pyramid), String>;

/// Lazily processes consecutive frame pairs in order; each frame is decoded
/// and pyramided once.
pub struct FrameStream {
    frames: Vec<PathBuf>,
    cfg: PipelineConfig,
    k: CameraIntrinsics,
    points: Vec<Point3>,
    fixed_model: Option<RegressionModel>,
    index: usize,
    cached: Option<Loaded>,
}

/// Validates the configuration and the frame set, then returns a stream
/// that yields one [`FrameResult`] per adjacent pair.
pub fn run_sequence(frame_dir: &Path, cfg: &PipelineConfig) -> Result<FrameStream, PipelineError> {
    cfg.validate()?;
    let frames = list_frames(frame_dir)?;
    if frames.len() < 2 {
        return Err(PipelineError::NoFrames {
            dir: frame_dir.to_path_buf(),
            found: frames.len(),
        });
    }
    let k = cfg.intrinsics();
    for f in &frames {
        // Unreadable headers surface later as per-frame errors.
        if let Ok(dims) = image::image_dimensions(f) {
            if dims != (k.width, k.height) {
                return Err(PipelineError::DimensionMismatch {
                    path: f.clone(),
                    expected: (k.width, k.height),
                    actual: dims,
                });
            }
        }
    }
    let points = simulate_ground_points(&cfg.sim).map_err(|e| PipelineError::Config(e.to_string()))?;
    Ok(FrameStream {
        frames,
        cfg: cfg.clone(),
        k,
        points,
        fixed_model: None,
        index: 0,
        cached: None,
    })
}

impl FrameStream {
    pub fn frames(&self) -> &[PathBuf] {
        &self.frames
    }

    pub fn pair_count(&self) -> usize {
        self.frames.len().saturating_sub(1)
    }

    fn load(&self, path: &Path) -> Loaded {
        let img = load_gray(path).map_err(|e| e.to_string())?;
        if img.dimensions() != (self.k.width, self.k.height) {
            return Err(format!(
                "{}: frame is {:?}, expected {:?}",
                path.display(),
                img.dimensions(),
                (self.k.width, self.k.height)
            ));
        }
        let lk = self.cfg.lk.lk_params();
        let pyr = build_pyramid(&img, lk.levels, lk.window_size()).map_err(|e| e.to_string())?;
        Ok((img, pyr))
    }

    fn process(
        &mut self,
        prev: &(GrayImage, Pyramid),
        next: &(GrayImage, Pyramid),
        out: &mut FrameResult,
    ) -> Result<(), String> {
        let cfg = &self.cfg;
        let t = &mut out.timing_ms;

        let clock = Instant::now();
        let features = detect_features(&prev.0, &cfg.lk.feature_params());
        t.detect = ms(clock);

        let clock = Instant::now();
        let tracked = lucas_kanade(&prev.1, &next.1, &features, &cfg.lk.lk_params()).map_err(|e| e.to_string())?;
        let usable: Vec<FlowVector> = tracked.into_iter().filter(FlowVector::is_usable).collect();
        out.untracked = features.len() - usable.len();
        t.track = ms(clock);

        let clock = Instant::now();
        let foe = estimate_foe_with(&usable, &cfg.foe).map_err(|e| format!("focus of expansion: {e}"))?;
        out.foe = Some(foe.point);
        out.foe_threshold = Some(foe.threshold);
        t.foe = ms(clock);

        let model = match self.fixed_model {
            Some(m) if !cfg.classify.refit_per_frame => m,
            _ => {
                let clock = Instant::now();
                let field = render_flow_field(
                    &self.points,
                    &self.k,
                    &foe.point,
                    cfg.sim.reference_speed_kmh,
                    self.k.frame_interval(),
                );
                out.dropped_synthetic = field.dropped;
                t.synth = ms(clock);

                let clock = Instant::now();
                let m = fit(&field.samples, cfg.sim.reference_speed_kmh)
                    .and_then(|m| {
                        calibrate_uniform(
                            &m,
                            &field.samples,
                            cfg.classify.grid_nx,
                            cfg.classify.grid_ny,
                            self.k.width,
                            self.k.height,
                        )
                    })
                    .map_err(|e| format!("regression: {e}"))?;
                t.fit = ms(clock);
                if self.fixed_model.is_none() {
                    self.fixed_model = Some(m);
                }
                m
            }
        };
        out.model = Some(model);

        let clock = Instant::now();
        let inliers: Vec<FlowVector> = usable
            .iter()
            .zip(&foe.inlier_mask)
            .filter(|(_, &i)| i)
            .map(|(v, _)| *v)
            .collect();
        let sampled = uniform_sample(
            &inliers,
            cfg.classify.grid_nx,
            cfg.classify.grid_ny,
            self.k.width,
            self.k.height,
        );
        let speed = estimate_speed(&sampled, &model).map_err(|e| format!("speed: {e}"))?;
        out.speed = Some(speed);
        t.speed = ms(clock);

        let clock = Instant::now();
        out.labeled =
            classify(&usable, &foe, &model, speed.ratio, cfg.classify.k_sigma).map_err(|e| format!("classify: {e}"))?;
        t.classify = ms(clock);
        Ok(())
    }

    /// Like [`Iterator::next`], also handing back the earlier frame of the
    /// pair when it could be decoded.
    pub fn next_with_frame(&mut self) -> Option<(FrameResult, Option<GrayImage>)> {
        if self.index + 1 >= self.frames.len() {
            return None;
        }
        let total = Instant::now();
        let i = self.index;
        self.index += 1;
        let mut result = FrameResult::empty(i, self.frames[i].clone(), self.frames[i + 1].clone());

        let clock = Instant::now();
        let prev = match self.cached.take() {
            Some(l) => l,
            None => self.load(&self.frames[i].clone()),
        };
        let next = self.load(&self.frames[i + 1].clone());
        result.timing_ms.load = ms(clock);

        let outcome = match (&prev, &next) {
            (Ok(p), Ok(n)) => self.process(p, n, &mut result),
            (Err(e), _) | (_, Err(e)) => Err(e.clone()),
        };
        result.error = outcome.err();
        result.timing_ms.total = ms(total);
        self.cached = Some(next);
        Some((result, prev.ok().map(|(img, _)| img)))
    }
}

impl Iterator for FrameStream {
    type Item = FrameResult;

    fn next(&mut self) -> Option<FrameResult> {
        self.next_with_frame().map(|(r, _)| r)
    }
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}
