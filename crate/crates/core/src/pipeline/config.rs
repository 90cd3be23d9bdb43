use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::camera::CameraIntrinsics;
use crate::flow::{FeatureParams, LkParams};
use crate::foe::FoeParams;
use crate::synth::SimulationConfig;

/// `[camera]`: intrinsics plus mounting height above the road.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraSection {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub fps: f64,
    pub camera_height_m: f64,
}

impl Default for CameraSection {
    fn default() -> Self {
        let k = CameraIntrinsics::default();
        Self {
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: k.width,
            height: k.height,
            fps: k.fps,
            camera_height_m: 2.0,
        }
    }
}

impl CameraSection {
    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
            fps: self.fps,
        }
    }
}

/// `[lk]`: detector and tracker settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LkSection {
    pub window_radius: u32,
    pub levels: usize,
    pub max_iters: usize,
    pub eps: f64,
    pub min_eigen: f64,
    pub max_features: usize,
    pub quality_ratio: f64,
    pub min_distance: f64,
}

impl Default for LkSection {
    fn default() -> Self {
        let lk = LkParams::default();
        let det = FeatureParams::default();
        Self {
            window_radius: lk.window_radius,
            levels: lk.levels,
            max_iters: lk.max_iters,
            eps: lk.eps,
            min_eigen: lk.min_eigen,
            max_features: det.max_count,
            quality_ratio: det.quality_ratio,
            min_distance: det.min_distance,
        }
    }
}

impl LkSection {
    pub fn lk_params(&self) -> LkParams {
        LkParams {
            window_radius: self.window_radius,
            levels: self.levels,
            max_iters: self.max_iters,
            eps: self.eps,
            min_eigen: self.min_eigen,
        }
    }

    /// Detector settings; the border keeps every pyramid-level window inside
    /// the image so no budget is spent on corners that cannot be tracked.
    pub fn feature_params(&self) -> FeatureParams {
        let scale = 1u32 << self.levels.saturating_sub(1);
        FeatureParams {
            max_count: self.max_features,
            quality_ratio: self.quality_ratio,
            min_distance: self.min_distance,
            border: (self.window_radius + 1) * scale,
        }
    }
}

/// `[classify]`: moving/static decision and speed sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifySection {
    pub k_sigma: f64,
    pub grid_nx: usize,
    pub grid_ny: usize,
    /// Refit the magnitude model at every frame's FOE; otherwise the model
    /// from the first frame is reused.
    pub refit_per_frame: bool,
}

impl Default for ClassifySection {
    fn default() -> Self {
        Self {
            k_sigma: 2.5,
            grid_nx: 16,
            grid_ny: 16,
            refit_per_frame: true,
        }
    }
}

/// Full pipeline configuration, read from a TOML file with the sections
/// `[camera]`, `[lk]`, `[foe]`, `[sim]` and `[classify]`. Missing keys take
/// their defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub camera: CameraSection,
    pub lk: LkSection,
    pub foe: FoeParams,
    #[serde(with = "sim_section")]
    pub sim: SimulationConfig,
    pub classify: ClassifySection,
}

// The simulation height always follows `[camera] camera_height_m`, so it is
// left out of the `[sim]` table.
mod sim_section {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::synth::SimulationConfig;

    #[derive(Serialize, Deserialize)]
    #[serde(default, deny_unknown_fields)]
    struct Table {
        point_count: usize,
        reference_speed_kmh: f64,
        lateral_min: f64,
        lateral_max: f64,
        depth_min: f64,
        depth_max: f64,
        seed: u64,
    }

    impl Default for Table {
        fn default() -> Self {
            let d = SimulationConfig::default();
            Self {
                point_count: d.point_count,
                reference_speed_kmh: d.reference_speed_kmh,
                lateral_min: d.lateral_min,
                lateral_max: d.lateral_max,
                depth_min: d.depth_min,
                depth_max: d.depth_max,
                seed: d.seed,
            }
        }
    }

    pub fn serialize<S: Serializer>(c: &SimulationConfig, s: S) -> Result<S::Ok, S::Error> {
        Table {
            point_count: c.point_count,
            reference_speed_kmh: c.reference_speed_kmh,
            lateral_min: c.lateral_min,
            lateral_max: c.lateral_max,
            depth_min: c.depth_min,
            depth_max: c.depth_max,
            seed: c.seed,
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<SimulationConfig, D::Error> {
        let t = Table::deserialize(d)?;
        Ok(SimulationConfig {
            point_count: t.point_count,
            reference_speed_kmh: t.reference_speed_kmh,
            lateral_min: t.lateral_min,
            lateral_max: t.lateral_max,
            depth_min: t.depth_min,
            depth_max: t.depth_max,
            seed: t.seed,
            ..SimulationConfig::default()
        })
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        let mut cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.sim.camera_height = cfg.camera.camera_height_m;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        self.camera.intrinsics()
    }

    /// Checks every section; the first violation is reported.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let cfg_err = |m: String| Err(PipelineError::Config(m));
        self.intrinsics()
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        if !(self.camera.camera_height_m > 0.0) {
            return cfg_err(format!("camera_height_m must be > 0, got {}", self.camera.camera_height_m));
        }
        let mut sim = self.sim;
        sim.camera_height = self.camera.camera_height_m;
        sim.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        let lk = &self.lk;
        if lk.levels == 0 || lk.max_iters == 0 || lk.window_radius == 0 {
            return cfg_err("lk.levels, lk.max_iters and lk.window_radius must be >= 1".into());
        }
        if !(lk.eps > 0.0) || !(lk.min_eigen >= 0.0) {
            return cfg_err("lk.eps must be > 0 and lk.min_eigen >= 0".into());
        }
        if lk.max_features == 0 || !(lk.quality_ratio > 0.0 && lk.quality_ratio <= 1.0) {
            return cfg_err("lk.max_features must be >= 1 and lk.quality_ratio in (0, 1]".into());
        }
        if !(lk.min_distance >= 0.0) {
            return cfg_err("lk.min_distance must be >= 0".into());
        }
        if !(self.foe.percentile > 0.0 && self.foe.percentile <= 1.0) {
            return cfg_err(format!("foe.percentile must lie in (0, 1], got {}", self.foe.percentile));
        }
        let c = &self.classify;
        if !(c.k_sigma > 0.0) || c.grid_nx == 0 || c.grid_ny == 0 {
            return cfg_err("classify.k_sigma must be > 0 and grid dimensions >= 1".into());
        }
        Ok(())
    }
}
