//! Synthetic ground-plane flow used to train the magnitude model.
//!
//! Points are scattered uniformly over a rectangle of road ahead of the
//! camera, translated along the direction implied by the current FOE, and
//! projected twice. Magnitudes use the symmetric pair of projections at
//! `t − dt/2` and `t + dt/2` about the sample position at `t`, so that the
//! field is linear in speed up to second-order terms in `travel / depth`.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{kmh_to_mps, project, translation_from_foe, CameraIntrinsics, PixelPoint, Point3};
use crate::flow::FlowVector;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid {name} range [{min}, {max}]")]
    InvalidRange { name: &'static str, min: f64, max: f64 },
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub point_count: usize,
    pub reference_speed_kmh: f64,
    pub camera_height: f64,
    pub lateral_min: f64,
    pub lateral_max: f64,
    pub depth_min: f64,
    pub depth_max: f64,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            point_count: 2000,
            reference_speed_kmh: 50.0,
            camera_height: 2.0,
            lateral_min: -10.0,
            lateral_max: 10.0,
            depth_min: 5.0,
            depth_max: 80.0,
            seed: 7,
        }
    }
}

impl SimulationConfig {
    /// A range with `min == max` is allowed and samples that single value.
    pub fn validate(&self) -> Result<(), SimError> {
        if self.point_count == 0 {
            return Err(SimError::InvalidConfig("point_count must be >= 1".into()));
        }
        if !(self.reference_speed_kmh > 0.0) {
            return Err(SimError::InvalidConfig("reference_speed_kmh must be > 0".into()));
        }
        if !(self.camera_height > 0.0) {
            return Err(SimError::InvalidConfig("camera_height must be > 0".into()));
        }
        if !(self.lateral_min <= self.lateral_max) {
            return Err(SimError::InvalidRange {
                name: "lateral",
                min: self.lateral_min,
                max: self.lateral_max,
            });
        }
        if !(self.depth_min <= self.depth_max) || !(self.depth_min > 0.0) {
            return Err(SimError::InvalidRange {
                name: "depth",
                min: self.depth_min,
                max: self.depth_max,
            });
        }
        Ok(())
    }
}

/// One training sample: position `(x1, x2)` in pixels and flow magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSample {
    pub x1: f64,
    pub x2: f64,
    pub magnitude: f64,
    pub displacement: [f64; 2],
    /// Depth of the source point at the sample instant, meters.
    pub depth: f64,
    /// Index of the source point in the simulated point list.
    pub point_index: usize,
}

impl SyntheticSample {
    /// The sample as a tracked vector from its earlier to its later position.
    pub fn to_flow_vector(&self) -> FlowVector {
        let [du, dv] = self.displacement;
        FlowVector::new(PixelPoint::new(self.x1 - 0.5 * du, self.x2 - 0.5 * dv), du, dv)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticField {
    pub samples: Vec<SyntheticSample>,
    /// Points dropped for leaving the frame or crossing behind the camera.
    pub dropped: usize,
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Ground points `(x, camera_height, z)` with `x` and `z` uniform over the
/// configured ranges.
pub fn simulate_ground_points(cfg: &SimulationConfig) -> Result<Vec<Point3>, SimError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok((0..cfg.point_count)
        .map(|_| {
            let x = uniform(&mut rng, cfg.lateral_min, cfg.lateral_max);
            let z = uniform(&mut rng, cfg.depth_min, cfg.depth_max);
            Point3::new(x, cfg.camera_height, z)
        })
        .collect())
}

/// Renders the flow each static point would show at `speed_kmh` with the
/// camera heading toward `foe`.
pub fn render_flow_field(
    points: &[Point3],
    k: &CameraIntrinsics,
    foe: &PixelPoint,
    speed_kmh: f64,
    dt: f64,
) -> SyntheticField {
    let travel = translation_from_foe(foe, k).scale(kmh_to_mps(speed_kmh) * dt);
    let half = travel.scale(0.5);
    let mut samples = Vec::with_capacity(points.len());
    let mut dropped = 0;
    for (point_index, p) in points.iter().enumerate() {
        let earlier = p.add(&half);
        let later = p.sub(&half);
        let proj = |q: &Point3| project(q, k).ok().filter(|px| k.contains(*px));
        match (proj(p), proj(&earlier), proj(&later)) {
            (Some(at), Some(a), Some(b)) => {
                let du = b.u - a.u;
                let dv = b.v - a.v;
                samples.push(SyntheticSample {
                    x1: at.u,
                    x2: at.v,
                    magnitude: du.hypot(dv),
                    displacement: [du, dv],
                    depth: p.z,
                    point_index,
                });
            }
            _ => dropped += 1,
        }
    }
    SyntheticField { samples, dropped }
}

/// Writes `x1,x2,magnitude` rows with a header line.
pub fn write_csv<W: Write>(samples: &[SyntheticSample], mut out: W) -> std::io::Result<()> {
    writeln!(out, "x1,x2,magnitude")?;
    for s in samples {
        writeln!(out, "{},{},{}", s.x1, s.x2, s.magnitude)?;
    }
    Ok(())
}
