//! Pinhole camera geometry for a forward-translating camera.
//!
//! Camera frame convention: `z` points forward along the optical axis, `x` to
//! the right and `y` downward, so that image `u` grows with `x` and image `v`
//! grows with `y`. The road is the plane `y = camera_height` in this frame.
//!
//! ```text
//! u = fx · x/z + cx
//! v = fy · y/z + cy
//! ```
//!
//! Under pure translation every static point flows radially away from the
//! Focus of Expansion, the projection of the translation direction.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::FlowVector;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CameraError {
    #[error("point has non-positive depth z = {0}")]
    NonPositiveDepth(f64),
    #[error("pixel row v = {v} is at or above the horizon row cy = {cy}")]
    AboveHorizon { v: f64, cy: f64 },
    #[error("translation has non-positive forward component t.z = {0}")]
    NonForwardTranslation(f64),
    #[error("depth {depth} m is not beyond the per-frame travel {travel} m")]
    DegenerateDepth { depth: f64, travel: f64 },
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
}

/// Pinhole intrinsics plus sensor geometry and frame rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub fps: f64,
}

impl Default for CameraIntrinsics {
    /// 1280×1024 at 20 fps with the principal point at the image center.
    fn default() -> Self {
        Self {
            fx: 1000.0,
            fy: 1000.0,
            cx: 640.0,
            cy: 512.0,
            width: 1280,
            height: 1024,
            fps: 20.0,
        }
    }
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        fps: f64,
    ) -> Result<Self, CameraError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            fps,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        let bad = |msg: String| Err(CameraError::InvalidIntrinsics(msg));
        if !(self.fx.is_finite() && self.fx > 0.0) {
            return bad(format!("fx must be > 0, got {}", self.fx));
        }
        if !(self.fy.is_finite() && self.fy > 0.0) {
            return bad(format!("fy must be > 0, got {}", self.fy));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return bad(format!("cx must lie in [0, {}), got {}", self.width, self.cx));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return bad(format!("cy must lie in [0, {}), got {}", self.height, self.cy));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return bad(format!("fps must be > 0, got {}", self.fps));
        }
        Ok(())
    }

    /// Inter-frame interval in seconds.
    pub fn frame_interval(&self) -> f64 {
        1.0 / self.fps
    }

    pub fn contains(&self, p: PixelPoint) -> bool {
        p.u >= 0.0 && p.v >= 0.0 && p.u < self.width as f64 && p.v < self.height as f64
    }
}

/// Camera-frame coordinates in meters (also used for direction vectors).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn sub(&self, o: &Point3) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }

    pub fn add(&self, o: &Point3) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

/// Continuous image coordinates in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
}

impl PixelPoint {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn distance(&self, o: &PixelPoint) -> f64 {
        (self.u - o.u).hypot(self.v - o.v)
    }
}

pub fn project(p: &Point3, k: &CameraIntrinsics) -> Result<PixelPoint, CameraError> {
    if !(p.z > 0.0) {
        return Err(CameraError::NonPositiveDepth(p.z));
    }
    Ok(PixelPoint::new(
        k.fx * p.x / p.z + k.cx,
        k.fy * p.y / p.z + k.cy,
    ))
}

/// Intersects the viewing ray of `pt` with the ground plane `y = camera_height`.
pub fn ground_plane_backproject(
    pt: &PixelPoint,
    k: &CameraIntrinsics,
    camera_height: f64,
) -> Result<Point3, CameraError> {
    let dv = pt.v - k.cy;
    if !(dv > 0.0) {
        return Err(CameraError::AboveHorizon { v: pt.v, cy: k.cy });
    }
    let z = k.fy * camera_height / dv;
    let x = (pt.u - k.cx) * z / k.fx;
    Ok(Point3::new(x, camera_height, z))
}

/// Unit translation direction whose projection is `foe`.
pub fn translation_from_foe(foe: &PixelPoint, k: &CameraIntrinsics) -> Point3 {
    let ray = Point3::new((foe.u - k.cx) / k.fx, (foe.v - k.cy) / k.fy, 1.0);
    ray.scale(1.0 / ray.norm())
}

pub fn foe_from_translation(t: &Point3, k: &CameraIntrinsics) -> Result<PixelPoint, CameraError> {
    if !(t.z > 0.0) {
        return Err(CameraError::NonForwardTranslation(t.z));
    }
    Ok(PixelPoint::new(
        k.fx * t.x / t.z + k.cx,
        k.fy * t.y / t.z + k.cy,
    ))
}

/// Radial flow of a static point at depth `depth_z` when the camera advances
/// `speed · dt` meters along its forward axis during one frame.
///
/// `speed` is in m/s and `dt` in seconds. The displacement is
/// `(pt − foe) · travel / (depth_z − travel)`.
pub fn expected_flow(
    pt: &PixelPoint,
    depth_z: f64,
    speed: f64,
    dt: f64,
    foe: &PixelPoint,
) -> Result<FlowVector, CameraError> {
    let travel = speed * dt;
    if !(depth_z > travel) {
        return Err(CameraError::DegenerateDepth {
            depth: depth_z,
            travel,
        });
    }
    let gain = travel / (depth_z - travel);
    Ok(FlowVector::new(
        *pt,
        (pt.u - foe.u) * gain,
        (pt.v - foe.v) * gain,
    ))
}

/// Converts km/h to m/s.
pub fn kmh_to_mps(kmh: f64) -> f64 {
    kmh / 3.6
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn k800() -> CameraIntrinsics {
        CameraIntrinsics::new(800.0, 800.0, 640.0, 512.0, 1280, 1024, 20.0).unwrap()
    }

    #[test]
    fn projects_on_axis_point_to_principal_point() {
        let p = project(&Point3::new(0.0, 0.0, 10.0), &k800()).unwrap();
        assert_eq!(p, PixelPoint::new(640.0, 512.0));
        let p = project(&Point3::new(1.0, 0.0, 10.0), &k800()).unwrap();
        assert_relative_eq!(p.u, 720.0, epsilon = 1e-12);
        assert_relative_eq!(p.v, 512.0, epsilon = 1e-12);
    }

    #[test]
    fn projects_general_point() {
        // u = 900·0.5/12 + 368 = 405.5, v = 905·1.8/12 + 216 = 351.75
        let k = CameraIntrinsics::new(900.0, 905.0, 368.0, 216.0, 1280, 1024, 20.0).unwrap();
        let p = project(&Point3::new(0.5, 1.8, 12.0), &k).unwrap();
        assert_relative_eq!(p.u, 405.5, epsilon = 1e-12);
        assert_relative_eq!(p.v, 351.75, epsilon = 1e-12);
    }

    #[test]
    fn project_rejects_points_behind_camera() {
        assert_eq!(
            project(&Point3::new(1.0, 1.0, 0.0), &k800()),
            Err(CameraError::NonPositiveDepth(0.0))
        );
        assert!(project(&Point3::new(1.0, 1.0, -3.0), &k800()).is_err());
    }

    #[test]
    fn backprojects_one_focal_length_below_horizon() {
        let k = k800();
        let p = ground_plane_backproject(&PixelPoint::new(k.cx, k.cy + k.fy), &k, 2.0).unwrap();
        assert_relative_eq!(p.x, 0.0, epsilon = 1e-12);
        assert_relative_eq!(p.y, 2.0, epsilon = 1e-12);
        assert_relative_eq!(p.z, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn backprojects_off_axis_pixel() {
        // z = 800·2/188, x = (500 − 640)·z/800
        let k = k800();
        let p = ground_plane_backproject(&PixelPoint::new(500.0, 700.0), &k, 2.0).unwrap();
        assert_relative_eq!(p.z, 8.510_638_297_872_34, epsilon = 1e-12);
        assert_relative_eq!(p.x, -1.489_361_702_127_659_6, epsilon = 1e-12);
        let back = project(&p, &k).unwrap();
        assert_relative_eq!(back.u, 500.0, epsilon = 1e-9);
        assert_relative_eq!(back.v, 700.0, epsilon = 1e-9);
    }

    #[test]
    fn horizon_row_has_no_ground_intersection() {
        let k = k800();
        assert!(matches!(
            ground_plane_backproject(&PixelPoint::new(k.cx, k.cy), &k, 2.0),
            Err(CameraError::AboveHorizon { .. })
        ));
    }

    #[test]
    fn forward_translation_maps_to_principal_point() {
        let k = k800();
        let f = foe_from_translation(&Point3::new(0.0, 0.0, 1.0), &k).unwrap();
        assert_eq!(f, PixelPoint::new(k.cx, k.cy));
        assert!(matches!(
            foe_from_translation(&Point3::new(1.0, 0.0, 0.0), &k),
            Err(CameraError::NonForwardTranslation(_))
        ));
    }

    #[test]
    fn foe_at_reference_location() {
        let k = CameraIntrinsics::new(1000.0, 1000.0, 368.0, 216.0, 1280, 1024, 20.0).unwrap();
        let f = foe_from_translation(&Point3::new(0.0, 0.0, 1.0), &k).unwrap();
        assert_eq!(f, PixelPoint::new(368.0, 216.0));
        // Off-center principal point, oblique heading.
        let k = CameraIntrinsics::default();
        let t = translation_from_foe(&PixelPoint::new(368.0, 216.0), &k);
        let f = foe_from_translation(&t, &k).unwrap();
        assert_relative_eq!(f.u, 368.0, epsilon = 1e-9);
        assert_relative_eq!(f.v, 216.0, epsilon = 1e-9);
    }

    #[test]
    fn rejects_invalid_intrinsics() {
        assert!(CameraIntrinsics::new(0.0, 800.0, 10.0, 10.0, 100, 100, 20.0).is_err());
        assert!(CameraIntrinsics::new(800.0, 800.0, 100.0, 10.0, 100, 100, 20.0).is_err());
        assert!(CameraIntrinsics::new(800.0, 800.0, 10.0, -1.0, 100, 100, 20.0).is_err());
        assert!(CameraIntrinsics::new(800.0, 800.0, 10.0, 10.0, 100, 100, 0.0).is_err());
    }

    #[test]
    fn flow_vanishes_at_the_foe() {
        let foe = PixelPoint::new(368.0, 216.0);
        let f = expected_flow(&foe, 20.0, 13.89, 0.05, &foe).unwrap();
        assert_eq!(f.magnitude, 0.0);
    }

    #[test]
    fn flow_rejects_points_passed_within_one_frame() {
        let foe = PixelPoint::new(0.0, 0.0);
        let r = expected_flow(&PixelPoint::new(5.0, 5.0), 0.5, 20.0, 0.05, &foe);
        assert!(matches!(r, Err(CameraError::DegenerateDepth { .. })));
    }

    #[test]
    fn flow_doubles_with_speed_in_far_field() {
        let foe = PixelPoint::new(368.0, 216.0);
        let pt = PixelPoint::new(768.0, 416.0);
        let a = expected_flow(&pt, 200.0, 13.89, 0.05, &foe).unwrap();
        let b = expected_flow(&pt, 200.0, 2.0 * 13.89, 0.05, &foe).unwrap();
        assert_relative_eq!(b.magnitude / a.magnitude, 2.0, max_relative = 0.01);
    }

    #[test]
    fn flow_matches_two_frame_projection() {
        // Pure translation along +z with the FOE at the principal point.
        let k = CameraIntrinsics::new(1000.0, 1000.0, 368.0, 216.0, 1280, 1024, 20.0).unwrap();
        let foe = PixelPoint::new(368.0, 216.0);
        let pt = PixelPoint::new(768.0, 416.0);
        let z = 20.0;
        let p = Point3::new((pt.u - k.cx) * z / k.fx, (pt.v - k.cy) * z / k.fy, z);
        let travel = 13.89 * 0.05;
        let moved = project(&Point3::new(p.x, p.y, p.z - travel), &k).unwrap();
        let oracle = moved.distance(&pt);
        let f = expected_flow(&pt, z, 13.89, 0.05, &foe).unwrap();
        assert_relative_eq!(f.magnitude, oracle, max_relative = 1e-12);
        assert_relative_eq!(f.magnitude, 16.088_153_224_455_25, max_relative = 1e-9);
    }

    proptest! {
        #[test]
        fn backprojection_round_trips(u in 0.0..1280.0f64, v in 512.5..1024.0f64, h in 0.5..4.0f64) {
            let k = CameraIntrinsics::default();
            let g = ground_plane_backproject(&PixelPoint::new(u, v), &k, h).unwrap();
            prop_assert!((g.y - h).abs() < 1e-12);
            let p = project(&g, &k).unwrap();
            prop_assert!((p.u - u).abs() < 1e-9 && (p.v - v).abs() < 1e-9);
        }

        #[test]
        fn foe_translation_pair_inverts(u in 0.0..1280.0f64, v in 0.0..1024.0f64) {
            let k = CameraIntrinsics::default();
            let f = PixelPoint::new(u, v);
            let back = foe_from_translation(&translation_from_foe(&f, &k), &k).unwrap();
            prop_assert!((back.u - u).abs() < 1e-9 && (back.v - v).abs() < 1e-9);
        }

        #[test]
        fn expected_flow_is_radial(u in 0.0..1280.0f64, v in 0.0..1024.0f64, z in 5.0..80.0f64) {
            let foe = PixelPoint::new(368.0, 216.0);
            let pt = PixelPoint::new(u, v);
            let f = expected_flow(&pt, z, 13.89, 0.05, &foe).unwrap();
            let (ru, rv) = (u - foe.u, v - foe.v);
            let cross = f.displacement[0] * rv - f.displacement[1] * ru;
            let scale = f.magnitude * ru.hypot(rv);
            prop_assert!(cross.abs() <= 1e-9 * scale.max(1e-300));
            prop_assert!(f.displacement[0] * ru + f.displacement[1] * rv >= 0.0);
        }
    }
}
