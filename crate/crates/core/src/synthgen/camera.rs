//! Pinhole camera on a forward-moving ego vehicle and the sensor noise
//! model applied to projected joints.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::skeleton::{Joint, NUM_JOINTS};

/// Points closer than this along the optical axis count as behind the camera.
pub const NEAR_PLANE: f64 = 0.05;
/// Projected coordinates are snapped to this grid (pixels).
pub const SUBPIXEL: f64 = 1.0 / 256.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraSpec {
    pub focal_px: f64,
    /// Mount height above the ground plane.
    pub height_m: f64,
    /// Downward tilt of the optical axis.
    pub pitch_rad: f64,
    /// Lateral position of the ego vehicle (road centre is x = 0).
    pub lateral_m: f64,
}

impl Default for CameraSpec {
    fn default() -> Self {
        CameraSpec { focal_px: 1200.0, height_m: 1.5, pitch_rad: 0.0, lateral_m: 1.75 }
    }
}

/// Per-clip camera motion: position along the road at t = 0 and speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoMotion {
    pub start_z: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub focal_px: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn centered(focal_px: f64, width: u32, height: u32) -> Self {
        Intrinsics { focal_px, cx: width as f64 / 2.0, cy: height as f64 / 2.0 }
    }
}

/// Camera-frame coordinates (right, up, forward) of a world point.
pub fn to_camera(cam: &CameraSpec, ego: &EgoMotion, t: f64, p: [f64; 3]) -> [f64; 3] {
    let d = [p[0] - cam.lateral_m, p[1] - cam.height_m, p[2] - (ego.start_z + ego.speed * t)];
    if cam.pitch_rad == 0.0 {
        return d;
    }
    let (s, c) = cam.pitch_rad.sin_cos();
    [d[0], d[1] * c + d[2] * s, -d[1] * s + d[2] * c]
}

/// Pinhole projection of a camera-frame point; `None` behind the camera.
pub fn project_point(k: &Intrinsics, pc: [f64; 3]) -> Option<[f64; 2]> {
    if pc[2] <= NEAR_PLANE {
        return None;
    }
    Some([k.cx + k.focal_px * pc[0] / pc[2], k.cy - k.focal_px * pc[1] / pc[2]])
}

pub fn quantize(v: f64) -> f64 {
    (v / SUBPIXEL).round() * SUBPIXEL
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    /// Standard deviation of the per-axis Gaussian jitter.
    pub jitter_px: f64,
    /// Jitter magnitude at which confidence reaches 0.
    pub confidence_cap_px: f64,
    pub dropout_prob: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel { jitter_px: 0.5, confidence_cap_px: 3.0, dropout_prob: 0.01 }
    }
}

impl NoiseModel {
    pub const NONE: NoiseModel = NoiseModel { jitter_px: 0.0, confidence_cap_px: 1.0, dropout_prob: 0.0 };

    pub fn is_disabled(&self) -> bool {
        self.jitter_px == 0.0 && self.dropout_prob == 0.0
    }
}

/// Projects all joints. Joints behind the camera sit at the principal
/// point with zero confidence; the rest get jitter and dropout, then are
/// snapped to the sub-pixel grid. Returns `None` for a joint's pixel
/// position when it was behind the camera.
pub fn project_joints<R: Rng + ?Sized>(
    cam: &CameraSpec,
    k: &Intrinsics,
    ego: &EgoMotion,
    t: f64,
    joints3d: &[[f64; 3]; NUM_JOINTS],
    noise: &NoiseModel,
    rng: &mut R,
) -> [Joint; NUM_JOINTS] {
    let jitter = Normal::new(0.0, noise.jitter_px.max(0.0)).expect("finite jitter");
    let mut out = [Joint::default(); NUM_JOINTS];
    for (o, p) in out.iter_mut().zip(joints3d) {
        // draws happen for every joint so the stream does not depend on visibility
        let (jx, jy) = if noise.jitter_px > 0.0 { (jitter.sample(rng), jitter.sample(rng)) } else { (0.0, 0.0) };
        let dropped = noise.dropout_prob > 0.0 && rng.random::<f64>() < noise.dropout_prob;
        *o = match project_point(k, to_camera(cam, ego, t, *p)) {
            None => Joint::new(k.cx, k.cy, 0.0),
            Some([u, v]) => {
                let mag = (jx * jx + jy * jy).sqrt();
                let c = if dropped { 0.0 } else { (1.0 - mag / noise.confidence_cap_px).max(0.0) };
                Joint::new(quantize(u + jx), quantize(v + jy), c)
            }
        };
    }
    out
}
