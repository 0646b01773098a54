//! Kinematic walking pose: rigid segments swung sinusoidally in the
//! sagittal plane around a pelvis that follows the ground trajectory.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::motion::Trajectory;
use crate::skeleton::{JointId, NUM_JOINTS};

/// Segment lengths in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BodyModel {
    pub ankle_height: f64,
    pub shin: f64,
    pub thigh: f64,
    pub hip_half_width: f64,
    pub torso: f64,
    pub shoulder_half_width: f64,
    pub upper_arm: f64,
    pub forearm: f64,
    pub head: f64,
}

impl Default for BodyModel {
    fn default() -> Self {
        BodyModel {
            ankle_height: 0.08,
            shin: 0.43,
            thigh: 0.45,
            hip_half_width: 0.10,
            torso: 0.50,
            shoulder_half_width: 0.19,
            upper_arm: 0.30,
            forearm: 0.27,
            head: 0.22,
        }
    }
}

impl BodyModel {
    /// Nominal body scaled by a draw from `scale_range`, each segment
    /// perturbed by a further ±5%.
    pub fn sample<R: Rng + ?Sized>(scale_range: [f64; 2], rng: &mut R) -> Self {
        let s = if scale_range[0] < scale_range[1] { rng.random_range(scale_range[0]..scale_range[1]) } else { scale_range[0] };
        let mut jitter = |v: f64| v * s * rng.random_range(0.95..1.05);
        let n = BodyModel::default();
        BodyModel {
            ankle_height: jitter(n.ankle_height),
            shin: jitter(n.shin),
            thigh: jitter(n.thigh),
            hip_half_width: jitter(n.hip_half_width),
            torso: jitter(n.torso),
            shoulder_half_width: jitter(n.shoulder_half_width),
            upper_arm: jitter(n.upper_arm),
            forearm: jitter(n.forearm),
            head: jitter(n.head),
        }
    }

    pub fn standing_height(&self) -> f64 {
        self.ankle_height + self.shin + self.thigh + self.torso + 1.05 * self.head
    }
}

const HIP_SWING: f64 = 0.45;
const KNEE_FLEX: f64 = 0.6;
const ARM_SWING: f64 = 0.35;
const ELBOW_REST: f64 = 0.15;
const ELBOW_SWING: f64 = 0.25;
const TORSO_LEAN: f64 = 0.08;
const PELVIS_BOB: f64 = 0.02;
/// Amplitude cap for speeds above the nominal walking speed.
const MAX_AMPLITUDE: f64 = 1.5;

type V3 = [f64; 3];

fn axpy(a: V3, s: f64, d: V3) -> V3 {
    [a[0] + s * d[0], a[1] + s * d[1], a[2] + s * d[2]]
}

struct Frame {
    fwd: V3,
    up: V3,
    left: V3,
}

impl Frame {
    fn new(heading: f64) -> Self {
        let (s, c) = heading.sin_cos();
        Frame { fwd: [c, 0.0, s], up: [0.0, 1.0, 0.0], left: [s, 0.0, -c] }
    }

    /// Unit vector in the sagittal plane, `angle` from straight down
    /// toward the walking direction.
    fn hang(&self, angle: f64) -> V3 {
        let (s, c) = angle.sin_cos();
        [s * self.fwd[0], -c, s * self.fwd[2]]
    }

    fn local(&self, origin: V3, f: f64, u: f64, l: f64) -> V3 {
        axpy(axpy(axpy(origin, f, self.fwd), u, self.up), l, self.left)
    }
}

/// Joint positions for a pelvis ground position, facing `heading`, with
/// swing amplitude `amp` (0 = standing) at gait phase `phase`.
pub fn pose(body: &BodyModel, ground: [f64; 2], heading: f64, amp: f64, phase: f64) -> [V3; NUM_JOINTS] {
    let fr = Frame::new(heading);
    let bob = PELVIS_BOB * amp * 0.5 * (1.0 - (2.0 * phase).cos());
    let pelvis = [ground[0], body.ankle_height + body.shin + body.thigh - bob, ground[1]];
    let mut j = [[0.0; 3]; NUM_JOINTS];
    let mut put = |id: JointId, p: V3| j[id.index()] = p;

    put(JointId::CHip, pelvis);
    let lean = TORSO_LEAN * amp;
    let torso_dir = [lean.sin() * fr.fwd[0], lean.cos(), lean.sin() * fr.fwd[2]];
    let neck = axpy(pelvis, body.torso, torso_dir);
    put(JointId::Neck, neck);

    let leg = |side: f64, ph: f64| {
        let hip = axpy(pelvis, side * body.hip_half_width, fr.left);
        let theta = HIP_SWING * amp * ph.sin();
        let flex = KNEE_FLEX * amp * 0.5 * (1.0 + (ph + 1.2).sin());
        let knee = axpy(hip, body.thigh, fr.hang(theta));
        let ankle = axpy(knee, body.shin, fr.hang(theta - flex));
        (hip, knee, ankle)
    };
    let arm = |side: f64, ph: f64| {
        let shoulder = axpy(neck, side * body.shoulder_half_width, fr.left);
        let alpha = -ARM_SWING * amp * ph.sin();
        let bend = ELBOW_REST + ELBOW_SWING * amp * 0.5 * (1.0 - ph.sin());
        let elbow = axpy(shoulder, body.upper_arm, fr.hang(alpha));
        let wrist = axpy(elbow, body.forearm, fr.hang(alpha + bend));
        (shoulder, elbow, wrist)
    };

    let (lh, lk, la) = leg(1.0, phase);
    let (rh, rk, ra) = leg(-1.0, phase + PI);
    let (ls, le, lw) = arm(1.0, phase);
    let (rs, re, rw) = arm(-1.0, phase + PI);
    for (id, p) in [
        (JointId::LHip, lh),
        (JointId::LKnee, lk),
        (JointId::LAnkle, la),
        (JointId::RHip, rh),
        (JointId::RKnee, rk),
        (JointId::RAnkle, ra),
        (JointId::LShoulder, ls),
        (JointId::LElbow, le),
        (JointId::LWrist, lw),
        (JointId::RShoulder, rs),
        (JointId::RElbow, re),
        (JointId::RWrist, rw),
    ] {
        put(id, p);
    }

    // rigid head in the body frame
    let h = body.head;
    let nose = fr.local(neck, 0.45 * h, 0.9 * h, 0.0);
    put(JointId::Nose, nose);
    put(JointId::LEye, fr.local(nose, -0.1 * h, 0.15 * h, 0.2 * h));
    put(JointId::REye, fr.local(nose, -0.1 * h, 0.15 * h, -0.2 * h));
    put(JointId::LEar, fr.local(nose, -0.45 * h, 0.1 * h, 0.4 * h));
    put(JointId::REar, fr.local(nose, -0.45 * h, 0.1 * h, -0.4 * h));
    j
}

/// Pose at time `t` along a trajectory; swing amplitude follows the
/// current speed relative to the nominal walking speed.
pub fn gait_pose(traj: &Trajectory, walk_speed: f64, step_frequency: f64, body: &BodyModel, t: f64) -> [V3; NUM_JOINTS] {
    let (heading, speed) = traj.state(t);
    let amp = if walk_speed > 0.0 { (speed / walk_speed).clamp(0.0, MAX_AMPLITUDE) } else { 0.0 };
    let phase = 2.0 * PI * step_frequency * t;
    pose(body, traj.position(t), heading, amp, phase)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::SKELETON_EDGES;
    use proptest::prelude::*;

    fn dist(a: V3, b: V3) -> f64 {
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
    }

    #[test]
    fn standing_pose_is_static() {
        let b = BodyModel::default();
        let p0 = pose(&b, [4.0, 20.0], 1.0, 0.0, 0.0);
        for k in 1..50 {
            assert_eq!(pose(&b, [4.0, 20.0], 1.0, 0.0, k as f64 * 0.37), p0);
        }
        // feet on the ground, head on top
        assert!((p0[JointId::LAnkle.index()][1] - b.ankle_height).abs() < 1e-12);
        assert!(p0[JointId::Nose.index()][1] > p0[JointId::Neck.index()][1]);
    }

    proptest! {
        #[test]
        fn segment_lengths_are_constant(heading in -7.0..7.0f64, amp in 0.0..1.5f64, phase in -20.0..20.0f64) {
            let b = BodyModel::default();
            let rest = pose(&b, [0.0, 0.0], 0.0, 0.0, 0.0);
            let p = pose(&b, [3.0, -2.0], heading, amp, phase);
            for &(a, c) in SKELETON_EDGES.iter() {
                let (a, c) = (a.index(), c.index());
                prop_assert!((dist(p[a], p[c]) - dist(rest[a], rest[c])).abs() < 1e-9);
            }
        }

        #[test]
        fn ankles_are_phase_opposed(t in 0.0..10.0f64, heading in -3.2..3.2f64) {
            let f_step = 0.9;
            let traj = Trajectory::new([0.0, 0.0], &[super::super::motion::MotionKey::new(0.0, heading, 1.3)]);
            let b = BodyModel::default();
            let fwd = [heading.cos(), 0.0, heading.sin()];
            let offset = |p: &[V3; NUM_JOINTS], j: JointId| {
                let hip = p[JointId::CHip.index()];
                let a = p[j.index()];
                (a[0] - hip[0]) * fwd[0] + (a[2] - hip[2]) * fwd[2]
            };
            let now = gait_pose(&traj, 1.3, f_step, &b, t);
            let later = gait_pose(&traj, 1.3, f_step, &b, t + 0.5 / f_step);
            prop_assert!((offset(&later, JointId::LAnkle) - offset(&now, JointId::RAnkle)).abs() < 1e-9);
            prop_assert!((offset(&later, JointId::RAnkle) - offset(&now, JointId::LAnkle)).abs() < 1e-9);
        }
    }
}
