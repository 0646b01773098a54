//! Scripted pedestrian behaviours and their frame labels.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::camera::CameraSpec;
use super::gait::{gait_pose, BodyModel};
use super::motion::{MotionKey, Trajectory};
use crate::clip::Label;
use crate::error::{Error, Result};
use crate::skeleton::NUM_JOINTS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    PerpendicularCross,
    MidLaneAbort,
    WalkAlongSidewalk,
    StandStill,
    DiagonalCross,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 5] = [
        ScenarioKind::PerpendicularCross,
        ScenarioKind::MidLaneAbort,
        ScenarioKind::WalkAlongSidewalk,
        ScenarioKind::StandStill,
        ScenarioKind::DiagonalCross,
    ];
}

/// Flat world: the road is the band |x| <= road_half_width running along z,
/// with sidewalks of `sidewalk_width` on both sides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldSpec {
    pub road_half_width: f64,
    pub sidewalk_width: f64,
    pub camera: CameraSpec,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec { road_half_width: 3.5, sidewalk_width: 3.0, camera: CameraSpec::default() }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.road_half_width > 0.0) || !(self.sidewalk_width > 1.2) {
            return Err(Error::Config("road band and sidewalks must have positive width".into()));
        }
        if !(self.camera.height_m > 0.0) || !(self.camera.focal_px > 0.0) {
            return Err(Error::Config("camera height and focal length must be positive".into()));
        }
        Ok(())
    }

    pub fn in_road(&self, x: f64) -> bool {
        x.abs() <= self.road_half_width
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpan {
    pub first_frame: u64,
    pub last_frame: u64,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    /// Nominal walking speed (m/s); gait amplitude scales with speed over it.
    pub walk_speed: f64,
    /// Full gait cycles per second.
    pub step_frequency: f64,
    /// Pelvis ground position (x, z) at t = 0.
    pub start_position: [f64; 2],
    pub motion: Vec<MotionKey>,
    /// Onset of the crossing intention.
    pub commit_time: Option<f64>,
    pub abort_time: Option<f64>,
    pub duration: f64,
    pub fps: f64,
    /// Run-length form of the per-frame labels.
    #[serde(default)]
    pub label_timeline: Vec<LabelSpan>,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) || !(self.fps > 0.0) {
            return Err(Error::Config("scenario duration and fps must be positive".into()));
        }
        if self.motion.is_empty() || self.motion.windows(2).any(|w| w[0].time > w[1].time) {
            return Err(Error::Config("motion keys must be nonempty and sorted".into()));
        }
        if let (Some(a), c) = (self.abort_time, self.commit_time) {
            if c.is_none_or(|c| a <= c) {
                return Err(Error::Config("abort_time must follow commit_time".into()));
            }
        }
        Ok(())
    }

    pub fn trajectory(&self) -> Trajectory {
        Trajectory::new(self.start_position, &self.motion)
    }

    pub fn frame_count(&self) -> usize {
        (self.duration * self.fps).round() as usize
    }

    pub fn frame_time(&self, frame_index: u64) -> f64 {
        frame_index as f64 / self.fps
    }
}

/// Labels for every frame: C from the commit time until the pelvis leaves
/// the road band after having entered it, NC before, after, and from the
/// abort time onward.
pub fn label_sequence(world: &WorldSpec, spec: &ScenarioSpec) -> Vec<Label> {
    let traj = spec.trajectory();
    let mut entered = false;
    let mut exited = false;
    (0..spec.frame_count() as u64)
        .map(|f| {
            let t = spec.frame_time(f);
            let committed = spec.commit_time.is_some_and(|c| t >= c);
            let aborted = spec.abort_time.is_some_and(|a| t >= a);
            let inside = world.in_road(traj.position(t)[0]);
            if committed && inside {
                entered = true;
            }
            if entered && !inside {
                exited = true;
            }
            if committed && !aborted && !exited {
                Label::Cross
            } else {
                Label::NoCross
            }
        })
        .collect()
}

pub fn label_frame(world: &WorldSpec, spec: &ScenarioSpec, frame_index: u64) -> Option<Label> {
    label_sequence(world, spec).get(frame_index as usize).copied()
}

pub fn run_lengths(labels: &[Label]) -> Vec<LabelSpan> {
    let mut spans: Vec<LabelSpan> = Vec::new();
    for (f, &label) in labels.iter().enumerate() {
        match spans.last_mut() {
            Some(s) if s.label == label => s.last_frame = f as u64,
            _ => spans.push(LabelSpan { first_frame: f as u64, last_frame: f as u64, label }),
        }
    }
    spans
}

pub fn expand_spans(spans: &[LabelSpan]) -> Vec<Label> {
    spans
        .iter()
        .flat_map(|s| std::iter::repeat_n(s.label, (s.last_frame - s.first_frame + 1) as usize))
        .collect()
}

/// 3D joints at time `t` of the scenario.
pub fn synthesize_gait(spec: &ScenarioSpec, body: &BodyModel, t: f64) -> Result<[[f64; 3]; NUM_JOINTS]> {
    if !(0.0..=spec.duration).contains(&t) {
        return Err(Error::Generation(format!("t = {t} outside [0, {}]", spec.duration)));
    }
    Ok(gait_pose(&spec.trajectory(), spec.walk_speed, spec.step_frequency, body, t))
}

/// Ranges for the randomized scenario parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioRanges {
    pub duration: f64,
    pub fps: f64,
    pub speed: [f64; 2],
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo < hi {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn position_at(start: [f64; 2], keys: &[MotionKey], t: f64) -> [f64; 2] {
    Trajectory::new(start, keys).position(t)
}

/// Time at which straight motion from `key` (at `from`) reaches `target_x`.
fn reach_x(from: [f64; 2], key: MotionKey, target_x: f64) -> f64 {
    key.time + (target_x - from[0]) / (key.speed * key.heading.cos())
}

pub fn sample_scenario<R: Rng + ?Sized>(kind: ScenarioKind, ranges: &ScenarioRanges, world: &WorldSpec, rng: &mut R) -> ScenarioSpec {
    let d = ranges.duration;
    let road = world.road_half_width;
    let v = uniform(rng, ranges.speed[0], ranges.speed[1]);
    let step_frequency = v / uniform(rng, 1.3, 1.6);
    let start = [road + uniform(rng, 0.6, world.sidewalk_width - 0.6), 0.0];
    let along = |rng: &mut R| if rng.random::<bool>() { FRAC_PI_2 } else { -FRAC_PI_2 };
    let commit = uniform(rng, 1.5f64.min(0.25 * d), 6.0f64.min(0.45 * d));

    let mut commit_time = None;
    let mut abort_time = None;
    let motion = match kind {
        ScenarioKind::StandStill => {
            let h = if rng.random::<bool>() { PI + uniform(rng, -0.4, 0.4) } else { along(rng) + uniform(rng, -0.3, 0.3) };
            vec![MotionKey::new(0.0, h, 0.0)]
        }
        ScenarioKind::WalkAlongSidewalk => vec![MotionKey::new(0.0, along(rng), v)],
        ScenarioKind::PerpendicularCross | ScenarioKind::DiagonalCross | ScenarioKind::MidLaneAbort => {
            let (h0, s0) = if rng.random::<bool>() { (PI + uniform(rng, -0.3, 0.3), 0.0) } else { (along(rng), v) };
            let base = if h0 >= 0.0 { PI } else { -PI };
            let h_cross = match kind {
                ScenarioKind::DiagonalCross => base + uniform(rng, 0.35, 0.6) * if rng.random::<bool>() { 1.0 } else { -1.0 },
                _ => base,
            };
            let turn = uniform(rng, 0.3, 0.4);
            let mut keys = vec![
                MotionKey::new(0.0, h0, s0),
                MotionKey::new(commit, h0, s0),
                MotionKey::new(commit + turn, h_cross, v),
            ];
            commit_time = Some(commit);
            let cross_key = keys[2];
            let p = position_at(start, &keys, cross_key.time);
            if kind == ScenarioKind::MidLaneAbort {
                let t_abort = reach_x(p, cross_key, uniform(rng, -1.5, 2.0));
                let h_back = base + if rng.random::<bool>() { PI } else { -PI };
                keys.push(MotionKey::new(t_abort, h_cross, v));
                keys.push(MotionKey::new(t_abort + uniform(rng, 0.5, 0.8), h_back, v));
                let back_key = keys[keys.len() - 1];
                let q = position_at(start, &keys, back_key.time);
                let t_back = reach_x(q, back_key, road + uniform(rng, 0.6, 1.5));
                keys.push(MotionKey::new(t_back, h_back, v));
                keys.push(MotionKey::new(t_back + 0.6, h_back, 0.0));
                abort_time = Some(t_abort);
            } else {
                let t_exit = reach_x(p, cross_key, -road - uniform(rng, 0.6, 1.5));
                let h_along = base + if rng.random::<bool>() { FRAC_PI_2 } else { -FRAC_PI_2 };
                keys.push(MotionKey::new(t_exit, h_cross, v));
                keys.push(MotionKey::new(t_exit + uniform(rng, 0.3, 0.4), h_along, v));
            }
            keys
        }
    };
    let mut spec = ScenarioSpec {
        kind,
        walk_speed: v,
        step_frequency,
        start_position: start,
        motion,
        commit_time,
        abort_time,
        duration: d,
        fps: ranges.fps,
        label_timeline: Vec::new(),
    };
    spec.label_timeline = run_lengths(&label_sequence(world, &spec));
    spec
}
