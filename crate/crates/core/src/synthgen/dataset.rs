//! Clip rendering, visibility filtering and dataset assembly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::camera::{project_joints, to_camera, EgoMotion, Intrinsics, NoiseModel, NEAR_PLANE};
use super::gait::BodyModel;
use super::scenario::{label_sequence, sample_scenario, ScenarioKind, ScenarioRanges, ScenarioSpec, WorldSpec};
use crate::clip::{write_clip_file, ClipFrame, ClipRecord, LabelCounts, PedestrianObservation};
use crate::error::{Error, Result};
use crate::rng;
use crate::skeleton::RawSkeletonFrame;

/// Pedestrian id used for the single scripted walker of each clip.
pub const PEDESTRIAN_ID: u64 = 1;
/// Bounding boxes shorter than this (pixels) count as too small.
pub const MIN_HEIGHT_PX: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub clip_count: usize,
    pub clip_duration_s: f64,
    pub fps: f64,
    pub width: u32,
    pub height: u32,
    /// Overall body scale drawn per clip.
    pub body_scale_range: [f64; 2],
    pub speed_range: [f64; 2],
    pub ego_speed_range: [f64; 2],
    /// Closest approach between camera and pedestrian along the road.
    pub min_depth_range: [f64; 2],
    pub noise: NoiseModel,
    pub seed: u64,
    pub retry_limit: usize,
    /// Relative weights of the scenario kinds.
    pub scenario_mix: BTreeMap<ScenarioKind, f64>,
    pub world: WorldSpec,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            clip_count: 10,
            clip_duration_s: 20.0,
            fps: 30.0,
            width: 1600,
            height: 600,
            body_scale_range: [0.9, 1.1],
            speed_range: [1.0, 1.8],
            ego_speed_range: [0.0, 1.0],
            min_depth_range: [15.0, 25.0],
            noise: NoiseModel::default(),
            seed: 0,
            retry_limit: 20,
            scenario_mix: [
                (ScenarioKind::PerpendicularCross, 0.3),
                (ScenarioKind::DiagonalCross, 0.15),
                (ScenarioKind::MidLaneAbort, 0.15),
                (ScenarioKind::WalkAlongSidewalk, 0.2),
                (ScenarioKind::StandStill, 0.2),
            ]
            .into_iter()
            .collect(),
            world: WorldSpec::default(),
        }
    }
}

fn check_range(name: &str, r: [f64; 2], min: f64) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] >= min && r[0] <= r[1]) {
        return Err(Error::Config(format!("{name} must be an ordered range with lower bound >= {min}, got {r:?}")));
    }
    Ok(())
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clip_count == 0 {
            return Err(Error::Config("clip_count must be at least 1".into()));
        }
        if !(self.fps > 0.0) || !(self.clip_duration_s > 0.0) {
            return Err(Error::Config("fps and clip_duration_s must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("image size must be nonzero".into()));
        }
        if self.retry_limit == 0 {
            return Err(Error::Config("retry_limit must be at least 1".into()));
        }
        check_range("body_scale_range", self.body_scale_range, 0.1)?;
        check_range("speed_range", self.speed_range, 0.1)?;
        check_range("ego_speed_range", self.ego_speed_range, 0.0)?;
        check_range("min_depth_range", self.min_depth_range, 1.0)?;
        let n = &self.noise;
        if !(n.jitter_px >= 0.0 && n.confidence_cap_px > 0.0 && (0.0..=1.0).contains(&n.dropout_prob)) {
            return Err(Error::Config("noise parameters out of range".into()));
        }
        if self.scenario_mix.values().any(|w| !(w.is_finite() && *w >= 0.0)) || self.scenario_mix.values().sum::<f64>() <= 0.0 {
            return Err(Error::Config("scenario_mix needs nonnegative weights with a positive sum".into()));
        }
        self.world.validate()
    }

    pub fn frames_per_clip(&self) -> usize {
        (self.clip_duration_s * self.fps).round() as usize
    }

    fn pick_kind<R: Rng + ?Sized>(&self, rng: &mut R) -> ScenarioKind {
        let total: f64 = self.scenario_mix.values().sum();
        let mut u = rng.random::<f64>() * total;
        for (&k, &w) in &self.scenario_mix {
            if u < w {
                return k;
            }
            u -= w;
        }
        *self.scenario_mix.iter().rev().find(|(_, w)| **w > 0.0).expect("positive weight").0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    OffScreen,
    TooSmall,
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RejectReason::OffScreen => "off_screen",
            RejectReason::TooSmall => "too_small",
        })
    }
}

struct BBox {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
}

impl BBox {
    fn overlaps(&self, w: f64, h: f64) -> bool {
        self.x1 >= 0.0 && self.y1 >= 0.0 && self.x0 <= w && self.y0 <= h
    }

    fn height(&self) -> f64 {
        self.y1 - self.y0
    }
}

fn bbox(points: impl Iterator<Item = (f64, f64)>) -> BBox {
    points.fold(
        BBox { x0: f64::INFINITY, y0: f64::INFINITY, x1: f64::NEG_INFINITY, y1: f64::NEG_INFINITY },
        |b, (x, y)| BBox { x0: b.x0.min(x), y0: b.y0.min(y), x1: b.x1.max(x), y1: b.y1.max(y) },
    )
}

/// Rejects a clip whose pedestrian is absent or entirely outside the image
/// in more than half the frames, or shorter than 20 px in more than half.
pub fn validate_clip(clip: &ClipRecord) -> std::result::Result<(), RejectReason> {
    let n = clip.frames.len();
    let (w, h) = (clip.width as f64, clip.height as f64);
    let mut off = 0usize;
    let mut small = 0usize;
    for frame in &clip.frames {
        let Some(ped) = frame.pedestrians.first() else {
            off += 1;
            continue;
        };
        let b = bbox(ped.joints.iter().map(|&[x, y, _]| (x, y)));
        if !b.overlaps(w, h) {
            off += 1;
        } else if b.height() < MIN_HEIGHT_PX {
            small += 1;
        }
    }
    if n == 0 || 2 * off > n {
        Err(RejectReason::OffScreen)
    } else if 2 * small > n {
        Err(RejectReason::TooSmall)
    } else {
        Ok(())
    }
}

/// Everything needed to re-render one clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipScript {
    pub scenario: ScenarioSpec,
    pub body: BodyModel,
    pub ego: EgoMotion,
}

/// Draws the scenario, body and camera placement for attempt `attempt`.
pub fn sample_script(config: &GeneratorConfig, attempt: u64) -> ClipScript {
    let mut r = rng::stream(config.seed, "scenario", attempt);
    let kind = config.pick_kind(&mut r);
    let ranges = ScenarioRanges { duration: config.clip_duration_s, fps: config.fps, speed: config.speed_range };
    let scenario = sample_scenario(kind, &ranges, &config.world, &mut r);
    let body = BodyModel::sample(config.body_scale_range, &mut r);
    let [e0, e1] = config.ego_speed_range;
    let speed = if e0 < e1 { r.random_range(e0..e1) } else { e0 };
    let [d0, d1] = config.min_depth_range;
    let min_depth = if d0 < d1 { r.random_range(d0..d1) } else { d0 };
    // place the camera so the closest approach over the clip is min_depth
    let traj = scenario.trajectory();
    let closest = (0..scenario.frame_count() as u64)
        .map(|f| {
            let t = scenario.frame_time(f);
            traj.position(t)[1] - speed * t
        })
        .fold(f64::INFINITY, f64::min);
    ClipScript { scenario, body, ego: EgoMotion { start_z: closest - min_depth, speed } }
}

/// Renders a script to a clip. The pedestrian is emitted in frames where
/// every joint is in front of the camera and the bounding box overlaps the
/// image.
pub fn render_clip(config: &GeneratorConfig, script: &ClipScript, clip_id: String, noise_stream: u64) -> Result<ClipRecord> {
    let spec = &script.scenario;
    spec.validate()?;
    let cam = &config.world.camera;
    let k = Intrinsics::centered(cam.focal_px, config.width, config.height);
    let labels = label_sequence(&config.world, spec);
    let traj = spec.trajectory();
    let mut noise_rng = rng::stream(config.seed, "noise", noise_stream);
    let mut frames = Vec::with_capacity(labels.len());
    for (f, &label) in labels.iter().enumerate() {
        let t = spec.frame_time(f as u64);
        let joints3d = super::gait::gait_pose(&traj, spec.walk_speed, spec.step_frequency, &script.body, t);
        let joints = project_joints(cam, &k, &script.ego, t, &joints3d, &config.noise, &mut noise_rng);
        let in_front = joints3d.iter().all(|p| to_camera(cam, &script.ego, t, *p)[2] > NEAR_PLANE);
        let overlaps = bbox(joints.iter().map(|j| (j.x, j.y))).overlaps(config.width as f64, config.height as f64);
        let mut pedestrians = Vec::new();
        if in_front && overlaps {
            let raw = RawSkeletonFrame { frame_index: f as u64, pedestrian_id: PEDESTRIAN_ID, joints };
            raw.validate()?;
            pedestrians.push(PedestrianObservation {
                pedestrian_id: PEDESTRIAN_ID,
                label: Some(label),
                joints: joints.iter().map(|j| [j.x, j.y, j.c]).collect(),
            });
        }
        frames.push(ClipFrame { frame_index: f as u64, pedestrians });
    }
    Ok(ClipRecord { clip_id, fps: config.fps, width: config.width, height: config.height, frames })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Accepted,
    Rejected,
}

/// One generation attempt as recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub attempt: u64,
    pub clip_id: Option<String>,
    pub status: Status,
    pub reason: Option<RejectReason>,
    pub script: ClipScript,
    pub label_counts: LabelCounts,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    pub clips: Vec<ClipRecord>,
    pub manifest: Vec<ManifestEntry>,
    pub split: Split,
}

impl GeneratedDataset {
    pub fn split_clips(&self, ids: &[String]) -> Vec<ClipRecord> {
        let by_id: BTreeMap<&str, &ClipRecord> = self.clips.iter().map(|c| (c.clip_id.as_str(), c)).collect();
        ids.iter().filter_map(|id| by_id.get(id.as_str()).map(|c| (*c).clone())).collect()
    }

    pub fn manifest_totals(&self) -> LabelCounts {
        let mut t = LabelCounts::default();
        for e in self.manifest.iter().filter(|e| e.status == Status::Accepted) {
            t.add(&e.label_counts);
        }
        t
    }
}

pub fn clip_id(seed: u64, index: usize) -> String {
    format!("synth-{seed}-{index:05}")
}

/// Generates until `clip_count` clips are accepted, failing after
/// `retry_limit` consecutive rejections.
pub fn generate_dataset(config: &GeneratorConfig) -> Result<GeneratedDataset> {
    config.validate()?;
    let mut clips = Vec::with_capacity(config.clip_count);
    let mut manifest = Vec::new();
    let mut consecutive: BTreeMap<RejectReason, usize> = BTreeMap::new();
    let mut attempt = 0u64;
    while clips.len() < config.clip_count {
        let script = sample_script(config, attempt);
        let id = clip_id(config.seed, clips.len());
        let clip = render_clip(config, &script, id.clone(), attempt)?;
        let label_counts = clip.label_counts();
        match validate_clip(&clip) {
            Ok(()) => {
                debug!("attempt {attempt}: accepted {id} ({:?})", script.scenario.kind);
                manifest.push(ManifestEntry { attempt, clip_id: Some(id), status: Status::Accepted, reason: None, script, label_counts });
                clips.push(clip);
                consecutive.clear();
            }
            Err(reason) => {
                debug!("attempt {attempt}: rejected ({reason})");
                manifest.push(ManifestEntry { attempt, clip_id: None, status: Status::Rejected, reason: Some(reason), script, label_counts });
                *consecutive.entry(reason).or_default() += 1;
                let run: usize = consecutive.values().sum();
                if run >= config.retry_limit {
                    let (dominant, _) = consecutive.iter().max_by_key(|(_, n)| **n).expect("nonempty");
                    return Err(Error::Generation(format!(
                        "{run} consecutive rejections after {} accepted clips; dominant reason: {dominant}",
                        clips.len()
                    )));
                }
            }
        }
        attempt += 1;
    }
    let split = split_ids(clips.iter().map(|c| c.clip_id.clone()).collect(), config.seed);
    info!(
        "generated {} clips in {attempt} attempts (train {}, val {}, test {})",
        clips.len(),
        split.train.len(),
        split.val.len(),
        split.test.len()
    );
    Ok(GeneratedDataset { clips, manifest, split })
}

/// Random 80/10/10 partition by clip.
pub fn split_ids(mut ids: Vec<String>, seed: u64) -> Split {
    ids.shuffle(&mut rng::stream(seed, "split", 0));
    let n = ids.len();
    let n_train = (0.8 * n as f64).round() as usize;
    let n_val = ((0.1 * n as f64).round() as usize).min(n - n_train);
    let test = ids.split_off(n_train + n_val);
    let val = ids.split_off(n_train);
    Split { train: ids, val, test }
}

/// Writes `clips.jsonl`, `{train,val,test}.jsonl`, `manifest.jsonl` and
/// `split.json` into `dir`.
pub fn write_dataset(ds: &GeneratedDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_clip_file(&dir.join("clips.jsonl"), &ds.clips)?;
    for (name, ids) in [("train", &ds.split.train), ("val", &ds.split.val), ("test", &ds.split.test)] {
        write_clip_file(&dir.join(format!("{name}.jsonl")), &ds.split_clips(ids))?;
    }
    let mut manifest = String::new();
    for e in &ds.manifest {
        manifest.push_str(&serde_json::to_string(e).map_err(|e| Error::format(e.to_string()))?);
        manifest.push('\n');
    }
    let path = dir.join("manifest.jsonl");
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    let path = dir.join("split.json");
    let split = serde_json::to_string_pretty(&ds.split).map_err(|e| Error::format(e.to_string()))?;
    fs::write(&path, split + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clip::Label;
    use crate::synthgen::scenario::expand_spans;
    use std::collections::BTreeSet;

    #[test]
    fn ten_nominal_clips() {
        let cfg = GeneratorConfig { seed: 3, ..GeneratorConfig::default() };
        let ds = generate_dataset(&cfg).unwrap();
        assert_eq!(ds.clips.len(), 10);
        let total = ds.manifest_totals();
        assert_eq!(total.labeled(), 10 * 20 * 30);
        assert_eq!(total.unlabeled, 0);
        assert!(ds.manifest.iter().all(|e| e.status == Status::Accepted));
        assert_eq!((ds.split.train.len(), ds.split.val.len(), ds.split.test.len()), (8, 1, 1));
    }

    #[test]
    fn split_is_partition_and_counts_add_up() {
        let cfg = GeneratorConfig { seed: 8, clip_count: 23, clip_duration_s: 4.0, ..GeneratorConfig::default() };
        let ds = generate_dataset(&cfg).unwrap();
        let all: BTreeSet<String> = ds.clips.iter().map(|c| c.clip_id.clone()).collect();
        let mut seen = BTreeSet::new();
        for id in ds.split.train.iter().chain(&ds.split.val).chain(&ds.split.test) {
            assert!(seen.insert(id.clone()), "{id} in two splits");
        }
        assert_eq!(seen, all);
        let mut per_split = LabelCounts::default();
        for ids in [&ds.split.train, &ds.split.val, &ds.split.test] {
            for c in ds.split_clips(ids) {
                per_split.add(&c.label_counts());
            }
        }
        assert_eq!(per_split, ds.manifest_totals());
    }

    #[test]
    fn labels_match_scenario_audit() {
        let cfg = GeneratorConfig { seed: 21, clip_count: 12, ..GeneratorConfig::default() };
        let ds = generate_dataset(&cfg).unwrap();
        let accepted = ds.manifest.iter().filter(|e| e.status == Status::Accepted);
        for (clip, entry) in ds.clips.iter().zip(accepted) {
            let want = expand_spans(&entry.script.scenario.label_timeline);
            assert_eq!(want, label_sequence(&cfg.world, &entry.script.scenario));
            for frame in &clip.frames {
                for p in &frame.pedestrians {
                    assert_eq!(p.label, Some(want[frame.frame_index as usize]));
                }
            }
        }
        let kinds: BTreeSet<ScenarioKind> = ds.manifest.iter().map(|e| e.script.scenario.kind).collect();
        assert!(kinds.len() >= 3);
        let c = ds.manifest_totals();
        assert!(c.cross > 0 && c.no_cross > 0);
    }

    #[test]
    fn same_seed_same_everything() {
        let cfg = GeneratorConfig { seed: 5, clip_count: 4, clip_duration_s: 3.0, ..GeneratorConfig::default() };
        let a = generate_dataset(&cfg).unwrap();
        let b = generate_dataset(&cfg).unwrap();
        assert_eq!(a.clips, b.clips);
        assert_eq!(a.manifest, b.manifest);
        assert_eq!(a.split, b.split);
        let c = generate_dataset(&GeneratorConfig { seed: 6, ..cfg }).unwrap();
        assert_ne!(a.clips[0].frames, c.clips[0].frames);
    }

    #[test]
    fn noiseless_limbs_are_rigid_in_3d() {
        let cfg = GeneratorConfig { seed: 2, noise: NoiseModel::NONE, ..GeneratorConfig::default() };
        for attempt in 0..5 {
            let s = sample_script(&cfg, attempt);
            let traj = s.scenario.trajectory();
            let len = |p: &[[f64; 3]; 19], a: usize, b: usize| {
                ((p[a][0] - p[b][0]).powi(2) + (p[a][1] - p[b][1]).powi(2) + (p[a][2] - p[b][2]).powi(2)).sqrt()
            };
            let first = super::super::gait::gait_pose(&traj, s.scenario.walk_speed, s.scenario.step_frequency, &s.body, 0.0);
            for f in 0..s.scenario.frame_count() as u64 {
                let p = super::super::gait::gait_pose(&traj, s.scenario.walk_speed, s.scenario.step_frequency, &s.body, s.scenario.frame_time(f));
                for &(a, b) in crate::skeleton::SKELETON_EDGES.iter() {
                    assert!((len(&p, a.index(), b.index()) - len(&first, a.index(), b.index())).abs() < 1e-9);
                }
            }
        }
    }

    fn blank_clip(n: u64, visible: impl Fn(u64) -> Option<f64>) -> ClipRecord {
        ClipRecord {
            clip_id: "v".into(),
            fps: 30.0,
            width: 1600,
            height: 600,
            frames: (0..n)
                .map(|f| ClipFrame {
                    frame_index: f,
                    pedestrians: visible(f)
                        .map(|x| PedestrianObservation {
                            pedestrian_id: 1,
                            label: Some(Label::NoCross),
                            joints: (0..19).map(|j| [x, 200.0 + 5.0 * j as f64, 1.0]).collect(),
                        })
                        .into_iter()
                        .collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn visibility_threshold_is_strict() {
        assert_eq!(validate_clip(&blank_clip(10, |f| (f < 5).then_some(100.0))), Ok(()));
        assert_eq!(validate_clip(&blank_clip(10, |f| (f < 4).then_some(100.0))), Err(RejectReason::OffScreen));
        assert_eq!(validate_clip(&blank_clip(10, |f| Some(if f < 6 { -50.0 } else { 100.0 }))), Err(RejectReason::OffScreen));
        assert_eq!(validate_clip(&blank_clip(10, |_| Some(100.0))), Ok(()));
    }

    #[test]
    fn pedestrian_behind_camera_is_rejected() {
        let cfg = GeneratorConfig::default();
        let mut s = sample_script(&cfg, 0);
        s.ego.start_z += 200.0;
        let clip = render_clip(&cfg, &s, "behind".into(), 0).unwrap();
        assert!(clip.frames.iter().all(|f| f.pedestrians.is_empty()));
        assert_eq!(validate_clip(&clip), Err(RejectReason::OffScreen));
    }

    #[test]
    fn nominal_cross_is_accepted() {
        let cfg = GeneratorConfig {
            scenario_mix: [(ScenarioKind::PerpendicularCross, 1.0)].into_iter().collect(),
            ..GeneratorConfig::default()
        };
        for attempt in 0..5 {
            let s = sample_script(&cfg, attempt);
            let clip = render_clip(&cfg, &s, "x".into(), attempt).unwrap();
            assert_eq!(validate_clip(&clip), Ok(()));
            assert!(clip.frames.iter().all(|f| f.pedestrians.len() == 1));
        }
    }

    #[test]
    fn retry_limit_names_reason() {
        let cfg = GeneratorConfig { min_depth_range: [400.0, 500.0], retry_limit: 3, ..GeneratorConfig::default() };
        match generate_dataset(&cfg) {
            Err(Error::Generation(msg)) => assert!(msg.contains("too_small"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        assert!(GeneratorConfig { clip_count: 0, ..Default::default() }.validate().is_err());
        assert!(GeneratorConfig { fps: 0.0, ..Default::default() }.validate().is_err());
        assert!(GeneratorConfig { speed_range: [2.0, 1.0], ..Default::default() }.validate().is_err());
        GeneratorConfig::default().validate().unwrap();
    }
}
