//! The 19-joint pedestrian skeleton: joint ids, fixed graph topology,
//! per-frame normalization and the 17-keypoint ingestion mapping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_JOINTS: usize = 19;
/// Per-joint input channels: normalized x, normalized y, confidence.
pub const NUM_CHANNELS: usize = 3;
pub const COCO_KEYPOINTS: usize = 17;

/// Axis ranges narrower than this are treated as degenerate.
pub const DEGENERATE_RANGE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum JointId {
    Nose = 0,
    LEye = 1,
    REye = 2,
    LEar = 3,
    REar = 4,
    Neck = 5,
    LShoulder = 6,
    RShoulder = 7,
    LElbow = 8,
    RElbow = 9,
    LWrist = 10,
    RWrist = 11,
    CHip = 12,
    LHip = 13,
    RHip = 14,
    LKnee = 15,
    RKnee = 16,
    LAnkle = 17,
    RAnkle = 18,
}

impl JointId {
    pub const ALL: [JointId; NUM_JOINTS] = [
        JointId::Nose,
        JointId::LEye,
        JointId::REye,
        JointId::LEar,
        JointId::REar,
        JointId::Neck,
        JointId::LShoulder,
        JointId::RShoulder,
        JointId::LElbow,
        JointId::RElbow,
        JointId::LWrist,
        JointId::RWrist,
        JointId::CHip,
        JointId::LHip,
        JointId::RHip,
        JointId::LKnee,
        JointId::RKnee,
        JointId::LAnkle,
        JointId::RAnkle,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<JointId> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            JointId::Nose => "Nose",
            JointId::LEye => "LEye",
            JointId::REye => "REye",
            JointId::LEar => "LEar",
            JointId::REar => "REar",
            JointId::Neck => "Neck",
            JointId::LShoulder => "LShoulder",
            JointId::RShoulder => "RShoulder",
            JointId::LElbow => "LElbow",
            JointId::RElbow => "RElbow",
            JointId::LWrist => "LWrist",
            JointId::RWrist => "RWrist",
            JointId::CHip => "CHip",
            JointId::LHip => "LHip",
            JointId::RHip => "RHip",
            JointId::LKnee => "LKnee",
            JointId::RKnee => "RKnee",
            JointId::LAnkle => "LAnkle",
            JointId::RAnkle => "RAnkle",
        }
    }
}

/// One joint observation: image coordinates (or normalized coordinates)
/// plus the pose estimator's fitting confidence.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Joint {
    pub x: f64,
    pub y: f64,
    pub c: f64,
}

impl Joint {
    pub const fn new(x: f64, y: f64, c: f64) -> Self {
        Joint { x, y, c }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawSkeletonFrame {
    pub frame_index: u64,
    pub pedestrian_id: u64,
    pub joints: [Joint; NUM_JOINTS],
}

impl RawSkeletonFrame {
    pub fn validate(&self) -> Result<()> {
        for (j, joint) in self.joints.iter().enumerate() {
            if !joint.x.is_finite() || !joint.y.is_finite() {
                return Err(Error::format(format!(
                    "joint {} of pedestrian {} at frame {} has non-finite coordinates",
                    j, self.pedestrian_id, self.frame_index
                )));
            }
            if !(0.0..=1.0).contains(&joint.c) {
                return Err(Error::format(format!(
                    "joint {} of pedestrian {} at frame {} has confidence {} outside [0,1]",
                    j, self.pedestrian_id, self.frame_index, joint.c
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSkeletonFrame {
    pub frame_index: u64,
    pub pedestrian_id: u64,
    pub joints: [Joint; NUM_JOINTS],
}

impl NormalizedSkeletonFrame {
    /// Node features in row-major (19, 3) layout.
    pub fn write_features(&self, out: &mut [f64]) {
        debug_assert_eq!(out.len(), NUM_JOINTS * NUM_CHANNELS);
        for (j, joint) in self.joints.iter().enumerate() {
            out[j * 3] = joint.x;
            out[j * 3 + 1] = joint.y;
            out[j * 3 + 2] = joint.c;
        }
    }
}

fn min_max_axis(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Min-max normalizes x and y independently over the frame's own joints.
pub fn normalize_frame(raw: &RawSkeletonFrame) -> NormalizedSkeletonFrame {
    let (x_lo, x_hi) = min_max_axis(raw.joints.iter().map(|j| j.x));
    let (y_lo, y_hi) = min_max_axis(raw.joints.iter().map(|j| j.y));
    let x_range = x_hi - x_lo;
    let y_range = y_hi - y_lo;

    let scale = |v: f64, lo: f64, range: f64| {
        if range < DEGENERATE_RANGE {
            0.5
        } else {
            ((v - lo) / range).clamp(0.0, 1.0)
        }
    };

    let mut joints = [Joint::default(); NUM_JOINTS];
    for (out, j) in joints.iter_mut().zip(raw.joints.iter()) {
        *out = Joint::new(scale(j.x, x_lo, x_range), scale(j.y, y_lo, y_range), j.c);
    }
    NormalizedSkeletonFrame {
        frame_index: raw.frame_index,
        pedestrian_id: raw.pedestrian_id,
        joints,
    }
}

/// Index into the 19-joint layout for each of the 17 COCO keypoints.
const COCO_TO_19: [usize; COCO_KEYPOINTS] = [0, 1, 2, 3, 4, 6, 7, 8, 9, 10, 11, 13, 14, 15, 16, 17, 18];

fn midpoint(a: &Joint, b: &Joint) -> Joint {
    Joint::new(0.5 * (a.x + b.x), 0.5 * (a.y + b.y), 0.5 * (a.c + b.c))
}

/// Lifts a 17-keypoint COCO detection to the 19-joint layout by
/// synthesizing Neck and CHip as shoulder and hip midpoints.
pub fn map_coco17_to_19(kp17: &[Joint], frame_index: u64, pedestrian_id: u64) -> Result<RawSkeletonFrame> {
    if kp17.len() != COCO_KEYPOINTS {
        return Err(Error::format(format!(
            "expected {} keypoints, found {}",
            COCO_KEYPOINTS,
            kp17.len()
        )));
    }
    let mut joints = [Joint::default(); NUM_JOINTS];
    for (src, &dst) in COCO_TO_19.iter().enumerate() {
        joints[dst] = kp17[src];
    }
    joints[JointId::Neck.index()] = midpoint(&kp17[5], &kp17[6]);
    joints[JointId::CHip.index()] = midpoint(&kp17[11], &kp17[12]);
    Ok(RawSkeletonFrame { frame_index, pedestrian_id, joints })
}

/// Drops the two synthesized joints, recovering the COCO ordering.
pub fn project_to_coco17(frame: &RawSkeletonFrame) -> [Joint; COCO_KEYPOINTS] {
    let mut out = [Joint::default(); COCO_KEYPOINTS];
    for (src, &dst) in COCO_TO_19.iter().enumerate() {
        out[src] = frame.joints[dst];
    }
    out
}

/// The canonical undirected skeleton tree.
pub const SKELETON_EDGES: [(JointId, JointId); NUM_JOINTS - 1] = {
    use JointId::*;
    [
        (Nose, LEye),
        (Nose, REye),
        (LEye, LEar),
        (REye, REar),
        (Nose, Neck),
        (Neck, LShoulder),
        (Neck, RShoulder),
        (LShoulder, LElbow),
        (RShoulder, RElbow),
        (LElbow, LWrist),
        (RElbow, RWrist),
        (Neck, CHip),
        (CHip, LHip),
        (CHip, RHip),
        (LHip, LKnee),
        (RHip, RKnee),
        (LKnee, LAnkle),
        (RKnee, RAnkle),
    ]
};

#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonTopology {
    pub edges: Vec<(JointId, JointId)>,
    /// Row-major 19x19 0/1 matrix.
    pub adjacency: Vec<f64>,
    pub degree: [usize; NUM_JOINTS],
}

impl SkeletonTopology {
    pub fn build() -> Self {
        let mut adjacency = vec![0.0; NUM_JOINTS * NUM_JOINTS];
        let mut degree = [0usize; NUM_JOINTS];
        for &(a, b) in SKELETON_EDGES.iter() {
            let (a, b) = (a.index(), b.index());
            adjacency[a * NUM_JOINTS + b] = 1.0;
            adjacency[b * NUM_JOINTS + a] = 1.0;
            degree[a] += 1;
            degree[b] += 1;
        }
        SkeletonTopology { edges: SKELETON_EDGES.to_vec(), adjacency, degree }
    }

    pub fn adj(&self, a: usize, b: usize) -> f64 {
        self.adjacency[a * NUM_JOINTS + b]
    }

    pub fn neighbors(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        (0..NUM_JOINTS).filter(move |&other| self.adj(node, other) != 0.0)
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = [false; NUM_JOINTS];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(n) = stack.pop() {
            for m in self.neighbors(n) {
                if !seen[m] {
                    seen[m] = true;
                    stack.push(m);
                }
            }
        }
        seen.iter().all(|&s| s)
    }

    pub fn is_tree(&self) -> bool {
        self.edges.len() == NUM_JOINTS - 1 && self.is_connected()
    }
}

pub fn build_topology() -> SkeletonTopology {
    SkeletonTopology::build()
}

/// A borrowed run of consecutive normalized frames of one pedestrian, the
/// (N_F, 19, 3) model input.
#[derive(Debug, Clone, Copy)]
pub struct SkeletonWindow<'a> {
    frames: &'a [NormalizedSkeletonFrame],
}

impl<'a> SkeletonWindow<'a> {
    pub fn new(frames: &'a [NormalizedSkeletonFrame]) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::Shape("a window needs at least one frame".into()))?;
        for pair in frames.windows(2) {
            if pair[1].frame_index != pair[0].frame_index + 1 {
                return Err(Error::Shape(format!(
                    "window frames not consecutive: {} then {}",
                    pair[0].frame_index, pair[1].frame_index
                )));
            }
            if pair[1].pedestrian_id != first.pedestrian_id {
                return Err(Error::Shape("window mixes pedestrians".into()));
            }
        }
        Ok(SkeletonWindow { frames })
    }

    pub fn frames(&self) -> &'a [NormalizedSkeletonFrame] {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn last_frame_index(&self) -> u64 {
        self.frames[self.frames.len() - 1].frame_index
    }

    pub fn pedestrian_id(&self) -> u64 {
        self.frames[0].pedestrian_id
    }

    /// Dimensions as (N_F, joints, channels).
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.frames.len(), NUM_JOINTS, NUM_CHANNELS)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame_from(xy: impl Fn(usize) -> (f64, f64)) -> RawSkeletonFrame {
        let mut joints = [Joint::default(); NUM_JOINTS];
        for (j, joint) in joints.iter_mut().enumerate() {
            let (x, y) = xy(j);
            *joint = Joint::new(x, y, 0.9);
        }
        RawSkeletonFrame { frame_index: 0, pedestrian_id: 1, joints }
    }

    #[test]
    fn min_max_endpoints() {
        let raw = frame_from(|j| (if j == 0 { 10.0 } else if j == 1 { 30.0 } else { 20.0 }, j as f64));
        let n = normalize_frame(&raw);
        assert_eq!(n.joints[0].x, 0.0);
        assert_eq!(n.joints[1].x, 1.0);
        assert_eq!(n.joints[2].x, 0.5);
        assert_eq!(n.joints[0].c, 0.9);
    }

    #[test]
    fn degenerate_frame_maps_to_center() {
        let raw = frame_from(|_| (42.0, -7.0));
        let n = normalize_frame(&raw);
        assert!(n.joints.iter().all(|j| j.x == 0.5 && j.y == 0.5));
    }

    #[test]
    fn interior_point_is_linear() {
        let raw = frame_from(|j| match j {
            0 => (0.0, 0.0),
            1 => (5.0, 1.0),
            2 => (10.0, 2.0),
            _ => (2.5, 1.5),
        });
        let n = normalize_frame(&raw);
        assert_eq!([n.joints[0].x, n.joints[1].x, n.joints[2].x], [0.0, 0.5, 1.0]);
        assert_eq!(n.joints[3].x, 0.25);
        assert_eq!(n.joints[3].y, 0.75);
    }

    #[test]
    fn neck_is_shoulder_midpoint() {
        let mut kp = vec![Joint::new(1.0, 2.0, 0.5); 17];
        kp[5] = Joint::new(100.0, 200.0, 0.8);
        kp[6] = Joint::new(140.0, 200.0, 0.6);
        kp[11] = Joint::new(0.0, 0.0, 1.0);
        kp[12] = Joint::new(0.0, 0.0, 1.0);
        let f = map_coco17_to_19(&kp, 3, 9).unwrap();
        let neck = f.joints[JointId::Neck.index()];
        assert_eq!((neck.x, neck.y), (120.0, 200.0));
        assert!((neck.c - 0.7).abs() < 1e-15);
        assert_eq!(f.joints[JointId::CHip.index()], Joint::new(0.0, 0.0, 1.0));
        assert_eq!(f.frame_index, 3);
        assert_eq!(f.pedestrian_id, 9);
    }

    #[test]
    fn coco_copy_through_is_bit_exact() {
        let kp: Vec<Joint> = (0..17).map(|i| Joint::new(i as f64 * 1.1 + 0.3, i as f64 * -2.7, 0.05 * i as f64)).collect();
        let f = map_coco17_to_19(&kp, 0, 0).unwrap();
        assert_eq!(f.joints[JointId::LShoulder.index()], kp[5]);
        assert_eq!(f.joints[JointId::RAnkle.index()], kp[16]);
        assert_eq!(project_to_coco17(&f).to_vec(), kp);
    }

    #[test]
    fn wrong_keypoint_count_is_format_error() {
        let kp = vec![Joint::default(); 18];
        assert!(matches!(map_coco17_to_19(&kp, 0, 0), Err(Error::Format { .. })));
    }

    #[test]
    fn topology_degrees() {
        let t = build_topology();
        assert_eq!(t.edges.len(), 18);
        assert_eq!(t.degree[JointId::Neck.index()], 4);
        let neck_nbrs: Vec<usize> = t.neighbors(JointId::Neck.index()).collect();
        assert_eq!(neck_nbrs, vec![0, 6, 7, 12]);
        assert_eq!(t.degree.iter().sum::<usize>(), 36);
        assert!(t.is_tree());
    }

    #[test]
    fn adjacency_symmetric_zero_trace() {
        let t = build_topology();
        for a in 0..NUM_JOINTS {
            assert_eq!(t.adj(a, a), 0.0);
            for b in 0..NUM_JOINTS {
                assert_eq!(t.adj(a, b), t.adj(b, a));
            }
        }
        assert_eq!(t, build_topology());
    }

    #[test]
    fn window_rejects_gaps_and_mixed_pedestrians() {
        let mk = |f: u64, p: u64| NormalizedSkeletonFrame {
            frame_index: f,
            pedestrian_id: p,
            joints: [Joint::default(); NUM_JOINTS],
        };
        let ok = vec![mk(4, 1), mk(5, 1), mk(6, 1)];
        let w = SkeletonWindow::new(&ok).unwrap();
        assert_eq!(w.shape(), (3, 19, 3));
        assert_eq!(w.last_frame_index(), 6);
        assert!(SkeletonWindow::new(&[mk(4, 1), mk(6, 1)]).is_err());
        assert!(SkeletonWindow::new(&[mk(4, 1), mk(5, 2)]).is_err());
        assert!(SkeletonWindow::new(&[]).is_err());
    }

    fn arb_frame() -> impl Strategy<Value = RawSkeletonFrame> {
        prop::collection::vec((-1e6..1e6f64, -1e6..1e6f64, 0.0..=1.0f64), NUM_JOINTS).prop_map(|v| {
            let mut joints = [Joint::default(); NUM_JOINTS];
            for (j, (x, y, c)) in v.into_iter().enumerate() {
                joints[j] = Joint::new(x, y, c);
            }
            RawSkeletonFrame { frame_index: 0, pedestrian_id: 0, joints }
        })
    }

    proptest! {
        #[test]
        fn normalized_within_unit_square(raw in arb_frame()) {
            let n = normalize_frame(&raw);
            for j in n.joints.iter() {
                prop_assert!((0.0..=1.0).contains(&j.x));
                prop_assert!((0.0..=1.0).contains(&j.y));
            }
            prop_assert!(n.joints.iter().any(|j| j.x == 0.0));
            prop_assert!(n.joints.iter().any(|j| j.x == 1.0));
        }

        // Power-of-two scales and integer offsets on dyadic coordinates keep
        // every floating-point operation exact, so equality is bitwise.
        #[test]
        fn exact_under_dyadic_affine(
            raw in arb_frame(),
            sx in -4i32..4, sy in -4i32..4,
            bx in -4096i32..4096, by in -4096i32..4096,
        ) {
            let mut raw = raw;
            for j in raw.joints.iter_mut() {
                j.x = (j.x * 256.0).round() / 256.0;
                j.y = (j.y * 256.0).round() / 256.0;
            }
            let mut moved = raw.clone();
            for j in moved.joints.iter_mut() {
                j.x = j.x * 2f64.powi(sx) + bx as f64;
                j.y = j.y * 2f64.powi(sy) + by as f64;
            }
            prop_assert_eq!(normalize_frame(&raw), normalize_frame(&moved));
        }

        #[test]
        fn close_under_general_affine(raw in arb_frame(), a in 0.01..100.0f64, b in -1e4..1e4f64) {
            let mut moved = raw.clone();
            for j in moved.joints.iter_mut() {
                j.x = a * j.x + b;
            }
            let (p, q) = (normalize_frame(&raw), normalize_frame(&moved));
            for (u, v) in p.joints.iter().zip(q.joints.iter()) {
                prop_assert!((u.x - v.x).abs() < 1e-9);
                prop_assert_eq!(u.y, v.y);
            }
        }
    }
}
