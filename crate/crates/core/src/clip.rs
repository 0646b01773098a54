//! Line-delimited clip record streams: one JSON clip per line, each frame
//! listing the pedestrians observed in it with per-frame C/NC labels.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{map_coco17_to_19, Joint, RawSkeletonFrame, COCO_KEYPOINTS, NUM_JOINTS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "C")]
    Cross,
    #[serde(rename = "NC")]
    NoCross,
}

impl Label {
    /// Output index in the two-way softmax; crossing is class 0.
    pub fn class_index(self) -> usize {
        match self {
            Label::Cross => 0,
            Label::NoCross => 1,
        }
    }

    pub fn from_class_index(index: usize) -> Label {
        if index == 0 {
            Label::Cross
        } else {
            Label::NoCross
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Cross => "C",
            Label::NoCross => "NC",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PedestrianObservation {
    pub pedestrian_id: u64,
    /// `None` excludes the observation from metric accounting.
    pub label: Option<Label>,
    pub joints: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipFrame {
    pub frame_index: u64,
    pub pedestrians: Vec<PedestrianObservation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub clip_id: String,
    pub fps: f64,
    pub width: u32,
    pub height: u32,
    pub frames: Vec<ClipFrame>,
}

/// A single pedestrian's observations in frame order.
#[derive(Debug, Clone)]
pub struct Track {
    pub pedestrian_id: u64,
    pub frames: Vec<(RawSkeletonFrame, Option<Label>)>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub cross: u64,
    pub no_cross: u64,
    pub unlabeled: u64,
}

impl LabelCounts {
    pub fn add(&mut self, other: &LabelCounts) {
        self.cross += other.cross;
        self.no_cross += other.no_cross;
        self.unlabeled += other.unlabeled;
    }

    pub fn labeled(&self) -> u64 {
        self.cross + self.no_cross
    }
}

fn to_joints(raw: &[[f64; 3]]) -> Vec<Joint> {
    raw.iter().map(|&[x, y, c]| Joint::new(x, y, c)).collect()
}

impl ClipRecord {
    pub fn validate(&self) -> Result<()> {
        if !(self.fps > 0.0) {
            return Err(Error::format(format!("clip {}: fps must be positive", self.clip_id)));
        }
        let mut last: Option<u64> = None;
        for frame in &self.frames {
            if let Some(prev) = last {
                if frame.frame_index <= prev {
                    return Err(Error::format(format!(
                        "clip {}: frame indices not increasing ({} after {})",
                        self.clip_id, frame.frame_index, prev
                    )));
                }
            }
            last = Some(frame.frame_index);
            for ped in &frame.pedestrians {
                if ped.joints.len() != NUM_JOINTS {
                    return Err(Error::format(format!(
                        "clip {}: pedestrian {} at frame {} has {} joints, expected {}",
                        self.clip_id,
                        ped.pedestrian_id,
                        frame.frame_index,
                        ped.joints.len(),
                        NUM_JOINTS
                    )));
                }
                self.raw_frame(frame.frame_index, ped).validate()?;
            }
        }
        Ok(())
    }

    pub fn raw_frame(&self, frame_index: u64, ped: &PedestrianObservation) -> RawSkeletonFrame {
        let mut joints = [Joint::default(); NUM_JOINTS];
        for (dst, &[x, y, c]) in joints.iter_mut().zip(ped.joints.iter()) {
            *dst = Joint::new(x, y, c);
        }
        RawSkeletonFrame { frame_index, pedestrian_id: ped.pedestrian_id, joints }
    }

    /// Groups observations by pedestrian, ordered by pedestrian id.
    pub fn tracks(&self) -> Vec<Track> {
        let mut by_id: BTreeMap<u64, Vec<(RawSkeletonFrame, Option<Label>)>> = BTreeMap::new();
        for frame in &self.frames {
            for ped in &frame.pedestrians {
                by_id
                    .entry(ped.pedestrian_id)
                    .or_default()
                    .push((self.raw_frame(frame.frame_index, ped), ped.label));
            }
        }
        by_id
            .into_iter()
            .map(|(pedestrian_id, frames)| Track { pedestrian_id, frames })
            .collect()
    }

    /// Counts (pedestrian, frame) label pairs; overlapping pedestrians in one
    /// frame each contribute.
    pub fn label_counts(&self) -> LabelCounts {
        let mut counts = LabelCounts::default();
        for ped in self.frames.iter().flat_map(|f| f.pedestrians.iter()) {
            match ped.label {
                Some(Label::Cross) => counts.cross += 1,
                Some(Label::NoCross) => counts.no_cross += 1,
                None => counts.unlabeled += 1,
            }
        }
        counts
    }
}

/// Reads a clip stream, validating each record. Blank lines are skipped.
pub fn read_clip_stream<R: BufRead>(reader: R) -> Result<Vec<ClipRecord>> {
    parse_lines(reader, |line_no, line| {
        let clip: ClipRecord =
            serde_json::from_str(line).map_err(|e| Error::format_at(line_no, e.to_string()))?;
        clip.validate().map_err(|e| Error::format_at(line_no, e.to_string()))?;
        Ok(clip)
    })
}

fn parse_lines<R: BufRead, T>(reader: R, mut parse: impl FnMut(usize, &str) -> Result<T>) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::format_at(line_no, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse(line_no, &line)?);
    }
    Ok(out)
}

pub fn write_clip_stream<W: Write>(mut writer: W, clips: &[ClipRecord]) -> std::io::Result<()> {
    for clip in clips {
        serde_json::to_writer(&mut writer, clip)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn read_clip_file(path: &Path) -> Result<Vec<ClipRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_clip_stream(BufReader::new(file)).map_err(|e| match e {
        Error::Format { line, message } => Error::Format {
            line,
            message: format!("{}: {}", path.display(), message),
        },
        other => other,
    })
}

pub fn write_clip_file(path: &Path, clips: &[ClipRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_clip_stream(BufWriter::new(file), clips).map_err(|e| Error::io(path, e))
}

/// Reads a stream whose pedestrians carry 17 COCO keypoints and lifts
/// every observation to the 19-joint layout.
pub fn import_coco17_stream<R: BufRead>(reader: R) -> Result<Vec<ClipRecord>> {
    parse_lines(reader, |line_no, line| {
        let mut clip: ClipRecord =
            serde_json::from_str(line).map_err(|e| Error::format_at(line_no, e.to_string()))?;
        for frame in clip.frames.iter_mut() {
            for ped in frame.pedestrians.iter_mut() {
                if ped.joints.len() != COCO_KEYPOINTS {
                    return Err(Error::format_at(
                        line_no,
                        format!(
                            "pedestrian {} at frame {} has {} keypoints, expected {}",
                            ped.pedestrian_id,
                            frame.frame_index,
                            ped.joints.len(),
                            COCO_KEYPOINTS
                        ),
                    ));
                }
                let lifted = map_coco17_to_19(&to_joints(&ped.joints), frame.frame_index, ped.pedestrian_id)
                    .map_err(|e| Error::format_at(line_no, e.to_string()))?;
                ped.joints = lifted.joints.iter().map(|j| [j.x, j.y, j.c]).collect();
            }
        }
        clip.validate().map_err(|e| Error::format_at(line_no, e.to_string()))?;
        Ok(clip)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_clip() -> ClipRecord {
        let joints: Vec<[f64; 3]> = (0..NUM_JOINTS).map(|j| [j as f64 * 1.5, 100.0 - j as f64, 1.0]).collect();
        ClipRecord {
            clip_id: "c0".into(),
            fps: 30.0,
            width: 1600,
            height: 600,
            frames: (0..3)
                .map(|f| ClipFrame {
                    frame_index: f,
                    pedestrians: vec![
                        PedestrianObservation { pedestrian_id: 2, label: Some(Label::Cross), joints: joints.clone() },
                        PedestrianObservation { pedestrian_id: 1, label: if f == 0 { None } else { Some(Label::NoCross) }, joints: joints.clone() },
                    ],
                })
                .collect(),
        }
    }

    #[test]
    fn stream_round_trip() {
        let clips = vec![sample_clip(), sample_clip()];
        let mut buf = Vec::new();
        write_clip_stream(&mut buf, &clips).unwrap();
        let back = read_clip_stream(buf.as_slice()).unwrap();
        assert_eq!(back, clips);
    }

    #[test]
    fn label_wire_format() {
        let text = serde_json::to_string(&[Some(Label::Cross), Some(Label::NoCross), None]).unwrap();
        assert_eq!(text, r#"["C","NC",null]"#);
    }

    #[test]
    fn counts_overlapping_pedestrians() {
        let counts = sample_clip().label_counts();
        assert_eq!(counts, LabelCounts { cross: 3, no_cross: 2, unlabeled: 1 });
    }

    #[test]
    fn tracks_are_grouped_by_id() {
        let tracks = sample_clip().tracks();
        assert_eq!(tracks.len(), 2);
        assert_eq!(tracks[0].pedestrian_id, 1);
        assert_eq!(tracks[0].frames.len(), 3);
        assert_eq!(tracks[1].frames[2].0.frame_index, 2);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let mut buf = Vec::new();
        write_clip_stream(&mut buf, &[sample_clip()]).unwrap();
        buf.extend_from_slice(b"{not json}\n");
        match read_clip_stream(buf.as_slice()) {
            Err(Error::Format { line: Some(2), .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_joint_count_rejected() {
        let mut clip = sample_clip();
        clip.frames[1].pedestrians[0].joints.pop();
        let mut buf = Vec::new();
        write_clip_stream(&mut buf, &[clip]).unwrap();
        assert!(matches!(read_clip_stream(buf.as_slice()), Err(Error::Format { line: Some(1), .. })));
    }

    #[test]
    fn coco17_import_lifts_joints() {
        let kp: Vec<[f64; 3]> = (0..17).map(|i| [i as f64, 2.0 * i as f64, 0.5]).collect();
        let clip = ClipRecord {
            clip_id: "a".into(),
            fps: 30.0,
            width: 1920,
            height: 1080,
            frames: vec![ClipFrame {
                frame_index: 7,
                pedestrians: vec![PedestrianObservation { pedestrian_id: 4, label: Some(Label::NoCross), joints: kp }],
            }],
        };
        let line = serde_json::to_string(&clip).unwrap();
        let lifted = import_coco17_stream(line.as_bytes()).unwrap();
        let joints = &lifted[0].frames[0].pedestrians[0].joints;
        assert_eq!(joints.len(), 19);
        assert_eq!(joints[5], [5.5, 11.0, 0.5]);
        assert_eq!(joints[12], [11.5, 23.0, 0.5]);
        assert_eq!(joints[18], [16.0, 32.0, 0.5]);

        // a 19-joint record is not a valid 17-keypoint record
        let bad = serde_json::to_string(&sample_clip()).unwrap();
        assert!(import_coco17_stream(bad.as_bytes()).is_err());
    }
}
