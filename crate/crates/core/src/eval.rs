//! Streaming sliding-window inference and the metric harness.
//!
//! Every pedestrian keeps a ring buffer of its last `N_F` normalized
//! frames. Once the buffer is full a prediction is issued on every frame
//! and scored against the ground-truth label of that (last) frame. A missing
//! frame index resets the buffer.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::clip::{ClipRecord, Label};
use crate::error::{Error, Result};
use crate::model::PedGnn;
use crate::skeleton::{normalize_frame, NormalizedSkeletonFrame, SkeletonWindow};

#[derive(Debug, Clone)]
pub struct PedestrianTrack {
    pub pedestrian_id: u64,
    n_f: usize,
    buffer: VecDeque<NormalizedSkeletonFrame>,
    pub frames_seen: u64,
}

impl PedestrianTrack {
    pub fn new(pedestrian_id: u64, n_f: usize) -> Self {
        PedestrianTrack { pedestrian_id, n_f, buffer: VecDeque::with_capacity(n_f + 1), frames_seen: 0 }
    }

    /// Appends a frame and returns the full window if one is available.
    pub fn push(&mut self, frame: NormalizedSkeletonFrame) -> Option<SkeletonWindow<'_>> {
        if let Some(last) = self.buffer.back() {
            if frame.frame_index != last.frame_index + 1 {
                self.buffer.clear();
            }
        }
        self.buffer.push_back(frame);
        self.frames_seen += 1;
        if self.buffer.len() > self.n_f {
            self.buffer.pop_front();
        }
        if self.buffer.len() == self.n_f {
            // consecutive by construction
            SkeletonWindow::new(self.buffer.make_contiguous()).ok()
        } else {
            None
        }
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionEvent {
    pub clip_id: String,
    pub pedestrian_id: u64,
    #[serde(rename = "frame")]
    pub frame_index: u64,
    pub p_cross: f64,
    pub predicted: Label,
    pub gt: Option<Label>,
}

/// Runs the sliding window over one clip. Pedestrians are tracked
/// independently; events come out in frame order.
pub fn stream_predict(clip: &ClipRecord, model: &PedGnn) -> Result<Vec<PredictionEvent>> {
    clip.validate()?;
    let n_f = model.config().n_f;
    let mut tracks: BTreeMap<u64, PedestrianTrack> = BTreeMap::new();
    let mut events = Vec::new();
    for frame in &clip.frames {
        for ped in &frame.pedestrians {
            let raw = clip.raw_frame(frame.frame_index, ped);
            let track = tracks
                .entry(ped.pedestrian_id)
                .or_insert_with(|| PedestrianTrack::new(ped.pedestrian_id, n_f));
            if let Some(window) = track.push(normalize_frame(&raw)) {
                let pred = model.predict(&window)?;
                events.push(PredictionEvent {
                    clip_id: clip.clip_id.clone(),
                    pedestrian_id: ped.pedestrian_id,
                    frame_index: frame.frame_index,
                    p_cross: pred.p_cross,
                    predicted: pred.label(),
                    gt: ped.label,
                });
            }
        }
    }
    Ok(events)
}

/// Counts over (sample, frame) prediction events with C as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn record(&mut self, predicted: Label, gt: Label) {
        match (predicted, gt) {
            (Label::Cross, Label::Cross) => self.tp += 1,
            (Label::Cross, Label::NoCross) => self.fp += 1,
            (Label::NoCross, Label::NoCross) => self.tn += 1,
            (Label::NoCross, Label::Cross) => self.fn_ += 1,
        }
    }

    /// Events with a null ground truth are skipped.
    pub fn from_events<'a>(events: impl IntoIterator<Item = &'a PredictionEvent>) -> Self {
        let mut c = ConfusionCounts::default();
        for e in events {
            if let Some(gt) = e.gt {
                c.record(e.predicted, gt);
            }
        }
        c
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when a ratio had a zero denominator and was reported as 0.
    pub degenerate: bool,
}

pub fn compute_metrics(counts: &ConfusionCounts) -> Result<Metrics> {
    let total = counts.total();
    if total == 0 {
        return Err(Error::Eval("no labeled prediction events".into()));
    }
    let mut degenerate = false;
    let mut ratio = |num: f64, den: f64| {
        if den == 0.0 {
            degenerate = true;
            0.0
        } else {
            num / den
        }
    };
    let (tp, fp, tn, fn_) = (counts.tp as f64, counts.fp as f64, counts.tn as f64, counts.fn_ as f64);
    let accuracy = (tp + tn) / total as f64;
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = ratio(2.0 * precision * recall, precision + recall);
    Ok(Metrics { accuracy, precision, recall, f1, degenerate })
}

/// One results line: metrics are percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    #[serde(rename = "Train")]
    pub train: String,
    #[serde(rename = "Test")]
    pub test: String,
    #[serde(rename = "N_F")]
    pub n_f: usize,
    #[serde(rename = "Accuracy")]
    pub accuracy: f64,
    #[serde(rename = "Precision")]
    pub precision: f64,
    #[serde(rename = "Recall")]
    pub recall: f64,
    #[serde(rename = "F1-score")]
    pub f1: f64,
}

impl ReportRow {
    pub fn new(train: impl Into<String>, test: impl Into<String>, n_f: usize, m: &Metrics) -> Self {
        ReportRow {
            train: train.into(),
            test: test.into(),
            n_f,
            accuracy: 100.0 * m.accuracy,
            precision: 100.0 * m.precision,
            recall: 100.0 * m.recall,
            f1: 100.0 * m.f1,
        }
    }
}

fn sorted(rows: &[ReportRow]) -> Vec<&ReportRow> {
    let mut v: Vec<&ReportRow> = rows.iter().collect();
    v.sort_by(|a, b| (&a.test, &a.train).cmp(&(&b.test, &b.train)));
    v
}

/// Aligned text table ordered by (Test, Train).
pub fn report_table(rows: &[ReportRow]) -> String {
    let header = ["Train", "Test", "N_F", "Accuracy", "Precision", "Recall", "F1-score"];
    let body: Vec<[String; 7]> = sorted(rows)
        .into_iter()
        .map(|r| {
            [
                r.train.clone(),
                r.test.clone(),
                format!("{:02}", r.n_f),
                format!("{:.2}", r.accuracy),
                format!("{:.2}", r.precision),
                format!("{:.2}", r.recall),
                format!("{:.2}", r.f1),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in &body {
        for (w, cell) in widths.iter_mut().zip(row.iter()) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i < 2 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(header.to_vec(), &mut out);
    let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    for row in &body {
        line(row.iter().map(|s| s.as_str()).collect(), &mut out);
    }
    out
}

/// Machine-readable rows (CSV, full precision), same ordering as the table.
pub fn report_csv(rows: &[ReportRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in sorted(rows) {
        w.serialize(row).map_err(|e| Error::format(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::format(e.to_string()))
}

pub fn parse_report_csv(text: &str) -> Result<Vec<ReportRow>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| Error::format_at(i + 2, e.to_string())))
        .collect()
}

/// Evaluates a set of clips and returns the event log and its counts.
pub fn evaluate_clips(clips: &[ClipRecord], model: &PedGnn) -> Result<(Vec<PredictionEvent>, ConfusionCounts)> {
    let mut events = Vec::new();
    for clip in clips {
        events.extend(stream_predict(clip, model)?);
    }
    let counts = ConfusionCounts::from_events(&events);
    Ok((events, counts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clip::{ClipFrame, PedestrianObservation};
    use crate::model::{PedGnnConfig, PedGnnParams};
    use crate::rng;
    use proptest::prelude::*;

    fn model(n_f: usize) -> PedGnn {
        let cfg = PedGnnConfig { n_f, ..PedGnnConfig::default() };
        PedGnn::new(PedGnnParams::init(cfg, &mut rng::stream(1, "init", 0)).unwrap()).unwrap()
    }

    fn obs(id: u64, f: u64) -> PedestrianObservation {
        let joints = (0..19).map(|j| [j as f64 + f as f64 * 0.1, (j * j) as f64, 1.0]).collect();
        PedestrianObservation { pedestrian_id: id, label: Some(if f % 3 == 0 { Label::Cross } else { Label::NoCross }), joints }
    }

    fn clip(frames: Vec<(u64, Vec<u64>)>) -> ClipRecord {
        ClipRecord {
            clip_id: "t".into(),
            fps: 30.0,
            width: 1600,
            height: 600,
            frames: frames
                .into_iter()
                .map(|(f, ids)| ClipFrame { frame_index: f, pedestrians: ids.into_iter().map(|id| obs(id, f)).collect() })
                .collect(),
        }
    }

    #[test]
    fn emits_after_warmup() {
        let c = clip((0..20).map(|f| (f, vec![1])).collect());
        let ev = stream_predict(&c, &model(8)).unwrap();
        assert_eq!(ev.len(), 13);
        assert_eq!(ev.first().unwrap().frame_index, 7);
        assert_eq!(ev.last().unwrap().frame_index, 19);
        assert_eq!(ev[0].gt, Some(Label::NoCross));
    }

    #[test]
    fn overlapping_pedestrians_are_independent() {
        let c = clip((0..10).map(|f| (f, if f >= 3 { vec![1, 2] } else { vec![1] })).collect());
        let ev = stream_predict(&c, &model(4)).unwrap();
        let ped1: Vec<u64> = ev.iter().filter(|e| e.pedestrian_id == 1).map(|e| e.frame_index).collect();
        let ped2: Vec<u64> = ev.iter().filter(|e| e.pedestrian_id == 2).map(|e| e.frame_index).collect();
        assert_eq!(ped1, (3..10).collect::<Vec<_>>());
        assert_eq!(ped2, (6..10).collect::<Vec<_>>());
        // frame-ordered interleaving
        assert!(ev.windows(2).all(|w| w[0].frame_index <= w[1].frame_index));

        // single-pedestrian predictions unaffected by the second track
        let alone = clip((0..10).map(|f| (f, vec![1])).collect());
        let ev_alone = stream_predict(&alone, &model(4)).unwrap();
        let p1: Vec<f64> = ev.iter().filter(|e| e.pedestrian_id == 1).map(|e| e.p_cross).collect();
        assert_eq!(p1, ev_alone.iter().map(|e| e.p_cross).collect::<Vec<_>>());
    }

    #[test]
    fn gap_resets_buffer() {
        // Trace: frames 0..9 fill the window (emits 3..9); frame 10 missing;
        // frames 11,12,13 refill; frame 14 is the first full window again.
        let c = clip((0..20).filter(|&f| f != 10).map(|f| (f, vec![5])).collect());
        let ev = stream_predict(&c, &model(4)).unwrap();
        let frames: Vec<u64> = ev.iter().map(|e| e.frame_index).collect();
        let mut want: Vec<u64> = (3..10).collect();
        want.extend(14..20);
        assert_eq!(frames, want);
    }

    #[test]
    fn metrics_examples() {
        let all_right = ConfusionCounts { tp: 4, fp: 0, tn: 6, fn_: 0 };
        let m = compute_metrics(&all_right).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1, m.degenerate), (1.0, 1.0, 1.0, 1.0, false));

        let m = compute_metrics(&ConfusionCounts { tp: 3, fp: 1, tn: 5, fn_: 1 }).unwrap();
        assert_eq!((m.precision, m.recall, m.f1, m.accuracy), (0.75, 0.75, 0.75, 0.8));

        let m = compute_metrics(&ConfusionCounts { tp: 0, fp: 0, tn: 9, fn_: 0 }).unwrap();
        assert_eq!((m.precision, m.recall, m.f1, m.accuracy), (0.0, 0.0, 0.0, 1.0));
        assert!(m.degenerate);

        assert!(matches!(compute_metrics(&ConfusionCounts::default()), Err(Error::Eval(_))));
    }

    #[test]
    fn null_labels_are_excluded() {
        let mut c = clip((0..6).map(|f| (f, vec![1])).collect());
        c.frames[5].pedestrians[0].label = None;
        let ev = stream_predict(&c, &model(2)).unwrap();
        assert_eq!(ev.len(), 5);
        assert_eq!(ConfusionCounts::from_events(&ev).total(), 4);
    }

    fn row(train: &str, test: &str, f1: f64) -> ReportRow {
        ReportRow { train: train.into(), test: test.into(), n_f: 8, accuracy: 80.3249, precision: 84.72, recall: 87.91, f1 }
    }

    #[test]
    fn report_single_row() {
        let t = report_table(&[row("S", "S", 92.14)]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("Train"));
        assert!(lines[2].contains("80.32"));
        assert!(lines[2].contains("92.14"));
        assert!(lines[2].contains("08"));
    }

    #[test]
    fn report_sorted_by_test_then_train() {
        let rows = vec![row("S", "P", 1.0), row("J", "P", 2.0), row("S", "J", 3.0), row("J + S", "J", 4.0)];
        let csv = report_csv(&rows).unwrap();
        let back = parse_report_csv(&csv).unwrap();
        let order: Vec<(String, String)> = back.iter().map(|r| (r.test.clone(), r.train.clone())).collect();
        assert_eq!(
            order,
            vec![("J".into(), "J + S".into()), ("J".into(), "S".into()), ("P".into(), "J".into()), ("P".into(), "S".into())]
        );
        assert!(csv.starts_with("Train,Test,N_F,Accuracy,Precision,Recall,F1-score"));
    }

    proptest! {
        #[test]
        fn report_rows_round_trip(
            vals in prop::collection::vec((0.0..100.0f64, 0.0..100.0f64, 0.0..100.0f64, 0.0..100.0f64, 1usize..33), 1..6)
        ) {
            let rows: Vec<ReportRow> = vals.iter().enumerate().map(|(i, &(a, p, r, f, n))| ReportRow {
                train: format!("T{i}"), test: "X".into(), n_f: n, accuracy: a, precision: p, recall: r, f1: f,
            }).collect();
            let back = parse_report_csv(&report_csv(&rows).unwrap()).unwrap();
            let mut want = rows.clone();
            want.sort_by(|a, b| (&a.test, &a.train).cmp(&(&b.test, &b.train)));
            prop_assert_eq!(back, want);
        }

        #[test]
        fn merge_is_order_independent(parts in prop::collection::vec((0u64..50, 0u64..50, 0u64..50, 0u64..50), 1..8)) {
            let counts: Vec<ConfusionCounts> = parts.iter().map(|&(tp, fp, tn, fn_)| ConfusionCounts { tp, fp, tn, fn_ }).collect();
            let mut fwd = ConfusionCounts::default();
            counts.iter().for_each(|c| fwd.merge(c));
            let mut rev = ConfusionCounts::default();
            counts.iter().rev().for_each(|c| rev.merge(c));
            prop_assert_eq!(fwd, rev);
        }
    }
}
