//! AdamW, balanced batch construction, the epoch loop with validation-F1
//! model selection, and the (N_F, lr) sweep.

use std::collections::BTreeMap;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::clip::{ClipRecord, Label};
use crate::error::{Error, Result};
use crate::eval::{compute_metrics, ConfusionCounts, Metrics};
use crate::model::{DropoutMasks, PedGnn, PedGnnConfig, PedGnnParams};
use crate::rng;
use crate::skeleton::{normalize_frame, NormalizedSkeletonFrame, SkeletonWindow};

pub const N_F_RANGE: std::ops::RangeInclusive<usize> = 4..=32;
pub const LR_CHOICES: [f64; 4] = [0.001, 0.005, 0.0002, 0.0005];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub config: AdamWConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl OptimState {
    pub fn new(config: AdamWConfig, len: usize) -> Self {
        OptimState { config, m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }
}

/// One AdamW update. Weight decay is applied to the parameter before, and
/// independently of, the moment-based step.
pub fn adamw_step(params: &mut [f64], grads: &[f64], state: &mut OptimState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "adamw: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("non-finite gradient at parameter {i}")));
    }
    let c = state.config;
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(state.m.iter_mut()).zip(state.v.iter_mut()) {
        *p *= 1.0 - c.lr * c.weight_decay;
        *m = c.beta1 * *m + (1.0 - c.beta1) * g;
        *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
    }
    Ok(())
}

/// A batch entry: (dataset index, sample index within that dataset).
pub type BatchEntry = (usize, usize);

/// Builds one epoch of batches. A single dataset is shuffled and chunked;
/// several datasets are mixed by picking a source uniformly for every draw
/// and then a sample uniformly within it, so each source contributes an
/// equal expected share regardless of its size. An epoch always holds
/// `sum(sizes)` draws.
pub fn make_batches<R: Rng + ?Sized>(sizes: &[usize], batch_size: usize, rng: &mut R) -> Result<Vec<Vec<BatchEntry>>> {
    if sizes.is_empty() {
        return Err(Error::Config("no training datasets".into()));
    }
    if let Some(i) = sizes.iter().position(|&n| n == 0) {
        return Err(Error::Config(format!("training dataset {i} has no samples")));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let draws: Vec<BatchEntry> = if sizes.len() == 1 {
        let mut idx: Vec<BatchEntry> = (0..sizes[0]).map(|i| (0, i)).collect();
        idx.shuffle(rng);
        idx
    } else {
        let total: usize = sizes.iter().sum();
        (0..total)
            .map(|_| {
                let d = rng.random_range(0..sizes.len());
                (d, rng.random_range(0..sizes[d]))
            })
            .collect()
    };
    Ok(draws.chunks(batch_size).map(|c| c.to_vec()).collect())
}

/// A gap-free run of one pedestrian's normalized frames.
#[derive(Debug, Clone)]
pub struct Segment {
    pub clip_id: String,
    pub frames: Vec<NormalizedSkeletonFrame>,
    pub labels: Vec<Option<Label>>,
}

/// Normalized tracks of a named dataset, split at frame gaps.
#[derive(Debug, Clone)]
pub struct SegmentCorpus {
    pub name: String,
    pub segments: Vec<Segment>,
}

impl SegmentCorpus {
    pub fn from_clips(name: impl Into<String>, clips: &[ClipRecord]) -> Self {
        let mut segments = Vec::new();
        for clip in clips {
            for track in clip.tracks() {
                let mut current: Option<Segment> = None;
                for (raw, label) in &track.frames {
                    let contiguous = current
                        .as_ref()
                        .and_then(|s| s.frames.last())
                        .is_some_and(|last| last.frame_index + 1 == raw.frame_index);
                    if !contiguous {
                        segments.extend(current.take());
                        current = Some(Segment { clip_id: clip.clip_id.clone(), frames: Vec::new(), labels: Vec::new() });
                    }
                    let seg = current.as_mut().expect("segment started above");
                    seg.frames.push(normalize_frame(raw));
                    seg.labels.push(*label);
                }
                segments.extend(current);
            }
        }
        SegmentCorpus { name: name.into(), segments }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleRef {
    pub segment: usize,
    /// Offset of the first frame within the segment.
    pub start: usize,
    pub label: Label,
}

/// All step-1 windows of length `n_f` whose last frame is labeled.
#[derive(Debug, Clone)]
pub struct WindowedDataset<'a> {
    pub corpus: &'a SegmentCorpus,
    pub n_f: usize,
    pub samples: Vec<SampleRef>,
}

pub struct TrainSample<'a> {
    pub window: SkeletonWindow<'a>,
    pub label: Label,
    pub source_dataset: &'a str,
}

impl<'a> WindowedDataset<'a> {
    pub fn new(corpus: &'a SegmentCorpus, n_f: usize) -> Self {
        let mut samples = Vec::new();
        for (si, seg) in corpus.segments.iter().enumerate() {
            if n_f == 0 || seg.frames.len() < n_f {
                continue;
            }
            for start in 0..=seg.frames.len() - n_f {
                if let Some(label) = seg.labels[start + n_f - 1] {
                    samples.push(SampleRef { segment: si, start, label });
                }
            }
        }
        WindowedDataset { corpus, n_f, samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample(&self, i: usize) -> TrainSample<'a> {
        let s = self.samples[i];
        let frames = &self.corpus.segments[s.segment].frames[s.start..s.start + self.n_f];
        TrainSample {
            window: SkeletonWindow::new(frames).expect("segments are gap-free single-pedestrian runs"),
            label: s.label,
            source_dataset: &self.corpus.name,
        }
    }
}

/// Confusion counts of the model over every window of the given datasets.
pub fn evaluate_windows(model: &PedGnn, datasets: &[WindowedDataset<'_>]) -> Result<ConfusionCounts> {
    let mut counts = ConfusionCounts::default();
    for ds in datasets {
        for i in 0..ds.len() {
            let s = ds.sample(i);
            counts.record(model.predict(&s.window)?.label(), s.label);
        }
    }
    Ok(counts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainPlan {
    pub n_f_grid: Vec<usize>,
    pub lr_grid: Vec<f64>,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Sweep runs trained concurrently.
    pub workers: usize,
    /// Permit grid values outside the published search space.
    pub allow_off_grid: bool,
    /// Skip the remaining epochs once validation F1 reaches 1.0; no later
    /// epoch could be selected anyway.
    pub stop_at_perfect: bool,
}

impl Default for TrainPlan {
    fn default() -> Self {
        TrainPlan {
            n_f_grid: N_F_RANGE.step_by(2).collect(),
            lr_grid: LR_CHOICES.to_vec(),
            max_epochs: 100,
            batch_size: 500,
            seed: 0,
            workers: 1,
            allow_off_grid: false,
            stop_at_perfect: true,
        }
    }
}

impl TrainPlan {
    pub fn validate(&self) -> Result<()> {
        if self.n_f_grid.is_empty() || self.lr_grid.is_empty() {
            return Err(Error::Config("n_f_grid and lr_grid must be nonempty".into()));
        }
        if self.max_epochs == 0 || self.batch_size == 0 || self.workers == 0 {
            return Err(Error::Config("max_epochs, batch_size and workers must be at least 1".into()));
        }
        if let Some(n) = self.n_f_grid.iter().find(|&&n| n == 0) {
            return Err(Error::Config(format!("invalid n_f {n}")));
        }
        if let Some(lr) = self.lr_grid.iter().find(|lr| !(lr.is_finite() && **lr > 0.0)) {
            return Err(Error::Config(format!("invalid learning rate {lr}")));
        }
        if !self.allow_off_grid {
            if let Some(n) = self.n_f_grid.iter().find(|&&n| !N_F_RANGE.contains(&n) || n % 2 != 0) {
                return Err(Error::Config(format!("n_f {n} outside 4..=32 step 2 (set allow_off_grid to override)")));
            }
            if let Some(lr) = self.lr_grid.iter().find(|lr| !LR_CHOICES.contains(lr)) {
                return Err(Error::Config(format!("learning rate {lr} not in {LR_CHOICES:?} (set allow_off_grid to override)")));
            }
        }
        Ok(())
    }

    /// Grid points in plan order: N_F outer, lr inner.
    pub fn points(&self) -> Vec<SweepPoint> {
        self.n_f_grid
            .iter()
            .flat_map(|&n_f| self.lr_grid.iter().map(move |&lr| SweepPoint { n_f, lr }))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n_f: usize,
    pub lr: f64,
}

impl SweepPoint {
    fn stream_key(&self) -> u64 {
        rng::mix(&[self.n_f as u64, self.lr.to_bits()])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val: Metrics,
}

#[derive(Debug, Clone)]
pub struct BestSnapshot {
    pub params: PedGnnParams,
    pub metrics: Metrics,
    /// 1-based epoch the snapshot was taken after.
    pub epoch: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub point: SweepPoint,
    pub best: Option<BestSnapshot>,
    pub history: Vec<EpochLog>,
    pub failure: Option<String>,
}

/// Trains one grid point. `config.n_f` is replaced by the point's N_F and
/// the datasets must have been windowized at that length.
pub fn train_one(
    config: PedGnnConfig,
    point: SweepPoint,
    train: &[WindowedDataset<'_>],
    val: &[WindowedDataset<'_>],
    plan: &TrainPlan,
) -> Result<TrainOutcome> {
    let config = PedGnnConfig { n_f: point.n_f, ..config };
    config.validate()?;
    if train.iter().chain(val).any(|d| d.n_f != point.n_f) {
        return Err(Error::Config(format!("datasets not windowized for n_f = {}", point.n_f)));
    }
    if val.iter().all(|d| d.is_empty()) {
        return Err(Error::Config("validation set has no labeled windows".into()));
    }
    let sizes: Vec<usize> = train.iter().map(|d| d.len()).collect();
    if sizes.iter().any(|&n| n == 0) || sizes.is_empty() {
        return Err(Error::Config("every training dataset needs at least one labeled window".into()));
    }

    let key = point.stream_key();
    let mut init_rng = rng::stream(plan.seed, "init", key);
    let mut dropout_rng = rng::stream(plan.seed, "dropout", key);
    let mut sampler_rng = rng::stream(plan.seed, "sampler", key);

    let mut model = PedGnn::new(PedGnnParams::init(config, &mut init_rng)?)?;
    let mut opt = OptimState::new(AdamWConfig { lr: point.lr, ..AdamWConfig::default() }, model.params.values.len());
    let mut grads = vec![0.0; model.params.values.len()];
    let mut outcome = TrainOutcome { point, best: None, history: Vec::new(), failure: None };

    for epoch in 1..=plan.max_epochs {
        let step = (|| -> Result<EpochLog> {
            let batches = make_batches(&sizes, plan.batch_size, &mut sampler_rng)?;
            let mut loss_sum = 0.0;
            let mut n = 0usize;
            for batch in &batches {
                grads.iter_mut().for_each(|g| *g = 0.0);
                let scale = 1.0 / batch.len() as f64;
                for &(d, i) in batch {
                    let s = train[d].sample(i);
                    let masks = DropoutMasks::sample(&config, &mut dropout_rng);
                    let tape = model.forward_train(&s.window, masks)?;
                    loss_sum += model.backward(&tape, s.label, scale, &mut grads)?;
                }
                n += batch.len();
                adamw_step(&mut model.params.values, &grads, &mut opt)?;
            }
            if model.params.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric("non-finite parameter after update".into()));
            }
            let val_metrics = compute_metrics(&evaluate_windows(&model, val)?)?;
            Ok(EpochLog { epoch, train_loss: loss_sum / n as f64, val: val_metrics })
        })();
        let log = match step {
            Ok(log) => log,
            Err(e @ (Error::Numeric(_) | Error::Shape(_))) => {
                warn!("n_f={} lr={} failed at epoch {epoch}: {e}", point.n_f, point.lr);
                outcome.failure = Some(format!("epoch {epoch}: {e}"));
                break;
            }
            Err(e) => return Err(e),
        };
        info!(
            "n_f={} lr={} epoch {epoch}: loss {:.5} val F1 {:.4}",
            point.n_f, point.lr, log.train_loss, log.val.f1
        );
        let improved = outcome.best.as_ref().is_none_or(|b| log.val.f1 > b.metrics.f1);
        if improved {
            outcome.best = Some(BestSnapshot { params: model.params.clone(), metrics: log.val, epoch });
        }
        let perfect = log.val.f1 >= 1.0;
        outcome.history.push(log);
        if perfect && plan.stop_at_perfect {
            break;
        }
    }
    Ok(outcome)
}

/// One line of the sweep results table. Metrics are fractions in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub rank: usize,
    pub n_f: usize,
    pub lr: f64,
    pub status: String,
    pub best_epoch: Option<usize>,
    pub epochs_run: usize,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    /// Ranked by validation F1 (descending), ties in plan order.
    pub rows: Vec<SweepRow>,
    pub best: BestSnapshot,
    pub best_point: SweepPoint,
    pub runs: Vec<TrainOutcome>,
}

/// Trains every grid point and selects the best validation F1.
pub fn sweep(
    config: PedGnnConfig,
    plan: &TrainPlan,
    train: &[SegmentCorpus],
    val: &[SegmentCorpus],
) -> Result<SweepOutcome> {
    plan.validate()?;
    let points = plan.points();
    let mut windowed: BTreeMap<usize, (Vec<WindowedDataset<'_>>, Vec<WindowedDataset<'_>>)> = BTreeMap::new();
    for &n_f in &plan.n_f_grid {
        windowed.entry(n_f).or_insert_with(|| {
            (
                train.iter().map(|c| WindowedDataset::new(c, n_f)).collect(),
                val.iter().map(|c| WindowedDataset::new(c, n_f)).collect(),
            )
        });
    }

    let run = |p: &SweepPoint| -> Result<TrainOutcome> {
        let (tr, va) = &windowed[&p.n_f];
        info!("training n_f={} lr={}", p.n_f, p.lr);
        train_one(config, *p, tr, va, plan)
    };

    let mut results: Vec<Option<Result<TrainOutcome>>> = (0..points.len()).map(|_| None).collect();
    if plan.workers <= 1 {
        for (slot, p) in results.iter_mut().zip(&points) {
            *slot = Some(run(p));
        }
    } else {
        let workers = plan.workers.min(points.len());
        let chunks: Vec<Vec<(usize, Result<TrainOutcome>)>> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let run = &run;
                    let points = &points;
                    s.spawn(move || {
                        (w..points.len()).step_by(workers).map(|i| (i, run(&points[i]))).collect::<Vec<_>>()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
        });
        for (i, r) in chunks.into_iter().flatten() {
            results[i] = Some(r);
        }
    }

    let mut runs = Vec::with_capacity(points.len());
    for (p, r) in points.iter().zip(results) {
        match r.expect("every point was run") {
            Ok(o) => runs.push(o),
            Err(e @ Error::Config(_)) => return Err(e),
            Err(e) => {
                warn!("n_f={} lr={} failed: {e}", p.n_f, p.lr);
                runs.push(TrainOutcome { point: *p, best: None, history: Vec::new(), failure: Some(e.to_string()) });
            }
        }
    }

    let mut order: Vec<usize> = (0..runs.len()).collect();
    let f1 = |i: usize| runs[i].best.as_ref().map(|b| b.metrics.f1);
    // stable sort keeps plan order among equal F1
    order.sort_by(|&a, &b| match (f1(a), f1(b)) {
        (Some(x), Some(y)) => y.total_cmp(&x),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    let rows: Vec<SweepRow> = order
        .iter()
        .enumerate()
        .map(|(rank, &i)| {
            let o = &runs[i];
            let m = o.best.as_ref().map(|b| b.metrics);
            SweepRow {
                rank: rank + 1,
                n_f: o.point.n_f,
                lr: o.point.lr,
                status: match &o.failure {
                    None => "ok".into(),
                    Some(f) => format!("failed: {f}"),
                },
                best_epoch: o.best.as_ref().map(|b| b.epoch),
                epochs_run: o.history.len(),
                accuracy: m.map(|m| m.accuracy),
                precision: m.map(|m| m.precision),
                recall: m.map(|m| m.recall),
                f1: m.map(|m| m.f1),
            }
        })
        .collect();
    let top = order[0];
    let best = runs[top]
        .best
        .clone()
        .ok_or_else(|| Error::Sweep(format!("all {} runs failed", runs.len())))?;
    Ok(SweepOutcome { rows, best, best_point: runs[top].point, runs })
}

/// Full-precision CSV of the sweep table.
pub fn sweep_csv(rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| Error::format(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::format(e.to_string()))
}

pub fn parse_sweep_csv(text: &str) -> Result<Vec<SweepRow>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| Error::format_at(i + 2, e.to_string())))
        .collect()
}

/// Human-readable sweep table, F1 as a percentage.
pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut out = format!("{:>4}  {:>4}  {:>7}  {:>5}  {:>8}  {}\n", "rank", "N_F", "lr", "epoch", "F1", "status");
    for r in rows {
        out.push_str(&format!(
            "{:>4}  {:>4}  {:>7}  {:>5}  {:>8}  {}\n",
            r.rank,
            r.n_f,
            r.lr,
            r.best_epoch.map_or("-".into(), |e| e.to_string()),
            r.f1.map_or("-".into(), |f| format!("{:.2}", 100.0 * f)),
            r.status
        ));
    }
    out
}
