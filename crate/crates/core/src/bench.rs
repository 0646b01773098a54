//! Single-window inference latency and parameter footprint.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{count_params, PedGnn, PARAM_BUDGET_BYTES};
use crate::rng;
use crate::skeleton::{Joint, NormalizedSkeletonFrame, SkeletonWindow, NUM_JOINTS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub n_f: usize,
    pub repetitions: usize,
    pub param_count: usize,
    pub param_bytes: usize,
    pub budget_bytes: usize,
    pub median_ms: f64,
    pub p99_ms: f64,
    pub mean_ms: f64,
}

/// Random normalized frames used as benchmark input.
pub fn synthetic_window(n_f: usize, seed: u64) -> Vec<NormalizedSkeletonFrame> {
    use rand::Rng;
    let mut r = rng::stream(seed, "bench-window", n_f as u64);
    (0..n_f as u64)
        .map(|f| NormalizedSkeletonFrame {
            frame_index: f,
            pedestrian_id: 0,
            joints: std::array::from_fn::<_, NUM_JOINTS, _>(|_| Joint::new(r.random(), r.random(), 1.0)),
        })
        .collect()
}

/// `p`-quantile (nearest rank) of sorted samples.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Times `repetitions` single-window forwards on the calling thread after
/// `warmup` untimed runs. The recurrent cell accepts any window length, so
/// `n_f` may differ from the model's configured N_F.
pub fn bench(model: &PedGnn, n_f: usize, repetitions: usize, warmup: usize) -> Result<BenchReport> {
    if repetitions == 0 {
        return Err(Error::Config("bench repetitions must be at least 1".into()));
    }
    if n_f == 0 {
        return Err(Error::Config("bench n_f must be at least 1".into()));
    }
    let frames = synthetic_window(n_f, 0);
    let window = SkeletonWindow::new(&frames)?;
    let mut sink = 0.0;
    for _ in 0..warmup {
        sink += model.predict_unchecked_len(&window)?.p_cross;
    }
    let mut times = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let start = Instant::now();
        let p = model.predict_unchecked_len(std::hint::black_box(&window))?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
        sink += p.p_cross;
    }
    std::hint::black_box(sink);
    let mean_ms = times.iter().sum::<f64>() / times.len() as f64;
    times.sort_by(f64::total_cmp);
    let count = count_params(&model.params);
    Ok(BenchReport {
        n_f,
        repetitions,
        param_count: count.count,
        param_bytes: count.bytes_f32,
        budget_bytes: PARAM_BUDGET_BYTES,
        median_ms: quantile(&times, 0.5),
        p99_ms: quantile(&times, 0.99),
        mean_ms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PedGnnConfig, PedGnnParams};

    #[test]
    fn zero_repetitions_is_config_error() {
        let m = PedGnn::new(PedGnnParams::zeros(PedGnnConfig::default()).unwrap()).unwrap();
        assert!(matches!(bench(&m, 8, 0, 0), Err(Error::Config(_))));
    }

    #[test]
    fn report_fields() {
        let m = PedGnn::new(PedGnnParams::zeros(PedGnnConfig::default()).unwrap()).unwrap();
        let r = bench(&m, 4, 20, 2).unwrap();
        assert_eq!((r.param_count, r.param_bytes), (6010, 24_040));
        assert!(r.median_ms <= r.p99_ms);
        assert!(r.param_bytes <= r.budget_bytes);
    }

    #[test]
    fn nearest_rank() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(quantile(&v, 0.5), 50.0);
        assert_eq!(quantile(&v, 0.99), 99.0);
        assert_eq!(quantile(&[3.0], 0.99), 3.0);
    }
}
