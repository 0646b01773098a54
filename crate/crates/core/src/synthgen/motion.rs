//! Piecewise-linear heading/speed timelines and their ground-plane
//! integration.

use serde::{Deserialize, Serialize};

/// Heading is measured in the ground plane from +x toward +z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionKey {
    pub time: f64,
    pub heading: f64,
    pub speed: f64,
}

impl MotionKey {
    pub fn new(time: f64, heading: f64, speed: f64) -> Self {
        MotionKey { time, heading, speed }
    }
}

// 5-point Gauss-Legendre nodes and weights on [-1, 1].
const GL_NODES: [f64; 5] = [
    0.0,
    -0.538_469_310_105_683_1,
    0.538_469_310_105_683_1,
    -0.906_179_845_938_664,
    0.906_179_845_938_664,
];
const GL_WEIGHTS: [f64; 5] = [
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
    0.236_926_885_056_189_1,
];
const GL_PANELS: usize = 8;

/// A pedestrian's ground trajectory from a start position and keyframes.
#[derive(Debug, Clone)]
pub struct Trajectory {
    start: [f64; 2],
    keys: Vec<MotionKey>,
    /// Position at each key time.
    anchors: Vec<[f64; 2]>,
}

impl Trajectory {
    /// `keys` must be sorted by time; the first key is taken to hold from
    /// t = 0 and the last one forever after.
    pub fn new(start: [f64; 2], keys: &[MotionKey]) -> Self {
        assert!(!keys.is_empty(), "trajectory needs at least one key");
        assert!(keys.windows(2).all(|w| w[0].time <= w[1].time), "keys not sorted");
        let mut anchors = Vec::with_capacity(keys.len());
        let first = keys[0];
        let mut pos = add(start, straight(first.heading, first.speed * first.time.max(0.0)));
        anchors.push(pos);
        for w in keys.windows(2) {
            pos = add(pos, segment(w[0], w[1], w[1].time));
            anchors.push(pos);
        }
        Trajectory { start, keys: keys.to_vec(), anchors }
    }

    pub fn keys(&self) -> &[MotionKey] {
        &self.keys
    }

    /// Heading and speed at `t`.
    pub fn state(&self, t: f64) -> (f64, f64) {
        let k = &self.keys;
        if t <= k[0].time {
            return (k[0].heading, k[0].speed);
        }
        let i = k.partition_point(|key| key.time <= t);
        if i == k.len() {
            let last = k[k.len() - 1];
            return (last.heading, last.speed);
        }
        let (a, b) = (k[i - 1], k[i]);
        let s = (t - a.time) / (b.time - a.time);
        (a.heading + s * (b.heading - a.heading), a.speed + s * (b.speed - a.speed))
    }

    /// Ground position (x, z) at `t`.
    pub fn position(&self, t: f64) -> [f64; 2] {
        let k = &self.keys;
        if t <= k[0].time {
            return add(self.start, straight(k[0].heading, k[0].speed * t.max(0.0)));
        }
        let i = k.partition_point(|key| key.time <= t);
        if i == k.len() {
            let last = k[k.len() - 1];
            return add(self.anchors[k.len() - 1], straight(last.heading, last.speed * (t - last.time)));
        }
        add(self.anchors[i - 1], segment(k[i - 1], k[i], t))
    }
}

fn add(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] + b[0], a[1] + b[1]]
}

fn straight(heading: f64, dist: f64) -> [f64; 2] {
    [dist * heading.cos(), dist * heading.sin()]
}

/// Displacement from `a.time` to `t` within the segment a→b.
fn segment(a: MotionKey, b: MotionKey, t: f64) -> [f64; 2] {
    let span = b.time - a.time;
    let dt = t - a.time;
    if span <= 0.0 || dt <= 0.0 {
        return [0.0, 0.0];
    }
    if a.heading == b.heading {
        // linear speed, fixed direction: exact
        let dist = a.speed * dt + (b.speed - a.speed) * dt * dt / (2.0 * span);
        return straight(a.heading, dist);
    }
    let velocity = |tau: f64| {
        let s = tau / span;
        let h = a.heading + s * (b.heading - a.heading);
        let v = a.speed + s * (b.speed - a.speed);
        [v * h.cos(), v * h.sin()]
    };
    let panel = dt / GL_PANELS as f64;
    let mut acc = [0.0, 0.0];
    for p in 0..GL_PANELS {
        let mid = (p as f64 + 0.5) * panel;
        for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
            let v = velocity(mid + 0.5 * panel * x);
            acc[0] += 0.5 * panel * w * v[0];
            acc[1] += 0.5 * panel * w * v[1];
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn constant_walk_displacement() {
        let v = 1.3;
        let tr = Trajectory::new([4.0, 10.0], &[MotionKey::new(0.0, PI / 2.0, v)]);
        let p0 = tr.position(1.0);
        let p1 = tr.position(3.5);
        let d = [p1[0] - p0[0], p1[1] - p0[1]];
        assert!((d[1] - v * 2.5).abs() < 1e-12);
        assert!(d[0].abs() < 1e-12);
    }

    #[test]
    fn arc_matches_closed_form() {
        // constant speed, linear heading: displacement is v/w (sin - sin, cos - cos)
        let (v, h0, h1, t0, t1) = (1.4, 0.0, PI, 2.0, 2.4);
        let tr = Trajectory::new([0.0, 0.0], &[MotionKey::new(t0, h0, v), MotionKey::new(t1, h1, v)]);
        let w = (h1 - h0) / (t1 - t0);
        let start = tr.position(t0);
        let end = tr.position(t1);
        let want = [v / w * (h1.sin() - h0.sin()), -v / w * (h1.cos() - h0.cos())];
        assert!((end[0] - start[0] - want[0]).abs() < 1e-12);
        assert!((end[1] - start[1] - want[1]).abs() < 1e-12);
    }

    #[test]
    fn continuous_across_keys() {
        let keys = [MotionKey::new(1.0, PI, 0.0), MotionKey::new(1.3, PI, 1.5), MotionKey::new(4.0, PI, 1.5), MotionKey::new(4.4, PI / 2.0, 1.5)];
        let tr = Trajectory::new([5.0, 0.0], &keys);
        for k in &keys {
            let a = tr.position(k.time - 1e-9);
            let b = tr.position(k.time + 1e-9);
            assert!((a[0] - b[0]).abs() < 1e-8 && (a[1] - b[1]).abs() < 1e-8);
        }
        // ramp from 0 to 1.5 over 0.3 s covers 0.225 m
        let p = tr.position(1.3);
        assert!((p[0] - (5.0 - 0.225)).abs() < 1e-12);
    }
}
