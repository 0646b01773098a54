//! Browser demo. The plain functions do the work and are tested natively;
//! [`Demo`] wraps them for JavaScript and exchanges JSON strings.

use std::collections::BTreeMap;

use pedgnn::checkpoint::Checkpoint;
use pedgnn::clip::ClipRecord;
use pedgnn::eval::stream_predict;
use pedgnn::model::PedGnn;
use pedgnn::skeleton::{normalize_frame, SKELETON_EDGES};
use pedgnn::synthgen::{render_clip, sample_script, validate_clip, ClipScript, GeneratorConfig, NoiseModel, ScenarioKind};
use pedgnn::{Error, Label, Result};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Checkpoint trained with `configs/demo.toml`.
pub const BUILTIN_CHECKPOINT: &str = include_str!("../assets/checkpoint.json");

pub fn builtin_model() -> Result<PedGnn> {
    load_model(BUILTIN_CHECKPOINT)
}

pub fn load_model(json: &str) -> Result<PedGnn> {
    PedGnn::new(Checkpoint::from_json(json)?.to_params()?)
}

pub fn parse_kind(name: &str) -> Result<ScenarioKind> {
    serde_json::from_value(serde_json::Value::String(name.into()))
        .map_err(|_| Error::Config(format!("unknown scenario kind {name:?}")))
}

/// One rendered clip and the script behind it.
#[derive(Debug, Clone)]
pub struct Scene {
    pub config: GeneratorConfig,
    pub script: ClipScript,
    pub clip: ClipRecord,
    /// First accepted generation attempt.
    pub attempt: u64,
}

pub fn render_scene(kind: ScenarioKind, seed: u64, duration_s: f64, noisy: bool) -> Result<Scene> {
    let config = GeneratorConfig {
        clip_count: 1,
        clip_duration_s: duration_s,
        seed,
        noise: if noisy { GeneratorConfig::default().noise } else { NoiseModel::NONE },
        scenario_mix: BTreeMap::from([(kind, 1.0)]),
        ..Default::default()
    };
    config.validate()?;
    for attempt in 0..config.retry_limit as u64 {
        let script = sample_script(&config, attempt);
        let clip = render_clip(&config, &script, format!("demo-{seed}-{attempt}"), attempt)?;
        if validate_clip(&clip).is_ok() {
            return Ok(Scene { config, script, clip, attempt });
        }
    }
    Err(Error::Generation(format!("no visible {kind:?} clip within {} attempts", config.retry_limit)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameView {
    pub frame: u64,
    pub time: f64,
    /// Pelvis position across the road (m); the road is `|x| <= road_half_width`.
    pub ground_x: f64,
    pub in_road: bool,
    pub label: Option<Label>,
    /// Image-space joints `[x, y, confidence]`, empty when off screen.
    pub joints: Vec<[f64; 3]>,
    /// Per-frame min-max normalized `[x, y]` as the network sees them.
    pub normalized: Vec<[f64; 2]>,
}

impl Scene {
    pub fn frame_count(&self) -> usize {
        self.clip.frames.len()
    }

    pub fn frame_view(&self, index: usize) -> Option<FrameView> {
        let frame = self.clip.frames.get(index)?;
        let spec = &self.script.scenario;
        let time = spec.frame_time(frame.frame_index);
        let ground_x = spec.trajectory().position(time)[0];
        let ped = frame.pedestrians.first();
        let normalized = ped
            .map(|p| normalize_frame(&self.clip.raw_frame(frame.frame_index, p)).joints.iter().map(|j| [j.x, j.y]).collect())
            .unwrap_or_default();
        Some(FrameView {
            frame: frame.frame_index,
            time,
            ground_x,
            in_road: self.config.world.in_road(ground_x),
            label: ped.and_then(|p| p.label),
            joints: ped.map(|p| p.joints.clone()).unwrap_or_default(),
            normalized,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub frame: u64,
    pub p_cross: f64,
    pub predicted: Label,
    pub gt: Option<Label>,
}

/// Streaming predictions over the whole scene; the first N_F - 1 frames of
/// every visible stretch have no point.
pub fn prediction_curve(scene: &Scene, model: &PedGnn) -> Result<Vec<CurvePoint>> {
    Ok(stream_predict(&scene.clip, model)?
        .into_iter()
        .map(|e| CurvePoint { frame: e.frame_index, p_cross: e.p_cross, predicted: e.predicted, gt: e.gt })
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct SceneSummary {
    pub kind: ScenarioKind,
    pub frames: usize,
    pub fps: f64,
    pub width: u32,
    pub height: u32,
    pub attempt: u64,
    pub commit_time: Option<f64>,
    pub abort_time: Option<f64>,
    pub road_half_width: f64,
    pub edges: Vec<(usize, usize)>,
}

impl Scene {
    pub fn summary(&self) -> SceneSummary {
        let spec = &self.script.scenario;
        SceneSummary {
            kind: spec.kind,
            frames: self.frame_count(),
            fps: self.clip.fps,
            width: self.clip.width,
            height: self.clip.height,
            attempt: self.attempt,
            commit_time: spec.commit_time,
            abort_time: spec.abort_time,
            road_half_width: self.config.world.road_half_width,
            edges: SKELETON_EDGES.iter().map(|(a, b)| (a.index(), b.index())).collect(),
        }
    }
}

fn js_err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("serializable")
}

#[wasm_bindgen]
pub struct Demo {
    model: PedGnn,
    scene: Option<Scene>,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new() -> std::result::Result<Demo, JsValue> {
        Ok(Demo { model: builtin_model().map_err(js_err)?, scene: None })
    }

    /// Replaces the model with a checkpoint file's contents; returns its N_F.
    #[wasm_bindgen(js_name = loadCheckpoint)]
    pub fn load_checkpoint(&mut self, json: &str) -> std::result::Result<usize, JsValue> {
        self.model = load_model(json).map_err(js_err)?;
        Ok(self.model.config().n_f)
    }

    #[wasm_bindgen(js_name = windowLength)]
    pub fn window_length(&self) -> usize {
        self.model.config().n_f
    }

    /// Renders a new scene and returns its summary as JSON.
    pub fn generate(&mut self, kind: &str, seed: u32, duration_s: f64, noisy: bool) -> std::result::Result<String, JsValue> {
        let kind = parse_kind(kind).map_err(js_err)?;
        let scene = render_scene(kind, seed as u64, duration_s, noisy).map_err(js_err)?;
        let summary = to_json(&scene.summary());
        self.scene = Some(scene);
        Ok(summary)
    }

    pub fn frame(&self, index: usize) -> std::result::Result<String, JsValue> {
        let scene = self.scene.as_ref().ok_or_else(|| js_err("no scene generated"))?;
        let view = scene.frame_view(index).ok_or_else(|| js_err(format!("frame {index} out of range")))?;
        Ok(to_json(&view))
    }

    pub fn curve(&self) -> std::result::Result<String, JsValue> {
        let scene = self.scene.as_ref().ok_or_else(|| js_err("no scene generated"))?;
        Ok(to_json(&prediction_curve(scene, &self.model).map_err(js_err)?))
    }
}
