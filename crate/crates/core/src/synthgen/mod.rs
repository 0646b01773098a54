//! Procedural pedestrian scenarios rendered to labeled skeleton clips.
//!
//! A scripted walker moves over a flat world with a straight road along z.
//! A kinematic gait model poses its 19 joints, a pinhole camera on a slowly
//! advancing ego vehicle projects them, and a sensor noise model perturbs the
//! result. Frames are labeled C from the moment the walker commits to
//! crossing until it leaves the road band (or aborts).

pub mod camera;
pub mod dataset;
pub mod gait;
pub mod motion;
pub mod scenario;

pub use camera::{CameraSpec, EgoMotion, NoiseModel};
pub use dataset::{
    generate_dataset, render_clip, sample_script, validate_clip, write_dataset, ClipScript, GeneratedDataset,
    GeneratorConfig, ManifestEntry, RejectReason, Split, Status,
};
pub use gait::BodyModel;
pub use motion::MotionKey;
pub use scenario::{label_frame, label_sequence, synthesize_gait, ScenarioKind, ScenarioSpec, WorldSpec};
