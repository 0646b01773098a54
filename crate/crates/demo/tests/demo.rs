use pedgnn::synthgen::ScenarioKind;
use pedgnn::Label;
use pedgnn_demo::*;

#[test]
fn builtin_checkpoint_loads() {
    let model = builtin_model().unwrap();
    assert_eq!(model.config().n_f, 12);
    assert_eq!(model.params.values.len(), 6010);
}

#[test]
fn kinds_parse_by_name() {
    assert_eq!(parse_kind("mid_lane_abort").unwrap(), ScenarioKind::MidLaneAbort);
    assert!(parse_kind("moonwalk").is_err());
}

#[test]
fn scenes_are_reproducible() {
    let a = render_scene(ScenarioKind::PerpendicularCross, 4, 10.0, true).unwrap();
    let b = render_scene(ScenarioKind::PerpendicularCross, 4, 10.0, true).unwrap();
    assert_eq!(a.clip, b.clip);
    assert_eq!(a.frame_count(), 300);
    assert_eq!(a.summary().edges.len(), 18);
}

#[test]
fn frame_views_follow_the_labels() {
    let scene = render_scene(ScenarioKind::PerpendicularCross, 2, 12.0, false).unwrap();
    let commit = scene.script.scenario.commit_time.unwrap();
    for i in 0..scene.frame_count() {
        let v = scene.frame_view(i).unwrap();
        if v.joints.is_empty() {
            assert!(v.normalized.is_empty() && v.label.is_none());
            continue;
        }
        assert_eq!(v.joints.len(), 19);
        assert!(v.normalized.iter().flatten().all(|c| (0.0..=1.0).contains(c)));
        if v.time < commit {
            assert_eq!(v.label, Some(Label::NoCross));
        }
        if v.in_road && v.time >= commit {
            assert_eq!(v.label, Some(Label::Cross));
        }
    }
    assert!(scene.frame_view(scene.frame_count()).is_none());
}

#[test]
fn curve_starts_after_warm_up_and_tracks_crossing() {
    let model = builtin_model().unwrap();
    let scene = render_scene(ScenarioKind::PerpendicularCross, 5, 12.0, true).unwrap();
    let curve = prediction_curve(&scene, &model).unwrap();
    let first_visible = scene.clip.frames.iter().position(|f| !f.pedestrians.is_empty()).unwrap() as u64;
    assert_eq!(curve[0].frame, first_visible + 11);
    assert!(curve.iter().all(|p| (0.0..=1.0).contains(&p.p_cross)));
    let right = curve.iter().filter(|p| p.gt == Some(p.predicted)).count();
    assert!(right * 10 >= curve.len() * 8, "{right} of {} correct", curve.len());
}

#[test]
fn standing_walker_stays_no_cross() {
    let model = builtin_model().unwrap();
    let scene = render_scene(ScenarioKind::StandStill, 1, 8.0, true).unwrap();
    let curve = prediction_curve(&scene, &model).unwrap();
    assert!(curve.iter().all(|p| p.gt == Some(Label::NoCross)));
    let mean: f64 = curve.iter().map(|p| p.p_cross).sum::<f64>() / curve.len() as f64;
    assert!(mean < 0.5, "mean p_cross {mean}");
}

#[test]
fn foreign_checkpoints_are_rejected() {
    assert!(load_model("{\"format\": \"other\"}").is_err());
}
