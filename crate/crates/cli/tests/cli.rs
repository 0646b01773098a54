use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::Instant;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pedgnn"));
    c.env("RUST_LOG", "warn");
    c
}

fn toy_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy.toml")
}

fn run_ok(args: &[&str], out: &Path) -> Output {
    let o = bin().arg("--config").arg(toy_config()).arg("--out").arg(out).args(args).output().unwrap();
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    o
}

#[test]
fn toy_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let start = Instant::now();
    run_ok(&["generate"], &out);
    assert_eq!(fs::read_to_string(out.join("data/clips.jsonl")).unwrap().lines().count(), 10);
    assert_eq!(fs::read_to_string(out.join("data/manifest.jsonl")).unwrap().lines().count(), 10);
    run_ok(&["train"], &out);
    assert!(out.join("checkpoint.json").exists());
    let eval = run_ok(&["eval"], &out);
    assert!(start.elapsed().as_secs() < 300);
    let table = String::from_utf8(eval.stdout).unwrap();
    assert!(table.starts_with("Train"), "{table}");
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(csv.starts_with("Train,Test,N_F,Accuracy,Precision,Recall,F1-score"));
    let events = fs::read_to_string(out.join("events.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(events.lines().next().unwrap()).unwrap();
    for key in ["clip_id", "pedestrian_id", "frame", "p_cross", "predicted", "gt"] {
        assert!(first.get(key).is_some(), "event lacks {key}");
    }
    let echoed = fs::read_to_string(out.join("effective_config.toml")).unwrap();
    assert!(echoed.contains("clip_count = 10"));

    // infer on standard input: one JSON object per line, same as eval's events
    let test_clips = fs::read(out.join("data/test.jsonl")).unwrap();
    let mut child = bin()
        .args(["infer", "--checkpoint"])
        .arg(out.join("checkpoint.json"))
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(&test_clips).unwrap();
    let o = child.wait_with_output().unwrap();
    assert!(o.status.success());
    assert_eq!(String::from_utf8(o.stdout).unwrap(), events);

    // inspect both artifact kinds
    let o = bin().arg("inspect").arg(out.join("checkpoint.json")).output().unwrap();
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["param_count"], 6010);
    let o = bin().arg("inspect").arg(out.join("data/clips.jsonl")).output().unwrap();
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["clips"], 10);

    // the echoed config reproduces the dataset
    let again = dir.path().join("again");
    let o = bin().arg("--config").arg(out.join("effective_config.toml")).arg("--out").arg(&again).arg("generate").output().unwrap();
    assert!(o.status.success());
    assert_eq!(fs::read(out.join("data/clips.jsonl")).unwrap(), fs::read(again.join("data/clips.jsonl")).unwrap());
}

#[test]
fn bench_reports_footprint() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("b");
    let o = bin().arg("--out").arg(&out).args(["--set", "bench.repetitions=50", "bench"]).output().unwrap();
    assert!(o.status.success());
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("bench.json")).unwrap()).unwrap();
    assert_eq!(report["param_bytes"], 24_040);
    assert!(report["param_bytes"].as_u64().unwrap() <= 27_648);
    assert_eq!(report["repetitions"], 50);
}

#[test]
fn config_errors_exit_2_without_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    for args in [
        vec!["--set", "train.no_such_key=3", "train"],
        vec!["--set", "bench.repetitions=0", "bench"],
        vec!["--set", "generate.clip_count=0", "generate"],
        vec!["--set", "train.n_f_grid=[5]", "sweep"],
    ] {
        let o = bin().arg("--out").arg(&out).args(&args).output().unwrap();
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!out.exists(), "{args:?} wrote artifacts");
    }
    let o = bin().arg("--out").arg(&out).args(["--set", "train.bogus_key=1", "train"]).output().unwrap();
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus_key"));
}

#[test]
fn missing_input_is_io_error_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin().arg("--out").arg(dir.path()).args(["eval", "--checkpoint", "/nonexistent/ck.json"]).output().unwrap();
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/ck.json"));
}

#[test]
fn malformed_stream_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("ck.json");
    let params = pedgnn::model::PedGnnParams::zeros(pedgnn::model::PedGnnConfig { n_f: 2, ..Default::default() }).unwrap();
    pedgnn::checkpoint::Checkpoint::from_params(&params, Default::default()).save(&ck).unwrap();
    let mut child = bin().arg("infer").arg("--checkpoint").arg(&ck).stdin(Stdio::piped()).stderr(Stdio::piped()).stdout(Stdio::piped()).spawn().unwrap();
    child.stdin.take().unwrap().write_all(b"\n{\"clip_id\": 3}\n").unwrap();
    let o = child.wait_with_output().unwrap();
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn import17_lifts_to_nineteen_joints() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("k17.jsonl");
    let joints: Vec<[f64; 3]> = (0..17).map(|j| [10.0 * j as f64, 5.0 * j as f64, 0.8]).collect();
    let rec = serde_json::json!({
        "clip_id": "ext-1", "fps": 30.0, "width": 640, "height": 480,
        "frames": [{"frame_index": 0, "pedestrians": [{"pedestrian_id": 4, "label": "C", "joints": joints}]}]
    });
    fs::write(&src, format!("{rec}\n")).unwrap();
    let out = dir.path().join("imp");
    let o = bin().arg("--out").arg(&out).arg("import17").arg("--input").arg(&src).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let clips = pedgnn::clip::read_clip_file(&out.join("data/imported.jsonl")).unwrap();
    assert_eq!(clips[0].frames[0].pedestrians[0].joints.len(), 19);
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let reference = pedgnn_cli::config::load(Some(&dir.join("reference.toml")), &[]).unwrap();
    assert_eq!(reference, pedgnn_cli::config::RunConfig::default());
    for name in ["toy.toml", "demo.toml"] {
        pedgnn_cli::config::load(Some(&dir.join(name)), &[]).unwrap();
    }
}
