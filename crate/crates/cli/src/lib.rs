//! The `pedgnn` command-line pipeline: generate, import17, train, sweep,
//! eval, infer, bench and inspect.

pub mod config;

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::info;
use pedgnn::bench::bench;
use pedgnn::checkpoint::Checkpoint;
use pedgnn::clip::{import_coco17_stream, read_clip_file, write_clip_file, ClipRecord};
use pedgnn::eval::{compute_metrics, evaluate_clips, report_csv, report_table, ReportRow};
use pedgnn::model::{PedGnn, PedGnnParams};
use pedgnn::synthgen::{generate_dataset, write_dataset};
use pedgnn::train::{sweep, sweep_csv, sweep_table, SegmentCorpus, TrainPlan};
use pedgnn::{rng, Error};
use serde_json::json;

use crate::config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Core(Error::Config(_)) => 2,
            CliError::Core(Error::Io { .. }) => 3,
            CliError::Core(Error::Format { .. }) => 4,
            CliError::Core(Error::Numeric(_)) => 5,
            CliError::Core(_) => 1,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "pedgnn", version, about = "Pedestrian crossing-intention pipeline")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config value, e.g. `--set train.max_epochs=20`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Seed for generation and training (overrides both config seeds).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (overrides `out_dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic clip dataset into `<out>/data`.
    Generate,
    /// Convert 17-keypoint clip records to the 19-joint format.
    Import17 {
        #[arg(long)]
        input: PathBuf,
        /// Defaults to `<out>/data/imported.jsonl`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train the first (N_F, lr) point of the grid.
    Train,
    /// Train every (N_F, lr) point and keep the best.
    Sweep,
    /// Score a checkpoint on the test sources.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Stream predictions for a clip stream (file or standard input).
    Infer {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Time single-window inference and report the parameter footprint.
    Bench {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Summarize a checkpoint or clip stream.
    Inspect { path: PathBuf },
}

fn effective_config(cli: &Cli) -> Result<RunConfig> {
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("generate.seed={seed}"));
        overrides.push(format!("train.seed={seed}"));
    }
    if let Some(out) = &cli.out {
        overrides.push(format!("out_dir={}", toml::Value::String(out.display().to_string())));
    }
    config::load(cli.config.as_deref(), &overrides)
}

fn validate_for(cfg: &RunConfig, command: &Command) -> Result<()> {
    cfg.model.validate()?;
    match command {
        Command::Generate => cfg.generate.validate()?,
        Command::Train | Command::Sweep => cfg.train.validate()?,
        Command::Bench { .. } => {
            if cfg.bench.repetitions == 0 {
                return Err(CliError::Config("bench.repetitions must be at least 1".into()));
            }
            if cfg.bench.n_f == Some(0) {
                return Err(CliError::Config("bench.n_f must be at least 1".into()));
            }
        }
        _ => {}
    }
    Ok(())
}

fn prepare_out_dir(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    write_text(&cfg.out_dir.join("effective_config.toml"), &cfg.to_toml()?)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::Core(Error::io(path, e)))
}

/// Runs a parsed command. `input` and `output` stand in for standard
/// input and output.
pub fn run(cli: &Cli, input: &mut dyn BufRead, output: &mut dyn Write) -> Result<()> {
    let cfg = effective_config(cli)?;
    validate_for(&cfg, &cli.command)?;
    let io_err = |e: std::io::Error| CliError::Core(Error::io("<stdout>", e));
    match &cli.command {
        Command::Generate => {
            prepare_out_dir(&cfg)?;
            let ds = generate_dataset(&cfg.generate)?;
            let dir = cfg.out_dir.join("data");
            write_dataset(&ds, &dir)?;
            let totals = ds.manifest_totals();
            writeln!(
                output,
                "generated {} clips ({} attempts): train {}, val {}, test {}; labels C {} NC {} -> {}",
                ds.clips.len(),
                ds.manifest.len(),
                ds.split.train.len(),
                ds.split.val.len(),
                ds.split.test.len(),
                totals.cross,
                totals.no_cross,
                dir.display()
            )
            .map_err(io_err)?;
        }
        Command::Import17 { input: src, output: dst } => {
            prepare_out_dir(&cfg)?;
            let file = fs::File::open(src).map_err(|e| Error::io(src, e))?;
            let clips = import_coco17_stream(BufReader::new(file))?;
            let dst = dst.clone().unwrap_or_else(|| cfg.out_dir.join("data").join("imported.jsonl"));
            if let Some(parent) = dst.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            write_clip_file(&dst, &clips)?;
            writeln!(output, "imported {} clips -> {}", clips.len(), dst.display()).map_err(io_err)?;
        }
        Command::Train => {
            let plan = TrainPlan {
                n_f_grid: cfg.train.n_f_grid[..1].to_vec(),
                lr_grid: cfg.train.lr_grid[..1].to_vec(),
                ..cfg.train.clone()
            };
            run_sweep(&cfg, &plan, output)?;
        }
        Command::Sweep => run_sweep(&cfg, &cfg.train, output)?,
        Command::Eval { checkpoint } => {
            let path = checkpoint.clone().unwrap_or_else(|| cfg.checkpoint_path());
            let ck = Checkpoint::load(&path)?;
            let model = PedGnn::new(ck.to_params()?)?;
            prepare_out_dir(&cfg)?;
            let train_name = ck.meta.get("train").and_then(|v| v.as_str()).unwrap_or("?").to_string();
            let mut rows = Vec::new();
            let mut log = String::new();
            for src in cfg.sources("test") {
                let clips = read_clip_file(&src.path)?;
                let (events, counts) = evaluate_clips(&clips, &model)?;
                for e in &events {
                    log.push_str(&serde_json::to_string(e).map_err(|e| Error::format(e.to_string()))?);
                    log.push('\n');
                }
                let m = compute_metrics(&counts)?;
                info!("{}: {} events, F1 {:.4}", src.name, counts.total(), m.f1);
                rows.push(ReportRow::new(train_name.clone(), src.name, model.config().n_f, &m));
            }
            let table = report_table(&rows);
            write_text(&cfg.out_dir.join("report.txt"), &table)?;
            write_text(&cfg.out_dir.join("report.csv"), &report_csv(&rows)?)?;
            write_text(&cfg.out_dir.join("events.jsonl"), &log)?;
            write!(output, "{table}").map_err(io_err)?;
        }
        Command::Infer { checkpoint, input: src } => {
            let path = checkpoint.clone().unwrap_or_else(|| cfg.checkpoint_path());
            let model = PedGnn::new(Checkpoint::load(&path)?.to_params()?)?;
            match src {
                Some(p) => {
                    let file = fs::File::open(p).map_err(|e| Error::io(p, e))?;
                    infer_stream(&model, &mut BufReader::new(file), output)?
                }
                None => infer_stream(&model, input, output)?,
            }
        }
        Command::Bench { checkpoint } => {
            let model = match checkpoint.clone().or_else(|| cfg.bench.checkpoint.clone()) {
                Some(p) => PedGnn::new(Checkpoint::load(&p)?.to_params()?)?,
                None => PedGnn::new(PedGnnParams::init(cfg.model, &mut rng::stream(cfg.train.seed, "init", 0))?)?,
            };
            prepare_out_dir(&cfg)?;
            let n_f = cfg.bench.n_f.unwrap_or(model.config().n_f);
            let report = bench(&model, n_f, cfg.bench.repetitions, cfg.bench.warmup)?;
            let text = serde_json::to_string_pretty(&report).map_err(|e| Error::format(e.to_string()))?;
            write_text(&cfg.out_dir.join("bench.json"), &(text.clone() + "\n"))?;
            writeln!(
                output,
                "params {} ({} bytes, budget {}); N_F {}: median {:.4} ms, p99 {:.4} ms over {} runs",
                report.param_count,
                report.param_bytes,
                report.budget_bytes,
                report.n_f,
                report.median_ms,
                report.p99_ms,
                report.repetitions
            )
            .map_err(io_err)?;
        }
        Command::Inspect { path } => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let summary = match Checkpoint::from_json(&text) {
                Ok(ck) => inspect_checkpoint(&ck)?,
                Err(_) => inspect_clips(&read_clip_file(path)?),
            };
            writeln!(output, "{}", serde_json::to_string_pretty(&summary).expect("json value")).map_err(io_err)?;
        }
    }
    Ok(())
}

fn load_corpora(cfg: &RunConfig, split: &str) -> Result<Vec<SegmentCorpus>> {
    cfg.sources(split)
        .into_iter()
        .map(|s| Ok(SegmentCorpus::from_clips(s.name, &read_clip_file(&s.path)?)))
        .collect()
}

fn run_sweep(cfg: &RunConfig, plan: &TrainPlan, output: &mut dyn Write) -> Result<()> {
    let train = load_corpora(cfg, "train")?;
    let val = load_corpora(cfg, "val")?;
    prepare_out_dir(cfg)?;
    let out = sweep(cfg.model, plan, &train, &val)?;
    let names: Vec<&str> = train.iter().map(|c| c.name.as_str()).collect();
    let best_run = out.runs.iter().find(|r| r.point == out.best_point).expect("best run present");
    let meta: BTreeMap<String, serde_json::Value> = [
        ("train".to_string(), json!(names.join(" + "))),
        ("n_f".to_string(), json!(out.best_point.n_f)),
        ("lr".to_string(), json!(out.best_point.lr)),
        ("epoch".to_string(), json!(out.best.epoch)),
        ("val_f1".to_string(), json!(out.best.metrics.f1)),
        ("seed".to_string(), json!(plan.seed)),
    ]
    .into_iter()
    .collect();
    Checkpoint::from_params(&out.best.params, meta).save(&cfg.out_dir.join("checkpoint.json"))?;
    let mut history = String::from("epoch,train_loss,accuracy,precision,recall,f1\n");
    for h in &best_run.history {
        history.push_str(&format!(
            "{},{},{},{},{},{}\n",
            h.epoch, h.train_loss, h.val.accuracy, h.val.precision, h.val.recall, h.val.f1
        ));
    }
    write_text(&cfg.out_dir.join("history.csv"), &history)?;
    let table = sweep_table(&out.rows);
    write_text(&cfg.out_dir.join("sweep.txt"), &table)?;
    write_text(&cfg.out_dir.join("sweep.csv"), &sweep_csv(&out.rows)?)?;
    write!(output, "{table}").map_err(|e| Error::io("<stdout>", e))?;
    Ok(())
}

/// Reads one clip per line and writes one prediction event per line as
/// soon as each clip is processed.
pub fn infer_stream(model: &PedGnn, input: &mut dyn BufRead, output: &mut dyn Write) -> Result<()> {
    let io_err = |e: std::io::Error| CliError::Core(Error::io("<stream>", e));
    let mut line = String::new();
    let mut line_no = 0;
    loop {
        line.clear();
        if input.read_line(&mut line).map_err(io_err)? == 0 {
            break;
        }
        line_no += 1;
        if line.trim().is_empty() {
            continue;
        }
        let clip: ClipRecord = serde_json::from_str(&line).map_err(|e| Error::format_at(line_no, e.to_string()))?;
        clip.validate().map_err(|e| Error::format_at(line_no, e.to_string()))?;
        for event in pedgnn::eval::stream_predict(&clip, model)? {
            serde_json::to_writer(&mut *output, &event).map_err(|e| Error::format(e.to_string()))?;
            output.write_all(b"\n").map_err(io_err)?;
        }
        output.flush().map_err(io_err)?;
    }
    Ok(())
}

fn inspect_checkpoint(ck: &Checkpoint) -> Result<serde_json::Value> {
    let params = ck.to_params()?;
    let count = pedgnn::model::count_params(&params);
    Ok(json!({
        "kind": "checkpoint",
        "config": ck.config,
        "param_count": count.count,
        "param_bytes": count.bytes_f32,
        "meta": ck.meta,
        "tensors": ck.tensors.iter().map(|t| json!({"name": t.name, "shape": t.shape})).collect::<Vec<_>>(),
    }))
}

fn inspect_clips(clips: &[ClipRecord]) -> serde_json::Value {
    let mut counts = pedgnn::clip::LabelCounts::default();
    let mut frames = 0;
    let mut tracks = 0;
    for c in clips {
        counts.add(&c.label_counts());
        frames += c.frames.len();
        tracks += c.tracks().len();
    }
    json!({
        "kind": "clips",
        "clips": clips.len(),
        "frames": frames,
        "tracks": tracks,
        "labels": counts,
    })
}

